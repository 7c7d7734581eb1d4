//! Parsers for the three completion formats: the executor's tagged code
//! snippet, the planner's tuple of strings and the expected-outcome
//! dictionary.
//!
//! The snippet grammar is a tiny, line-oriented subset of Python: an optional
//! `def do():` wrapper, calls whose arguments are string literals, comments
//! and blank lines. Everything else is rejected with a message meant to be
//! sent back to the model. Nothing is ever evaluated. See `docs/grammar.abnf`
//! in the repository for the ABNF.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pyrepr;

pub const CODE_OPEN: &str = "<code>";
pub const CODE_CLOSE: &str = "</code>";

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrimitiveCall {
    pub name: String,
    pub args: Vec<String>,
}

impl PrimitiveCall {
    pub fn new(name: impl Into<String>, args: &[&str]) -> Self {
        Self { name: name.into(), args: args.iter().map(|a| a.to_string()).collect() }
    }
}

impl fmt::Display for PrimitiveCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.name)?;
        for (i, arg) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            f.write_str(&pyrepr::quote(arg))?;
        }
        f.write_str(")")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SnippetProgram {
    pub calls: Vec<PrimitiveCall>,
}

impl SnippetProgram {
    /// `def do():` followed by one indented call per line.
    pub fn to_source(&self) -> String {
        let mut out = String::from("def do():\n");
        for call in &self.calls {
            out.push_str("    ");
            out.push_str(&call.to_string());
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParseError {
    #[error("the code must be enclosed between the tags <code> and </code>")]
    MissingTags,
    #[error("loops are not supported (line {line})")]
    Loop { line: usize },
    #[error("conditionals are not supported (line {line})")]
    Conditional { line: usize },
    #[error("assignments are not supported (line {line})")]
    Assignment { line: usize },
    #[error("nested function definitions are not supported (line {line})")]
    NestedFunction { line: usize },
    #[error("only the function do() may be defined (line {line})")]
    ExtraFunction { line: usize },
    #[error("arguments to {name} must be quoted string literals (line {line})")]
    NonLiteralArgument { name: String, line: usize },
    #[error("unbalanced quotes (line {line})")]
    UnbalancedQuotes { line: usize },
    #[error("unbalanced parentheses (line {line})")]
    UnbalancedParentheses { line: usize },
    #[error("unsupported statement (line {line}): {text}")]
    Unsupported { line: usize, text: String },
    #[error("the code does not call any function")]
    EmptyProgram,
    #[error("no tuple of strings found in the plan")]
    NoPlanLiteral,
    #[error("plan steps must be quoted strings")]
    NonStringEntry,
    #[error("the plan is empty")]
    EmptyPlan,
    #[error("no dictionary of strings found")]
    NoMapLiteral,
    #[error("expected outcome keys do not match the plan ({keys} keys for {steps} steps)")]
    KeyMismatch { keys: usize, steps: usize },
}

/// Text between the first `<code>` and the next `</code>`.
pub fn extract_code(raw: &str) -> Result<&str, ParseError> {
    let start = raw.find(CODE_OPEN).ok_or(ParseError::MissingTags)? + CODE_OPEN.len();
    let len = raw[start..].find(CODE_CLOSE).ok_or(ParseError::MissingTags)?;
    Ok(&raw[start..start + len])
}

/// Character cursor shared by the literal parsers.
struct Cursor<'a> {
    src: &'a str,
    pos: usize,
}

enum LitError {
    /// No string literal at the cursor.
    NotString,
    Unterminated,
}

impl<'a> Cursor<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, pos: 0 }
    }

    fn at(src: &'a str, pos: usize) -> Self {
        Self { src, pos }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    fn ident(&mut self) -> Option<&'a str> {
        let start = self.pos;
        match self.peek() {
            Some(c) if c == '_' || c.is_ascii_alphabetic() => {}
            _ => return None,
        }
        while self.peek().is_some_and(|c| c == '_' || c.is_ascii_alphanumeric()) {
            self.bump();
        }
        Some(&self.src[start..self.pos])
    }

    /// One quoted literal (single or double quotes, Python escapes).
    fn string_literal(&mut self) -> Result<String, LitError> {
        let quote = match self.peek() {
            Some(q @ ('\'' | '"')) => q,
            _ => return Err(LitError::NotString),
        };
        self.bump();
        let mut out = String::new();
        loop {
            match self.bump() {
                None | Some('\n') => return Err(LitError::Unterminated),
                Some(c) if c == quote => return Ok(out),
                Some('\\') => match self.bump() {
                    None => return Err(LitError::Unterminated),
                    Some('n') => out.push('\n'),
                    Some('r') => out.push('\r'),
                    Some('t') => out.push('\t'),
                    Some('0') => out.push('\0'),
                    Some('\\') => out.push('\\'),
                    Some('\'') => out.push('\''),
                    Some('"') => out.push('"'),
                    Some('x') => out.push(self.hex_escape(2).ok_or(LitError::Unterminated)?),
                    Some('u') => out.push(self.hex_escape(4).ok_or(LitError::Unterminated)?),
                    Some('U') => out.push(self.hex_escape(8).ok_or(LitError::Unterminated)?),
                    Some(other) => {
                        out.push('\\');
                        out.push(other);
                    }
                },
                Some(c) => out.push(c),
            }
        }
    }

    fn hex_escape(&mut self, digits: usize) -> Option<char> {
        let hex = self.rest().get(..digits)?;
        let code = u32::from_str_radix(hex, 16).ok()?;
        self.pos += digits;
        char::from_u32(code)
    }

    /// A literal followed by any adjacent literals (Python concatenation).
    /// `multiline` lets whitespace between pieces include newlines.
    fn concatenated_literal(&mut self, multiline: bool) -> Result<String, LitError> {
        let mut out = self.string_literal()?;
        loop {
            let save = self.pos;
            if multiline {
                self.skip_ws();
            } else {
                while self.peek().is_some_and(|c| c == ' ' || c == '\t') {
                    self.bump();
                }
            }
            match self.peek() {
                Some('\'' | '"') => out.push_str(&self.string_literal()?),
                _ => {
                    self.pos = save;
                    return Ok(out);
                }
            }
        }
    }
}

/// Parses the restricted snippet grammar into an ordered list of calls.
pub fn parse_snippet(code: &str) -> Result<SnippetProgram, ParseError> {
    let mut calls = Vec::new();
    let mut wrapper_seen = false;
    for (idx, raw_line) in code.split('\n').enumerate() {
        let line_no = idx + 1;
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with("```") {
            continue;
        }
        let indented = line.starts_with(char::is_whitespace);
        let mut cur = Cursor::new(trimmed);
        let Some(word) = cur.ident() else {
            return Err(unsupported(line_no, trimmed));
        };
        match word {
            "def" => {
                if indented {
                    return Err(ParseError::NestedFunction { line: line_no });
                }
                if wrapper_seen || !is_do_header(&mut cur) {
                    return Err(ParseError::ExtraFunction { line: line_no });
                }
                wrapper_seen = true;
                continue;
            }
            "for" | "while" => return Err(ParseError::Loop { line: line_no }),
            "if" | "elif" | "else" => return Err(ParseError::Conditional { line: line_no }),
            "pass" | "return" if is_trivial_tail(cur.rest()) => continue,
            "do" if !indented && is_bare_invocation(cur.rest()) => continue,
            _ => {}
        }
        calls.push(parse_call(word, &mut cur, line_no, trimmed)?);
    }
    if calls.is_empty() {
        return Err(ParseError::EmptyProgram);
    }
    Ok(SnippetProgram { calls })
}

fn unsupported(line: usize, text: &str) -> ParseError {
    ParseError::Unsupported { line, text: text.to_string() }
}

fn is_do_header(cur: &mut Cursor<'_>) -> bool {
    cur.skip_ws();
    if cur.ident() != Some("do") {
        return false;
    }
    cur.skip_ws();
    if !cur.eat('(') {
        return false;
    }
    cur.skip_ws();
    if !cur.eat(')') {
        return false;
    }
    cur.skip_ws();
    // optional return annotation
    if cur.rest().starts_with("->") {
        cur.pos += 2;
        cur.skip_ws();
        if cur.ident().is_none() {
            return false;
        }
        cur.skip_ws();
    }
    cur.eat(':') && is_trivial_tail(cur.rest())
}

/// Nothing left on the line but whitespace, `None`, `;` or a comment.
fn is_trivial_tail(rest: &str) -> bool {
    let rest = rest.trim_start();
    let rest = rest.strip_prefix("None").unwrap_or(rest).trim_start();
    let rest = rest.strip_prefix(';').unwrap_or(rest).trim_start();
    rest.is_empty() || rest.starts_with('#')
}

fn is_bare_invocation(rest: &str) -> bool {
    let mut cur = Cursor::new(rest);
    cur.skip_ws();
    if !cur.eat('(') {
        return false;
    }
    cur.skip_ws();
    cur.eat(')') && {
        let tail = cur.rest().trim_start();
        let tail = tail.strip_prefix(';').unwrap_or(tail).trim_start();
        tail.is_empty() || tail.starts_with('#')
    }
}

fn parse_call(name: &str, cur: &mut Cursor<'_>, line: usize, text: &str) -> Result<PrimitiveCall, ParseError> {
    cur.skip_ws();
    let rest = cur.rest();
    if rest.starts_with('=') && !rest.starts_with("==") {
        return Err(ParseError::Assignment { line });
    }
    if let Some(op) = rest.chars().next() {
        if "+-*/%&|^@".contains(op) && rest[op.len_utf8()..].starts_with('=') {
            return Err(ParseError::Assignment { line });
        }
    }
    if rest.starts_with(',') || rest.starts_with(':') {
        // tuple unpacking or annotated assignment
        if text.contains('=') {
            return Err(ParseError::Assignment { line });
        }
    }
    if !cur.eat('(') {
        return Err(unsupported(line, text));
    }
    let mut args = Vec::new();
    loop {
        cur.skip_ws();
        match cur.peek() {
            None => return Err(ParseError::UnbalancedParentheses { line }),
            Some(')') => {
                cur.bump();
                break;
            }
            Some('\'' | '"') => match cur.concatenated_literal(false) {
                Ok(s) => args.push(s),
                Err(_) => return Err(ParseError::UnbalancedQuotes { line }),
            },
            Some(_) => {
                if has_unbalanced_quotes(cur.rest()) {
                    return Err(ParseError::UnbalancedQuotes { line });
                }
                if !has_balanced_parens(cur.rest(), 1) {
                    return Err(ParseError::UnbalancedParentheses { line });
                }
                return Err(ParseError::NonLiteralArgument { name: name.to_string(), line });
            }
        }
        cur.skip_ws();
        match cur.peek() {
            Some(',') => {
                cur.bump();
            }
            Some(')') => {}
            None => return Err(ParseError::UnbalancedParentheses { line }),
            Some(_) => return Err(ParseError::NonLiteralArgument { name: name.to_string(), line }),
        }
    }
    cur.skip_ws();
    cur.eat(';');
    cur.skip_ws();
    match cur.peek() {
        None | Some('#') => Ok(PrimitiveCall { name: name.to_string(), args }),
        Some(')') => Err(ParseError::UnbalancedParentheses { line }),
        Some('.') => Err(unsupported(line, text)),
        Some(_) => Err(unsupported(line, text)),
    }
}

fn has_unbalanced_quotes(s: &str) -> bool {
    let mut cur = Cursor::new(s);
    while let Some(c) = cur.peek() {
        if c == '\'' || c == '"' {
            if cur.string_literal().is_err() {
                return true;
            }
        } else if c == '#' {
            return false;
        } else {
            cur.bump();
        }
    }
    false
}

/// Whether the `depth` open parentheses get closed on this line.
fn has_balanced_parens(s: &str, mut depth: i32) -> bool {
    let mut cur = Cursor::new(s);
    while let Some(c) = cur.peek() {
        match c {
            '\'' | '"' => {
                let _ = cur.string_literal();
                continue;
            }
            '#' => break,
            '(' => depth += 1,
            ')' => depth -= 1,
            _ => {}
        }
        cur.bump();
    }
    depth <= 0
}

enum Attempt<T> {
    Found(T),
    NotStrings,
    NotHere,
}

/// `(`/`[` sequence of string literals at `start`, with optional trailing comma.
fn string_sequence(src: &str, start: usize) -> Attempt<Vec<String>> {
    let mut cur = Cursor::at(src, start);
    let close = match cur.bump() {
        Some('(') => ')',
        Some('[') => ']',
        _ => return Attempt::NotHere,
    };
    let mut items = Vec::new();
    loop {
        cur.skip_ws();
        match cur.peek() {
            Some(c) if c == close => return Attempt::Found(items),
            Some('\'' | '"') => match cur.concatenated_literal(true) {
                Ok(s) => items.push(s),
                Err(_) => return Attempt::NotHere,
            },
            None => return Attempt::NotHere,
            Some(_) => return Attempt::NotStrings,
        }
        cur.skip_ws();
        match cur.peek() {
            Some(',') => {
                cur.bump();
            }
            Some(c) if c == close => {}
            _ => return Attempt::NotStrings,
        }
    }
}

/// Every position of `(`/`[` outside string literals; prose apostrophes do
/// not count as quotes here, so positions are taken from the raw text.
fn openers<'a>(src: &'a str, chars: &[char]) -> impl Iterator<Item = usize> + 'a {
    let chars: Vec<char> = chars.to_vec();
    src.char_indices().filter(move |(_, c)| chars.contains(c)).map(|(i, _)| i)
}

/// First tuple or list literal of strings in `raw`; may be empty.
pub fn parse_string_list(raw: &str) -> Result<Vec<String>, ParseError> {
    let mut saw_non_string = false;
    for pos in openers(raw, &['(', '[']) {
        match string_sequence(raw, pos) {
            Attempt::Found(items) => return Ok(items),
            Attempt::NotStrings => saw_non_string = true,
            Attempt::NotHere => {}
        }
    }
    Err(if saw_non_string { ParseError::NonStringEntry } else { ParseError::NoPlanLiteral })
}

/// Parses the planner's tuple (or list) of step strings.
///
/// Leading enumeration such as `1.` or `Step 2:` is stripped from entries.
/// Empty literals (for instance `()` in prose) are skipped.
pub fn parse_plan(raw: &str) -> Result<Vec<String>, ParseError> {
    let mut saw_non_string = false;
    let mut saw_empty = false;
    for pos in openers(raw, &['(', '[']) {
        match string_sequence(raw, pos) {
            Attempt::Found(items) if items.is_empty() => saw_empty = true,
            Attempt::Found(items) => {
                let steps: Vec<String> = items.iter().map(|s| strip_enumeration(s).to_string()).collect();
                if steps.iter().all(|s| s.is_empty()) {
                    saw_empty = true;
                    continue;
                }
                return Ok(steps.into_iter().filter(|s| !s.is_empty()).collect());
            }
            Attempt::NotStrings => saw_non_string = true,
            Attempt::NotHere => {}
        }
    }
    Err(if saw_non_string {
        ParseError::NonStringEntry
    } else if saw_empty {
        ParseError::EmptyPlan
    } else {
        ParseError::NoPlanLiteral
    })
}

fn strip_enumeration(step: &str) -> &str {
    let s = step.trim();
    let lower_prefix = s.get(..4).map(|p| p.eq_ignore_ascii_case("step"));
    let body = if lower_prefix == Some(true) { s[4..].trim_start() } else { s };
    let digits = body.bytes().take_while(u8::is_ascii_digit).count();
    if digits == 0 {
        return s;
    }
    match body[digits..].chars().next() {
        Some('.' | ')' | ':') => body[digits + 1..].trim_start(),
        _ => s,
    }
}

fn string_map(src: &str, start: usize) -> Attempt<Vec<(String, String)>> {
    let mut cur = Cursor::at(src, start);
    if !cur.eat('{') {
        return Attempt::NotHere;
    }
    let mut entries: Vec<(String, String)> = Vec::new();
    loop {
        cur.skip_ws();
        let key = match cur.peek() {
            Some('}') => return Attempt::Found(entries),
            Some('\'' | '"') => match cur.concatenated_literal(true) {
                Ok(s) => s,
                Err(_) => return Attempt::NotHere,
            },
            None => return Attempt::NotHere,
            Some(_) => return Attempt::NotStrings,
        };
        cur.skip_ws();
        if !cur.eat(':') {
            return Attempt::NotStrings;
        }
        cur.skip_ws();
        let value = match cur.peek() {
            Some('\'' | '"') => match cur.concatenated_literal(true) {
                Ok(s) => s,
                Err(_) => return Attempt::NotHere,
            },
            _ => return Attempt::NotStrings,
        };
        // later duplicates win, as in a Python dict display
        match entries.iter_mut().find(|(k, _)| *k == key) {
            Some(entry) => entry.1 = value,
            None => entries.push((key, value)),
        }
        cur.skip_ws();
        match cur.peek() {
            Some(',') => {
                cur.bump();
            }
            Some('}') => {}
            _ => return Attempt::NotStrings,
        }
    }
}

/// First `{str: str, ...}` literal in `raw`, entries in source order.
pub fn parse_map_literal(raw: &str) -> Result<Vec<(String, String)>, ParseError> {
    for pos in openers(raw, &['{']) {
        if let Attempt::Found(entries) = string_map(raw, pos) {
            return Ok(entries);
        }
    }
    Err(ParseError::NoMapLiteral)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedOutcome {
    pub step: String,
    pub outcome: String,
}

/// Expected outcomes keyed by plan step, in plan order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectedOutcomes {
    pub entries: Vec<ExpectedOutcome>,
}

impl ExpectedOutcomes {
    pub fn get(&self, step: &str) -> Option<&str> {
        self.entries.iter().find(|e| e.step == step).map(|e| e.outcome.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The dictionary as Python source, for prompts.
    pub fn to_python(&self) -> String {
        pyrepr::dict(self.entries.iter().map(|e| (e.step.as_str(), e.outcome.as_str())))
    }
}

/// Parses the expected-outcome dictionary and aligns it with `plan`.
///
/// Keys are matched to steps verbatim when every key is a plan step;
/// otherwise, when the counts agree, by position.
pub fn parse_eo_map(raw: &str, plan: &[String]) -> Result<ExpectedOutcomes, ParseError> {
    let entries = parse_map_literal(raw)?;
    let exact = entries.iter().all(|(k, _)| plan.contains(k));
    let aligned: Vec<ExpectedOutcome> = if exact {
        plan.iter()
            .filter_map(|step| {
                entries
                    .iter()
                    .find(|(k, _)| k == step)
                    .map(|(_, v)| ExpectedOutcome { step: step.clone(), outcome: v.clone() })
            })
            .collect()
    } else if entries.len() == plan.len() {
        plan.iter()
            .zip(entries)
            .map(|(step, (_, v))| ExpectedOutcome { step: step.clone(), outcome: v })
            .collect()
    } else {
        return Err(ParseError::KeyMismatch { keys: entries.len(), steps: plan.len() });
    };
    Ok(ExpectedOutcomes { entries: aligned })
}

/// Renders the empty dictionary the model is asked to fill in.
pub fn eo_template(plan: &[String]) -> String {
    pyrepr::dict(plan.iter().map(|s| (s.as_str(), "")))
}

/// Plan rendered as a Python list literal.
pub fn plan_literal(plan: &[String]) -> String {
    pyrepr::list(plan.iter().map(String::as_str))
}

/// Plan rendered as a Python tuple literal.
pub fn plan_tuple(plan: &[String]) -> String {
    pyrepr::tuple(plan.iter().map(String::as_str))
}
