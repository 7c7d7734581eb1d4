//! Python-style literal rendering used in prompts and oracle completions.

use alloc::string::String;
use core::fmt::Write;

/// Renders `s` the way Python's `repr` renders a `str`.
pub(crate) fn quote(s: &str) -> String {
    let delim = if s.contains('\'') && !s.contains('"') { '"' } else { '\'' };
    let mut out = String::with_capacity(s.len() + 2);
    out.push(delim);
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if c == delim => {
                out.push('\\');
                out.push(c);
            }
            c if (c as u32) < 0x20 || c as u32 == 0x7f => {
                let _ = write!(out, "\\x{:02x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push(delim);
    out
}

/// `['a', 'b']`
pub(crate) fn list<'a>(items: impl IntoIterator<Item = &'a str>) -> String {
    let mut out = String::from("[");
    for (i, item) in items.into_iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&quote(item));
    }
    out.push(']');
    out
}

/// `('a', 'b')`, with the trailing comma Python needs for one element.
pub(crate) fn tuple<'a>(items: impl IntoIterator<Item = &'a str>) -> String {
    let mut out = String::from("(");
    let mut n = 0;
    for item in items {
        if n > 0 {
            out.push_str(", ");
        }
        out.push_str(&quote(item));
        n += 1;
    }
    if n == 1 {
        out.push(',');
    }
    out.push(')');
    out
}

/// `{'k': 'v', ...}`
pub(crate) fn dict<'a>(items: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    let mut out = String::from("{");
    for (i, (k, v)) in items.into_iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(&quote(k));
        out.push_str(": ");
        out.push_str(&quote(v));
    }
    out.push('}');
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_double_quotes_for_apostrophes() {
        assert_eq!(quote("robot's"), "\"robot's\"");
        assert_eq!(quote("a'b\"c"), "'a\\'b\"c'");
        assert_eq!(quote("x\ny"), "'x\\ny'");
    }

    #[test]
    fn containers() {
        assert_eq!(tuple(["a"]), "('a',)");
        assert_eq!(tuple(["a", "b"]), "('a', 'b')");
        assert_eq!(list([]), "[]");
        assert_eq!(dict([("k", "")]), "{'k': ''}");
    }
}
