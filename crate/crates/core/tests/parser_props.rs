use planloop_core::parser::{parse_map_literal, parse_string_list, plan_tuple};
use planloop_core::{extract_code, parse_eo_map, parse_plan, parse_snippet, PrimitiveCall, SnippetProgram};
use proptest::prelude::*;

const NAMES: [&str; 8] = ["move_to", "grasp", "put_down", "press_button", "plug_in", "place_in_rack", "open_trapdoor", "do_it"];
const WORDS: [&str; 10] =
    ["Desk", "Water Glass", "Kitchen table", "charger", "plug", "robot's", "say \"hi\"", "back\\slash", "tab\there", "naïve"];

fn arg() -> impl Strategy<Value = String> {
    prop_oneof![
        3 => proptest::sample::select(WORDS.to_vec()).prop_map(str::to_string),
        1 => ".{0,12}",
    ]
}

fn call() -> impl Strategy<Value = PrimitiveCall> {
    (proptest::sample::select(NAMES.to_vec()), prop::collection::vec(arg(), 0..4))
        .prop_map(|(name, args)| PrimitiveCall { name: name.to_string(), args })
}

fn program() -> impl Strategy<Value = SnippetProgram> {
    prop::collection::vec(call(), 1..8).prop_map(|calls| SnippetProgram { calls })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn printed_programs_parse_back(p in program()) {
        let src = p.to_source();
        prop_assert_eq!(parse_snippet(&src), Ok(p.clone()));
        let tagged = format!("Here you go:\n<code>\n{src}do()\n</code>\nDone.");
        prop_assert_eq!(parse_snippet(extract_code(&tagged).unwrap()), Ok(p));
    }

    #[test]
    fn plan_tuples_parse_back(steps in prop::collection::vec("[A-Za-z][A-Za-z '\"]{0,20}", 1..6)) {
        let literal = plan_tuple(&steps);
        prop_assert_eq!(parse_string_list(&literal), Ok(steps));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3000))]

    #[test]
    fn parsers_are_total_on_arbitrary_text(s in ".{0,200}") {
        let _ = extract_code(&s);
        let _ = parse_snippet(&s);
        let _ = parse_plan(&s);
        let _ = parse_map_literal(&s);
        let _ = parse_eo_map(&s, &["a".to_string()]);
    }

    #[test]
    fn parsers_are_total_on_code_like_text(
        s in prop::collection::vec(
            prop_oneof![
                Just("def do():\n".to_string()),
                Just("    ".to_string()),
                Just("\n".to_string()),
                Just("(".to_string()),
                Just(")".to_string()),
                Just("'".to_string()),
                Just("\"".to_string()),
                Just("\\".to_string()),
                Just(",".to_string()),
                Just("{".to_string()),
                Just("}".to_string()),
                Just(":".to_string()),
                Just("<code>".to_string()),
                Just("</code>".to_string()),
                Just("#".to_string()),
                Just("=".to_string()),
                "[a-z_]{1,6}",
            ],
            0..40,
        )
    ) {
        let s: String = s.concat();
        let _ = extract_code(&s);
        let _ = parse_snippet(&s);
        let _ = parse_plan(&s);
        let _ = parse_map_literal(&s);
        let _ = parse_eo_map(&s, &["a".to_string(), "b".to_string()]);
    }
}

#[test]
fn spec_examples() {
    let p = parse_snippet("def do():\n    move_to('Kitchen table')\n    grasp(\"Water Glass\")\ndo()").unwrap();
    assert_eq!(p.calls, [PrimitiveCall::new("move_to", &["Kitchen table"]), PrimitiveCall::new("grasp", &["Water Glass"])]);
    let err = parse_snippet("def do():\n    for i in range(2):\n        grasp('Fork')").unwrap_err();
    assert_eq!(err.to_string(), "loops are not supported (line 2)");
    assert_eq!(parse_snippet("move_to('Desk')").unwrap().calls, [PrimitiveCall::new("move_to", &["Desk"])]);

    assert_eq!(parse_plan("('Move to the Kitchen table', 'Grasp the Water Glass')").unwrap().len(), 2);
    assert_eq!(parse_plan("[\"Step A\"]").unwrap(), ["Step A"]);
    assert!(parse_plan("I think the plan is: first move, then grasp").is_err());

    let plan = vec!["Grasp the mug".to_string()];
    let eos = parse_eo_map("{'Grasp the mug': 'The mug should be in the robot''s gripper.'}", &plan).unwrap();
    assert_eq!(eos.len(), 1);
    assert!(parse_eo_map("{}", &[]).unwrap().is_empty());
}
