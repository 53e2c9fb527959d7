use proptest::prelude::*;

use vexploit_core::corpus::parse_literal;
use vexploit_core::interp::{Sandbox, Value, ValueKind};
use vexploit_core::migration::{apply_rule, MigrationRule, RuleEnv};
use vexploit_core::similarity::{levenshtein, similarity, string_similarity};

fn scalar() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(Value::Int),
        (-1e6f64..1e6).prop_map(Value::Float),
        "[a-z\"\\\\{}$ ]{0,10}".prop_map(Value::str),
    ]
}

fn value() -> impl Strategy<Value = Value> {
    scalar().prop_recursive(3, 24, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(Value::list),
            prop::collection::btree_map("[a-z@]{1,5}", inner, 0..4).prop_map(Value::record),
        ]
    })
}

proptest! {
    #[test]
    fn literal_round_trip(v in value()) {
        let back = parse_literal(&v.to_literal()).unwrap();
        prop_assert!(back.vex_eq(&v), "{} -> {}", v.to_literal(), back.to_literal());
    }

    #[test]
    fn similarity_identity_and_bounds(a in value(), b in value()) {
        prop_assert_eq!(similarity(&a, &a), 1.0);
        let s = similarity(&a, &b);
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn levenshtein_is_a_metric(a in "[abc]{0,8}", b in "[abc]{0,8}", c in "[abc]{0,8}") {
        prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
        prop_assert_eq!(levenshtein(&a, &a), 0);
        prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
        prop_assert_eq!(string_similarity(&a, &b), string_similarity(&b, &a));
    }

    #[test]
    fn templates_and_affixes_keep_the_payload(p in "[ -~]{0,20}", pre in "[a-z:]{1,5}", post in "[a-z!]{1,5}") {
        let tmp = tempfile::tempdir().unwrap();
        let env = RuleEnv { attacker_host: "attacker.local", sandbox_root: tmp.path() };
        let v = Value::str(&p);
        let t = MigrationRule::template(format!("{pre}{{{{PAYLOAD}}}}{post}")).unwrap();
        let out = apply_rule(&t, &v, &env).unwrap().value;
        prop_assert_eq!(out, Value::str(format!("{pre}{p}{post}")));
        let a = MigrationRule::AffixString { prefix: pre.clone(), suffix: String::new() };
        prop_assert_eq!(apply_rule(&a, &v, &env).unwrap().value, Value::str(format!("{pre}{p}")));
    }

    #[test]
    fn int_string_conversion_round_trips(n in any::<i64>()) {
        let tmp = tempfile::tempdir().unwrap();
        let env = RuleEnv { attacker_host: "attacker.local", sandbox_root: tmp.path() };
        let to_str = MigrationRule::TypeConvert { target: ValueKind::Str };
        let to_int = MigrationRule::TypeConvert { target: ValueKind::Int };
        let s = apply_rule(&to_str, &Value::Int(n), &env).unwrap().value;
        prop_assert_eq!(apply_rule(&to_int, &s, &env).unwrap().value, Value::Int(n));
    }

    #[test]
    fn sandbox_never_allows_escapes(parts in prop::collection::vec(prop_oneof![Just(".."), Just("."), Just("a"), Just("b")], 0..8)) {
        let tmp = tempfile::tempdir().unwrap();
        let sb = Sandbox::new(tmp.path());
        let req = parts.join("/");
        let mut depth: i64 = 0;
        let mut escaped = false;
        for p in &parts {
            match *p {
                ".." => depth -= 1,
                "." => {}
                _ => depth += 1,
            }
            escaped |= depth < 0;
        }
        prop_assert_eq!(sb.resolve(&req).allowed, !escaped, "{}", req);
    }
}
