use proptest::prelude::*;

use super::*;
use crate::vex::{ModuleKind, ProgramBuilder, SourceUnit};

fn program(src: &str) -> Program {
    let mut b = ProgramBuilder::new();
    b.add_source(ModuleKind::Project, &SourceUnit::new("m", src, "m.vex"));
    b.build().unwrap()
}

fn run_with(src: &str, f: &str, args: Vec<Value>, budgets: Budgets) -> ExecutionOutcome {
    let p = program(src);
    let dir = tempfile::tempdir().unwrap();
    let q = format!("m::{f}").parse().unwrap();
    execute(&p, &q, args, budgets, &mut NoHooks, &Sandbox::new(dir.path())).unwrap()
}

fn run(src: &str, f: &str, args: Vec<Value>) -> ExecutionOutcome {
    run_with(src, f, args, Budgets::default())
}

fn returned(o: &ExecutionOutcome) -> &Value {
    match &o.kind {
        OutcomeKind::Returned { value } => value,
        other => panic!("expected a return, got {other:?}"),
    }
}

fn thrown(o: &ExecutionOutcome) -> &str {
    match &o.kind {
        OutcomeKind::UncaughtException { message } => message,
        other => panic!("expected an exception, got {other:?}"),
    }
}

#[test]
fn identity() {
    let o = run("pub fn f(x) { return x; }", "f", vec![Value::Int(7)]);
    assert_eq!(returned(&o), &Value::Int(7));
    assert!(o.steps_used < 10);
    assert!(o.sinks.is_empty());
    assert_eq!(o.max_depth_seen, 1);
}

#[test]
fn infinite_loop_hits_step_budget() {
    let o = run_with(
        "pub fn loop() { while true { } }",
        "loop",
        vec![],
        Budgets {
            max_steps: 1000,
            max_call_depth: 512,
        },
    );
    assert_eq!(o.kind, OutcomeKind::StepBudgetExceeded);
    assert_eq!(o.steps_used, 1000);
}

#[test]
fn recursion_hits_depth_budget() {
    let o = run("pub fn r(n) { return r(n + 1); }", "r", vec![Value::Int(0)]);
    assert_eq!(o.kind, OutcomeKind::DepthBudgetExceeded);
    assert_eq!(o.max_depth_seen, 512);
}

#[test]
fn budget_aborts_are_not_catchable() {
    let src = "pub fn f() { try { while true { } } catch e { return 1; } }";
    let o = run_with(
        src,
        "f",
        vec![],
        Budgets {
            max_steps: 500,
            max_call_depth: 8,
        },
    );
    assert_eq!(o.kind, OutcomeKind::StepBudgetExceeded);
}

#[test]
fn net_send_appends_to_sink() {
    let o = run(
        r#"pub fn f() { return @net_send("ldap://attacker.local/x", ""); }"#,
        "f",
        vec![],
    );
    assert_eq!(returned(&o), &Value::Null);
    assert_eq!(
        o.sinks.net_events,
        vec![NetEvent {
            url: "ldap://attacker.local/x".into(),
            body: String::new()
        }]
    );
}

#[test]
fn to_int() {
    let src = "pub fn f(s) { return @to_int(s); }";
    assert_eq!(returned(&run(src, "f", vec!["12".into()])), &Value::Int(12));
    assert_eq!(thrown(&run(src, "f", vec!["x".into()])), "bad int");
    let caught = "pub fn f(s) { try { return @to_int(s); } catch e { return e; } }";
    assert_eq!(returned(&run(caught, "f", vec!["x".into()])), &Value::str("bad int"));
}

#[test]
fn open_outside_sandbox_is_denied() {
    let o = run(r#"pub fn f() { return @open("../../etc/secret"); }"#, "f", vec![]);
    assert!(thrown(&o).starts_with("access denied"));
    let ev = &o.sinks.file_events[0];
    assert!(!ev.allowed);
    assert_eq!(ev.requested, "../../etc/secret");
}

#[test]
fn open_reads_sandbox_file() {
    let p = program(r#"pub fn f() { let h = @open("./fx/a.txt"); return [@read_file(h), @len(h)]; }"#);
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("fx")).unwrap();
    std::fs::write(dir.path().join("fx/a.txt"), "héllo").unwrap();
    let o = execute(
        &p,
        &"m::f".parse().unwrap(),
        vec![],
        Budgets::default(),
        &mut NoHooks,
        &Sandbox::new(dir.path()),
    )
    .unwrap();
    assert_eq!(
        returned(&o),
        &Value::list(vec![Value::str("héllo"), Value::Int(5)])
    );
    assert_eq!(o.sinks.file_events[0].resolved, "fx/a.txt");
    assert!(o.sinks.file_events[0].allowed);

    let missing = execute(
        &p,
        &"m::f".parse().unwrap(),
        vec![],
        Budgets::default(),
        &mut NoHooks,
        &Sandbox::new(dir.path().join("nowhere")),
    )
    .unwrap();
    assert!(thrown(&missing).starts_with("no such file"));
}

#[test]
fn hard_errors() {
    let p = program("pub fn f(x) { return x; }");
    let sb = Sandbox::new("/nonexistent");
    let err = execute(&p, &"m::f".parse().unwrap(), vec![], Budgets::default(), &mut NoHooks, &sb);
    assert!(matches!(err, Err(ExecError::ArityMismatch { expected: 1, got: 0, .. })));
    let err = execute(&p, &"m::g".parse().unwrap(), vec![], Budgets::default(), &mut NoHooks, &sb);
    assert!(matches!(err, Err(ExecError::UnknownFunction(_))));
}

#[test]
fn arithmetic_and_strings() {
    let src = r#"
pub fn f() {
  let big = 9223372036854775807;
  let l = [1, 2];
  l[0] = 10;
  let r = {a: {b: 1}};
  r.a.b = r.a.b + 1;
  r["c"] = "x" + 1 + true;
  return [big + 1, 7 / 2, -7 % 3, 1.0 / 0.0 > 1.0, 1 == 1.0, "b" > "a", l, r,
          @substr("hello", 1, 3), @substr("hi", 5), @concat("a", 1, null),
          @concat([1], [2]), @contains({k: 1}, "k"), @char_at("héj", 1)];
}"#;
    let v = returned(&run(src, "f", vec![])).clone();
    let expected = Value::list(vec![
        Value::Int(i64::MIN),
        Value::Int(3),
        Value::Int(-1),
        Value::Bool(true),
        Value::Bool(true),
        Value::Bool(true),
        Value::list(vec![Value::Int(10), Value::Int(2)]),
        Value::record([
            ("a", Value::record([("b", Value::Int(2))])),
            ("c", Value::str("x1true")),
        ]),
        Value::str("ell"),
        Value::str(""),
        Value::str("a1null"),
        Value::list(vec![Value::Int(1), Value::Int(2)]),
        Value::Bool(true),
        Value::str("é"),
    ]);
    assert_eq!(v, expected);
}

#[test]
fn runtime_errors_are_exceptions() {
    for (body, msg) in [
        ("return 1 / 0;", "division by zero"),
        ("return [1][3];", "index 3 out of range"),
        ("return {a: 1}.b;", "missing field `b`"),
        ("return y;", "undefined variable `y`"),
        ("if 1 { }", "condition is int"),
        ("return @substr(\"a\", -1);", "@substr: negative argument"),
        ("throw {code: 3};", "{\"code\": 3}"),
    ] {
        let o = run(&format!("pub fn f() {{ {body} }}"), "f", vec![]);
        assert!(thrown(&o).starts_with(msg), "{body}: {:?}", o.kind);
    }
}

#[derive(Default)]
struct Recorder {
    log: Vec<String>,
}

impl Hooks for Recorder {
    fn on_enter(&mut self, program: &Program, func: FnId, args: &mut [Value], depth: usize) {
        self.log.push(format!("enter {} {depth}", program.qname(func)));
        if depth == 1 {
            args[0] = Value::Int(100);
        }
    }
    fn on_exit(&mut self, _func: FnId, exit: CallExit<'_>, depth: usize) {
        let how = match exit {
            CallExit::Returned(_) => "ret",
            CallExit::Threw => "threw",
            CallExit::Aborted => "abort",
        };
        self.log.push(format!("exit {how} {depth}"));
    }
    fn on_branch(&mut self, site: BranchSite, taken: bool, cmp: Option<Comparison<'_>>) {
        let ops = cmp.map(|c| format!(" {} {} {}", c.lhs, c.op.symbol(), c.rhs)).unwrap_or_default();
        self.log.push(format!("branch {} {taken}{ops}", site.id));
    }
    fn on_catch(&mut self) {
        self.log.push("catch".into());
    }
}

#[test]
fn hooks_observe_calls_and_branches() {
    let src = r#"
pub fn f(x) {
  if x > 50 { try { g(); } catch e { } }
  return x;
}
fn g() { throw "no"; }
"#;
    let p = program(src);
    let mut rec = Recorder::default();
    let o = execute(
        &p,
        &"m::f".parse().unwrap(),
        vec![Value::Int(1)],
        Budgets::default(),
        &mut rec,
        &Sandbox::new("/nonexistent"),
    )
    .unwrap();
    assert_eq!(returned(&o), &Value::Int(100));
    assert_eq!(
        rec.log,
        [
            "enter m::f 1",
            "branch 0 true 100 > 50",
            "enter m::g 2",
            "exit threw 2",
            "catch",
            "exit ret 1"
        ]
    );
}

#[test]
fn aborts_unwind_every_frame() {
    let p = program("pub fn r(n) { return r(n); }");
    let mut rec = Recorder::default();
    execute(
        &p,
        &"m::r".parse().unwrap(),
        vec![Value::Int(0)],
        Budgets {
            max_steps: 1_000_000,
            max_call_depth: 3,
        },
        &mut rec,
        &Sandbox::new("/nonexistent"),
    )
    .unwrap();
    let enters = rec.log.iter().filter(|l| l.starts_with("enter")).count();
    let aborts = rec.log.iter().filter(|l| l.starts_with("exit abort")).count();
    assert_eq!((enters, aborts), (3, 3));
}

const COLLATZ: &str = r#"
pub fn f(n) {
  let steps = 0;
  while n > 1 {
    if n % 2 == 0 { n = n / 2; } else { n = 3 * n + 1; }
    steps = steps + 1;
  }
  @log(@to_str(steps));
  return steps;
}
"#;

proptest! {
    #[test]
    fn deterministic(n in 1i64..5000) {
        let a = run(COLLATZ, "f", vec![Value::Int(n)]);
        let b = run(COLLATZ, "f", vec![Value::Int(n)]);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn step_monotonic(n in 1i64..3000, small in 10u64..400, extra in 1u64..100_000) {
        let lo = Budgets { max_steps: small, max_call_depth: 512 };
        let hi = Budgets { max_steps: small + extra, max_call_depth: 512 };
        let a = run_with(COLLATZ, "f", vec![Value::Int(n)], lo);
        let b = run_with(COLLATZ, "f", vec![Value::Int(n)], hi);
        prop_assert!(a.steps_used <= small);
        if a.kind != OutcomeKind::StepBudgetExceeded {
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn sandbox_confinement(segs in proptest::collection::vec(prop_oneof![Just(".."), Just("."), Just("a"), Just("b")], 1..8)) {
        let req = segs.join("/");
        let o = run(r#"pub fn f(p) { try { return @open(p); } catch e { return null; } }"#, "f", vec![Value::str(&req)]);
        for ev in &o.sinks.file_events {
            if ev.allowed {
                prop_assert!(!ev.resolved.split('/').any(|s| s == ".."));
            }
        }
    }
}
