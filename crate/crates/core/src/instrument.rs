//! Call-stack tracking, first-hit capture at a target function, branch
//! tracing, and entry-parameter substitution, all as interpreter hooks.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::genetic::branch_distance;
use crate::interp::{
    execute, BranchSite, Budgets, CallExit, Comparison, ExecError, ExecutionOutcome, Hooks,
    OutcomeKind, Sandbox, Value,
};
use crate::test_case::TestCase;
use crate::vex::{BinOp, FnId, Program, QualifiedName};

/// Entries kept in [`InstrumentedRun::branch_trace`]; the per-site summary
/// covers every evaluation regardless.
pub const BRANCH_TRACE_CAP: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CallEventKind {
    Push { function: QualifiedName, args: Vec<Value> },
    Pop { function: QualifiedName },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallEvent {
    #[serde(flatten)]
    pub kind: CallEventKind,
    pub depth_after: usize,
}

/// The stack of active calls at the first entry into the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicCallGraph {
    pub path: Vec<QualifiedName>,
    pub capture_args: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSubstitution {
    pub function: QualifiedName,
    pub position: usize,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchRecord {
    pub site: BranchSite,
    pub taken: bool,
    pub operands: Option<(BinOp, Value, Value)>,
}

/// Smallest branch distance seen toward each outcome of one conditional.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteSummary {
    pub to_true: f64,
    pub to_false: f64,
    pub evaluations: u64,
}

#[derive(Debug, Clone)]
pub struct InstrumentedRun {
    pub outcome: ExecutionOutcome,
    pub dyn_graph: Option<DynamicCallGraph>,
    pub target_hit_count: u64,
    pub branch_trace: Vec<BranchRecord>,
    pub branch_summary: BTreeMap<BranchSite, SiteSummary>,
    pub functions_executed: BTreeSet<QualifiedName>,
    /// Arguments of each frame on `dyn_graph.path`, outermost first.
    pub frame_args: Vec<Vec<Value>>,
    /// What the first target invocation returned, if it returned.
    pub target_return: Option<Value>,
    /// An exception thrown out of the target went uncaught to the top.
    pub target_escaped: bool,
    /// The target was on the stack when a budget abort unwound it.
    pub target_aborted: bool,
    /// Populated only when [`RunOptions::record_events`] is set.
    pub events: Vec<CallEvent>,
}

impl InstrumentedRun {
    pub fn target_hit(&self) -> bool {
        self.target_hit_count > 0
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub record_events: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InstrumentError {
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error("substitution position {position} out of range for `{function}` (arity {arity})")]
    PositionOutOfRange {
        function: QualifiedName,
        position: usize,
        arity: usize,
    },
}

struct Tracker<'a> {
    target: Option<FnId>,
    substitution: Option<(FnId, &'a ParamSubstitution)>,
    record_events: bool,
    stack: Vec<(FnId, Vec<Value>)>,
    executed: BTreeSet<FnId>,
    hits: u64,
    first_hit_depth: Option<usize>,
    dyn_graph: Option<DynamicCallGraph>,
    frame_args: Vec<Vec<Value>>,
    target_return: Option<Value>,
    pending_escape: bool,
    target_aborted: bool,
    trace: Vec<BranchRecord>,
    summary: BTreeMap<BranchSite, SiteSummary>,
    events: Vec<CallEvent>,
    program: &'a Program,
}

impl Hooks for Tracker<'_> {
    fn on_enter(&mut self, program: &Program, func: FnId, args: &mut [Value], depth: usize) {
        if depth == 1 {
            if let Some((f, sub)) = self.substitution {
                if f == func {
                    args[sub.position] = sub.value.clone();
                }
            }
        }
        self.executed.insert(func);
        self.stack.push((func, args.to_vec()));
        if self.record_events {
            self.events.push(CallEvent {
                kind: CallEventKind::Push {
                    function: program.qname(func).clone(),
                    args: args.to_vec(),
                },
                depth_after: self.stack.len(),
            });
        }
        if Some(func) == self.target {
            self.hits += 1;
            if self.dyn_graph.is_none() {
                self.first_hit_depth = Some(depth);
                self.dyn_graph = Some(DynamicCallGraph {
                    path: self.stack.iter().map(|(f, _)| program.qname(*f).clone()).collect(),
                    capture_args: args.to_vec(),
                });
                self.frame_args = self.stack.iter().map(|(_, a)| a.clone()).collect();
            }
        }
    }

    fn on_exit(&mut self, func: FnId, exit: CallExit<'_>, depth: usize) {
        let (popped, _) = self.stack.pop().expect("exit without enter");
        debug_assert_eq!(popped, func);
        if self.record_events {
            self.events.push(CallEvent {
                kind: CallEventKind::Pop {
                    function: self.program.qname(func).clone(),
                },
                depth_after: self.stack.len(),
            });
        }
        if Some(func) != self.target {
            return;
        }
        match exit {
            CallExit::Returned(v) => {
                if self.first_hit_depth == Some(depth) && self.target_return.is_none() {
                    self.target_return = Some(v.clone());
                }
            }
            CallExit::Threw => self.pending_escape = true,
            CallExit::Aborted => self.target_aborted = true,
        }
        if self.first_hit_depth == Some(depth) {
            self.first_hit_depth = None;
        }
    }

    fn on_branch(&mut self, site: BranchSite, taken: bool, cmp: Option<Comparison<'_>>) {
        let (to_true, to_false) = match &cmp {
            Some(c) => (
                branch_distance(c.op, c.lhs, c.rhs),
                branch_distance(negate(c.op), c.lhs, c.rhs),
            ),
            None if taken => (0.0, 1.0),
            None => (1.0, 0.0),
        };
        let s = self.summary.entry(site).or_insert(SiteSummary {
            to_true: f64::INFINITY,
            to_false: f64::INFINITY,
            evaluations: 0,
        });
        s.to_true = s.to_true.min(to_true);
        s.to_false = s.to_false.min(to_false);
        s.evaluations += 1;
        if self.trace.len() < BRANCH_TRACE_CAP {
            self.trace.push(BranchRecord {
                site,
                taken,
                operands: cmp.map(|c| (c.op, c.lhs.clone(), c.rhs.clone())),
            });
        }
    }

    fn on_catch(&mut self) {
        self.pending_escape = false;
    }
}

fn negate(op: BinOp) -> BinOp {
    match op {
        BinOp::Eq => BinOp::Ne,
        BinOp::Ne => BinOp::Eq,
        BinOp::Lt => BinOp::Ge,
        BinOp::Le => BinOp::Gt,
        BinOp::Gt => BinOp::Le,
        BinOp::Ge => BinOp::Lt,
        other => other,
    }
}

/// Executes `test` under instrumentation, watching for `target`.
pub fn run_instrumented(
    program: &Program,
    test: &TestCase,
    target: &QualifiedName,
    substitution: Option<&ParamSubstitution>,
    budgets: Budgets,
    sandbox: &Sandbox,
    options: RunOptions,
) -> Result<InstrumentedRun, InstrumentError> {
    let substitution = match substitution {
        Some(sub) => {
            let f = program
                .lookup(&sub.function)
                .ok_or_else(|| ExecError::UnknownFunction(sub.function.clone()))?;
            let arity = program.decl(f).arity();
            if sub.position >= arity {
                return Err(InstrumentError::PositionOutOfRange {
                    function: sub.function.clone(),
                    position: sub.position,
                    arity,
                });
            }
            Some((f, sub))
        }
        None => None,
    };
    let mut tracker = Tracker {
        target: program.lookup(target),
        substitution,
        record_events: options.record_events,
        stack: Vec::new(),
        executed: BTreeSet::new(),
        hits: 0,
        first_hit_depth: None,
        dyn_graph: None,
        frame_args: Vec::new(),
        target_return: None,
        pending_escape: false,
        target_aborted: false,
        trace: Vec::new(),
        summary: BTreeMap::new(),
        events: Vec::new(),
        program,
    };
    let outcome = execute(
        program,
        &test.entry,
        test.args.clone(),
        budgets,
        &mut tracker,
        sandbox,
    )?;
    debug_assert!(tracker.stack.is_empty());
    let escaped = tracker.pending_escape
        && matches!(outcome.kind, OutcomeKind::UncaughtException { .. });
    Ok(InstrumentedRun {
        outcome,
        dyn_graph: tracker.dyn_graph,
        target_hit_count: tracker.hits,
        branch_trace: tracker.trace,
        branch_summary: tracker.summary,
        functions_executed: tracker
            .executed
            .iter()
            .map(|f| program.qname(*f).clone())
            .collect(),
        frame_args: tracker.frame_args,
        target_return: tracker.target_return,
        target_escaped: escaped,
        target_aborted: tracker.target_aborted,
        events: tracker.events,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unbalanced call events at index {0}")]
pub struct UnbalancedEvents(pub usize);

/// Replays push/pop events; the stack at the first push of `target` is the path.
pub fn collect_dynamic_call_graph(
    events: &[CallEvent],
    target: &QualifiedName,
) -> Result<Option<DynamicCallGraph>, UnbalancedEvents> {
    let mut stack: Vec<&QualifiedName> = Vec::new();
    let mut found = None;
    for (i, ev) in events.iter().enumerate() {
        match &ev.kind {
            CallEventKind::Push { function, args } => {
                stack.push(function);
                if found.is_none() && function == target {
                    found = Some(DynamicCallGraph {
                        path: stack.iter().map(|q| (*q).clone()).collect(),
                        capture_args: args.clone(),
                    });
                }
            }
            CallEventKind::Pop { function } => {
                if stack.pop() != Some(function) {
                    return Err(UnbalancedEvents(i));
                }
            }
        }
        if stack.len() != ev.depth_after {
            return Err(UnbalancedEvents(i));
        }
    }
    if !stack.is_empty() {
        return Err(UnbalancedEvents(events.len()));
    }
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::build_call_graph;
    use crate::vex::{ModuleKind, ProgramBuilder, SourceUnit};

    fn q(s: &str) -> QualifiedName {
        s.parse().unwrap()
    }

    fn program(app: &str, lib: &str) -> Program {
        let mut b = ProgramBuilder::new();
        b.add_source(ModuleKind::Project, &SourceUnit::new("app", app, "app.vex"));
        b.add_source(ModuleKind::Library, &SourceUnit::new("lib", lib, "lib.vex"));
        b.build().unwrap()
    }

    fn run(p: &Program, entry: &str, args: Vec<Value>, sub: Option<&ParamSubstitution>) -> InstrumentedRun {
        let tmp = tempfile::tempdir().unwrap();
        run_instrumented(
            p,
            &TestCase::new(q(entry), args),
            &q("lib::v"),
            sub,
            Budgets {
                max_steps: 20_000,
                max_call_depth: 64,
            },
            &Sandbox::new(tmp.path()),
            RunOptions { record_events: true },
        )
        .unwrap()
    }

    const PASS: &str = "pub fn e(x) { return lib::v(x); }";
    const V: &str = "pub fn v(y) { return y; }";

    #[test]
    fn pass_through_capture() {
        let p = program(PASS, V);
        let r = run(&p, "app::e", vec![Value::str("x")], None);
        let g = r.dyn_graph.unwrap();
        assert_eq!(g.path, [q("app::e"), q("lib::v")]);
        assert_eq!(g.capture_args, [Value::str("x")]);
        assert_eq!(r.target_hit_count, 1);
        assert_eq!(r.target_return, Some(Value::str("x")));
    }

    #[test]
    fn substitution_is_visible_at_target() {
        let p = program(PASS, V);
        let sub = ParamSubstitution {
            function: q("app::e"),
            position: 0,
            value: Value::str("PAYLOAD"),
        };
        let r = run(&p, "app::e", vec![Value::str("x")], Some(&sub));
        assert_eq!(r.dyn_graph.unwrap().capture_args, [Value::str("PAYLOAD")]);
    }

    #[test]
    fn unreached_target() {
        let p = program("pub fn e(x) { return 1; }", V);
        let r = run(&p, "app::e", vec![Value::Int(0)], None);
        assert!(r.dyn_graph.is_none());
        assert_eq!(r.target_hit_count, 0);
        assert!(r.functions_executed.contains(&q("app::e")));
    }

    #[test]
    fn position_out_of_range_is_an_error() {
        let p = program(PASS, V);
        let tmp = tempfile::tempdir().unwrap();
        let sub = ParamSubstitution {
            function: q("app::e"),
            position: 1,
            value: Value::Null,
        };
        let err = run_instrumented(
            &p,
            &TestCase::new(q("app::e"), vec![Value::Null]),
            &q("lib::v"),
            Some(&sub),
            Budgets::default(),
            &Sandbox::new(tmp.path()),
            RunOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, InstrumentError::PositionOutOfRange { arity: 1, .. }));
    }

    #[test]
    fn substitution_only_at_top_level() {
        let app = "pub fn e(x, n) { if n > 0 { return e(x, n - 1); } return lib::v(x); }";
        let p = program(app, V);
        let sub = ParamSubstitution {
            function: q("app::e"),
            position: 0,
            value: Value::str("P"),
        };
        let r = run(&p, "app::e", vec![Value::str("x"), Value::Int(2)], Some(&sub));
        let g = r.dyn_graph.unwrap();
        assert_eq!(g.path.len(), 4);
        assert_eq!(g.capture_args, [Value::str("P")]);
        assert_eq!(r.frame_args[1], [Value::str("P"), Value::Int(1)]);
    }

    #[test]
    fn first_hit_is_recorded() {
        let p = program("pub fn e() { lib::v(1); return w(); } fn w() { return lib::v(2); }", V);
        let r = run(&p, "app::e", vec![], None);
        assert_eq!(r.target_hit_count, 2);
        let g = r.dyn_graph.unwrap();
        assert_eq!(g.path, [q("app::e"), q("lib::v")]);
        assert_eq!(g.capture_args, [Value::Int(1)]);
        assert_eq!(r.target_return, Some(Value::Int(1)));
    }

    #[test]
    fn escape_and_abort_flags() {
        let p = program(PASS, "pub fn v(y) { if y == 0 { throw \"boom\"; } if y == 1 { return v(y); } return y; }");
        assert!(run(&p, "app::e", vec![Value::Int(0)], None).target_escaped);
        let r = run(&p, "app::e", vec![Value::Int(1)], None);
        assert!(r.target_aborted && !r.target_escaped);
        assert_eq!(r.outcome.kind, OutcomeKind::DepthBudgetExceeded);

        let caught = program("pub fn e(x) { try { lib::v(x); } catch e { return 0; } return 1; }", "pub fn v(y) { throw y; }");
        let r = run(&caught, "app::e", vec![Value::Int(0)], None);
        assert!(r.target_hit() && !r.target_escaped);
    }

    #[test]
    fn events_balance_and_replay() {
        let lib = "pub fn v(y) { if y > 3 { throw \"big\"; } while y < 0 { y = y; } return h(y); } fn h(y) { return y; }";
        let app = "pub fn e(x) { try { lib::v(x); } catch e { } return lib::v(x - 2); }";
        let p = program(app, lib);
        let graph = build_call_graph(&p);
        for x in [-1, 0, 2, 4, 7] {
            let r = run(&p, "app::e", vec![Value::Int(x)], None);
            let pushes = r.events.iter().filter(|e| matches!(e.kind, CallEventKind::Push { .. })).count();
            assert_eq!(pushes * 2, r.events.len(), "x = {x}");
            let replayed = collect_dynamic_call_graph(&r.events, &q("lib::v")).unwrap();
            assert_eq!(replayed, r.dyn_graph);
            for w in r.dyn_graph.unwrap().path.windows(2) {
                assert!(graph.has_edge(&w[0], &w[1]));
            }
        }
    }

    fn push(f: &str, depth: usize) -> CallEvent {
        CallEvent {
            kind: CallEventKind::Push {
                function: q(f),
                args: vec![Value::Int(depth as i64)],
            },
            depth_after: depth,
        }
    }

    fn pop(f: &str, depth: usize) -> CallEvent {
        CallEvent {
            kind: CallEventKind::Pop { function: q(f) },
            depth_after: depth,
        }
    }

    /// Independent oracle: the path is the prefix of pushes still open at
    /// the first push of the target, read straight off the depths.
    fn oracle(events: &[CallEvent], target: &str) -> Option<Vec<QualifiedName>> {
        let mut open: Vec<Option<QualifiedName>> = vec![None; events.len() + 1];
        for e in events {
            if let CallEventKind::Push { function, .. } = &e.kind {
                open[e.depth_after] = Some(function.clone());
                if function == &q(target) {
                    return Some(open[1..=e.depth_after].iter().map(|f| f.clone().unwrap()).collect());
                }
            }
        }
        None
    }

    #[test]
    fn replay_examples() {
        let ev = vec![push("m::a", 1), push("m::b", 2), push("m::v", 3), pop("m::v", 2), pop("m::b", 1), pop("m::a", 0)];
        let g = collect_dynamic_call_graph(&ev, &q("m::v")).unwrap().unwrap();
        assert_eq!(g.path, [q("m::a"), q("m::b"), q("m::v")]);
        assert_eq!(g.capture_args, [Value::Int(3)]);
        assert_eq!(collect_dynamic_call_graph(&ev, &q("m::z")).unwrap(), None);

        let twice = vec![
            push("m::a", 1),
            push("m::v", 2),
            pop("m::v", 1),
            push("m::b", 2),
            push("m::v", 3),
            pop("m::v", 2),
            pop("m::b", 1),
            pop("m::a", 0),
        ];
        let g = collect_dynamic_call_graph(&twice, &q("m::v")).unwrap().unwrap();
        assert_eq!(Some(g.path.clone()), oracle(&twice, "m::v"));
        assert_eq!(g.path, [q("m::a"), q("m::v")]);
        assert_eq!(oracle(&ev, "m::v").unwrap(), [q("m::a"), q("m::b"), q("m::v")]);
    }

    #[test]
    fn unbalanced_events_are_rejected() {
        let mismatched = vec![push("m::a", 1), pop("m::b", 0)];
        assert_eq!(collect_dynamic_call_graph(&mismatched, &q("m::a")), Err(UnbalancedEvents(1)));
        let open = vec![push("m::a", 1)];
        assert_eq!(collect_dynamic_call_graph(&open, &q("m::a")), Err(UnbalancedEvents(1)));
        let bad_depth = vec![push("m::a", 2)];
        assert_eq!(collect_dynamic_call_graph(&bad_depth, &q("m::a")), Err(UnbalancedEvents(0)));
    }

    #[test]
    fn branch_summary_tracks_distances() {
        let p = program("pub fn e(x) { if x == 10 { return lib::v(x); } return 0; }", V);
        let r = run(&p, "app::e", vec![Value::Int(7)], None);
        let s = r.branch_summary.values().next().unwrap();
        assert_eq!(s.to_true, 3.0);
        assert_eq!(s.to_false, 0.0);
        assert_eq!(r.branch_trace.len(), 1);
        assert!(!r.branch_trace[0].taken);
    }
}
