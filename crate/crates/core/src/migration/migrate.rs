use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::rules::{apply_chain, MaterializedFile, MigrationRule, RuleEnv, GENERIC_TEMPLATES};
use super::trigger::{detect_trigger, Evidence, TriggerContext, TriggerKind};
use crate::extract::{ExploitPayload, ATTACKER_MARKER};
use crate::instrument::{run_instrumented, DynamicCallGraph, InstrumentedRun, ParamSubstitution, RunOptions};
use crate::interp::{Budgets, Sandbox, Value, ValueKind};
use crate::similarity::similarity;
use crate::test_case::TestCase;
use crate::vex::{Literal, ModuleKind, Program, QualifiedName, TypeAnnot};

pub const MAX_CHAIN: usize = 2;
pub const MAX_EXECUTIONS_PER_TEST: usize = 64;
pub const MAX_ARCHIVE: usize = 16;
const MAX_AFFIX_LITERALS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Exploitable,
    NotExploitable,
    Inconclusive,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Exploitable => "exploitable",
            Verdict::NotExploitable => "not_exploitable",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

/// A covering test with the payload injected at one entry position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigratedTest {
    pub test: TestCase,
    pub substitution: ParamSubstitution,
    pub rule_chain: Vec<MigrationRule>,
    /// Files the substituted value depends on, sandbox-relative.
    pub files: Vec<MaterializedFile>,
}

impl MigratedTest {
    /// The test with the substitution applied to its argument vector.
    pub fn replay_case(&self) -> TestCase {
        let mut args = self.test.args.clone();
        args[self.substitution.position] = self.substitution.value.clone();
        self.test.with_args(args)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerReport {
    pub verdict: Verdict,
    pub trigger: TriggerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub evidence: Vec<Evidence>,
    pub migrated_test: Option<MigratedTest>,
    pub call_path: Option<DynamicCallGraph>,
    pub received_value: Option<Value>,
    pub received_similarity: f64,
    pub executions: usize,
}

impl TriggerReport {
    pub fn not_exploitable(trigger: TriggerKind, reason: impl Into<String>) -> Self {
        Self {
            verdict: Verdict::NotExploitable,
            trigger,
            reason: Some(reason.into()),
            evidence: Vec::new(),
            migrated_test: None,
            call_path: None,
            received_value: None,
            received_similarity: 0.0,
            executions: 0,
        }
    }
}

/// Everything migration needs to know about the vulnerability.
pub struct MigrationSpec<'a> {
    pub vulnerable: &'a QualifiedName,
    pub trigger: &'a TriggerContext,
    pub templates: &'a [String],
    pub manual: bool,
}

struct Attempt {
    sub: ParamSubstitution,
    chain: Vec<MigrationRule>,
    files: Vec<MaterializedFile>,
}

struct Search<'a> {
    program: &'a Program,
    payload: &'a ExploitPayload,
    spec: &'a MigrationSpec<'a>,
    budgets: Budgets,
    sandbox: &'a Sandbox,
    executions: usize,
    near: Option<(f64, Value, DynamicCallGraph, MigratedTest)>,
}

impl Search<'_> {
    fn run(&mut self, test: &TestCase, sub: Option<&ParamSubstitution>) -> Option<InstrumentedRun> {
        self.executions += 1;
        run_instrumented(
            self.program,
            test,
            self.spec.vulnerable,
            sub,
            self.budgets,
            self.sandbox,
            RunOptions::default(),
        )
        .ok()
    }

    fn note(&mut self, run: &InstrumentedRun, migrated: impl FnOnce() -> MigratedTest) {
        let Some(g) = &run.dyn_graph else { return };
        let received = g
            .capture_args
            .get(self.payload.primary_index)
            .cloned()
            .unwrap_or_default();
        let sim = similarity(&received, self.payload.primary());
        if self.near.as_ref().is_none_or(|(s, ..)| sim > *s) {
            self.near = Some((sim, received, g.clone(), migrated()));
        }
    }

    /// Runs one attempt; on a trigger, confirms it with a fresh replay.
    /// Otherwise yields the arguments the vulnerable function received, if any.
    fn attempt(&mut self, test: &TestCase, a: Attempt) -> Result<TriggerReport, Option<Vec<Value>>> {
        let Some(run) = self.run(test, Some(&a.sub)) else { return Err(None) };
        let capture = run.dyn_graph.as_ref().map(|g| g.capture_args.clone());
        self.confirm(test, a, run).ok_or(capture)
    }

    fn confirm(&mut self, test: &TestCase, a: Attempt, run: InstrumentedRun) -> Option<TriggerReport> {
        let migrated = MigratedTest {
            test: test.clone(),
            substitution: a.sub,
            rule_chain: a.chain,
            files: a.files,
        };
        self.note(&run, || migrated.clone());
        let evidence = detect_trigger(&run, self.spec.trigger)?;
        let replay = self.run(&migrated.replay_case(), None)?;
        let confirmed = detect_trigger(&replay, self.spec.trigger)?;
        if std::mem::discriminant(&confirmed[0]) != std::mem::discriminant(&evidence[0]) {
            return None;
        }
        let g = run.dyn_graph.clone();
        let received = g
            .as_ref()
            .and_then(|g| g.capture_args.get(self.payload.primary_index).cloned());
        let sim = received
            .as_ref()
            .map_or(0.0, |r| similarity(r, self.payload.primary()));
        let (verdict, reason) = if self.spec.manual {
            (Verdict::Inconclusive, Some("manual confirmation required".to_string()))
        } else {
            (Verdict::Exploitable, None)
        };
        Some(TriggerReport {
            verdict,
            trigger: self.spec.trigger.condition.kind,
            reason,
            evidence,
            migrated_test: Some(migrated),
            call_path: g,
            received_value: received,
            received_similarity: sim.max(self.near.as_ref().map_or(0.0, |n| n.0)),
            executions: self.executions,
        })
    }

    fn exhausted(self, reason: &str) -> TriggerReport {
        let trigger = self.spec.trigger.condition.kind;
        let mut r = TriggerReport::not_exploitable(trigger, reason);
        r.executions = self.executions;
        if let Some((sim, received, g, m)) = self.near {
            r.received_similarity = sim;
            r.received_value = Some(received);
            r.call_path = Some(g);
            r.migrated_test = Some(m);
        }
        r
    }
}

fn annot_kind(a: TypeAnnot) -> Option<ValueKind> {
    [
        ValueKind::Bool,
        ValueKind::Int,
        ValueKind::Float,
        ValueKind::Str,
        ValueKind::List,
        ValueKind::Record,
        ValueKind::File,
    ]
    .into_iter()
    .find(|k| k.matches(a))
}

/// Whether `value` agrees with the annotation of the entry parameter at
/// `position`. Unannotated parameters accept anything.
fn fits(program: &Program, test: &TestCase, position: usize, value: &Value) -> bool {
    program
        .lookup(&test.entry)
        .and_then(|id| program.decl(id).params.get(position).and_then(|p| p.annotation))
        .is_none_or(|a| value.kind().matches(a))
}

/// Rules tried singly, in priority order, for one entry position.
fn single_rules(
    program: &Program,
    test: &TestCase,
    position: usize,
    payload: &Value,
    spec: &MigrationSpec<'_>,
    path_literals: &[String],
) -> Vec<MigrationRule> {
    let mut rules = vec![MigrationRule::MarkerSubstitute];
    let annot = program
        .lookup(&test.entry)
        .and_then(|id| program.decl(id).params.get(position).and_then(|p| p.annotation));
    let wanted = match annot.and_then(annot_kind) {
        Some(k) => Some(k),
        None => test.args.get(position).map(Value::kind),
    };
    if let Some(k) = wanted.filter(|k| *k != payload.kind() && *k != ValueKind::Null) {
        rules.push(MigrationRule::TypeConvert { target: k });
    }
    for t in spec.templates {
        if let Ok(r) = MigrationRule::template(t.clone()) {
            rules.push(r);
        }
    }
    for t in GENERIC_TEMPLATES {
        rules.push(MigrationRule::Template { pattern: t.to_string() });
    }
    for lit in path_literals {
        rules.push(MigrationRule::AffixString {
            prefix: lit.clone(),
            suffix: String::new(),
        });
    }
    for lit in path_literals {
        rules.push(MigrationRule::AffixString {
            prefix: String::new(),
            suffix: lit.clone(),
        });
    }
    rules.push(MigrationRule::FileMaterialize);
    rules
}

/// Non-empty string literals of project functions on the dynamic path.
fn path_literals(program: &Program, path: &[QualifiedName]) -> Vec<String> {
    let ids: Vec<_> = path
        .iter()
        .filter_map(|q| program.lookup(q))
        .filter(|id| program.kind_of(*id) == ModuleKind::Project)
        .collect();
    let mut seen = HashSet::new();
    program
        .literals_in(&ids)
        .into_iter()
        .filter_map(|l| match l {
            Literal::Str(s) if !s.is_empty() && !s.contains(ATTACKER_MARKER) => Some(s),
            _ => None,
        })
        .filter(|s| seen.insert(s.clone()))
        .take(MAX_AFFIX_LITERALS)
        .collect()
}

/// Substitutes the payload into each archive test, repairing it with rule
/// chains, until the trigger condition is observed and confirmed by replay.
pub fn migrate(
    archive: &[TestCase],
    payload: &ExploitPayload,
    spec: &MigrationSpec<'_>,
    program: &Program,
    budgets: Budgets,
    sandbox: &Sandbox,
) -> TriggerReport {
    let mut search = Search {
        program,
        payload,
        spec,
        budgets,
        sandbox,
        executions: 0,
        near: None,
    };
    let env = RuleEnv {
        attacker_host: &spec.trigger.attacker_host,
        sandbox_root: sandbox.root(),
    };
    let base = payload.primary();
    for test in archive.iter().take(MAX_ARCHIVE) {
        if test.args.is_empty() {
            continue;
        }
        let start = search.executions;
        let Some(baseline) = search.run(test, None) else { continue };
        let baseline_capture = baseline.dyn_graph.as_ref().map(|g| g.capture_args.clone());
        let literals = baseline
            .dyn_graph
            .as_ref()
            .map(|g| path_literals(program, &g.path))
            .unwrap_or_default();

        let sub = |position: usize, value: Value| ParamSubstitution {
            function: test.entry.clone(),
            position,
            value,
        };
        let mut influential = Vec::new();
        for p in 0..test.args.len() {
            if !fits(program, test, p, base) {
                influential.push(p);
                continue;
            }
            let a = Attempt {
                sub: sub(p, base.clone()),
                chain: Vec::new(),
                files: Vec::new(),
            };
            match search.attempt(test, a) {
                Ok(r) => return r,
                Err(capture) => {
                    if capture.is_none() || capture != baseline_capture {
                        influential.push(p);
                    }
                }
            }
        }
        let positions: Vec<usize> = if influential.is_empty() {
            (0..test.args.len()).collect()
        } else {
            influential
        };

        let mut tried: HashSet<(usize, String)> = HashSet::new();
        for p in positions {
            tried.insert((p, value_key(base)));
            let singles = single_rules(program, test, p, base, spec, &literals);
            let mut chains: Vec<Vec<MigrationRule>> = singles.iter().map(|r| vec![r.clone()]).collect();
            for a in &singles {
                for b in &singles {
                    if a != b {
                        chains.push(vec![a.clone(), b.clone()]);
                    }
                }
            }
            for chain in chains {
                if search.executions - start >= MAX_EXECUTIONS_PER_TEST {
                    break;
                }
                let Some(applied) = apply_chain(&chain, base, &env) else { continue };
                if !fits(program, test, p, &applied.value) {
                    continue;
                }
                if !tried.insert((p, value_key(&applied.value))) {
                    continue;
                }
                let a = Attempt {
                    sub: sub(p, applied.value),
                    chain,
                    files: applied.files,
                };
                if let Ok(r) = search.attempt(test, a) {
                    return r;
                }
            }
        }
    }
    search.exhausted("no rule chain triggered the vulnerability")
}

fn value_key(v: &Value) -> String {
    match v {
        Value::File(f) => format!("{}\0{}", v.to_literal(), f.content),
        _ => v.to_literal(),
    }
}

/// Ablation baseline: checks whether an archive test triggers the
/// vulnerability as generated, with no payload substitution.
pub fn direct_trigger(
    archive: &[TestCase],
    payload: &ExploitPayload,
    spec: &MigrationSpec<'_>,
    program: &Program,
    budgets: Budgets,
    sandbox: &Sandbox,
) -> TriggerReport {
    let mut search = Search {
        program,
        payload,
        spec,
        budgets,
        sandbox,
        executions: 0,
        near: None,
    };
    for test in archive.iter().take(MAX_ARCHIVE) {
        let Some(run) = search.run(test, None) else { continue };
        let identity = || MigratedTest {
            test: test.clone(),
            substitution: ParamSubstitution {
                function: test.entry.clone(),
                position: 0,
                value: test.args.first().cloned().unwrap_or_default(),
            },
            rule_chain: Vec::new(),
            files: Vec::new(),
        };
        search.note(&run, identity);
        if let Some(evidence) = detect_trigger(&run, spec.trigger) {
            let received = run
                .dyn_graph
                .as_ref()
                .and_then(|g| g.capture_args.get(payload.primary_index).cloned());
            return TriggerReport {
                verdict: if spec.manual { Verdict::Inconclusive } else { Verdict::Exploitable },
                trigger: spec.trigger.condition.kind,
                reason: None,
                evidence,
                migrated_test: (!test.args.is_empty()).then(identity),
                call_path: run.dyn_graph.clone(),
                received_similarity: received.as_ref().map_or(0.0, |r| similarity(r, payload.primary())),
                received_value: received,
                executions: search.executions,
            };
        }
    }
    search.exhausted("no generated test triggered the vulnerability")
}
