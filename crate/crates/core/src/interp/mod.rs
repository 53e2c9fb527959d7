//! Deterministic tree-walking evaluator for Vex.
//!
//! One step is one statement or expression evaluation. Infinite loops surface
//! as step-budget exhaustion and runaway recursion as depth-budget
//! exhaustion; neither is catchable from Vex code. Effects that stand in for
//! external systems (network, database, filesystem, console) are appended to
//! a per-execution [`SinkLog`].

mod builtins;
mod eval;
mod sandbox;
mod value;

use serde::{Deserialize, Serialize};

use crate::vex::{BinOp, FnId, Program, QualifiedName};

pub use sandbox::{Resolved, Sandbox};
pub use value::{FileRef, Record, Value, ValueKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budgets {
    pub max_steps: u64,
    pub max_call_depth: usize,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            max_steps: 1_000_000,
            max_call_depth: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetEvent {
    pub url: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SqlEvent {
    pub query: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEvent {
    pub requested: String,
    pub resolved: String,
    pub allowed: bool,
}

/// Effects recorded during one execution. Append-only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SinkLog {
    pub net_events: Vec<NetEvent>,
    pub sql_events: Vec<SqlEvent>,
    pub file_events: Vec<FileEvent>,
    pub console: Vec<String>,
}

impl SinkLog {
    pub fn is_empty(&self) -> bool {
        self.net_events.is_empty()
            && self.sql_events.is_empty()
            && self.file_events.is_empty()
            && self.console.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OutcomeKind {
    Returned { value: Value },
    UncaughtException { message: String },
    StepBudgetExceeded,
    DepthBudgetExceeded,
}

impl OutcomeKind {
    pub fn label(&self) -> &'static str {
        match self {
            OutcomeKind::Returned { .. } => "returned",
            OutcomeKind::UncaughtException { .. } => "uncaught_exception",
            OutcomeKind::StepBudgetExceeded => "step_budget_exceeded",
            OutcomeKind::DepthBudgetExceeded => "depth_budget_exceeded",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub kind: OutcomeKind,
    pub steps_used: u64,
    pub max_depth_seen: usize,
    pub sinks: SinkLog,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExecError {
    #[error("unknown function `{0}`")]
    UnknownFunction(QualifiedName),
    #[error("`{function}` takes {expected} argument(s), got {got}")]
    ArityMismatch {
        function: QualifiedName,
        expected: usize,
        got: usize,
    },
}

/// How a call frame ended, as reported to [`Hooks::on_exit`].
#[derive(Debug, Clone, Copy)]
pub enum CallExit<'a> {
    Returned(&'a Value),
    Threw,
    /// Budget abort; the frame is being unwound synthetically.
    Aborted,
}

/// A conditional's location: module index plus parse-order branch id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BranchSite {
    pub module: usize,
    pub id: u32,
}

/// Operands of a comparison predicate, when both sides are numbers,
/// strings, or booleans.
#[derive(Debug, Clone, Copy)]
pub struct Comparison<'a> {
    pub op: BinOp,
    pub lhs: &'a Value,
    pub rhs: &'a Value,
}

/// Execution observer. `on_enter` may rewrite the arguments before the
/// callee's body runs.
pub trait Hooks {
    fn on_enter(&mut self, _program: &Program, _func: FnId, _args: &mut [Value], _depth: usize) {}
    fn on_exit(&mut self, _func: FnId, _exit: CallExit<'_>, _depth: usize) {}
    fn on_branch(&mut self, _site: BranchSite, _taken: bool, _cmp: Option<Comparison<'_>>) {}
    /// An exception was caught by a `try`.
    fn on_catch(&mut self) {}
}

pub struct NoHooks;

impl Hooks for NoHooks {}

/// Runs `call` with `args` to completion or budget exhaustion.
pub fn execute(
    program: &Program,
    call: &QualifiedName,
    args: Vec<Value>,
    budgets: Budgets,
    hooks: &mut dyn Hooks,
    sandbox: &Sandbox,
) -> Result<ExecutionOutcome, ExecError> {
    let id = program
        .lookup(call)
        .ok_or_else(|| ExecError::UnknownFunction(call.clone()))?;
    let expected = program.decl(id).arity();
    if expected != args.len() {
        return Err(ExecError::ArityMismatch {
            function: call.clone(),
            expected,
            got: args.len(),
        });
    }
    Ok(eval::run(program, id, args, budgets, hooks, sandbox))
}

#[cfg(test)]
mod tests;
