//! Payload capture from exploit programs, and attacker-marker substitution.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::instrument::{run_instrumented, InstrumentError, RunOptions};
use crate::interp::{Budgets, ExecutionOutcome, FileRef, Sandbox, Value};
use crate::test_case::TestCase;
use crate::vex::{Program, QualifiedName};

pub const ATTACKER_MARKER: &str = "{{ATTACKER}}";

/// Arguments the vulnerable function received when the exploit ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExploitPayload {
    pub values: Vec<Value>,
    pub primary_index: usize,
    pub source: String,
}

impl ExploitPayload {
    pub fn primary(&self) -> &Value {
        &self.values[self.primary_index]
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExtractError {
    #[error("payload not capturable: exploit never reached `{vulnerable}` (outcome {outcome})")]
    NotCaptured { vulnerable: QualifiedName, outcome: String },
    #[error("payload not capturable: `{0}` takes no arguments")]
    NoArguments(QualifiedName),
    #[error("primary_index {index} out of range for {len} captured argument(s)")]
    PrimaryIndex { index: usize, len: usize },
    #[error(transparent)]
    Run(#[from] InstrumentError),
}

/// Successful extraction also reports how the exploit run itself ended.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub payload: ExploitPayload,
    pub exploit_outcome: ExecutionOutcome,
}

/// Runs `main` of the exploit program and captures the first arguments
/// `vulnerable` receives.
pub fn extract_payload(
    exploit_program: &Program,
    main: &QualifiedName,
    vulnerable: &QualifiedName,
    primary_index: usize,
    source: &str,
    budgets: Budgets,
    sandbox: &Sandbox,
) -> Result<Extraction, ExtractError> {
    let test = TestCase::new(main.clone(), Vec::new());
    let run = run_instrumented(
        exploit_program,
        &test,
        vulnerable,
        None,
        budgets,
        sandbox,
        RunOptions::default(),
    )?;
    let Some(graph) = run.dyn_graph else {
        return Err(ExtractError::NotCaptured {
            vulnerable: vulnerable.clone(),
            outcome: run.outcome.kind.label().to_string(),
        });
    };
    if graph.capture_args.is_empty() {
        return Err(ExtractError::NoArguments(vulnerable.clone()));
    }
    if primary_index >= graph.capture_args.len() {
        return Err(ExtractError::PrimaryIndex {
            index: primary_index,
            len: graph.capture_args.len(),
        });
    }
    Ok(Extraction {
        payload: ExploitPayload {
            values: graph.capture_args,
            primary_index,
            source: source.to_string(),
        },
        exploit_outcome: run.outcome,
    })
}

/// Replaces the attacker marker in every string, including file contents.
pub fn substitute_markers(payload: &ExploitPayload, attacker_host: &str) -> ExploitPayload {
    ExploitPayload {
        values: payload
            .values
            .iter()
            .map(|v| substitute_value(v, attacker_host))
            .collect(),
        primary_index: payload.primary_index,
        source: payload.source.clone(),
    }
}

pub fn substitute_value(v: &Value, host: &str) -> Value {
    match v {
        Value::Str(s) if s.contains(ATTACKER_MARKER) => Value::str(s.replace(ATTACKER_MARKER, host)),
        Value::List(items) => Value::list(items.iter().map(|i| substitute_value(i, host)).collect()),
        Value::Record(r) => Value::record(
            r.iter()
                .map(|(k, v)| (k.clone(), substitute_value(v, host))),
        ),
        Value::File(f) if f.content.contains(ATTACKER_MARKER) => Value::File(FileRef {
            path: f.path.clone(),
            content: Arc::from(f.content.replace(ATTACKER_MARKER, host).as_str()),
        }),
        other => other.clone(),
    }
}
