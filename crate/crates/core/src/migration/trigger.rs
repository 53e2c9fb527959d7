use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::instrument::InstrumentedRun;
use crate::interp::{FileEvent, NetEvent, OutcomeKind, SqlEvent, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    DosUncaughtException,
    DosInfiniteLoop,
    DosStackOverflow,
    Rce,
    Xxe,
    Sqli,
    WrongBehavior,
    PathTraversal,
}

impl TriggerKind {
    pub const ALL: [TriggerKind; 8] = [
        TriggerKind::DosUncaughtException,
        TriggerKind::DosInfiniteLoop,
        TriggerKind::DosStackOverflow,
        TriggerKind::Rce,
        TriggerKind::Xxe,
        TriggerKind::Sqli,
        TriggerKind::WrongBehavior,
        TriggerKind::PathTraversal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TriggerKind::DosUncaughtException => "dos_uncaught_exception",
            TriggerKind::DosInfiniteLoop => "dos_infinite_loop",
            TriggerKind::DosStackOverflow => "dos_stack_overflow",
            TriggerKind::Rce => "rce",
            TriggerKind::Xxe => "xxe",
            TriggerKind::Sqli => "sqli",
            TriggerKind::WrongBehavior => "wrong_behavior",
            TriggerKind::PathTraversal => "path_traversal",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum OracleSpec {
    NoException,
    ReturnEquals(Value),
    ReturnDiffers(Value),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerCondition {
    pub kind: TriggerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSpec>,
    /// Regex a SQL event must match for `sqli`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sql_pattern: Option<String>,
}

/// A trigger condition with its pattern compiled and the attacker host bound.
#[derive(Debug, Clone)]
pub struct TriggerContext {
    pub condition: TriggerCondition,
    pub attacker_host: String,
    sql: Option<Regex>,
}

impl TriggerContext {
    pub fn new(condition: TriggerCondition, attacker_host: impl Into<String>) -> Result<Self, regex::Error> {
        let sql = condition.sql_pattern.as_deref().map(Regex::new).transpose()?;
        Ok(Self {
            condition,
            attacker_host: attacker_host.into(),
            sql,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Evidence {
    Outcome { outcome: String, message: Option<String> },
    Net(NetEvent),
    Sql(SqlEvent),
    File(FileEvent),
    Oracle { oracle: OracleSpec, returned: Option<Value> },
}

fn url_host(url: &str) -> Option<String> {
    url::Url::parse(url).ok()?.host_str().map(str::to_ascii_lowercase)
}

/// Evidence when `run` satisfies the condition, otherwise `None`. The
/// vulnerable function must have executed; the denial-of-service kinds
/// further require it to be involved in the failure.
pub fn detect_trigger(run: &InstrumentedRun, ctx: &TriggerContext) -> Option<Vec<Evidence>> {
    if !run.target_hit() {
        return None;
    }
    let outcome = || Evidence::Outcome {
        outcome: run.outcome.kind.label().to_string(),
        message: match &run.outcome.kind {
            OutcomeKind::UncaughtException { message } => Some(message.clone()),
            _ => None,
        },
    };
    let sinks = &run.outcome.sinks;
    let evidence: Vec<Evidence> = match ctx.condition.kind {
        TriggerKind::DosUncaughtException => {
            if run.target_escaped {
                vec![outcome()]
            } else {
                vec![]
            }
        }
        TriggerKind::DosInfiniteLoop => {
            if run.target_aborted && run.outcome.kind == OutcomeKind::StepBudgetExceeded {
                vec![outcome()]
            } else {
                vec![]
            }
        }
        TriggerKind::DosStackOverflow => {
            if run.target_aborted && run.outcome.kind == OutcomeKind::DepthBudgetExceeded {
                vec![outcome()]
            } else {
                vec![]
            }
        }
        TriggerKind::Rce | TriggerKind::Xxe => {
            let host = ctx.attacker_host.to_ascii_lowercase();
            sinks
                .net_events
                .iter()
                .filter(|e| url_host(&e.url).as_deref() == Some(host.as_str()))
                .map(|e| Evidence::Net(e.clone()))
                .collect()
        }
        TriggerKind::Sqli => match &ctx.sql {
            Some(re) => sinks
                .sql_events
                .iter()
                .filter(|e| re.is_match(&e.query))
                .map(|e| Evidence::Sql(e.clone()))
                .collect(),
            None => vec![],
        },
        TriggerKind::PathTraversal => sinks
            .file_events
            .iter()
            .filter(|e| !e.allowed)
            .map(|e| Evidence::File(e.clone()))
            .collect(),
        TriggerKind::WrongBehavior => {
            let oracle = ctx
                .condition
                .oracle
                .clone()
                .unwrap_or(OracleSpec::NoException);
            let holds = match &oracle {
                OracleSpec::NoException => matches!(run.outcome.kind, OutcomeKind::Returned { .. }),
                OracleSpec::ReturnEquals(v) => run.target_return.as_ref().is_some_and(|r| r.vex_eq(v)),
                OracleSpec::ReturnDiffers(v) => run.target_return.as_ref().is_some_and(|r| !r.vex_eq(v)),
            };
            if holds {
                vec![Evidence::Oracle {
                    oracle,
                    returned: run.target_return.clone(),
                }]
            } else {
                vec![]
            }
        }
    };
    (!evidence.is_empty()).then_some(evidence)
}
