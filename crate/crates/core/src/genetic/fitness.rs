use serde::{Deserialize, Serialize};

use crate::analysis::CallPath;
use crate::extract::ExploitPayload;
use crate::instrument::InstrumentedRun;
use crate::interp::Value;
use crate::similarity::{levenshtein, similarity};
use crate::vex::{BinOp, QualifiedName};

/// The four additive fitness components. `total()` lies in `[0, 4]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessScore {
    pub entry_module_hit: f64,
    pub entry_function_hit: f64,
    pub reach: f64,
    pub sim: f64,
}

impl FitnessScore {
    pub const ZERO: FitnessScore = FitnessScore {
        entry_module_hit: 0.0,
        entry_function_hit: 0.0,
        reach: 0.0,
        sim: 0.0,
    };

    pub fn total(&self) -> f64 {
        self.entry_module_hit + self.entry_function_hit + self.reach + self.sim
    }
}

/// What one individual is scored against.
#[derive(Debug, Clone, Copy)]
pub struct Goals<'a> {
    pub entry: &'a QualifiedName,
    pub vulnerable: &'a QualifiedName,
    pub path: &'a CallPath,
}

/// `d / (d + 1)`, mapping `[0, inf]` onto `[0, 1]`.
pub fn normalize(d: f64) -> f64 {
    if d.is_infinite() {
        1.0
    } else if d.is_nan() {
        1.0
    } else {
        d / (d + 1.0)
    }
}

pub fn fitness(run: &InstrumentedRun, goals: Goals<'_>, payload: &ExploitPayload) -> FitnessScore {
    let executed = &run.functions_executed;
    let entry_module_hit = executed.iter().any(|f| f.module == goals.entry.module);
    let entry_function_hit = executed.contains(goals.entry);
    let mut score = FitnessScore {
        entry_module_hit: f64::from(u8::from(entry_module_hit)),
        entry_function_hit: f64::from(u8::from(entry_function_hit)),
        reach: 0.0,
        sim: 0.0,
    };
    if let Some(g) = &run.dyn_graph {
        score.reach = 1.0;
        let i = payload.primary_index;
        if let (Some(actual), Some(expected)) = (g.capture_args.get(i), payload.values.get(i)) {
            score.sim = similarity(actual, expected);
        }
        return score;
    }
    if !entry_function_hit {
        return score;
    }
    let path = &goals.path.functions;
    let Some(deepest) = path.iter().rposition(|f| executed.contains(f)) else {
        return score;
    };
    let target_index = path.len() - 1;
    let approach = (target_index - deepest.min(target_index)) as f64;
    let dist = goals
        .path
        .guard_branches
        .get(deepest)
        .into_iter()
        .flatten()
        .filter_map(|g| {
            let s = run.branch_summary.get(&g.site)?;
            let d = if g.required { s.to_true } else { s.to_false };
            (d > 0.0).then_some(d)
        })
        .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.min(d))))
        .unwrap_or(1.0);
    score.reach = 1.0 - (approach + normalize(dist)) / path.len() as f64;
    score
}

fn as_number(v: &Value) -> Option<f64> {
    match v {
        Value::Int(i) => Some(*i as f64),
        Value::Float(x) => Some(*x),
        _ => None,
    }
}

/// How far `lhs op rhs` is from holding; 0 when it holds.
pub fn branch_distance(op: BinOp, lhs: &Value, rhs: &Value) -> f64 {
    if let (Some(a), Some(b)) = (as_number(lhs), as_number(rhs)) {
        if a.is_nan() || b.is_nan() {
            return 1.0;
        }
        let d = match op {
            BinOp::Eq => (a - b).abs(),
            BinOp::Ne => f64::from(u8::from(a == b)),
            BinOp::Lt => if a < b { 0.0 } else { a - b + 1.0 },
            BinOp::Le => if a <= b { 0.0 } else { a - b },
            BinOp::Gt => if a > b { 0.0 } else { b - a + 1.0 },
            BinOp::Ge => if a >= b { 0.0 } else { b - a },
            _ => 1.0,
        };
        return d;
    }
    match (op, lhs, rhs) {
        (BinOp::Eq, Value::Str(a), Value::Str(b)) => levenshtein(a, b) as f64,
        (BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge, Value::Str(a), Value::Str(b)) => {
            let holds = match op {
                BinOp::Lt => a < b,
                BinOp::Le => a <= b,
                BinOp::Gt => a > b,
                _ => a >= b,
            };
            f64::from(u8::from(!holds))
        }
        (BinOp::Eq, _, _) => f64::from(u8::from(!lhs.vex_eq(rhs))),
        (BinOp::Ne, _, _) => f64::from(u8::from(lhs.vex_eq(rhs))),
        _ => 1.0,
    }
}
