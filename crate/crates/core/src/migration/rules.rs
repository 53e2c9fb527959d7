use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::extract::substitute_value;
use crate::interp::{Value, ValueKind};

pub const PAYLOAD_HOLE: &str = "{{PAYLOAD}}";

/// Vulnerability-independent wrappers tried after the corpus templates.
pub const GENERIC_TEMPLATES: [&str; 3] = ["\"{{PAYLOAD}}\"", "{{PAYLOAD}}\n", "{\"value\":{{PAYLOAD}}}"];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum MigrationRule {
    TypeConvert { target: ValueKind },
    AffixString { prefix: String, suffix: String },
    Template { pattern: String },
    FileMaterialize,
    MarkerSubstitute,
}

impl MigrationRule {
    pub fn template(pattern: impl Into<String>) -> Result<Self, String> {
        let pattern = pattern.into();
        if pattern.matches(PAYLOAD_HOLE).count() != 1 {
            return Err(format!("template `{pattern}` must contain {PAYLOAD_HOLE} exactly once"));
        }
        Ok(MigrationRule::Template { pattern })
    }
}

/// A file the migrated test needs on disk, sandbox-relative.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaterializedFile {
    pub path: String,
    pub content: String,
}

/// Inputs a rule may consult besides the value itself.
pub struct RuleEnv<'a> {
    pub attacker_host: &'a str,
    pub sandbox_root: &'a Path,
}

/// Outcome of applying a rule: the new value plus any files it wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct Applied {
    pub value: Value,
    pub files: Vec<MaterializedFile>,
}

fn raw_text(v: &Value) -> String {
    match v {
        Value::File(f) => f.content.to_string(),
        other => other.display(),
    }
}

fn content_path(content: &str) -> String {
    let digest = Sha256::digest(content.as_bytes());
    let hex: String = digest[..6].iter().map(|b| format!("{b:02x}")).collect();
    format!("tmp/payload-{hex}.dat")
}

fn materialize(content: &str, env: &RuleEnv<'_>) -> Option<MaterializedFile> {
    let path = content_path(content);
    let host = env.sandbox_root.join(&path);
    std::fs::create_dir_all(host.parent()?).ok()?;
    std::fs::write(&host, content).ok()?;
    Some(MaterializedFile {
        path,
        content: content.to_string(),
    })
}

/// `None` when the rule does not apply to `value` (skip, not failure).
pub fn apply_rule(rule: &MigrationRule, value: &Value, env: &RuleEnv<'_>) -> Option<Applied> {
    let plain = |value: Value| Some(Applied { value, files: Vec::new() });
    match rule {
        MigrationRule::MarkerSubstitute => {
            let out = substitute_value(value, env.attacker_host);
            (out != *value).then_some(Applied { value: out, files: Vec::new() })
        }
        MigrationRule::TypeConvert { target } => {
            if value.kind() == *target {
                return None;
            }
            match (value, target) {
                (Value::Str(s), ValueKind::Int) => plain(Value::Int(s.trim().parse().ok()?)),
                (Value::Str(s), ValueKind::Float) => plain(Value::Float(s.trim().parse().ok()?)),
                (Value::Str(s), ValueKind::List) => {
                    plain(Value::list(s.chars().map(|c| Value::str(c.to_string())).collect()))
                }
                (Value::Str(_), ValueKind::Record) => plain(Value::record([("value", value.clone())])),
                (Value::Str(s), ValueKind::File) => {
                    let f = materialize(s, env)?;
                    Some(Applied {
                        value: Value::file(&f.path, &f.content),
                        files: vec![f],
                    })
                }
                (Value::Int(_) | Value::Float(_) | Value::Bool(_), ValueKind::Str) => {
                    plain(Value::str(value.display()))
                }
                (Value::Int(i), ValueKind::Float) => plain(Value::Float(*i as f64)),
                (Value::Float(x), ValueKind::Int) if x.fract() == 0.0 && x.is_finite() => {
                    plain(Value::Int(*x as i64))
                }
                (Value::File(f), ValueKind::Str) => {
                    let m = materialize(&f.content, env)?;
                    Some(Applied {
                        value: Value::str(&m.path),
                        files: vec![m],
                    })
                }
                _ => None,
            }
        }
        MigrationRule::AffixString { prefix, suffix } => match value {
            Value::Str(s) => plain(Value::str(format!("{prefix}{s}{suffix}"))),
            _ => None,
        },
        MigrationRule::Template { pattern } => {
            plain(Value::str(pattern.replacen(PAYLOAD_HOLE, &raw_text(value), 1)))
        }
        MigrationRule::FileMaterialize => match value {
            Value::Str(s) => {
                let f = materialize(s, env)?;
                Some(Applied {
                    value: Value::file(&f.path, &f.content),
                    files: vec![f],
                })
            }
            _ => None,
        },
    }
}

/// Applies `chain` left to right; `None` if any step is inapplicable.
pub fn apply_chain(chain: &[MigrationRule], value: &Value, env: &RuleEnv<'_>) -> Option<Applied> {
    let mut cur = Applied {
        value: value.clone(),
        files: Vec::new(),
    };
    for rule in chain {
        let next = apply_rule(rule, &cur.value, env)?;
        cur.value = next.value;
        cur.files.extend(next.files);
    }
    Some(cur)
}
