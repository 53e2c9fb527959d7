use std::fmt;
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::vex::{quote, render_float, TypeAnnot};

pub type Record = IndexMap<String, Value>;

/// A file handle: sandbox-relative path plus the content snapshot taken when
/// the file was opened (or materialized).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRef {
    pub path: Arc<str>,
    pub content: Arc<str>,
}

/// Runtime datum. Aggregates are reference counted and copied on write.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Value {
    #[default]
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(Arc<str>),
    List(Arc<Vec<Value>>),
    Record(Arc<Record>),
    File(FileRef),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueKind {
    Null,
    Bool,
    Int,
    Float,
    Str,
    List,
    Record,
    File,
}

impl ValueKind {
    pub fn name(self) -> &'static str {
        match self {
            ValueKind::Null => "null",
            ValueKind::Bool => "bool",
            ValueKind::Int => "int",
            ValueKind::Float => "float",
            ValueKind::Str => "str",
            ValueKind::List => "list",
            ValueKind::Record => "record",
            ValueKind::File => "file",
        }
    }

    pub fn matches(self, annot: TypeAnnot) -> bool {
        matches!(
            (self, annot),
            (ValueKind::Int, TypeAnnot::Int)
                | (ValueKind::Float, TypeAnnot::Float)
                | (ValueKind::Bool, TypeAnnot::Bool)
                | (ValueKind::Str, TypeAnnot::Str)
                | (ValueKind::List, TypeAnnot::List)
                | (ValueKind::Record, TypeAnnot::Record)
                | (ValueKind::File, TypeAnnot::File)
        )
    }
}

impl Value {
    pub fn str(s: impl AsRef<str>) -> Value {
        Value::Str(Arc::from(s.as_ref()))
    }

    pub fn list(items: Vec<Value>) -> Value {
        Value::List(Arc::new(items))
    }

    pub fn record<K: Into<String>>(fields: impl IntoIterator<Item = (K, Value)>) -> Value {
        Value::Record(Arc::new(
            fields.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        ))
    }

    pub fn file(path: impl AsRef<str>, content: impl AsRef<str>) -> Value {
        Value::File(FileRef {
            path: Arc::from(path.as_ref()),
            content: Arc::from(content.as_ref()),
        })
    }

    pub fn kind(&self) -> ValueKind {
        match self {
            Value::Null => ValueKind::Null,
            Value::Bool(_) => ValueKind::Bool,
            Value::Int(_) => ValueKind::Int,
            Value::Float(_) => ValueKind::Float,
            Value::Str(_) => ValueKind::Str,
            Value::List(_) => ValueKind::List,
            Value::Record(_) => ValueKind::Record,
            Value::File(_) => ValueKind::File,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Value::Int(_) | Value::Float(_) | Value::Bool(_))
    }

    /// Display form used by `@to_str`, string concatenation, and `throw`.
    pub fn display(&self) -> String {
        match self {
            Value::Str(s) => s.to_string(),
            Value::File(f) => f.path.to_string(),
            other => other.to_literal(),
        }
    }

    /// Vex source text that evaluates to this value. FileRefs render as an
    /// `@open` of their path, so the file must exist where the text runs.
    pub fn to_literal(&self) -> String {
        let mut out = String::new();
        self.literal_into(&mut out);
        out
    }

    fn literal_into(&self, out: &mut String) {
        match self {
            Value::Null => out.push_str("null"),
            Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Value::Int(i) if *i == i64::MIN => out.push_str("(-9223372036854775807 - 1)"),
            Value::Int(i) => out.push_str(&i.to_string()),
            Value::Float(x) => out.push_str(&render_float(*x)),
            Value::Str(s) => out.push_str(&quote(s)),
            Value::List(items) => {
                out.push('[');
                for (i, v) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    v.literal_into(out);
                }
                out.push(']');
            }
            Value::Record(r) => {
                out.push('{');
                for (i, (k, v)) in r.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    out.push_str(&quote(k));
                    out.push_str(": ");
                    v.literal_into(out);
                }
                out.push('}');
            }
            Value::File(f) => {
                out.push_str("@open(");
                out.push_str(&quote(&f.path));
                out.push(')');
            }
        }
    }

    /// Structural equality as seen by Vex `==`: Int and Float compare
    /// numerically, floats exactly.
    pub fn vex_eq(&self, other: &Value) -> bool {
        match (self, other) {
            (Value::Int(a), Value::Float(b)) | (Value::Float(b), Value::Int(a)) => (*a as f64) == *b,
            (Value::List(a), Value::List(b)) => {
                a.len() == b.len() && a.iter().zip(b.iter()).all(|(x, y)| x.vex_eq(y))
            }
            (Value::Record(a), Value::Record(b)) => {
                a.len() == b.len()
                    && a.iter()
                        .all(|(k, v)| b.get(k).is_some_and(|w| v.vex_eq(w)))
            }
            _ => self == other,
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Value::Null, Value::Null) => true,
            (Value::Bool(a), Value::Bool(b)) => a == b,
            (Value::Int(a), Value::Int(b)) => a == b,
            (Value::Float(a), Value::Float(b)) => a.to_bits() == b.to_bits() || a == b,
            (Value::Str(a), Value::Str(b)) => a == b,
            (Value::List(a), Value::List(b)) => a == b,
            (Value::Record(a), Value::Record(b)) => a == b,
            (Value::File(a), Value::File(b)) => a == b,
            _ => false,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_literal())
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::str(s)
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Float(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn literal_rendering() {
        let v = Value::record([
            ("a", Value::list(vec![Value::Int(-3), Value::Float(0.5)])),
            ("@b", Value::str("x\"y")),
        ]);
        assert_eq!(v.to_literal(), r#"{"a": [-3, 0.5], "@b": "x\"y"}"#);
        assert_eq!(Value::file("fixtures/a", "").to_literal(), r#"@open("fixtures/a")"#);
    }

    #[test]
    fn numeric_equality() {
        assert!(Value::Int(1).vex_eq(&Value::Float(1.0)));
        assert!(!Value::Int(1).vex_eq(&Value::str("1")));
        assert_ne!(Value::Int(1), Value::Float(1.0));
    }

    #[test]
    fn serde_round_trip() {
        let v = Value::record([("k", Value::list(vec![Value::Null, Value::Bool(true)]))]);
        let s = serde_json::to_string(&v).unwrap();
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v, back);
    }
}
