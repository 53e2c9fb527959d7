use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::interp::Value;
use crate::vex::QualifiedName;

/// An entry-function invocation with a literal argument vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub entry: QualifiedName,
    pub args: Vec<Value>,
    /// Content hash of `entry` and `args`.
    pub id: String,
}

impl TestCase {
    pub fn new(entry: QualifiedName, args: Vec<Value>) -> Self {
        let id = Self::hash(&entry, &args);
        Self { entry, args, id }
    }

    fn hash(entry: &QualifiedName, args: &[Value]) -> String {
        let mut h = Sha256::new();
        h.update(entry.to_string().as_bytes());
        for a in args {
            h.update([0u8]);
            h.update(a.to_literal().as_bytes());
            if let Value::File(f) = a {
                h.update([1u8]);
                h.update(f.content.as_bytes());
            }
        }
        let digest = h.finalize();
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn with_args(&self, args: Vec<Value>) -> Self {
        Self::new(self.entry.clone(), args)
    }

    /// Vex source of the call expression, e.g. `app::login("x", 3)`.
    pub fn call_text(&self) -> String {
        let args: Vec<String> = self.args.iter().map(Value::to_literal).collect();
        format!("{}({})", self.entry, args.join(", "))
    }
}
