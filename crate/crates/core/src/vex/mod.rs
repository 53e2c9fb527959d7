//! The Vex mini-language: lexer, parser, pretty-printer, and name resolution.
//!
//! Vex has no first-class functions, no inheritance, and no dynamic dispatch,
//! so every call expression resolves to exactly one function at load time.

pub mod ast;
mod lexer;
mod parser;
mod render;
mod resolve;

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use ast::*;
pub use parser::{parse_expr, parse_module};
pub use render::{quote, render_expr, render_float, render_module};
pub use resolve::{
    load_dir, resolve_project, CallSite, FnId, FunctionInfo, ModuleInfo, ModuleKind, Program,
    ProgramBuilder,
};

/// One `.vex` file. The module name is the file stem.
#[derive(Debug, Clone)]
pub struct SourceUnit {
    pub module_name: String,
    pub text: String,
    pub origin: PathBuf,
}

impl SourceUnit {
    pub fn new(module_name: impl Into<String>, text: impl Into<String>, origin: impl Into<PathBuf>) -> Self {
        Self {
            module_name: module_name.into(),
            text: text.into(),
            origin: origin.into(),
        }
    }

    pub fn read(path: &Path) -> Result<Self, Diagnostic> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Diagnostic::at(Span::new(0, 0), format!("cannot read: {e}")).with_origin(path)
        })?;
        let module_name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        Ok(Self::new(module_name, text, path))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub origin: Option<String>,
    pub line: u32,
    pub col: u32,
    pub message: String,
}

impl Diagnostic {
    pub fn at(span: Span, message: impl Into<String>) -> Self {
        Self {
            origin: None,
            line: span.line,
            col: span.col,
            message: message.into(),
        }
    }

    pub fn general(message: impl Into<String>) -> Self {
        Self::at(Span::default(), message)
    }

    pub fn with_origin(mut self, origin: &Path) -> Self {
        self.origin = Some(origin.display().to_string());
        self
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(o) = &self.origin {
            write!(f, "{o}:")?;
        }
        if self.line > 0 {
            write!(f, "{}:{}: ", self.line, self.col)?;
        } else if self.origin.is_some() {
            f.write_str(" ")?;
        }
        f.write_str(&self.message)
    }
}

/// Joins diagnostics one per line.
pub fn format_diagnostics(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("\n")
}
