//! Syntax tree for Vex modules.
//!
//! Every statement and expression carries a [`Span`]. Call expressions and
//! conditionals additionally carry a module-local id assigned in parse order,
//! so re-parsing the same text yields the same ids.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl Span {
    pub fn new(line: u32, col: u32) -> Self {
        Self { line, col }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// `module::function`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct QualifiedName {
    pub module: String,
    pub function: String,
}

impl QualifiedName {
    pub fn new(module: impl Into<String>, function: impl Into<String>) -> Self {
        Self {
            module: module.into(),
            function: function.into(),
        }
    }
}

impl fmt::Display for QualifiedName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}::{}", self.module, self.function)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid qualified name `{0}` (expected module::function)")]
pub struct BadQualifiedName(pub String);

impl FromStr for QualifiedName {
    type Err = BadQualifiedName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (module, function) = s
            .split_once("::")
            .ok_or_else(|| BadQualifiedName(s.to_string()))?;
        if !is_identifier(module) || !is_identifier(function) {
            return Err(BadQualifiedName(s.to_string()));
        }
        Ok(Self::new(module, function))
    }
}

impl From<QualifiedName> for String {
    fn from(q: QualifiedName) -> Self {
        q.to_string()
    }
}

impl TryFrom<String> for QualifiedName {
    type Error = BadQualifiedName;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// `[a-zA-Z_][a-zA-Z0-9_]*`
pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleAst {
    pub name: String,
    pub functions: Vec<FunctionDecl>,
}

impl ModuleAst {
    pub fn function(&self, name: &str) -> Option<&FunctionDecl> {
        self.functions.iter().find(|f| f.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    Public,
    Private,
}

/// Optional parameter annotation. Only the migration type-conversion rule
/// reads these; the interpreter ignores them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeAnnot {
    Int,
    Float,
    Bool,
    Str,
    List,
    Record,
    File,
}

impl TypeAnnot {
    pub const ALL: [TypeAnnot; 7] = [
        TypeAnnot::Int,
        TypeAnnot::Float,
        TypeAnnot::Bool,
        TypeAnnot::Str,
        TypeAnnot::List,
        TypeAnnot::Record,
        TypeAnnot::File,
    ];

    pub fn keyword(self) -> &'static str {
        match self {
            TypeAnnot::Int => "int",
            TypeAnnot::Float => "float",
            TypeAnnot::Bool => "bool",
            TypeAnnot::Str => "str",
            TypeAnnot::List => "list",
            TypeAnnot::Record => "record",
            TypeAnnot::File => "file",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.keyword() == s)
    }
}

impl fmt::Display for TypeAnnot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub annotation: Option<TypeAnnot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionDecl {
    pub name: String,
    pub visibility: Visibility,
    pub params: Vec<Param>,
    pub body: Vec<Stmt>,
    pub span: Span,
}

impl FunctionDecl {
    pub fn is_public(&self) -> bool {
        self.visibility == Visibility::Public
    }

    pub fn arity(&self) -> usize {
        self.params.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stmt {
    pub kind: StmtKind,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StmtKind {
    Let {
        name: String,
        value: Expr,
    },
    Assign {
        target: LValue,
        value: Expr,
    },
    If {
        id: u32,
        cond: Expr,
        then_body: Vec<Stmt>,
        else_body: Option<Vec<Stmt>>,
    },
    While {
        id: u32,
        cond: Expr,
        body: Vec<Stmt>,
    },
    Return(Option<Expr>),
    Throw(Expr),
    Try {
        body: Vec<Stmt>,
        catch_var: String,
        handler: Vec<Stmt>,
    },
    Expr(Expr),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LValue {
    pub root: String,
    pub path: Vec<Accessor>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accessor {
    Field(String),
    Index(Expr),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Literal {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Callee {
    /// Unqualified: resolves within the calling module.
    Local(String),
    Qualified(QualifiedName),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExprKind {
    Literal(Literal),
    Var(String),
    List(Vec<Expr>),
    Record(Vec<(String, Expr)>),
    Field(Box<Expr>, String),
    Index(Box<Expr>, Box<Expr>),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call {
        site: u32,
        callee: Callee,
        args: Vec<Expr>,
    },
    Builtin {
        name: Builtin,
        args: Vec<Expr>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnaryOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "and",
            BinOp::Or => "or",
        }
    }

    /// Binding strength; higher binds tighter. All binary operators are
    /// left-associative.
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne => 3,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div | BinOp::Rem => 6,
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge
        )
    }
}

/// The frozen builtin set, invoked as `@name(...)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    Len,
    Substr,
    Concat,
    Contains,
    StartsWith,
    ToInt,
    ToStr,
    ToFloat,
    CharAt,
    Open,
    ReadFile,
    NetSend,
    SqlExec,
    Log,
}

impl Builtin {
    pub const ALL: [Builtin; 14] = [
        Builtin::Len,
        Builtin::Substr,
        Builtin::Concat,
        Builtin::Contains,
        Builtin::StartsWith,
        Builtin::ToInt,
        Builtin::ToStr,
        Builtin::ToFloat,
        Builtin::CharAt,
        Builtin::Open,
        Builtin::ReadFile,
        Builtin::NetSend,
        Builtin::SqlExec,
        Builtin::Log,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Len => "len",
            Builtin::Substr => "substr",
            Builtin::Concat => "concat",
            Builtin::Contains => "contains",
            Builtin::StartsWith => "starts_with",
            Builtin::ToInt => "to_int",
            Builtin::ToStr => "to_str",
            Builtin::ToFloat => "to_float",
            Builtin::CharAt => "char_at",
            Builtin::Open => "open",
            Builtin::ReadFile => "read_file",
            Builtin::NetSend => "net_send",
            Builtin::SqlExec => "sql_exec",
            Builtin::Log => "log",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == s)
    }
}

impl ModuleAst {
    /// Copy with every span zeroed, for structural comparison.
    pub fn without_spans(&self) -> ModuleAst {
        let mut m = self.clone();
        for f in &mut m.functions {
            f.span = Span::default();
            clear_block(&mut f.body);
        }
        m
    }
}

fn clear_block(stmts: &mut [Stmt]) {
    for s in stmts {
        s.span = Span::default();
        match &mut s.kind {
            StmtKind::Let { value, .. } => clear_expr(value),
            StmtKind::Assign { target, value } => {
                for acc in &mut target.path {
                    if let Accessor::Index(e) = acc {
                        clear_expr(e);
                    }
                }
                clear_expr(value);
            }
            StmtKind::If {
                cond,
                then_body,
                else_body,
                ..
            } => {
                clear_expr(cond);
                clear_block(then_body);
                if let Some(b) = else_body {
                    clear_block(b);
                }
            }
            StmtKind::While { cond, body, .. } => {
                clear_expr(cond);
                clear_block(body);
            }
            StmtKind::Return(e) => {
                if let Some(e) = e {
                    clear_expr(e);
                }
            }
            StmtKind::Throw(e) | StmtKind::Expr(e) => clear_expr(e),
            StmtKind::Try { body, handler, .. } => {
                clear_block(body);
                clear_block(handler);
            }
        }
    }
}

fn clear_expr(e: &mut Expr) {
    e.span = Span::default();
    match &mut e.kind {
        ExprKind::Literal(_) | ExprKind::Var(_) => {}
        ExprKind::List(items) => items.iter_mut().for_each(clear_expr),
        ExprKind::Record(fields) => fields.iter_mut().for_each(|(_, v)| clear_expr(v)),
        ExprKind::Field(base, _) => clear_expr(base),
        ExprKind::Index(base, idx) => {
            clear_expr(base);
            clear_expr(idx);
        }
        ExprKind::Unary(_, inner) => clear_expr(inner),
        ExprKind::Binary(_, l, r) => {
            clear_expr(l);
            clear_expr(r);
        }
        ExprKind::Call { args, .. } | ExprKind::Builtin { args, .. } => {
            args.iter_mut().for_each(clear_expr)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qualified_name_round_trip() {
        let q: QualifiedName = "minijson::parse".parse().unwrap();
        assert_eq!(q, QualifiedName::new("minijson", "parse"));
        assert_eq!(q.to_string(), "minijson::parse");
        assert!("minijson".parse::<QualifiedName>().is_err());
        assert!("a::b::c".parse::<QualifiedName>().is_err());
        assert!("1a::b".parse::<QualifiedName>().is_err());
    }

    #[test]
    fn identifiers() {
        assert!(is_identifier("_x9"));
        assert!(!is_identifier(""));
        assert!(!is_identifier("9x"));
        assert!(!is_identifier("a-b"));
    }
}
