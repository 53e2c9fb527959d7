use std::collections::HashMap;
use std::path::{Path, PathBuf};

use super::ast::*;
use super::{parse_module, Diagnostic, SourceUnit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FnId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleKind {
    Project,
    Library,
    Test,
}

#[derive(Debug, Clone)]
pub struct ModuleInfo {
    pub kind: ModuleKind,
    pub ast: ModuleAst,
    pub origin: PathBuf,
}

#[derive(Debug, Clone)]
pub struct FunctionInfo {
    pub qname: QualifiedName,
    pub module: usize,
    pub index: usize,
}

/// A call expression's location, keyed by module index and parse-order id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CallSite {
    pub module: usize,
    pub site: u32,
}

/// A resolved set of modules. Immutable once built.
#[derive(Debug, Clone)]
pub struct Program {
    modules: Vec<ModuleInfo>,
    module_index: HashMap<String, usize>,
    functions: Vec<FunctionInfo>,
    fn_index: HashMap<QualifiedName, FnId>,
    calls: HashMap<CallSite, FnId>,
}

#[derive(Debug, Default)]
pub struct ProgramBuilder {
    modules: Vec<ModuleInfo>,
    diags: Vec<Diagnostic>,
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, kind: ModuleKind, ast: ModuleAst, origin: impl Into<PathBuf>) -> &mut Self {
        self.modules.push(ModuleInfo {
            kind,
            ast,
            origin: origin.into(),
        });
        self
    }

    pub fn add_source(&mut self, kind: ModuleKind, unit: &SourceUnit) -> &mut Self {
        match parse_module(unit) {
            Ok(ast) => {
                self.add(kind, ast, unit.origin.clone());
            }
            Err(d) => self.diags.extend(d),
        }
        self
    }

    pub fn add_dir(&mut self, kind: ModuleKind, dir: &Path) -> &mut Self {
        match load_dir(dir) {
            Ok(units) => {
                for u in &units {
                    self.add_source(kind, u);
                }
            }
            Err(d) => self.diags.push(d),
        }
        self
    }

    pub fn build(self) -> Result<Program, Vec<Diagnostic>> {
        let mut diags = self.diags;
        let mut module_index = HashMap::new();
        for (i, m) in self.modules.iter().enumerate() {
            if let Some(prev) = module_index.insert(m.ast.name.clone(), i) {
                diags.push(
                    Diagnostic::general(format!(
                        "module name collision: `{}` also defined in {}",
                        m.ast.name,
                        self.modules[prev].origin.display()
                    ))
                    .with_origin(&m.origin),
                );
            }
        }

        let mut functions = Vec::new();
        let mut fn_index = HashMap::new();
        for (mi, m) in self.modules.iter().enumerate() {
            if module_index.get(&m.ast.name) != Some(&mi) {
                continue;
            }
            for (fi, f) in m.ast.functions.iter().enumerate() {
                let qname = QualifiedName::new(m.ast.name.clone(), f.name.clone());
                fn_index.insert(qname.clone(), FnId(functions.len() as u32));
                functions.push(FunctionInfo {
                    qname,
                    module: mi,
                    index: fi,
                });
            }
        }

        let mut calls = HashMap::new();
        for (mi, m) in self.modules.iter().enumerate() {
            for f in &m.ast.functions {
                visit_calls(&f.body, &mut |site, callee, nargs, span| {
                    let target = match callee {
                        Callee::Local(name) => QualifiedName::new(m.ast.name.clone(), name.clone()),
                        Callee::Qualified(q) => q.clone(),
                    };
                    match fn_index.get(&target) {
                        Some(&id) => {
                            let info: &FunctionInfo = &functions[id.0 as usize];
                            let decl = &self.modules[info.module].ast.functions[info.index];
                            if target.module != m.ast.name && !decl.is_public() {
                                diags.push(
                                    Diagnostic::at(
                                        span,
                                        format!("call to private function `{target}`"),
                                    )
                                    .with_origin(&m.origin),
                                );
                            } else if decl.arity() != nargs {
                                diags.push(
                                    Diagnostic::at(
                                        span,
                                        format!(
                                            "`{target}` takes {} argument(s), got {nargs}",
                                            decl.arity()
                                        ),
                                    )
                                    .with_origin(&m.origin),
                                );
                            } else {
                                calls.insert(CallSite { module: mi, site }, id);
                            }
                        }
                        None => diags.push(
                            Diagnostic::at(span, format!("unresolved call to `{target}`"))
                                .with_origin(&m.origin),
                        ),
                    }
                });
            }
        }

        if diags.is_empty() {
            Ok(Program {
                modules: self.modules,
                module_index,
                functions,
                fn_index,
                calls,
            })
        } else {
            Err(diags)
        }
    }
}

/// Walks every call expression under `stmts` in source order.
pub(crate) fn visit_calls(stmts: &[Stmt], f: &mut dyn FnMut(u32, &Callee, usize, Span)) {
    for s in stmts {
        match &s.kind {
            StmtKind::Let { value, .. } | StmtKind::Throw(value) | StmtKind::Expr(value) => {
                visit_expr_calls(value, f)
            }
            StmtKind::Assign { target, value } => {
                for acc in &target.path {
                    if let Accessor::Index(e) = acc {
                        visit_expr_calls(e, f);
                    }
                }
                visit_expr_calls(value, f);
            }
            StmtKind::If {
                cond,
                then_body,
                else_body,
                ..
            } => {
                visit_expr_calls(cond, f);
                visit_calls(then_body, f);
                if let Some(b) = else_body {
                    visit_calls(b, f);
                }
            }
            StmtKind::While { cond, body, .. } => {
                visit_expr_calls(cond, f);
                visit_calls(body, f);
            }
            StmtKind::Return(e) => {
                if let Some(e) = e {
                    visit_expr_calls(e, f);
                }
            }
            StmtKind::Try { body, handler, .. } => {
                visit_calls(body, f);
                visit_calls(handler, f);
            }
        }
    }
}

pub(crate) fn visit_expr_calls(e: &Expr, f: &mut dyn FnMut(u32, &Callee, usize, Span)) {
    match &e.kind {
        ExprKind::Literal(_) | ExprKind::Var(_) => {}
        ExprKind::List(items) => items.iter().for_each(|i| visit_expr_calls(i, f)),
        ExprKind::Record(fields) => fields.iter().for_each(|(_, v)| visit_expr_calls(v, f)),
        ExprKind::Field(b, _) | ExprKind::Unary(_, b) => visit_expr_calls(b, f),
        ExprKind::Index(a, b) | ExprKind::Binary(_, a, b) => {
            visit_expr_calls(a, f);
            visit_expr_calls(b, f);
        }
        ExprKind::Call { site, callee, args } => {
            f(*site, callee, args.len(), e.span);
            args.iter().for_each(|a| visit_expr_calls(a, f));
        }
        ExprKind::Builtin { args, .. } => args.iter().for_each(|a| visit_expr_calls(a, f)),
    }
}

impl Program {
    pub fn modules(&self) -> &[ModuleInfo] {
        &self.modules
    }

    pub fn module(&self, name: &str) -> Option<&ModuleInfo> {
        self.module_index.get(name).map(|&i| &self.modules[i])
    }

    pub fn module_at(&self, idx: usize) -> &ModuleInfo {
        &self.modules[idx]
    }

    pub fn function_ids(&self) -> impl Iterator<Item = FnId> + '_ {
        (0..self.functions.len() as u32).map(FnId)
    }

    pub fn info(&self, id: FnId) -> &FunctionInfo {
        &self.functions[id.0 as usize]
    }

    pub fn decl(&self, id: FnId) -> &FunctionDecl {
        let info = self.info(id);
        &self.modules[info.module].ast.functions[info.index]
    }

    pub fn qname(&self, id: FnId) -> &QualifiedName {
        &self.info(id).qname
    }

    pub fn kind_of(&self, id: FnId) -> ModuleKind {
        self.modules[self.info(id).module].kind
    }

    pub fn lookup(&self, q: &QualifiedName) -> Option<FnId> {
        self.fn_index.get(q).copied()
    }

    pub fn resolve_call(&self, module: usize, site: u32) -> Option<FnId> {
        self.calls.get(&CallSite { module, site }).copied()
    }

    /// The resolution table: every call site with its target, in a stable order.
    pub fn call_table(&self) -> Vec<(CallSite, QualifiedName)> {
        let mut v: Vec<_> = self
            .calls
            .iter()
            .map(|(cs, id)| (*cs, self.qname(*id).clone()))
            .collect();
        v.sort();
        v
    }

    /// String literals appearing in modules of the given kind, sorted and deduplicated.
    pub fn string_literals(&self, kind: ModuleKind) -> Vec<String> {
        let mut out = Vec::new();
        for m in self.modules.iter().filter(|m| m.kind == kind) {
            for f in &m.ast.functions {
                collect_literals(&f.body, &mut out);
            }
        }
        out.sort();
        out.dedup();
        out
    }

    /// Literals (of any kind) appearing in the given function bodies.
    pub fn literals_in(&self, ids: &[FnId]) -> Vec<Literal> {
        let mut out = Vec::new();
        for &id in ids {
            collect_all_literals(&self.decl(id).body, &mut out);
        }
        out
    }
}

fn collect_literals(stmts: &[Stmt], out: &mut Vec<String>) {
    let mut lits = Vec::new();
    collect_all_literals(stmts, &mut lits);
    out.extend(lits.into_iter().filter_map(|l| match l {
        Literal::Str(s) => Some(s),
        _ => None,
    }));
}

fn collect_all_literals(stmts: &[Stmt], out: &mut Vec<Literal>) {
    fn expr(e: &Expr, out: &mut Vec<Literal>) {
        match &e.kind {
            ExprKind::Literal(l) => out.push(l.clone()),
            ExprKind::Var(_) => {}
            ExprKind::List(items) => items.iter().for_each(|i| expr(i, out)),
            ExprKind::Record(fields) => fields.iter().for_each(|(_, v)| expr(v, out)),
            ExprKind::Field(b, _) | ExprKind::Unary(_, b) => expr(b, out),
            ExprKind::Index(a, b) | ExprKind::Binary(_, a, b) => {
                expr(a, out);
                expr(b, out);
            }
            ExprKind::Call { args, .. } | ExprKind::Builtin { args, .. } => {
                args.iter().for_each(|a| expr(a, out))
            }
        }
    }
    for s in stmts {
        match &s.kind {
            StmtKind::Let { value, .. } | StmtKind::Throw(value) | StmtKind::Expr(value) => {
                expr(value, out)
            }
            StmtKind::Assign { target, value } => {
                for acc in &target.path {
                    if let Accessor::Index(e) = acc {
                        expr(e, out);
                    }
                }
                expr(value, out);
            }
            StmtKind::If {
                cond,
                then_body,
                else_body,
                ..
            } => {
                expr(cond, out);
                collect_all_literals(then_body, out);
                if let Some(b) = else_body {
                    collect_all_literals(b, out);
                }
            }
            StmtKind::While { cond, body, .. } => {
                expr(cond, out);
                collect_all_literals(body, out);
            }
            StmtKind::Return(e) => {
                if let Some(e) = e {
                    expr(e, out);
                }
            }
            StmtKind::Try { body, handler, .. } => {
                collect_all_literals(body, out);
                collect_all_literals(handler, out);
            }
        }
    }
}

/// Reads every `*.vex` file in `dir`, sorted by file name.
pub fn load_dir(dir: &Path) -> Result<Vec<SourceUnit>, Diagnostic> {
    let entries = std::fs::read_dir(dir).map_err(|e| {
        Diagnostic::general(format!("cannot read directory: {e}")).with_origin(dir)
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "vex"))
        .collect();
    paths.sort();
    paths.iter().map(|p| SourceUnit::read(p)).collect()
}

/// Loads a project (its `src/` directory, or the directory itself when there
/// is no `src/`), its `tests/` if present, and the given library directories.
pub fn resolve_project(project_dir: &Path, library_dirs: &[PathBuf]) -> Result<Program, Vec<Diagnostic>> {
    let src = project_dir.join("src");
    let src = if src.is_dir() { src } else { project_dir.to_path_buf() };
    let mut b = ProgramBuilder::new();
    b.add_dir(ModuleKind::Project, &src);
    let tests = project_dir.join("tests");
    if tests.is_dir() {
        b.add_dir(ModuleKind::Test, &tests);
    }
    for lib in library_dirs {
        b.add_dir(ModuleKind::Library, lib);
    }
    b.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) {
        std::fs::create_dir_all(dir).unwrap();
        std::fs::write(dir.join(name), text).unwrap();
    }

    #[test]
    fn resolves_qualified_library_call() {
        let tmp = tempfile::tempdir().unwrap();
        let proj = tmp.path().join("proj");
        let lib = tmp.path().join("lib");
        write(&proj.join("src"), "app.vex", "pub fn run(s) { return minijson::parse(s); }");
        write(&lib, "minijson.vex", "pub fn parse(s) { return helper(s); } fn helper(s) { return s; }");
        let p = resolve_project(&proj, &[lib]).unwrap();
        let table = p.call_table();
        assert_eq!(table.len(), 2);
        let targets: Vec<String> = table.iter().map(|(_, q)| q.to_string()).collect();
        assert!(targets.contains(&"minijson::parse".to_string()));
        assert!(targets.contains(&"minijson::helper".to_string()));
        let run = p.lookup(&"app::run".parse().unwrap()).unwrap();
        assert_eq!(p.kind_of(run), ModuleKind::Project);
    }

    #[test]
    fn unresolved_call_is_reported() {
        let tmp = tempfile::tempdir().unwrap();
        write(&tmp.path().join("src"), "app.vex", "pub fn run() { nosuch::fn_x(); }");
        let err = resolve_project(tmp.path(), &[]).unwrap_err();
        assert_eq!(err.len(), 1);
        assert!(err[0].message.contains("nosuch::fn_x"));
        assert_eq!((err[0].line, err[0].col), (1, 16));
    }

    #[test]
    fn module_collision_is_reported() {
        let tmp = tempfile::tempdir().unwrap();
        write(&tmp.path().join("p/src"), "util.vex", "pub fn a() {}");
        write(&tmp.path().join("l"), "util.vex", "pub fn b() {}");
        let err = resolve_project(&tmp.path().join("p"), &[tmp.path().join("l")]).unwrap_err();
        assert!(err[0].message.contains("collision"));
    }

    #[test]
    fn private_cross_module_call_is_rejected() {
        let mut b = ProgramBuilder::new();
        b.add_source(ModuleKind::Project, &SourceUnit::new("a", "pub fn f() { b::g(); }", "a.vex"));
        b.add_source(ModuleKind::Library, &SourceUnit::new("b", "fn g() {}", "b.vex"));
        let err = b.build().unwrap_err();
        assert!(err[0].message.contains("private"));
    }

    #[test]
    fn call_arity_is_checked() {
        let mut b = ProgramBuilder::new();
        b.add_source(ModuleKind::Project, &SourceUnit::new("a", "pub fn f() { g(1, 2); } fn g(x) {}", "a.vex"));
        let err = b.build().unwrap_err();
        assert!(err[0].message.contains("takes 1 argument"));
    }

    #[test]
    fn tests_are_held_separately() {
        let tmp = tempfile::tempdir().unwrap();
        write(&tmp.path().join("src"), "app.vex", "pub fn f() {}");
        write(&tmp.path().join("tests"), "app_test.vex", "pub fn test_f() { app::f(); }");
        let p = resolve_project(tmp.path(), &[]).unwrap();
        assert_eq!(p.module("app_test").unwrap().kind, ModuleKind::Test);
        assert_eq!(p.module("app").unwrap().kind, ModuleKind::Project);
    }
}
