//! Static call graph, path enumeration, entry discovery, and guard branches.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::interp::BranchSite;
use crate::vex::{
    Accessor, Expr, ExprKind, FnId, ModuleKind, Program, QualifiedName, Span, Stmt, StmtKind,
};

pub const DEFAULT_MAX_PATHS: usize = 32;

/// A conditional that must go `required` for control to reach a call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GuardBranch {
    pub site: BranchSite,
    pub required: bool,
    pub span: Span,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EdgeInfo {
    pub sites: Vec<Span>,
    pub guards: Vec<GuardBranch>,
}

#[derive(Debug, Clone, Default)]
pub struct StaticCallGraph {
    pub nodes: BTreeSet<QualifiedName>,
    pub edges: BTreeMap<(QualifiedName, QualifiedName), EdgeInfo>,
    pub project_scope: BTreeSet<QualifiedName>,
    public: BTreeSet<QualifiedName>,
    succ: BTreeMap<QualifiedName, BTreeSet<QualifiedName>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallPath {
    pub functions: Vec<QualifiedName>,
    /// `guard_branches[i]` guards the call from `functions[i]` to `functions[i + 1]`.
    pub guard_branches: Vec<Vec<GuardBranch>>,
}

impl CallPath {
    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryCandidate {
    pub function: QualifiedName,
    pub path: CallPath,
    pub rank: usize,
}

impl StaticCallGraph {
    pub fn has_edge(&self, caller: &QualifiedName, callee: &QualifiedName) -> bool {
        self.edges.contains_key(&(caller.clone(), callee.clone()))
    }

    pub fn is_public(&self, f: &QualifiedName) -> bool {
        self.public.contains(f)
    }

    pub fn successors(&self, f: &QualifiedName) -> impl Iterator<Item = &QualifiedName> {
        self.succ.get(f).into_iter().flatten()
    }

    /// `caller -> callee` lines, one per edge.
    pub fn edge_list(&self) -> String {
        let mut out = String::new();
        for (caller, callee) in self.edges.keys() {
            let _ = writeln!(out, "{caller} -> {callee}");
        }
        out
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph callgraph {\n  rankdir=LR;\n");
        for n in &self.nodes {
            let shape = if self.project_scope.contains(n) { "box" } else { "ellipse" };
            let _ = writeln!(out, "  \"{n}\" [shape={shape}];");
        }
        for (caller, callee) in self.edges.keys() {
            let _ = writeln!(out, "  \"{caller}\" -> \"{callee}\";");
        }
        out.push_str("}\n");
        out
    }
}

/// One edge per syntactic call, deduplicated by (caller, callee).
pub fn build_call_graph(program: &Program) -> StaticCallGraph {
    let mut g = StaticCallGraph::default();
    for id in program.function_ids() {
        let q = program.qname(id).clone();
        if program.kind_of(id) == ModuleKind::Project {
            g.project_scope.insert(q.clone());
        }
        if program.decl(id).is_public() {
            g.public.insert(q.clone());
        }
        g.nodes.insert(q);
    }
    for id in program.function_ids() {
        let caller = program.qname(id).clone();
        let module = program.info(id).module;
        let mut walker = GuardWalker {
            program,
            module,
            guards: Vec::new(),
            found: Vec::new(),
        };
        walker.block(&program.decl(id).body);
        for (callee, span, guards) in walker.found {
            let callee = program.qname(callee).clone();
            g.succ.entry(caller.clone()).or_default().insert(callee.clone());
            let e = g.edges.entry((caller.clone(), callee)).or_default();
            e.sites.push(span);
            for gb in guards {
                if !e.guards.contains(&gb) {
                    e.guards.push(gb);
                }
            }
        }
    }
    g
}

struct GuardWalker<'p> {
    program: &'p Program,
    module: usize,
    guards: Vec<GuardBranch>,
    found: Vec<(FnId, Span, Vec<GuardBranch>)>,
}

impl GuardWalker<'_> {
    fn block(&mut self, stmts: &[Stmt]) {
        for s in stmts {
            self.stmt(s);
        }
    }

    fn guarded(&mut self, g: GuardBranch, body: &[Stmt]) {
        self.guards.push(g);
        self.block(body);
        self.guards.pop();
    }

    fn stmt(&mut self, s: &Stmt) {
        match &s.kind {
            StmtKind::Let { value, .. } | StmtKind::Throw(value) | StmtKind::Expr(value) => {
                self.expr(value)
            }
            StmtKind::Assign { target, value } => {
                for acc in &target.path {
                    if let Accessor::Index(e) = acc {
                        self.expr(e);
                    }
                }
                self.expr(value);
            }
            StmtKind::Return(e) => {
                if let Some(e) = e {
                    self.expr(e);
                }
            }
            StmtKind::If {
                id,
                cond,
                then_body,
                else_body,
            } => {
                self.expr(cond);
                let site = BranchSite {
                    module: self.module,
                    id: *id,
                };
                self.guarded(
                    GuardBranch {
                        site,
                        required: true,
                        span: s.span,
                    },
                    then_body,
                );
                if let Some(b) = else_body {
                    self.guarded(
                        GuardBranch {
                            site,
                            required: false,
                            span: s.span,
                        },
                        b,
                    );
                }
            }
            StmtKind::While { id, cond, body } => {
                self.expr(cond);
                self.guarded(
                    GuardBranch {
                        site: BranchSite {
                            module: self.module,
                            id: *id,
                        },
                        required: true,
                        span: s.span,
                    },
                    body,
                );
            }
            StmtKind::Try { body, handler, .. } => {
                self.block(body);
                self.block(handler);
            }
        }
    }

    fn expr(&mut self, e: &Expr) {
        match &e.kind {
            ExprKind::Literal(_) | ExprKind::Var(_) => {}
            ExprKind::List(items) => items.iter().for_each(|i| self.expr(i)),
            ExprKind::Record(fields) => fields.iter().for_each(|(_, v)| self.expr(v)),
            ExprKind::Field(b, _) | ExprKind::Unary(_, b) => self.expr(b),
            ExprKind::Index(a, b) | ExprKind::Binary(_, a, b) => {
                self.expr(a);
                self.expr(b);
            }
            ExprKind::Call { site, args, .. } => {
                args.iter().for_each(|a| self.expr(a));
                let callee = self
                    .program
                    .resolve_call(self.module, *site)
                    .expect("resolved program");
                self.found.push((callee, e.span, self.guards.clone()));
            }
            ExprKind::Builtin { args, .. } => args.iter().for_each(|a| self.expr(a)),
        }
    }
}

/// Upper bound on simple paths explored before sorting and truncation.
const ENUMERATION_LIMIT: usize = 4096;

/// Simple paths from `from` to `to`, shortest first then lexicographic,
/// truncated to `max_paths`.
pub fn find_paths(
    graph: &StaticCallGraph,
    from: &QualifiedName,
    to: &QualifiedName,
    max_paths: usize,
) -> Vec<CallPath> {
    if !graph.nodes.contains(from) || !graph.nodes.contains(to) {
        return Vec::new();
    }
    let useful = reaches(graph, to);
    if !useful.contains(from) {
        return Vec::new();
    }
    let mut found: Vec<Vec<QualifiedName>> = Vec::new();
    let mut stack = vec![from.clone()];
    let mut on_path: HashSet<QualifiedName> = HashSet::from([from.clone()]);
    dfs(graph, to, &useful, &mut stack, &mut on_path, &mut found);
    found.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    found.truncate(max_paths);
    found
        .into_iter()
        .map(|functions| {
            let guard_branches = functions
                .windows(2)
                .map(|w| graph.edges[&(w[0].clone(), w[1].clone())].guards.clone())
                .collect();
            CallPath {
                functions,
                guard_branches,
            }
        })
        .collect()
}

fn dfs(
    graph: &StaticCallGraph,
    to: &QualifiedName,
    useful: &HashSet<QualifiedName>,
    stack: &mut Vec<QualifiedName>,
    on_path: &mut HashSet<QualifiedName>,
    found: &mut Vec<Vec<QualifiedName>>,
) {
    if found.len() >= ENUMERATION_LIMIT {
        return;
    }
    let cur = stack.last().expect("non-empty").clone();
    if &cur == to {
        found.push(stack.clone());
        return;
    }
    for next in graph.successors(&cur) {
        if !useful.contains(next) || on_path.contains(next) {
            continue;
        }
        stack.push(next.clone());
        on_path.insert(next.clone());
        dfs(graph, to, useful, stack, on_path, found);
        on_path.remove(next);
        stack.pop();
    }
}

/// Every node with a path to `to`, including `to`.
fn reaches(graph: &StaticCallGraph, to: &QualifiedName) -> HashSet<QualifiedName> {
    let mut pred: HashMap<&QualifiedName, Vec<&QualifiedName>> = HashMap::new();
    for (a, b) in graph.edges.keys() {
        pred.entry(b).or_default().push(a);
    }
    let mut seen: HashSet<QualifiedName> = HashSet::from([to.clone()]);
    let mut work = vec![to];
    while let Some(n) = work.pop() {
        for p in pred.get(n).into_iter().flatten() {
            if seen.insert((*p).clone()) {
                work.push(p);
            }
        }
    }
    seen
}

/// Public project functions with a path to `vulnerable`. Functions with no
/// incoming project-scope edges rank first, then shorter paths, then names.
pub fn discover_entries(graph: &StaticCallGraph, vulnerable: &QualifiedName) -> Vec<EntryCandidate> {
    let mut incoming: HashSet<&QualifiedName> = HashSet::new();
    for (a, b) in graph.edges.keys() {
        if a != b && graph.project_scope.contains(a) {
            incoming.insert(b);
        }
    }
    let mut cands: Vec<(bool, usize, QualifiedName, CallPath)> = graph
        .project_scope
        .iter()
        .filter(|f| graph.is_public(f))
        .filter_map(|f| {
            let path = find_paths(graph, f, vulnerable, 1).into_iter().next()?;
            Some((incoming.contains(f), path.len(), f.clone(), path))
        })
        .collect();
    cands.sort_by(|a, b| (a.0, a.1, &a.2).cmp(&(b.0, b.1, &b.2)));
    cands
        .into_iter()
        .enumerate()
        .map(|(rank, (_, _, function, path))| EntryCandidate {
            function,
            path,
            rank,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vex::{ProgramBuilder, SourceUnit};

    fn graph(project: &[(&str, &str)], libs: &[(&str, &str)]) -> StaticCallGraph {
        let mut b = ProgramBuilder::new();
        for (name, src) in project {
            b.add_source(ModuleKind::Project, &SourceUnit::new(*name, *src, format!("{name}.vex")));
        }
        for (name, src) in libs {
            b.add_source(ModuleKind::Library, &SourceUnit::new(*name, *src, format!("{name}.vex")));
        }
        build_call_graph(&b.build().unwrap())
    }

    fn q(s: &str) -> QualifiedName {
        s.parse().unwrap()
    }

    fn names(p: &CallPath) -> Vec<String> {
        p.functions.iter().map(|f| f.to_string()).collect()
    }

    #[test]
    fn edges() {
        let g = graph(&[("m", "fn a() { b(); b(); } fn b() { c(); } fn c() {}")], &[]);
        assert_eq!(g.edge_list(), "m::a -> m::b\nm::b -> m::c\n");
        assert_eq!(g.edges[&(q("m::a"), q("m::b"))].sites.len(), 2);
        let g = graph(&[("m", "fn f(n) { f(n); }")], &[]);
        assert!(g.has_edge(&q("m::f"), &q("m::f")));
        let g = graph(&[("m", "fn f() {} fn g() {}")], &[]);
        assert!(g.edges.is_empty());
        assert!(g.to_dot().contains("\"m::f\" [shape=box]"));
    }

    #[test]
    fn paths() {
        let g = graph(&[("m", "fn a() { b(); } fn b() { c(); } fn c() {}")], &[]);
        let p = find_paths(&g, &q("m::a"), &q("m::c"), 32);
        assert_eq!(p.len(), 1);
        assert_eq!(names(&p[0]), ["m::a", "m::b", "m::c"]);

        let g = graph(&[("m", "fn a() { c(); b(); } fn b() { d(); } fn c() { d(); } fn d() {}")], &[]);
        let p = find_paths(&g, &q("m::a"), &q("m::d"), 32);
        assert_eq!(names(&p[0]), ["m::a", "m::b", "m::d"]);
        assert_eq!(names(&p[1]), ["m::a", "m::c", "m::d"]);
        assert_eq!(find_paths(&g, &q("m::a"), &q("m::d"), 1).len(), 1);

        assert!(find_paths(&g, &q("m::d"), &q("m::a"), 32).is_empty());
    }

    #[test]
    fn recursion_yields_finitely_many_paths() {
        let g = graph(&[("m", "fn a(n) { a(n); b(n); } fn b(n) { a(n); v(n); } fn v(n) { v(n); }")], &[]);
        let p = find_paths(&g, &q("m::a"), &q("m::v"), 32);
        assert_eq!(p.len(), 1);
    }

    #[test]
    fn guards() {
        let src = r#"
pub fn e(x) {
  if @len(x) > 3 {
    while true { return m::v(x); }
  } else {
    log(x);
  }
}
fn log(x) {}
pub fn v(x) {}
"#;
        let g = graph(&[("m", src)], &[]);
        let p = &find_paths(&g, &q("m::e"), &q("m::v"), 32)[0];
        let req: Vec<(u32, bool)> = p.guard_branches[0].iter().map(|g| (g.site.id, g.required)).collect();
        assert_eq!(req, [(0, true), (1, true)]);
        let lg = &g.edges[&(q("m::e"), q("m::log"))].guards;
        assert_eq!(lg.iter().map(|g| (g.site.id, g.required)).collect::<Vec<_>>(), [(0, false)]);
    }

    #[test]
    fn entries() {
        let g = graph(
            &[("app", "pub fn api(s) { return helper(s); } fn helper(s) { return lib::vuln(s); }")],
            &[("lib", "pub fn vuln(s) {}")],
        );
        let c = discover_entries(&g, &q("lib::vuln"));
        assert_eq!(c.len(), 1);
        assert_eq!((c[0].function.to_string(), c[0].rank, c[0].path.len()), ("app::api".into(), 0, 3));

        let g = graph(
            &[("app", "pub fn outer(s) { return inner(s); } pub fn inner(s) { return lib::vuln(s); }")],
            &[("lib", "pub fn vuln(s) {}")],
        );
        let c = discover_entries(&g, &q("lib::vuln"));
        let order: Vec<String> = c.iter().map(|c| c.function.to_string()).collect();
        assert_eq!(order, ["app::outer", "app::inner"]);

        let g = graph(
            &[("app", "fn hidden(s) { return lib::vuln(s); }")],
            &[("lib", "pub fn vuln(s) {}")],
        );
        assert!(discover_entries(&g, &q("lib::vuln")).is_empty());
    }

    /// Enumerates every ordering of the candidate set and keeps those that
    /// respect the three sort keys pairwise; the result must be unique and
    /// equal to what discover_entries returns.
    #[test]
    fn entry_order_matches_rule_oracle() {
        let g = graph(
            &[(
                "app",
                "pub fn outer(s) { return inner(s); } pub fn inner(s) { return lib::vuln(s); }",
            )],
            &[("lib", "pub fn vuln(s) {}")],
        );
        let got: Vec<String> = discover_entries(&g, &q("lib::vuln"))
            .iter()
            .map(|c| c.function.to_string())
            .collect();
        let facts = [("app::outer", false, 3usize), ("app::inner", true, 2usize)];
        let perms = [[0usize, 1], [1, 0]];
        let valid: Vec<Vec<&str>> = perms
            .iter()
            .filter(|p| {
                let (a, b) = (facts[p[0]], facts[p[1]]);
                (a.1, a.2, a.0) <= (b.1, b.2, b.0)
            })
            .map(|p| p.iter().map(|&i| facts[i].0).collect())
            .collect();
        assert_eq!(valid.len(), 1);
        assert_eq!(got, valid[0]);
    }
}
