//! Vulnerability records, client projects, and the validator that keeps the
//! corpus self-certifying.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::extract::{extract_payload, substitute_markers, ExploitPayload};
use crate::instrument::{run_instrumented, RunOptions};
use crate::interp::{Budgets, Sandbox, Value};
use crate::migration::{detect_trigger, MigrationRule, OracleSpec, TriggerCondition, TriggerContext, TriggerKind};
use crate::test_case::TestCase;
use crate::vex::{
    parse_expr, resolve_project, Diagnostic, ExprKind, Literal, ModuleKind, Program, ProgramBuilder,
    QualifiedName, SourceUnit, UnaryOp,
};

pub const DEFAULT_ATTACKER_HOST: &str = "attacker.local";
pub const EXPLOIT_MAIN: &str = "main";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Toml { path: PathBuf, source: toml::de::Error },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

impl CorpusError {
    fn invalid(path: &Path, message: impl Into<String>) -> Self {
        CorpusError::Invalid {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    pub fn into_diagnostic(self) -> Diagnostic {
        match self {
            CorpusError::Io { path, source } => Diagnostic::general(source.to_string()).with_origin(&path),
            CorpusError::Toml { path, source } => {
                Diagnostic::general(source.message().to_string()).with_origin(&path)
            }
            CorpusError::Invalid { path, message } => Diagnostic::general(message).with_origin(&path),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOracle {
    kind: String,
    value: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrigger {
    kind: String,
    oracle: Option<RawOracle>,
    sql_pattern: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVuln {
    id: String,
    library: String,
    vulnerable_function: String,
    exploit: Option<String>,
    #[serde(default)]
    primary_index: usize,
    #[serde(default)]
    templates: Vec<String>,
    #[serde(default)]
    manual: bool,
    #[serde(default)]
    notes: String,
    trigger: RawTrigger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnerabilityRecord {
    pub id: String,
    pub dir: PathBuf,
    pub library: String,
    pub vulnerable_function: QualifiedName,
    pub trigger: TriggerCondition,
    pub exploit: PathBuf,
    pub primary_index: usize,
    pub templates: Vec<String>,
    pub manual: bool,
    pub notes: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expected {
    pub exploitable: bool,
    pub reachable: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProject {
    name: String,
    #[serde(default)]
    libraries: Vec<String>,
    #[serde(default)]
    expected: BTreeMap<String, Expected>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectManifest {
    pub name: String,
    pub dir: PathBuf,
    pub libraries: Vec<String>,
    pub tests_dir: Option<PathBuf>,
    /// Acceptance expectations keyed by vulnerability id.
    pub expected: BTreeMap<String, Expected>,
}

/// Parses a Vex constant: scalars, lists, records, and negated numbers.
pub fn parse_literal(text: &str) -> Result<Value, String> {
    fn eval(e: &crate::vex::Expr) -> Result<Value, String> {
        match &e.kind {
            ExprKind::Literal(l) => Ok(match l {
                Literal::Null => Value::Null,
                Literal::Bool(b) => Value::Bool(*b),
                Literal::Int(i) => Value::Int(*i),
                Literal::Float(x) => Value::Float(*x),
                Literal::Str(s) => Value::str(s),
            }),
            ExprKind::List(items) => Ok(Value::list(items.iter().map(eval).collect::<Result<_, _>>()?)),
            ExprKind::Record(fields) => {
                let fields = fields
                    .iter()
                    .map(|(k, v)| eval(v).map(|v| (k.clone(), v)))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Value::record(fields))
            }
            ExprKind::Unary(UnaryOp::Neg, inner) => match eval(inner)? {
                Value::Int(i) => Ok(Value::Int(i.wrapping_neg())),
                Value::Float(x) => Ok(Value::Float(-x)),
                _ => Err("only numbers can be negated".into()),
            },
            _ => Err("not a constant".into()),
        }
    }
    let e = parse_expr(text).map_err(|d| d.message)?;
    eval(&e).map_err(|m| format!("bad literal `{text}`: {m}"))
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|source| CorpusError::Toml {
        path: path.to_path_buf(),
        source,
    })
}

fn trigger_from_raw(path: &Path, raw: RawTrigger) -> Result<TriggerCondition, CorpusError> {
    let kind = TriggerKind::from_name(&raw.kind)
        .ok_or_else(|| CorpusError::invalid(path, format!("unknown trigger kind `{}`", raw.kind)))?;
    let oracle = match raw.oracle {
        None => None,
        Some(o) => {
            let value = |o: &RawOracle| -> Result<Value, CorpusError> {
                let text = o
                    .value
                    .as_deref()
                    .ok_or_else(|| CorpusError::invalid(path, format!("oracle `{}` needs a value", o.kind)))?;
                parse_literal(text).map_err(|m| CorpusError::invalid(path, m))
            };
            Some(match o.kind.as_str() {
                "no_exception" => OracleSpec::NoException,
                "return_equals" => OracleSpec::ReturnEquals(value(&o)?),
                "return_differs" => OracleSpec::ReturnDiffers(value(&o)?),
                other => return Err(CorpusError::invalid(path, format!("unknown oracle kind `{other}`"))),
            })
        }
    };
    if kind == TriggerKind::WrongBehavior && oracle.is_none() {
        return Err(CorpusError::invalid(path, "wrong_behavior requires an oracle"));
    }
    if kind != TriggerKind::WrongBehavior && oracle.is_some() {
        return Err(CorpusError::invalid(path, format!("{} takes no oracle", kind.name())));
    }
    match (&raw.sql_pattern, kind) {
        (None, TriggerKind::Sqli) => return Err(CorpusError::invalid(path, "sqli requires sql_pattern")),
        (Some(p), TriggerKind::Sqli) => {
            regex::Regex::new(p).map_err(|e| CorpusError::invalid(path, format!("bad sql_pattern: {e}")))?;
        }
        (Some(_), _) => return Err(CorpusError::invalid(path, "sql_pattern only applies to sqli")),
        (None, _) => {}
    }
    Ok(TriggerCondition {
        kind,
        oracle,
        sql_pattern: raw.sql_pattern,
    })
}

/// Loads `vuln.toml`; referenced files must exist.
pub fn load_vulnerability(manifest: &Path) -> Result<VulnerabilityRecord, CorpusError> {
    let raw: RawVuln = read_toml(manifest)?;
    let dir = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let vulnerable_function: QualifiedName = raw
        .vulnerable_function
        .parse()
        .map_err(|e| CorpusError::invalid(manifest, format!("{e}")))?;
    if vulnerable_function.module != raw.library {
        return Err(CorpusError::invalid(
            manifest,
            format!("`{vulnerable_function}` is not in library `{}`", raw.library),
        ));
    }
    let trigger = trigger_from_raw(manifest, raw.trigger)?;
    for t in &raw.templates {
        MigrationRule::template(t.clone()).map_err(|m| CorpusError::invalid(manifest, m))?;
    }
    let exploit = dir.join(raw.exploit.as_deref().unwrap_or("exploit.vex"));
    if !exploit.is_file() {
        return Err(CorpusError::invalid(
            manifest,
            format!("missing exploit file {}", exploit.display()),
        ));
    }
    Ok(VulnerabilityRecord {
        id: raw.id,
        dir,
        library: raw.library,
        vulnerable_function,
        trigger,
        exploit,
        primary_index: raw.primary_index,
        templates: raw.templates,
        manual: raw.manual,
        notes: raw.notes,
    })
}

/// Loads `project.toml`.
pub fn load_project(manifest: &Path) -> Result<ProjectManifest, CorpusError> {
    let raw: RawProject = read_toml(manifest)?;
    let dir = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    for (id, e) in &raw.expected {
        if e.exploitable && !e.reachable {
            return Err(CorpusError::invalid(
                manifest,
                format!("expected.{id}: exploitable requires reachable"),
            ));
        }
    }
    let tests = dir.join("tests");
    Ok(ProjectManifest {
        name: raw.name,
        tests_dir: tests.is_dir().then_some(tests),
        dir,
        libraries: raw.libraries,
        expected: raw.expected,
    })
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
    pub libs: BTreeMap<String, PathBuf>,
    pub vulns: BTreeMap<String, VulnerabilityRecord>,
    pub projects: BTreeMap<String, ProjectManifest>,
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let rd = std::fs::read_dir(dir).map_err(|source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut out: Vec<PathBuf> = rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_dir()).collect();
    out.sort();
    Ok(out)
}

fn dir_name(p: &Path) -> String {
    p.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

impl Corpus {
    /// Loads every manifest, stopping at the first malformed one.
    pub fn load(root: &Path) -> Result<Corpus, CorpusError> {
        let (corpus, mut errors) = Self::load_lenient(root)?;
        if errors.is_empty() {
            Ok(corpus)
        } else {
            Err(errors.remove(0))
        }
    }

    fn load_lenient(root: &Path) -> Result<(Corpus, Vec<CorpusError>), CorpusError> {
        if !root.is_dir() {
            return Err(CorpusError::invalid(root, "corpus directory not found"));
        }
        let mut errors = Vec::new();
        let libs = subdirs(&root.join("libs"))?
            .into_iter()
            .map(|d| (dir_name(&d), d))
            .collect();
        let mut vulns = BTreeMap::new();
        for d in subdirs(&root.join("vulns"))? {
            match load_vulnerability(&d.join("vuln.toml")) {
                Ok(v) if v.id != dir_name(&d) => errors.push(CorpusError::invalid(
                    &d.join("vuln.toml"),
                    format!("id `{}` does not match directory name", v.id),
                )),
                Ok(v) => {
                    vulns.insert(v.id.clone(), v);
                }
                Err(e) => errors.push(e),
            }
        }
        let mut projects = BTreeMap::new();
        for d in subdirs(&root.join("projects"))? {
            match load_project(&d.join("project.toml")) {
                Ok(p) if p.name != dir_name(&d) => errors.push(CorpusError::invalid(
                    &d.join("project.toml"),
                    format!("name `{}` does not match directory name", p.name),
                )),
                Ok(p) => {
                    projects.insert(p.name.clone(), p);
                }
                Err(e) => errors.push(e),
            }
        }
        Ok((
            Corpus {
                root: root.to_path_buf(),
                libs,
                vulns,
                projects,
            },
            errors,
        ))
    }

    pub fn vuln(&self, id: &str) -> Option<&VulnerabilityRecord> {
        self.vulns.get(id)
    }

    pub fn project(&self, name: &str) -> Option<&ProjectManifest> {
        self.projects.get(name)
    }

    fn lib_dir(&self, id: &str) -> Result<&PathBuf, CorpusError> {
        self.libs
            .get(id)
            .ok_or_else(|| CorpusError::invalid(&self.root.join("libs"), format!("unknown library `{id}`")))
    }

    /// The exploit module linked against its library.
    pub fn exploit_program(&self, v: &VulnerabilityRecord) -> Result<Program, Vec<Diagnostic>> {
        let lib = self.lib_dir(&v.library).map_err(|e| vec![e.into_diagnostic()])?;
        let unit = SourceUnit::read(&v.exploit).map_err(|d| vec![d])?;
        let unit = SourceUnit::new("exploit", unit.text, unit.origin);
        let mut b = ProgramBuilder::new();
        b.add_source(ModuleKind::Project, &unit);
        b.add_dir(ModuleKind::Library, lib);
        b.build()
    }

    /// The library alone, for replaying payloads against the vulnerable function.
    pub fn library_program(&self, id: &str) -> Result<Program, Vec<Diagnostic>> {
        let lib = self.lib_dir(id).map_err(|e| vec![e.into_diagnostic()])?;
        let mut b = ProgramBuilder::new();
        b.add_dir(ModuleKind::Library, lib);
        b.build()
    }

    /// The project's sources, tests, and declared libraries.
    pub fn project_program(&self, p: &ProjectManifest) -> Result<Program, Vec<Diagnostic>> {
        let libs = p
            .libraries
            .iter()
            .map(|l| self.lib_dir(l).cloned())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| vec![e.into_diagnostic()])?;
        resolve_project(&p.dir, &libs)
    }

    /// Runs the exploit and captures the payload (markers left in place).
    pub fn extract(&self, v: &VulnerabilityRecord, budgets: Budgets) -> Result<ExploitPayload, Diagnostic> {
        let program = self
            .exploit_program(v)
            .map_err(|d| Diagnostic::general(crate::vex::format_diagnostics(&d)).with_origin(&v.exploit))?;
        let main = QualifiedName::new("exploit", EXPLOIT_MAIN);
        extract_payload(
            &program,
            &main,
            &v.vulnerable_function,
            v.primary_index,
            &v.id,
            budgets,
            &Sandbox::new(&v.dir),
        )
        .map(|e| e.payload)
        .map_err(|e| Diagnostic::general(e.to_string()).with_origin(&v.exploit))
    }

    /// Calls the vulnerable function directly with the payload and checks
    /// that the declared trigger fires.
    pub fn self_certify(&self, v: &VulnerabilityRecord, budgets: Budgets, attacker_host: &str) -> Result<(), Diagnostic> {
        let origin = v.dir.join("vuln.toml");
        let payload = substitute_markers(&self.extract(v, budgets)?, attacker_host);
        let lib = self
            .library_program(&v.library)
            .map_err(|d| Diagnostic::general(crate::vex::format_diagnostics(&d)).with_origin(&origin))?;
        let ctx = TriggerContext::new(v.trigger.clone(), attacker_host)
            .map_err(|e| Diagnostic::general(e.to_string()).with_origin(&origin))?;
        let tmp = tempfile::tempdir().map_err(|e| Diagnostic::general(e.to_string()))?;
        let test = TestCase::new(v.vulnerable_function.clone(), payload.values);
        let run = run_instrumented(
            &lib,
            &test,
            &v.vulnerable_function,
            None,
            budgets,
            &Sandbox::new(tmp.path()),
            RunOptions::default(),
        )
        .map_err(|e| Diagnostic::general(e.to_string()).with_origin(&origin))?;
        match detect_trigger(&run, &ctx) {
            Some(_) => Ok(()),
            None => Err(Diagnostic::general(format!(
                "payload does not reproduce {} against the bare library (outcome {})",
                v.trigger.kind.name(),
                run.outcome.kind.label()
            ))
            .with_origin(&origin)),
        }
    }
}

/// Every problem in the corpus; empty means valid.
pub fn validate_corpus(root: &Path) -> Vec<Diagnostic> {
    let (corpus, errors) = match Corpus::load_lenient(root) {
        Ok(x) => x,
        Err(e) => return vec![e.into_diagnostic()],
    };
    let mut diags: Vec<Diagnostic> = errors.into_iter().map(CorpusError::into_diagnostic).collect();
    let budgets = Budgets::default();
    for v in corpus.vulns.values() {
        if let Err(d) = corpus.self_certify(v, budgets, DEFAULT_ATTACKER_HOST) {
            diags.push(d);
        }
    }
    for p in corpus.projects.values() {
        let origin = p.dir.join("project.toml");
        let mut ok = true;
        for l in &p.libraries {
            if !corpus.libs.contains_key(l) {
                diags.push(Diagnostic::general(format!("unknown library `{l}`")).with_origin(&origin));
                ok = false;
            }
        }
        for id in p.expected.keys() {
            match corpus.vulns.get(id) {
                None => diags.push(Diagnostic::general(format!("unknown vulnerability `{id}`")).with_origin(&origin)),
                Some(v) if !p.libraries.contains(&v.library) => diags.push(
                    Diagnostic::general(format!("`{id}` is in library `{}`, not a dependency", v.library))
                        .with_origin(&origin),
                ),
                Some(_) => {}
            }
        }
        if ok {
            if let Err(ds) = corpus.project_program(p) {
                diags.extend(ds);
            }
        }
    }
    diags
}
