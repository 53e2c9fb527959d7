//! End-to-end runs: analysis, payload extraction, existing-test shortcut,
//! generation, migration, and the JSON report.

mod bench;
mod exec;
mod render;

pub use bench::{bench, median, BenchOptions, BenchSummary, PairResult};
pub use exec::{exec_test_file, exec_test_source, ExecReport};
pub use render::{parse_directives, render_test, Directives};

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analysis::{build_call_graph, discover_entries, find_paths, StaticCallGraph};
use crate::corpus::{Corpus, CorpusError, ProjectManifest, VulnerabilityRecord, DEFAULT_ATTACKER_HOST};
use crate::extract::{substitute_markers, ExploitPayload};
use crate::genetic::{generate, GaConfig, GenerationStats};
use crate::instrument::{run_instrumented, DynamicCallGraph, RunOptions};
use crate::interp::{Budgets, Sandbox, Value};
use crate::migration::{
    direct_trigger, migrate, Evidence, MigratedTest, MigrationSpec, TriggerContext, TriggerKind, TriggerReport,
    Verdict,
};
use crate::test_case::TestCase;
use crate::vex::{format_diagnostics, Diagnostic, ModuleKind, Program, QualifiedName};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExistingTests {
    #[default]
    Auto,
    Only,
    Never,
}

impl std::str::FromStr for ExistingTests {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(Self::Auto),
            "only" => Ok(Self::Only),
            "never" => Ok(Self::Never),
            other => Err(format!("expected auto, only or never, got `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Wall-clock ceiling for the generation phase.
    pub budget_secs: f64,
    /// Ceiling for a whole run; migration is skipped once it is exceeded.
    pub total_limit_secs: f64,
    pub budgets: Budgets,
    pub attacker_host: String,
    pub rng_seed: u64,
    pub use_existing_tests: ExistingTests,
    pub workers: usize,
    /// When false, generated tests are checked as-is (the ablation baseline).
    pub migration: bool,
    pub max_evaluations: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let ga = GaConfig::default();
        Self {
            budget_secs: ga.budget_secs,
            total_limit_secs: 60.0,
            budgets: Budgets::default(),
            attacker_host: DEFAULT_ATTACKER_HOST.to_string(),
            rng_seed: 0,
            use_existing_tests: ExistingTests::Auto,
            workers: 1,
            migration: true,
            max_evaluations: ga.max_evaluations,
        }
    }
}

impl PipelineConfig {
    pub fn ga(&self) -> GaConfig {
        GaConfig {
            budget_secs: self.budget_secs,
            rng_seed: self.rng_seed,
            workers: self.workers.max(1),
            max_evaluations: self.max_evaluations,
            ..GaConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.budget_secs > 0.0) {
            return Err(PipelineError::Config("budget_secs must be positive".into()));
        }
        if !(self.total_limit_secs > 0.0) {
            return Err(PipelineError::Config("total_limit_secs must be positive".into()));
        }
        self.ga().validate().map_err(|e| PipelineError::Config(e.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{}", format_diagnostics(.0))]
    Program(Vec<Diagnostic>),
    #[error("{0}")]
    Extraction(Diagnostic),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSummary {
    pub function: QualifiedName,
    pub rank: usize,
    pub path: Vec<QualifiedName>,
}

/// Where the migrated test came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TestOrigin {
    Generated,
    Existing { test_function: QualifiedName },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringTest {
    pub test_function: QualifiedName,
    /// Outermost project function on the dynamic path.
    pub entry: QualifiedName,
    pub dyn_graph: DynamicCallGraph,
    /// A direct call of `entry` with the arguments the test passed it.
    pub case: TestCase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExistingScan {
    pub tests_total: usize,
    pub statically_kept: Vec<QualifiedName>,
    pub covering: Vec<CoveringTest>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub analysis_secs: f64,
    pub extraction_secs: f64,
    pub existing_tests_secs: f64,
    pub generation_secs: f64,
    pub migration_secs: f64,
    pub total_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: u32,
    pub project: String,
    pub vuln: String,
    pub vulnerable_function: QualifiedName,
    pub seed: u64,
    pub verdict: Verdict,
    pub trigger: TriggerKind,
    pub reason: Option<String>,
    pub evidence: Vec<Evidence>,
    pub origin: Option<TestOrigin>,
    pub migrated_test: Option<MigratedTest>,
    pub call_path: Option<DynamicCallGraph>,
    pub received_value: Option<Value>,
    pub received_similarity: f64,
    pub payload: Option<ExploitPayload>,
    pub entry_candidates: Vec<CandidateSummary>,
    pub existing_tests: Option<ExistingScan>,
    pub generation: Option<GenerationStats>,
    pub migration_executions: usize,
    pub rendered_test: String,
    pub config: PipelineConfig,
    pub timings: Timings,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// The report as JSON with the `timings` object removed.
    pub fn without_timings(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("reports serialize");
        if let Some(o) = v.as_object_mut() {
            o.remove("timings");
        }
        v
    }
}

pub fn emit_report(report: &Report, path: &Path) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, report.to_json() + "\n").map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_report(path: &Path) -> Result<Report, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

fn copy_dir(from: &Path, to: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(to)?;
    for entry in std::fs::read_dir(from)? {
        let entry = entry?;
        let target = to.join(entry.file_name());
        if entry.file_type()?.is_dir() {
            copy_dir(&entry.path(), &target)?;
        } else {
            std::fs::copy(entry.path(), target)?;
        }
    }
    Ok(())
}

/// A fresh sandbox holding a copy of the project's `fixtures/`.
pub fn project_sandbox(project: &ProjectManifest) -> Result<tempfile::TempDir, PipelineError> {
    let io = |source| PipelineError::Io {
        path: project.dir.clone(),
        source,
    };
    let tmp = tempfile::tempdir().map_err(io)?;
    let fixtures = project.dir.join("fixtures");
    if fixtures.is_dir() {
        copy_dir(&fixtures, &tmp.path().join("fixtures")).map_err(io)?;
    }
    Ok(tmp)
}

/// Zero-argument public functions of the test modules whose static call
/// graph reaches `vulnerable`, executed and kept when they actually hit it.
pub fn existing_test_scan(
    program: &Program,
    graph: &StaticCallGraph,
    vulnerable: &QualifiedName,
    budgets: Budgets,
    sandbox: &Sandbox,
) -> ExistingScan {
    let tests: Vec<QualifiedName> = program
        .function_ids()
        .filter(|id| program.kind_of(*id) == ModuleKind::Test)
        .filter(|id| program.decl(*id).is_public() && program.decl(*id).arity() == 0)
        .map(|id| program.qname(id).clone())
        .collect();
    let kept: Vec<QualifiedName> = tests
        .iter()
        .filter(|t| !find_paths(graph, t, vulnerable, 1).is_empty())
        .cloned()
        .collect();
    let mut covering = Vec::new();
    for t in &kept {
        let Ok(run) = run_instrumented(
            program,
            &TestCase::new(t.clone(), Vec::new()),
            vulnerable,
            None,
            budgets,
            sandbox,
            RunOptions::default(),
        ) else {
            continue;
        };
        let Some(g) = run.dyn_graph else { continue };
        let Some(i) = g.path.iter().position(|f| graph.project_scope.contains(f)) else {
            continue;
        };
        let case = TestCase::new(g.path[i].clone(), run.frame_args[i].clone());
        covering.push(CoveringTest {
            test_function: t.clone(),
            entry: g.path[i].clone(),
            dyn_graph: g,
            case,
        });
    }
    ExistingScan {
        tests_total: tests.len(),
        statically_kept: kept,
        covering,
    }
}

struct Run<'a> {
    corpus: &'a Corpus,
    project: &'a ProjectManifest,
    vuln: &'a VulnerabilityRecord,
    cfg: &'a PipelineConfig,
    started: Instant,
    timings: Timings,
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Runs the whole pipeline for one (project, vulnerability) pair.
pub fn run_pipeline(
    corpus: &Corpus,
    project: &str,
    vuln: &str,
    cfg: &PipelineConfig,
) -> Result<Report, PipelineError> {
    cfg.validate()?;
    let project = corpus
        .project(project)
        .ok_or_else(|| PipelineError::Config(format!("unknown project `{project}`")))?;
    let vuln = corpus
        .vuln(vuln)
        .ok_or_else(|| PipelineError::Config(format!("unknown vulnerability `{vuln}`")))?;
    if !project.libraries.contains(&vuln.library) {
        return Err(PipelineError::Config(format!(
            "project `{}` does not depend on `{}`",
            project.name, vuln.library
        )));
    }
    Run {
        corpus,
        project,
        vuln,
        cfg,
        started: Instant::now(),
        timings: Timings::default(),
    }
    .execute()
}

impl Run<'_> {
    fn report(&mut self, outcome: TriggerReport, extra: Partial) -> Report {
        self.timings.total_secs = secs(self.started);
        let rendered_test = render_test(
            outcome.migrated_test.as_ref(),
            &self.project.name,
            &self.vuln.id,
            &self.cfg.attacker_host,
            outcome.verdict,
            outcome.trigger,
            self.cfg.budgets,
            outcome.received_similarity,
            outcome.call_path.as_ref(),
        );
        Report {
            schema: REPORT_SCHEMA,
            project: self.project.name.clone(),
            vuln: self.vuln.id.clone(),
            vulnerable_function: self.vuln.vulnerable_function.clone(),
            seed: self.cfg.rng_seed,
            verdict: outcome.verdict,
            trigger: outcome.trigger,
            reason: outcome.reason,
            evidence: outcome.evidence,
            origin: extra.origin,
            migrated_test: outcome.migrated_test,
            call_path: outcome.call_path,
            received_value: outcome.received_value,
            received_similarity: outcome.received_similarity,
            payload: extra.payload,
            entry_candidates: extra.candidates,
            existing_tests: extra.existing,
            generation: extra.generation,
            migration_executions: outcome.executions,
            rendered_test,
            config: self.cfg.clone(),
            timings: self.timings,
        }
    }

    fn execute(mut self) -> Result<Report, PipelineError> {
        let kind = self.vuln.trigger.kind;
        let t = Instant::now();
        let program = self.corpus.project_program(self.project).map_err(PipelineError::Program)?;
        let graph = build_call_graph(&program);
        let candidates = discover_entries(&graph, &self.vuln.vulnerable_function);
        self.timings.analysis_secs = secs(t);
        let mut extra = Partial {
            candidates: candidates
                .iter()
                .map(|c| CandidateSummary {
                    function: c.function.clone(),
                    rank: c.rank,
                    path: c.path.functions.clone(),
                })
                .collect(),
            ..Partial::default()
        };
        if candidates.is_empty() {
            let r = TriggerReport::not_exploitable(kind, "unreachable: no entry function reaches the vulnerable function");
            return Ok(self.report(r, extra));
        }

        let t = Instant::now();
        let payload = self
            .corpus
            .extract(self.vuln, self.cfg.budgets)
            .map_err(PipelineError::Extraction)?;
        let payload = substitute_markers(&payload, &self.cfg.attacker_host);
        extra.payload = Some(payload.clone());
        self.timings.extraction_secs = secs(t);

        let ctx = TriggerContext::new(self.vuln.trigger.clone(), self.cfg.attacker_host.clone())
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        let spec = MigrationSpec {
            vulnerable: &self.vuln.vulnerable_function,
            trigger: &ctx,
            templates: &self.vuln.templates,
            manual: self.vuln.manual,
        };
        let sandbox_dir = project_sandbox(self.project)?;
        let sandbox = Sandbox::new(sandbox_dir.path());

        let mut fallback: Option<TriggerReport> = None;
        if self.cfg.use_existing_tests != ExistingTests::Never && self.project.tests_dir.is_some() {
            let t = Instant::now();
            let scan = existing_test_scan(&program, &graph, &self.vuln.vulnerable_function, self.cfg.budgets, &sandbox);
            self.timings.existing_tests_secs = secs(t);
            let cases: Vec<TestCase> = scan
                .covering
                .iter()
                .filter(|c| !c.case.args.is_empty())
                .map(|c| c.case.clone())
                .collect();
            let origins: Vec<QualifiedName> = scan
                .covering
                .iter()
                .filter(|c| !c.case.args.is_empty())
                .map(|c| c.test_function.clone())
                .collect();
            extra.existing = Some(scan);
            if !cases.is_empty() {
                let t = Instant::now();
                let r = if self.cfg.migration {
                    migrate(&cases, &payload, &spec, &program, self.cfg.budgets, &sandbox)
                } else {
                    direct_trigger(&cases, &payload, &spec, &program, self.cfg.budgets, &sandbox)
                };
                self.timings.migration_secs += secs(t);
                if r.verdict != Verdict::NotExploitable || self.cfg.use_existing_tests == ExistingTests::Only {
                    extra.origin = r.migrated_test.as_ref().and_then(|m| {
                        cases.iter().position(|c| c.id == m.test.id).map(|i| TestOrigin::Existing {
                            test_function: origins[i].clone(),
                        })
                    });
                    return Ok(self.report(r, extra));
                }
                fallback = Some(r);
            } else if self.cfg.use_existing_tests == ExistingTests::Only {
                let r = TriggerReport::not_exploitable(kind, "no existing test covers the vulnerable function");
                return Ok(self.report(r, extra));
            }
        } else if self.cfg.use_existing_tests == ExistingTests::Only {
            let r = TriggerReport::not_exploitable(kind, "project has no tests");
            return Ok(self.report(r, extra));
        }

        let t = Instant::now();
        let gen = generate(
            &program,
            &candidates,
            &self.vuln.vulnerable_function,
            &payload,
            &self.cfg.ga(),
            self.cfg.budgets,
            &sandbox,
        );
        self.timings.generation_secs = secs(t);
        extra.generation = Some(gen.stats.clone());
        if gen.failed() {
            let r = fallback.unwrap_or_else(|| {
                TriggerReport::not_exploitable(kind, "generation failed: no test executed an entry function")
            });
            return Ok(self.report(r, extra));
        }
        if secs(self.started) > self.cfg.total_limit_secs {
            let mut r = TriggerReport::not_exploitable(kind, "time limit exceeded before migration");
            r.verdict = Verdict::Inconclusive;
            return Ok(self.report(r, extra));
        }
        let archive: Vec<TestCase> = gen.archive.iter().map(|a| a.test.clone()).collect();
        let t = Instant::now();
        let r = if archive.is_empty() {
            let mut r = TriggerReport::not_exploitable(kind, "no generated test reached the vulnerable function");
            if let Some((test, _)) = &gen.best {
                r.migrated_test = test.args.first().map(|v| MigratedTest {
                    test: test.clone(),
                    substitution: crate::instrument::ParamSubstitution {
                        function: test.entry.clone(),
                        position: 0,
                        value: v.clone(),
                    },
                    rule_chain: Vec::new(),
                    files: Vec::new(),
                });
            }
            r
        } else if self.cfg.migration {
            migrate(&archive, &payload, &spec, &program, self.cfg.budgets, &sandbox)
        } else {
            direct_trigger(&archive, &payload, &spec, &program, self.cfg.budgets, &sandbox)
        };
        self.timings.migration_secs += secs(t);
        if r.migrated_test.is_some() {
            extra.origin = Some(TestOrigin::Generated);
        }
        Ok(self.report(r, extra))
    }
}

#[derive(Default)]
struct Partial {
    candidates: Vec<CandidateSummary>,
    payload: Option<ExploitPayload>,
    existing: Option<ExistingScan>,
    generation: Option<GenerationStats>,
    origin: Option<TestOrigin>,
}
