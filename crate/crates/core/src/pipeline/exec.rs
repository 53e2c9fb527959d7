use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{project_sandbox, PipelineError};
use crate::corpus::{Corpus, DEFAULT_ATTACKER_HOST};
use crate::instrument::{run_instrumented, RunOptions};
use crate::interp::{OutcomeKind, Sandbox};
use crate::migration::{detect_trigger, Evidence, TriggerContext, TriggerKind};
use crate::test_case::TestCase;
use crate::vex::{parse_module, Diagnostic, ModuleKind, ProgramBuilder, QualifiedName, SourceUnit};

use super::render::parse_directives;

pub const EXEC_MODULE: &str = "vexploit_test";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecReport {
    pub outcome: String,
    pub message: Option<String>,
    pub vuln: Option<String>,
    pub trigger: Option<TriggerKind>,
    pub triggered: bool,
    pub evidence: Vec<Evidence>,
    pub steps_used: u64,
}

pub fn exec_test_file(path: &Path, corpus: &Corpus) -> Result<ExecReport, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    exec_test_source(&text, path, corpus)
}

/// Runs `main` of a rendered test inside its project, with the header's
/// files materialized, and checks the vulnerability's trigger.
pub fn exec_test_source(text: &str, origin: &Path, corpus: &Corpus) -> Result<ExecReport, PipelineError> {
    let d = parse_directives(text).map_err(|m| PipelineError::Config(format!("{}: {m}", origin.display())))?;
    let unit = SourceUnit::new(EXEC_MODULE, text, origin);
    let ast = parse_module(&unit).map_err(PipelineError::Program)?;

    let mut b = ProgramBuilder::new();
    let sandbox_dir = match &d.project {
        Some(name) => {
            let p = corpus
                .project(name)
                .ok_or_else(|| PipelineError::Config(format!("unknown project `{name}`")))?;
            b.add_dir(ModuleKind::Project, &p.dir.join("src"));
            for lib in &p.libraries {
                let dir = corpus
                    .libs
                    .get(lib)
                    .ok_or_else(|| PipelineError::Config(format!("unknown library `{lib}`")))?;
                b.add_dir(ModuleKind::Library, dir);
            }
            project_sandbox(p)?
        }
        None => tempfile::tempdir().map_err(|source| PipelineError::Io {
            path: origin.to_path_buf(),
            source,
        })?,
    };
    b.add(ModuleKind::Test, ast, origin);
    let program = b.build().map_err(PipelineError::Program)?;

    for (rel, content) in &d.files {
        let sb = Sandbox::new(sandbox_dir.path());
        let r = sb.resolve(rel);
        if !r.allowed {
            return Err(PipelineError::Config(format!("file directive escapes the sandbox: {rel}")));
        }
        let host = sb.host_path(&r.relative);
        let io = |source| PipelineError::Io {
            path: host.clone(),
            source,
        };
        if let Some(parent) = host.parent() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        std::fs::write(&host, content).map_err(io)?;
    }

    let vuln = match &d.vuln {
        Some(id) => Some(
            corpus
                .vuln(id)
                .ok_or_else(|| PipelineError::Config(format!("unknown vulnerability `{id}`")))?,
        ),
        None => None,
    };
    let target = vuln
        .map(|v| v.vulnerable_function.clone())
        .unwrap_or_else(|| QualifiedName::new(EXEC_MODULE, "main"));
    let main = QualifiedName::new(EXEC_MODULE, "main");
    if program.lookup(&main).is_none() {
        return Err(PipelineError::Program(vec![Diagnostic::general("no `main` function").with_origin(origin)]));
    }
    let run = run_instrumented(
        &program,
        &TestCase::new(main, Vec::new()),
        &target,
        None,
        d.budgets.unwrap_or_default(),
        &Sandbox::new(sandbox_dir.path()),
        RunOptions::default(),
    )
    .map_err(|e| PipelineError::Program(vec![Diagnostic::general(e.to_string()).with_origin(origin)]))?;

    let evidence = match vuln {
        Some(v) => {
            let ctx = TriggerContext::new(v.trigger.clone(), d.attacker_host.as_deref().unwrap_or(DEFAULT_ATTACKER_HOST))
                .map_err(|e| PipelineError::Config(e.to_string()))?;
            detect_trigger(&run, &ctx)
        }
        None => None,
    };
    Ok(ExecReport {
        outcome: run.outcome.kind.label().to_string(),
        message: match &run.outcome.kind {
            OutcomeKind::UncaughtException { message } => Some(message.clone()),
            _ => None,
        },
        vuln: d.vuln.clone(),
        trigger: vuln.map(|v| v.trigger.kind),
        triggered: evidence.is_some(),
        evidence: evidence.unwrap_or_default(),
        steps_used: run.outcome.steps_used,
    })
}
