use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vexploit_core::analysis::{build_call_graph, discover_entries};
use vexploit_core::corpus::{load_project, validate_corpus, Corpus};
use vexploit_core::pipeline::{
    bench, emit_report, exec_test_file, run_pipeline, BenchOptions, ExistingTests, PipelineConfig, PipelineError,
};
use vexploit_core::vex::{format_diagnostics, QualifiedName};

#[derive(Parser)]
#[command(name = "vexploit", version, about = "Decide whether a project can trigger a vulnerability in the library it uses")]
struct Cli {
    /// Corpus root (libraries, vulnerability records, projects).
    #[arg(long, global = true, env = "VEXPLOIT_CORPUS", default_value = "corpus")]
    corpus: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct RunArgs {
    /// Generation budget in seconds.
    #[arg(long, default_value_t = 10.0)]
    budget_secs: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "auto")]
    use_existing_tests: ExistingTests,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Check generated tests as-is instead of migrating the payload into them.
    #[arg(long)]
    no_migration: bool,
    #[arg(long)]
    attacker_host: Option<String>,
}

impl RunArgs {
    fn config(&self) -> PipelineConfig {
        let mut cfg = PipelineConfig {
            budget_secs: self.budget_secs,
            rng_seed: self.seed,
            use_existing_tests: self.use_existing_tests,
            workers: self.workers,
            migration: !self.no_migration,
            ..PipelineConfig::default()
        };
        if let Some(h) = &self.attacker_host {
            cfg.attacker_host = h.clone();
        }
        cfg
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline for one project and vulnerability.
    Run {
        /// Project directory or corpus project name.
        #[arg(long)]
        project: String,
        #[arg(long)]
        vuln: String,
        #[command(flatten)]
        args: RunArgs,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Also write the rendered test program here.
        #[arg(long)]
        emit_test: Option<PathBuf>,
    },
    /// Corpus maintenance.
    Corpus {
        #[command(subcommand)]
        action: CorpusAction,
    },
    /// Print the entry functions that reach a function, with their call paths.
    Callgraph {
        #[arg(long)]
        project: String,
        #[arg(long)]
        to: QualifiedName,
        /// Print the whole static call graph in Graphviz format.
        #[arg(long)]
        dot: bool,
    },
    /// Run a rendered test program and report whether it triggers.
    Exec { file: PathBuf },
    /// Repeat every expected pair over consecutive seeds.
    Bench {
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[command(flatten)]
        args: RunArgs,
        /// Limit to these projects.
        #[arg(long)]
        project: Vec<String>,
        /// Write the JSON summary here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CorpusAction {
    Validate,
    List,
}

fn load(corpus: &Path) -> Result<Corpus, PipelineError> {
    Ok(Corpus::load(corpus)?)
}

/// A project given as a directory is added to the corpus under its manifest name.
fn project_name(corpus: &mut Corpus, arg: &str) -> Result<String, PipelineError> {
    let dir = Path::new(arg);
    let manifest = dir.join("project.toml");
    if manifest.is_file() {
        let p = load_project(&manifest)?;
        let name = p.name.clone();
        corpus.projects.insert(name.clone(), p);
        Ok(name)
    } else if corpus.project(arg).is_some() {
        Ok(arg.to_string())
    } else {
        Err(PipelineError::Config(format!("no project `{arg}`")))
    }
}

fn write(path: &Path, text: &str) -> Result<(), PipelineError> {
    std::fs::write(path, text).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Run {
            project,
            vuln,
            args,
            report,
            emit_test,
        } => {
            let mut corpus = load(&cli.corpus)?;
            let name = project_name(&mut corpus, &project)?;
            let r = run_pipeline(&corpus, &name, &vuln, &args.config())?;
            if let Some(path) = emit_test {
                write(&path, &r.rendered_test)?;
            }
            match report {
                Some(path) => {
                    emit_report(&r, &path)?;
                    println!(
                        "{} {} {}: {} ({:.2}s)",
                        r.project,
                        r.vuln,
                        r.trigger.name(),
                        r.verdict.name(),
                        r.timings.total_secs
                    );
                }
                None => println!("{}", r.to_json()),
            }
        }
        Command::Corpus { action } => match action {
            CorpusAction::Validate => {
                let diags = validate_corpus(&cli.corpus);
                if !diags.is_empty() {
                    eprintln!("{}", format_diagnostics(&diags));
                    return Err(PipelineError::Config(format!("{} problem(s) in corpus", diags.len())));
                }
                println!("corpus ok");
            }
            CorpusAction::List => {
                let corpus = load(&cli.corpus)?;
                for v in corpus.vulns.values() {
                    println!("vuln {} {} {}", v.id, v.vulnerable_function, v.trigger.kind.name());
                }
                for p in corpus.projects.values() {
                    for (v, e) in &p.expected {
                        let label = if e.exploitable { "exploitable" } else { "safe" };
                        let tests = if p.tests_dir.is_some() { " tests" } else { "" };
                        println!("project {} {v} {label}{tests}", p.name);
                    }
                }
            }
        },
        Command::Callgraph { project, to, dot } => {
            let mut corpus = load(&cli.corpus)?;
            let name = project_name(&mut corpus, &project)?;
            let program = corpus
                .project_program(corpus.project(&name).expect("just resolved"))
                .map_err(PipelineError::Program)?;
            let g = build_call_graph(&program);
            if dot {
                print!("{}", g.to_dot());
                return Ok(());
            }
            let entries = discover_entries(&g, &to);
            if entries.is_empty() {
                println!("no entry function reaches {to}");
            }
            for e in entries {
                let path: Vec<String> = e.path.functions.iter().map(ToString::to_string).collect();
                println!("{} {}", e.rank, path.join(" -> "));
            }
        }
        Command::Exec { file } => {
            let corpus = load(&cli.corpus)?;
            let r = exec_test_file(&file, &corpus)?;
            println!("{}", serde_json::to_string_pretty(&r).expect("exec reports serialize"));
        }
        Command::Bench {
            repeats,
            args,
            project,
            json,
        } => {
            let corpus = load(&cli.corpus)?;
            let opts = BenchOptions {
                repeats,
                first_seed: args.seed,
                config: args.config(),
                projects: project,
            };
            let (summary, _) = bench(&corpus, &opts);
            for p in &summary.pairs {
                let kind = if p.expected.exploitable { "exploitable" } else { "safe" };
                println!(
                    "{:<28} {:<22} {:<11} {:>2}/{} exploitable  median {:>6.2}s  max {:>6.2}s  {}",
                    p.project,
                    p.vuln,
                    kind,
                    p.exploitable,
                    p.runs,
                    p.median_total_secs,
                    p.max_total_secs,
                    if p.passed { "ok" } else { "FAIL" }
                );
                for e in &p.errors {
                    println!("    error: {e}");
                }
            }
            println!(
                "exploitable pairs {}/{}, safe pairs {}/{}, exploitable runs {}",
                summary.exploitable_pairs_passed,
                summary.exploitable_pairs,
                summary.safe_pairs_passed,
                summary.safe_pairs,
                summary.total_exploitable_runs
            );
            if let Some(path) = json {
                write(&path, &serde_json::to_string_pretty(&summary).expect("summaries serialize"))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vexploit: {e}");
            ExitCode::from(2)
        }
    }
}
