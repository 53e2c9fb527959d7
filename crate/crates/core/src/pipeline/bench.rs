use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_pipeline, PipelineConfig, Report};
use crate::corpus::{Corpus, Expected};
use crate::migration::Verdict;

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub repeats: usize,
    pub first_seed: u64,
    pub config: PipelineConfig,
    /// Restrict to these projects; empty means every project.
    pub projects: Vec<String>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            repeats: 10,
            first_seed: 0,
            config: PipelineConfig::default(),
            projects: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub project: String,
    pub vuln: String,
    pub expected: Expected,
    pub runs: usize,
    pub exploitable: usize,
    pub not_exploitable: usize,
    pub inconclusive: usize,
    pub errors: Vec<String>,
    pub median_total_secs: f64,
    pub max_total_secs: f64,
    /// Meets the repeat-success rule (exploitable pairs) or never alarms (safe pairs).
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub repeats: usize,
    pub pairs: Vec<PairResult>,
    pub exploitable_pairs: usize,
    pub exploitable_pairs_passed: usize,
    pub safe_pairs: usize,
    pub safe_pairs_passed: usize,
    pub total_exploitable_runs: usize,
}

pub fn median(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Runs every expected (project, vulnerability) pair `repeats` times with
/// consecutive seeds, in parallel, one worker per run.
pub fn bench(corpus: &Corpus, opts: &BenchOptions) -> (BenchSummary, Vec<Report>) {
    let mut pairs: Vec<(String, String, Expected)> = Vec::new();
    for p in corpus.projects.values() {
        if !opts.projects.is_empty() && !opts.projects.contains(&p.name) {
            continue;
        }
        for (v, e) in &p.expected {
            pairs.push((p.name.clone(), v.clone(), *e));
        }
    }
    let jobs: Vec<(usize, u64)> = (0..pairs.len())
        .flat_map(|i| (0..opts.repeats as u64).map(move |s| (i, s)))
        .collect();
    let results: Vec<(usize, Result<Report, String>)> = jobs
        .par_iter()
        .map(|&(i, s)| {
            let cfg = PipelineConfig {
                rng_seed: opts.first_seed + s,
                workers: 1,
                ..opts.config.clone()
            };
            (i, run_pipeline(corpus, &pairs[i].0, &pairs[i].1, &cfg).map_err(|e| e.to_string()))
        })
        .collect();

    let mut out = Vec::new();
    let mut reports = Vec::new();
    for (i, (project, vuln, expected)) in pairs.iter().enumerate() {
        let mut r = PairResult {
            project: project.clone(),
            vuln: vuln.clone(),
            expected: *expected,
            runs: 0,
            exploitable: 0,
            not_exploitable: 0,
            inconclusive: 0,
            errors: Vec::new(),
            median_total_secs: 0.0,
            max_total_secs: 0.0,
            passed: false,
        };
        let mut times = Vec::new();
        for (_, res) in results.iter().filter(|(j, _)| *j == i) {
            r.runs += 1;
            match res {
                Ok(rep) => {
                    match rep.verdict {
                        Verdict::Exploitable => r.exploitable += 1,
                        Verdict::NotExploitable => r.not_exploitable += 1,
                        Verdict::Inconclusive => r.inconclusive += 1,
                    }
                    times.push(rep.timings.total_secs);
                    reports.push(rep.clone());
                }
                Err(e) => r.errors.push(e.clone()),
            }
        }
        r.max_total_secs = times.iter().copied().fold(0.0, f64::max);
        r.median_total_secs = median(&mut times);
        r.passed = if expected.exploitable {
            2 * r.exploitable >= r.runs && r.runs > 0
        } else {
            r.not_exploitable == r.runs && r.runs > 0
        };
        out.push(r);
    }
    let summary = BenchSummary {
        repeats: opts.repeats,
        exploitable_pairs: out.iter().filter(|p| p.expected.exploitable).count(),
        exploitable_pairs_passed: out.iter().filter(|p| p.expected.exploitable && p.passed).count(),
        safe_pairs: out.iter().filter(|p| !p.expected.exploitable).count(),
        safe_pairs_passed: out.iter().filter(|p| !p.expected.exploitable && p.passed).count(),
        total_exploitable_runs: out.iter().map(|p| p.exploitable).sum(),
        pairs: out,
    };
    (summary, reports)
}
