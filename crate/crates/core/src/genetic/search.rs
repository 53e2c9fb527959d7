use std::cmp::Ordering;
use std::collections::HashMap;
use std::time::Instant;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fitness::{fitness, FitnessScore, Goals};
use super::operators::{crossover, mutate, random_test, SearchSpace};
use super::GaConfig;
use crate::analysis::EntryCandidate;
use crate::extract::ExploitPayload;
use crate::instrument::{run_instrumented, RunOptions};
use crate::interp::{Budgets, Sandbox, Value};
use crate::test_case::TestCase;
use crate::vex::{Program, QualifiedName};

/// A distinct test that reached the vulnerable function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub test: TestCase,
    pub fitness: FitnessScore,
    /// The primary argument the vulnerable function received.
    pub received: Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    PayloadReached,
    EvaluationCap,
    TimeBudget,
    NoCandidates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generations: usize,
    pub evaluations: usize,
    /// Best total fitness after each generation, starting with the initial population.
    pub best_fitness_trajectory: Vec<f64>,
    pub stop_reason: StopReason,
}

#[derive(Debug, Clone)]
pub struct GenerationOutcome {
    pub best: Option<(TestCase, FitnessScore)>,
    pub archive: Vec<ArchiveEntry>,
    pub stats: GenerationStats,
    pub entry_executed: bool,
}

impl GenerationOutcome {
    pub fn failed(&self) -> bool {
        !self.entry_executed
    }
}

#[derive(Debug, Clone)]
struct Scored {
    test: TestCase,
    score: FitnessScore,
    received: Option<Value>,
}

fn better(a: &Scored, b: &Scored) -> Ordering {
    b.score
        .total()
        .total_cmp(&a.score.total())
        .then_with(|| a.test.id.cmp(&b.test.id))
}

fn done(s: &Scored) -> bool {
    s.received.is_some() && s.score.sim >= 1.0 && s.score.total() >= 3.0 + 1e-9
}

struct Evaluator<'a> {
    program: &'a Program,
    vulnerable: &'a QualifiedName,
    payload: &'a ExploitPayload,
    paths: HashMap<&'a QualifiedName, &'a EntryCandidate>,
    budgets: Budgets,
    sandbox: &'a Sandbox,
}

impl Evaluator<'_> {
    fn eval(&self, test: &TestCase) -> Scored {
        let cand = self.paths[&test.entry];
        let run = run_instrumented(
            self.program,
            test,
            self.vulnerable,
            None,
            self.budgets,
            self.sandbox,
            RunOptions::default(),
        )
        .expect("generated tests match their entry's arity");
        let goals = Goals {
            entry: &cand.function,
            vulnerable: self.vulnerable,
            path: &cand.path,
        };
        let score = fitness(&run, goals, self.payload);
        let received = run
            .dyn_graph
            .map(|g| g.capture_args.get(self.payload.primary_index).cloned().unwrap_or_default());
        Scored {
            test: test.clone(),
            score,
            received,
        }
    }
}

/// Generational GA with elitism over a population mixed across the top
/// entry candidates. Stops when a test delivers the payload unchanged, at
/// the evaluation cap, or at the wall-clock ceiling.
#[allow(clippy::too_many_arguments)]
pub fn generate(
    program: &Program,
    candidates: &[EntryCandidate],
    vulnerable: &QualifiedName,
    payload: &ExploitPayload,
    cfg: &GaConfig,
    budgets: Budgets,
    sandbox: &Sandbox,
) -> GenerationOutcome {
    let started = Instant::now();
    let cands = &candidates[..candidates.len().min(cfg.max_entries.max(1))];
    if cands.is_empty() {
        return GenerationOutcome {
            best: None,
            archive: Vec::new(),
            stats: GenerationStats {
                generations: 0,
                evaluations: 0,
                best_fitness_trajectory: Vec::new(),
                stop_reason: StopReason::NoCandidates,
            },
            entry_executed: false,
        };
    }
    let space = SearchSpace::new(program, payload);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let evaluator = Evaluator {
        program,
        vulnerable,
        payload,
        paths: cands.iter().map(|c| (&c.function, c)).collect(),
        budgets: Budgets {
            max_steps: budgets.max_steps.min(cfg.eval_max_steps),
            max_call_depth: budgets.max_call_depth,
        },
        sandbox,
    };
    let pool = (cfg.workers > 1)
        .then(|| rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build().ok())
        .flatten();

    let mut cache: HashMap<String, Scored> = HashMap::new();
    let mut archive: IndexMap<String, ArchiveEntry> = IndexMap::new();
    let mut evaluations = 0usize;
    let mut entry_executed = false;
    let mut best: Option<Scored> = None;

    let mut evaluate = |tests: &[TestCase],
                        cache: &mut HashMap<String, Scored>,
                        evaluations: &mut usize|
     -> Vec<Scored> {
        let mut fresh: Vec<&TestCase> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for t in tests {
            if !cache.contains_key(&t.id) && seen.insert(t.id.clone()) {
                fresh.push(t);
            }
        }
        let results: Vec<Scored> = match &pool {
            Some(p) => p.install(|| fresh.par_iter().map(|t| evaluator.eval(t)).collect()),
            None => fresh.iter().map(|t| evaluator.eval(t)).collect(),
        };
        *evaluations += results.len();
        for s in results {
            if s.score.entry_function_hit > 0.0 {
                entry_executed = true;
            }
            if let Some(received) = &s.received {
                archive.entry(s.test.id.clone()).or_insert_with(|| ArchiveEntry {
                    test: s.test.clone(),
                    fitness: s.score,
                    received: received.clone(),
                });
            }
            if best.as_ref().is_none_or(|b| better(&s, b) == Ordering::Less) {
                best = Some(s.clone());
            }
            cache.insert(s.test.id.clone(), s);
        }
        tests.iter().map(|t| cache[&t.id].clone()).collect()
    };

    let initial: Vec<TestCase> = (0..cfg.population)
        .map(|i| random_test(program, &cands[i % cands.len()], &space, &mut rng))
        .collect();
    let mut population = evaluate(&initial, &mut cache, &mut evaluations);
    population.sort_by(better);
    let mut trajectory = vec![population[0].score.total()];
    let mut generations = 0usize;

    let stop_reason = loop {
        if population.iter().any(done) {
            break StopReason::PayloadReached;
        }
        if evaluations >= cfg.max_evaluations {
            break StopReason::EvaluationCap;
        }
        if started.elapsed().as_secs_f64() >= cfg.budget_secs {
            break StopReason::TimeBudget;
        }
        let mut next: Vec<TestCase> = population
            .iter()
            .take(cfg.elitism)
            .map(|s| s.test.clone())
            .collect();
        while next.len() < cfg.population {
            let a = tournament(&population, cfg.tournament, &mut rng);
            let b = tournament(&population, cfg.tournament, &mut rng);
            let (x, y) = if rng.gen_bool(cfg.crossover_rate) {
                crossover(a, b, &mut rng)
            } else {
                (a.clone(), b.clone())
            };
            next.push(mutate(&x, program, cands, &space, cfg, &mut rng));
            if next.len() < cfg.population {
                next.push(mutate(&y, program, cands, &space, cfg, &mut rng));
            }
        }
        population = evaluate(&next, &mut cache, &mut evaluations);
        population.sort_by(better);
        generations += 1;
        trajectory.push(population[0].score.total());
    };

    let mut archive: Vec<ArchiveEntry> = archive.into_values().collect();
    archive.sort_by(|a, b| {
        b.fitness
            .total()
            .total_cmp(&a.fitness.total())
            .then_with(|| a.test.id.cmp(&b.test.id))
    });
    GenerationOutcome {
        best: best.map(|s| (s.test, s.score)),
        archive,
        stats: GenerationStats {
            generations,
            evaluations,
            best_fitness_trajectory: trajectory,
            stop_reason,
        },
        entry_executed,
    }
}

fn tournament<'p>(pop: &'p [Scored], k: usize, rng: &mut impl Rng) -> &'p TestCase {
    let mut winner: Option<&Scored> = None;
    for _ in 0..k {
        let c = pop.choose(rng).expect("non-empty population");
        if winner.is_none_or(|w| better(c, w) == Ordering::Less) {
            winner = Some(c);
        }
    }
    &winner.expect("k > 0").test
}
