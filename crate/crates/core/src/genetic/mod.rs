//! Search-based generation of tests that reach the vulnerable function.

mod fitness;
mod operators;
mod search;

pub use fitness::{branch_distance, fitness, normalize, FitnessScore, Goals};
pub use operators::{
    cross_at, crossover, mutate, mutate_value, random_test, random_value, SearchSpace,
    MAX_PAYLOAD_FRAGMENT,
};
pub use search::{generate, ArchiveEntry, GenerationOutcome, GenerationStats, StopReason};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population: usize,
    pub tournament: usize,
    pub crossover_rate: f64,
    pub per_arg_mutation_rate: f64,
    pub elitism: usize,
    pub payload_seed_prob: f64,
    /// Wall-clock ceiling for the generation phase.
    pub budget_secs: f64,
    /// Deterministic cap on fitness evaluations; the usual stopping rule.
    pub max_evaluations: usize,
    /// Step budget for each fitness evaluation.
    pub eval_max_steps: u64,
    /// How many ranked entry candidates share the population.
    pub max_entries: usize,
    pub rng_seed: u64,
    pub workers: usize,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 50,
            tournament: 4,
            crossover_rate: 0.75,
            per_arg_mutation_rate: 0.3,
            elitism: 2,
            payload_seed_prob: 0.2,
            budget_secs: 10.0,
            max_evaluations: 2500,
            eval_max_steps: 100_000,
            max_entries: 3,
            rng_seed: 0,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{0} must lie in [0, 1]")]
    Rate(&'static str),
    #[error("population must be at least elitism and at least 2")]
    Population,
    #[error("tournament size must be positive")]
    Tournament,
    #[error("budget_secs must be positive")]
    Budget,
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, r) in [
            ("crossover_rate", self.crossover_rate),
            ("per_arg_mutation_rate", self.per_arg_mutation_rate),
            ("payload_seed_prob", self.payload_seed_prob),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(ConfigError::Rate(name));
            }
        }
        if self.population < self.elitism || self.population < 2 {
            return Err(ConfigError::Population);
        }
        if self.tournament == 0 {
            return Err(ConfigError::Tournament);
        }
        if !(self.budget_secs > 0.0) {
            return Err(ConfigError::Budget);
        }
        Ok(())
    }
}
