//! Payload injection into covering tests, rule-based repair, and trigger detection.

mod migrate;
mod rules;
mod trigger;

pub use migrate::{
    direct_trigger, migrate, MigratedTest, MigrationSpec, TriggerReport, Verdict, MAX_ARCHIVE, MAX_CHAIN,
    MAX_EXECUTIONS_PER_TEST,
};
pub use rules::{
    apply_chain, apply_rule, Applied, MaterializedFile, MigrationRule, RuleEnv, GENERIC_TEMPLATES, PAYLOAD_HOLE,
};
pub use trigger::{detect_trigger, Evidence, OracleSpec, TriggerCondition, TriggerContext, TriggerKind};

#[cfg(test)]
mod tests;
