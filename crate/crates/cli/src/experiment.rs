//! Replicate seeding and per-replicate trial runs.

use jitai_core::domain::CovariateSchema;
use jitai_core::seeds::derive_seed;
use jitai_core::sim::{sample_coefficients, simulate_trial, AlgorithmKind, GenerativeModel, TrialOutcome};

use crate::config::ExperimentConfig;
use crate::error::CliError;

/// Seed of replicate `r`'s synthetic dataset (schedules, contexts, reward
/// uniforms). Shared by all algorithms so they face the same participants.
pub fn dataset_seed(master: u64, replicate: u32) -> u64 {
    derive_seed(master, "dataset", replicate as u64)
}

pub fn coefficient_seed(master: u64, replicate: u32) -> u64 {
    derive_seed(master, "coefficients", replicate as u64)
}

pub fn replicate_model(cfg: &ExperimentConfig, schema: &CovariateSchema, replicate: u32) -> GenerativeModel {
    sample_coefficients(cfg.setting, schema, coefficient_seed(cfg.seed, replicate))
}

pub fn run_replicate(
    cfg: &ExperimentConfig,
    schema: &CovariateSchema,
    algo: AlgorithmKind,
    replicate: u32,
    model: &GenerativeModel,
) -> Result<TrialOutcome, CliError> {
    let mut trial = cfg.trial.clone();
    trial.seed = dataset_seed(cfg.seed, replicate);
    Ok(simulate_trial(&trial, algo, model, schema, &cfg.learner())?)
}

pub fn log_name(algo: AlgorithmKind, replicate: u32) -> String {
    format!("{}_rep{replicate:03}.csv", algo.name())
}

/// Inverse of [`log_name`].
pub fn parse_log_name(name: &str) -> Option<(AlgorithmKind, u32)> {
    let stem = name.strip_suffix(".csv")?;
    let (algo, rep) = stem.rsplit_once("_rep")?;
    Some((AlgorithmKind::parse(algo).ok()?, rep.parse().ok()?))
}

pub fn coefficient_name(replicate: u32) -> String {
    format!("replicate{replicate:03}.csv")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_names_round_trip() {
        for a in AlgorithmKind::ALL {
            assert_eq!(parse_log_name(&log_name(a, 7)), Some((a, 7)));
        }
        assert_eq!(parse_log_name("notes.txt"), None);
    }

    #[test]
    fn dataset_seed_is_shared_across_algorithms() {
        assert_eq!(dataset_seed(3, 1), dataset_seed(3, 1));
        assert_ne!(dataset_seed(3, 1), dataset_seed(3, 2));
        assert_ne!(dataset_seed(3, 1), coefficient_seed(3, 1));
    }
}
