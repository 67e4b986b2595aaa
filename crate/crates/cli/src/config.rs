//! Experiment configuration: built-in defaults, then a TOML file, then flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use jitai_core::domain::CovariateSchema;
use jitai_core::eval::RegretMode;
use jitai_core::learner::{PriorSpec, SamplerConfig};
use jitai_core::parallel::Execution;
use jitai_core::policy::{ClipBounds, NearestMap};
use jitai_core::sim::{AlgorithmKind, LearnerConfig, Setting, TrialConfig};
use jitai_core::spec::SpecConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Covariate schema by name or spelled out in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SchemaSetting {
    Named(String),
    Custom(CovariateSchema),
}

impl SchemaSetting {
    pub fn resolve(&self) -> Result<CovariateSchema, CliError> {
        match self {
            SchemaSetting::Named(n) => match n.as_str() {
                "desk" => Ok(CovariateSchema::desk_scale()),
                "ls4l2-default" => Ok(CovariateSchema::ls4l2_default()),
                other => Err(CliError::validation(format!(
                    "schema: unknown schema {other:?}; expected \"desk\", \"ls4l2-default\" or a table"
                ))),
            },
            SchemaSetting::Custom(s) => Ok(s.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub setting: Setting,
    pub seed: u64,
    pub out: PathBuf,
    pub algorithms: Vec<AlgorithmKind>,
    /// Replicates per algorithm.
    pub replicates: BTreeMap<AlgorithmKind, u32>,
    pub regret_mode: RegretMode,
    pub execution: Execution,
    pub schema: SchemaSetting,
    pub trial: TrialConfig,
    pub sampler: SamplerConfig,
    pub prior: PriorSpec,
    pub spec: SpecConfig,
    pub clip: ClipBounds,
    pub nearest: NearestMap,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            setting: Setting::One,
            seed: 0,
            out: PathBuf::from("jitai-out"),
            algorithms: AlgorithmKind::ALL.to_vec(),
            replicates: [
                (AlgorithmKind::Simple, 50),
                (AlgorithmKind::Ls4l2, 50),
                (AlgorithmKind::Complicated, 5),
            ]
            .into_iter()
            .collect(),
            regret_mode: RegretMode::Realized,
            execution: Execution::default(),
            schema: SchemaSetting::Named("desk".into()),
            trial: TrialConfig::default(),
            sampler: SamplerConfig {
                chains: 2,
                warmup_draws: 150,
                kept_draws: 500,
                ..SamplerConfig::default()
            },
            prior: PriorSpec::default(),
            spec: SpecConfig::default(),
            clip: ClipBounds::default(),
            nearest: NearestMap::new(),
        }
    }
}

/// Command-line values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub setting: Option<u8>,
    pub algorithms: Vec<String>,
    pub replicates: Option<u32>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::validation(format!("config: {}", e.to_string().trim_end())))
    }

    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::validation(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => ExperimentConfig::default(),
        };
        cfg.apply(overrides)?;
        cfg.finish()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(s) = o.setting {
            self.setting = Setting::try_from(s).map_err(|e| CliError::validation(format!("--setting: {e}")))?;
        }
        if !o.algorithms.is_empty() {
            self.algorithms = o
                .algorithms
                .iter()
                .map(|a| AlgorithmKind::parse(a).map_err(|e| CliError::validation(format!("--algorithm: {e}"))))
                .collect::<Result<_, _>>()?;
        }
        if let Some(n) = o.replicates {
            for a in AlgorithmKind::ALL {
                self.replicates.insert(a, n);
            }
        }
        Ok(())
    }

    /// Fills derived defaults and validates every section.
    pub fn finish(&mut self) -> Result<(), CliError> {
        let schema = self.schema.resolve()?;
        if self.trial.context_weights.is_empty() {
            self.trial.context_weights = TrialConfig::known_levels_only(&schema);
        }
        self.sampler.execution = self.execution;
        let section = |name: &'static str| move |e: jitai_core::Error| CliError::validation(format!("{name}: {e}"));
        self.trial.validate(&schema).map_err(section("trial"))?;
        self.sampler.validate().map_err(section("sampler"))?;
        self.prior.validate().map_err(section("prior"))?;
        self.spec.validate().map_err(section("spec"))?;
        self.clip.validate().map_err(section("clip"))?;
        if self.algorithms.is_empty() {
            return Err(CliError::validation("algorithms: at least one algorithm is required"));
        }
        let mut seen = self.algorithms.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.algorithms.len() {
            return Err(CliError::validation("algorithms: duplicate entries"));
        }
        for a in &self.algorithms {
            match self.replicates.get(a) {
                Some(&n) if n >= 1 => {}
                Some(_) => {
                    return Err(CliError::validation(format!(
                        "replicates.{}: must be at least 1",
                        a.name()
                    )))
                }
                None => return Err(CliError::validation(format!("replicates.{}: missing", a.name()))),
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> CovariateSchema {
        self.schema.resolve().expect("validated in finish")
    }

    pub fn replicates_for(&self, algo: AlgorithmKind) -> u32 {
        self.replicates.get(&algo).copied().unwrap_or(0)
    }

    pub fn learner(&self) -> LearnerConfig {
        LearnerConfig {
            prior: self.prior.clone(),
            sampler: self.sampler.clone(),
            spec: self.spec.clone(),
            clip: self.clip,
            nearest: self.nearest.clone(),
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
