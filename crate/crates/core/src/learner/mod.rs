//! Hierarchical Bayesian logistic regression fitted by NUTS.

mod diagnostics;
mod io;
mod model;
mod nuts;

use std::collections::BTreeSet;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use diagnostics::{ess, split_rhat};
pub use model::LogDensity;

use crate::domain::{Action, ContextVector, DecisionRecord, StudyClock};
use crate::error::{Error, Result};
use crate::parallel::Execution;
use crate::spec::{DesignPoint, ModelSpec};
use model::HierarchicalLogit;
use nuts::{run_chain, NutsSettings};

/// R-hat above this marks a fit as poorly mixed.
pub const RHAT_LIMIT: f64 = 1.05;
/// Fraction of divergent transitions above which a fit is poorly mixed.
pub const DIVERGENCE_LIMIT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum PriorFamily {
    Normal,
    StudentT { df: f64 },
}

/// Zero-mean priors whose scale shrinks with interaction order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    /// Scale for orders 1, 2, ...; later orders continue at a quarter per order.
    pub scale_by_order: Vec<f64>,
    pub family: PriorFamily,
    /// Degrees of freedom of the half-t prior on random-effect scales.
    pub random_scale_df: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            scale_by_order: vec![1.0, 0.25, 0.0625, 0.0156],
            family: PriorFamily::StudentT { df: 7.0 },
            random_scale_df: 3.0,
        }
    }
}

impl PriorSpec {
    pub fn gaussian() -> Self {
        PriorSpec {
            family: PriorFamily::Normal,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scale_by_order;
        if s.is_empty() || s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidArgument("prior scales must be positive".into()));
        }
        if s.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument("prior scales must decrease with order".into()));
        }
        if let PriorFamily::StudentT { df } = self.family {
            if !(df > 0.0) {
                return Err(Error::InvalidArgument(format!("prior df {df} must be positive")));
            }
        }
        if !(self.random_scale_df > 0.0) {
            return Err(Error::InvalidArgument("random scale df must be positive".into()));
        }
        Ok(())
    }

    pub fn scale(&self, order: usize) -> Result<f64> {
        prior_scale(order, self)
    }
}

pub fn prior_scale(order: usize, prior: &PriorSpec) -> Result<f64> {
    if order < 1 {
        return Err(Error::InvalidArgument("interaction order must be at least 1".into()));
    }
    let table = &prior.scale_by_order;
    let last = table.len();
    if order <= last {
        Ok(table[order - 1])
    } else {
        Ok(table[last - 1] * 0.25f64.powi((order - last) as i32))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup_draws: usize,
    pub kept_draws: usize,
    pub seed: u64,
    pub target_acceptance: f64,
    pub max_tree_depth: usize,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 4,
            warmup_draws: 1000,
            kept_draws: 1000,
            seed: 0,
            target_acceptance: 0.8,
            max_tree_depth: 10,
            execution: Execution::default(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains < 2 {
            return Err(Error::InvalidArgument("at least two chains are required".into()));
        }
        if self.kept_draws < 2 {
            return Err(Error::InvalidArgument("kept_draws must be at least 2".into()));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::InvalidArgument("target_acceptance must lie in (0, 1)".into()));
        }
        if self.max_tree_depth == 0 {
            return Err(Error::InvalidArgument("max_tree_depth must be positive".into()));
        }
        Ok(())
    }
}

/// Kept draws on the natural scale, columns ordered as
/// `[fixed coefficients | random-effect scales | per-participant deviations]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    names: Vec<String>,
    n_fixed: usize,
    n_scales: usize,
    n_random_cols: usize,
    participants: Vec<u32>,
    chains: usize,
    draws_per_chain: usize,
    values: Vec<f64>,
    rhat: Vec<f64>,
    ess: Vec<f64>,
    divergences: usize,
    wall_seconds: f64,
}

impl PosteriorDraws {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        spec: &ModelSpec,
        participants: Vec<u32>,
        n_scales: usize,
        chains: usize,
        draws_per_chain: usize,
        values: Vec<f64>,
        divergences: usize,
        wall_seconds: f64,
    ) -> Result<Self> {
        let mut names = spec.fixed_column_labels();
        for (t, _) in spec.random_terms() {
            names.push(format!("sd[{}]", spec.term_label(t)));
        }
        names.truncate(spec.n_fixed() + n_scales);
        let rlabels = spec.random_column_labels();
        for p in &participants {
            for l in &rlabels {
                names.push(format!("b[{p}][{l}]"));
            }
        }
        let k = names.len();
        if values.len() != k * chains * draws_per_chain {
            return Err(Error::InvalidArgument(format!(
                "draw matrix has {} values, expected {} x {}",
                values.len(),
                chains * draws_per_chain,
                k
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("draws must be finite".into()));
        }
        let mut d = PosteriorDraws {
            names,
            n_fixed: spec.n_fixed(),
            n_scales,
            n_random_cols: if participants.is_empty() { 0 } else { spec.n_random() },
            participants,
            chains,
            draws_per_chain,
            values,
            rhat: vec![],
            ess: vec![],
            divergences,
            wall_seconds,
        };
        d.compute_diagnostics();
        Ok(d)
    }

    /// Builds draws from explicit fixed-coefficient rows, one chain, no
    /// random effects.
    pub fn from_fixed_rows(spec: &ModelSpec, rows: &[Vec<f64>]) -> Result<Self> {
        let n = spec.n_fixed();
        if rows.is_empty() {
            return Err(Error::NoDraws);
        }
        let mut values = Vec::with_capacity(rows.len() * n);
        for r in rows {
            if r.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "row has {} values, expected {n}",
                    r.len()
                )));
            }
            values.extend_from_slice(r);
        }
        Self::assemble(spec, vec![], 0, 1, rows.len(), values, 0, 0.0)
    }

    fn compute_diagnostics(&mut self) {
        let k = self.names.len();
        let (rhat, ess) = (0..k)
            .map(|j| {
                let per_chain = self.chain_columns(j);
                let refs: Vec<&[f64]> = per_chain.iter().map(Vec::as_slice).collect();
                (split_rhat(&refs), ess(&refs))
            })
            .unzip();
        self.rhat = rhat;
        self.ess = ess;
    }

    fn chain_columns(&self, j: usize) -> Vec<Vec<f64>> {
        let k = self.names.len();
        (0..self.chains)
            .map(|c| {
                (0..self.draws_per_chain)
                    .map(|i| self.values[(c * self.draws_per_chain + i) * k + j])
                    .collect()
            })
            .collect()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_draws(&self) -> usize {
        self.chains * self.draws_per_chain
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn n_fixed(&self) -> usize {
        self.n_fixed
    }

    pub fn chains(&self) -> usize {
        self.chains
    }

    pub fn draws_per_chain(&self) -> usize {
        self.draws_per_chain
    }

    pub fn participants(&self) -> &[u32] {
        &self.participants
    }

    pub fn draw(&self, i: usize) -> &[f64] {
        let k = self.names.len();
        &self.values[i * k..(i + 1) * k]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_draws()).map(|i| self.draw(i)[j]).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn mean(&self, j: usize) -> f64 {
        self.column(j).iter().sum::<f64>() / self.n_draws() as f64
    }

    pub fn sd(&self, j: usize) -> f64 {
        let c = self.column(j);
        let m = c.iter().sum::<f64>() / c.len() as f64;
        (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (c.len() as f64 - 1.0)).sqrt()
    }

    pub fn rhat(&self) -> &[f64] {
        &self.rhat
    }

    pub fn ess(&self) -> &[f64] {
        &self.ess
    }

    pub fn divergences(&self) -> usize {
        self.divergences
    }

    pub fn wall_seconds(&self) -> f64 {
        self.wall_seconds
    }

    fn random_block(&self, draw: usize, participant: u32) -> Option<&[f64]> {
        let g = self.participants.binary_search(&participant).ok()?;
        let start = self.n_fixed + self.n_scales + g * self.n_random_cols;
        Some(&self.draw(draw)[start..start + self.n_random_cols])
    }

    /// Health verdict from the stored diagnostics.
    pub fn health(&self) -> FitHealth {
        let mut offending = Vec::new();
        for (name, r) in self.names.iter().zip(&self.rhat) {
            if *r > RHAT_LIMIT {
                offending.push(format!("rhat[{name}]={r:.4}"));
            }
        }
        let frac = self.divergences as f64 / self.n_draws() as f64;
        if frac > DIVERGENCE_LIMIT {
            offending.push(format!("divergences={}/{}", self.divergences, self.n_draws()));
        }
        FitHealth {
            status: if offending.is_empty() {
                FitStatus::Ok
            } else {
                FitStatus::BrokenMixing
            },
            offending,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitStatus {
    Ok,
    BrokenNoDraws,
    BrokenMixing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitHealth {
    pub status: FitStatus,
    pub offending: Vec<String>,
}

impl FitHealth {
    pub fn is_ok(&self) -> bool {
        self.status == FitStatus::Ok
    }
}

/// Result of a fit; draws are absent when sampling failed outright.
#[derive(Debug, Clone)]
pub struct Fit {
    pub draws: Option<PosteriorDraws>,
    pub health: FitHealth,
}

pub fn fit_posterior(data: &[DecisionRecord], spec: &ModelSpec, prior: &PriorSpec, cfg: &SamplerConfig) -> Result<Fit> {
    prior.validate()?;
    cfg.validate()?;
    let start = Instant::now();
    let participants: Vec<u32> = if spec.n_random() > 0 {
        data.iter()
            .map(|r| r.participant_id)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    } else {
        vec![]
    };
    let target = HierarchicalLogit::new(data, spec, prior, &participants)?;
    let settings = NutsSettings {
        warmup: cfg.warmup_draws,
        draws: cfg.kept_draws,
        max_depth: cfg.max_tree_depth,
        target_accept: cfg.target_acceptance,
        init_radius: 2.0,
    };
    let outputs = cfg.execution.map(cfg.chains, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(c as u64);
        run_chain(&target, &settings, &mut rng)
    });

    let broken = |detail: String| Fit {
        draws: None,
        health: FitHealth {
            status: FitStatus::BrokenNoDraws,
            offending: vec![detail],
        },
    };
    let dim = target.dim();
    let mut values = Vec::new();
    let mut divergences = 0;
    let mut buf = Vec::new();
    for (c, out) in outputs.into_iter().enumerate() {
        let Some(out) = out else {
            return Ok(broken(format!("chain {c}: no finite starting point")));
        };
        divergences += out.divergences;
        for row in out.draws.chunks(dim) {
            target.constrain(row, &mut buf);
            if buf.iter().any(|v| !v.is_finite()) {
                return Ok(broken(format!("chain {c}: non-finite draw")));
            }
            values.extend_from_slice(&buf);
        }
    }
    debug_assert_eq!(target.n_fixed(), spec.n_fixed());
    debug_assert!(target.n_groups() == participants.len() || target.n_cols() == 0);
    let draws = PosteriorDraws::assemble(
        spec,
        participants,
        target.n_terms(),
        cfg.chains,
        cfg.kept_draws,
        values,
        divergences,
        start.elapsed().as_secs_f64(),
    )?;
    let health = draws.health();
    Ok(Fit {
        draws: Some(draws),
        health,
    })
}

/// Per-draw linear predictor at one design point.
pub fn linear_predictors(draws: &PosteriorDraws, spec: &ModelSpec, point: DesignPoint<'_>) -> Result<Vec<f64>> {
    if draws.n_fixed != spec.n_fixed() {
        return Err(Error::InvalidArgument(format!(
            "draws have {} fixed columns, spec has {}",
            draws.n_fixed,
            spec.n_fixed()
        )));
    }
    let row = spec.design_row(point)?;
    Ok((0..draws.n_draws())
        .map(|i| {
            let d = draws.draw(i);
            let mut eta: f64 = row.fixed.iter().map(|&(c, v)| v * d[c]).sum();
            if let Some(p) = point.participant {
                if let Some(b) = draws.random_block(i, p) {
                    eta += row.random.iter().map(|&(c, v)| v * b[c]).sum::<f64>();
                }
            }
            eta
        })
        .collect())
}

pub fn inv_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-draw success probability; `participant = None` uses zero random
/// effects and population baseline covariates.
pub fn predict_success(
    draws: &PosteriorDraws,
    spec: &ModelSpec,
    ctx: &ContextVector,
    action: Action,
    clock: StudyClock,
    participant: Option<u32>,
) -> Result<Vec<f64>> {
    let eta = linear_predictors(
        draws,
        spec,
        DesignPoint {
            context: ctx,
            action,
            clock,
            participant,
        },
    )?;
    Ok(eta.into_iter().map(inv_logit).collect())
}
