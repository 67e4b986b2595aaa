//! Thompson-sampling policy tables over the full context space, with
//! imputation for contexts containing levels never seen in training.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::{Action, ContextVector, CovariateSchema, StudyClock, UNKNOWN};
use crate::error::{Error, Result};
use crate::learner::{inv_logit, linear_predictors, PosteriorDraws};
use crate::parallel::Execution;
use crate::spec::{DesignPoint, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClipBounds {
    pub lower: f64,
    pub upper: f64,
}

impl Default for ClipBounds {
    fn default() -> Self {
        ClipBounds {
            lower: 0.05,
            upper: 0.95,
        }
    }
}

impl ClipBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        let c = ClipBounds { lower, upper };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.lower && self.lower < self.upper && self.upper < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "clip bounds ({}, {}) must satisfy 0 < lower < upper < 1",
                self.lower, self.upper
            )));
        }
        Ok(())
    }

    pub fn apply(&self, p: f64) -> f64 {
        p.clamp(self.lower, self.upper)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Fitted,
    Scenario1Imputed,
    Scenario2Imputed,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Fitted => "fitted",
            Provenance::Scenario1Imputed => "scenario1-imputed",
            Provenance::Scenario2Imputed => "scenario2-imputed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRow {
    pub context: ContextVector,
    /// Representative clock of the row's period.
    pub clock: StudyClock,
    pub send_prob: f64,
    pub provenance: Provenance,
    /// (variable index, level) pairs that were unobserved in training.
    pub flags: Vec<(usize, u16)>,
}

/// Per-variable level substitutions used for unseen levels, e.g.
/// `weather: cold -> cool`.
pub type NearestMap = BTreeMap<String, BTreeMap<String, String>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario2Mode {
    Average,
    Nearest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    schema: CovariateSchema,
    clip: ClipBounds,
    rows: Vec<PolicyRow>,
}

/// Fraction of draws where sending has the higher success probability,
/// clipped. Ties count as not favoring sending.
pub fn thompson_probability(
    draws: &PosteriorDraws,
    spec: &ModelSpec,
    ctx: &ContextVector,
    clock: StudyClock,
    participant: Option<u32>,
    clip: ClipBounds,
) -> Result<f64> {
    Ok(clip.apply(raw_thompson(draws, spec, ctx, clock, participant)?))
}

fn raw_thompson(
    draws: &PosteriorDraws,
    spec: &ModelSpec,
    ctx: &ContextVector,
    clock: StudyClock,
    participant: Option<u32>,
) -> Result<f64> {
    if draws.n_draws() == 0 {
        return Err(Error::NoDraws);
    }
    let point = |action| DesignPoint {
        context: ctx,
        action,
        clock,
        participant,
    };
    let send = linear_predictors(draws, spec, point(Action::Send))?;
    let nosend = linear_predictors(draws, spec, point(Action::NoSend))?;
    let wins = send
        .iter()
        .zip(&nosend)
        .filter(|(s, n)| inv_logit(**s) > inv_logit(**n))
        .count();
    Ok(wins as f64 / draws.n_draws() as f64)
}

/// Unweighted mean of fitted sibling probabilities, or the global fitted
/// mean when there are none; clipped.
pub fn impute_scenario1(siblings: &[f64], global_mean: f64, clip: ClipBounds) -> f64 {
    if siblings.is_empty() {
        return clip.apply(global_mean);
    }
    clip.apply(siblings.iter().sum::<f64>() / siblings.len() as f64)
}

/// Re-imputes every row where `variable` takes `level`.
pub fn impute_scenario2(
    table: &mut PolicyTable,
    variable: &str,
    level: &str,
    mode: Scenario2Mode,
    nearest: &NearestMap,
) -> Result<()> {
    let j = table
        .schema
        .variable_index(variable)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown variable {variable:?}")))?;
    let lv = table.schema.variables()[j]
        .level_index(level)
        .ok_or_else(|| Error::InvalidLevel {
            variable: variable.into(),
            level: level.into(),
        })? as u16;
    let substitute = match mode {
        Scenario2Mode::Average => None,
        Scenario2Mode::Nearest => {
            let target = nearest
                .get(variable)
                .and_then(|m| m.get(level))
                .ok_or_else(|| Error::InvalidArgument(format!("no nearest level configured for {variable}={level}")))?;
            let t = table.schema.variables()[j]
                .level_index(target)
                .ok_or_else(|| Error::InvalidLevel {
                    variable: variable.into(),
                    level: target.clone(),
                })? as u16;
            if !table.has_fitted_level(j, t) {
                return Err(Error::NearestUnobserved {
                    variable: variable.into(),
                    target: target.clone(),
                });
            }
            Some(t)
        }
    };
    let fitted = table.fitted_lookup();
    let global = table.global_fitted_mean();
    let affected: Vec<usize> = (0..table.rows.len())
        .filter(|&i| table.rows[i].context.level(j) == lv as usize)
        .collect();
    for i in affected {
        let row = &table.rows[i];
        let mut ctx = row.context.clone();
        let mut free: Vec<usize> = row.flags.iter().map(|f| f.0).filter(|&v| v != j).collect();
        match substitute {
            Some(t) => ctx.0[j] = t,
            None => free.push(j),
        }
        let p = table.impute_from(&fitted, &ctx, row.clock, &free, global);
        let row = &mut table.rows[i];
        row.send_prob = p;
        if row.provenance == Provenance::Fitted {
            row.provenance = Provenance::Scenario2Imputed;
            row.flags.push((j, lv));
        }
    }
    Ok(())
}

impl PolicyTable {
    pub fn rows(&self) -> &[PolicyRow] {
        &self.rows
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn clip(&self) -> ClipBounds {
        self.clip
    }

    fn row_index(&self, ctx: &ContextVector, clock: StudyClock) -> usize {
        let mut idx = 0usize;
        for (j, v) in self.schema.variables().iter().enumerate() {
            idx = idx * v.levels.len() + ctx.level(j);
        }
        let period = clock.s1() as usize + clock.s2() as usize;
        idx * 3 + period
    }

    pub fn lookup(&self, ctx: &ContextVector, clock: StudyClock) -> Result<&PolicyRow> {
        self.schema.check(ctx)?;
        Ok(&self.rows[self.row_index(ctx, clock)])
    }

    pub fn send_prob(&self, ctx: &ContextVector, clock: StudyClock) -> Result<f64> {
        Ok(self.lookup(ctx, clock)?.send_prob)
    }

    fn has_fitted_level(&self, j: usize, level: u16) -> bool {
        self.rows
            .iter()
            .any(|r| r.provenance == Provenance::Fitted && r.context.level(j) == level as usize)
    }

    fn fitted_lookup(&self) -> Vec<Option<f64>> {
        self.rows
            .iter()
            .map(|r| (r.provenance == Provenance::Fitted).then_some(r.send_prob))
            .collect()
    }

    fn global_fitted_mean(&self) -> f64 {
        let f: Vec<f64> = self.fitted_lookup().into_iter().flatten().collect();
        if f.is_empty() {
            0.5
        } else {
            f.iter().sum::<f64>() / f.len() as f64
        }
    }

    /// Mean over fitted rows equal to `ctx` except on the `free` variables.
    fn impute_from(
        &self,
        fitted: &[Option<f64>],
        ctx: &ContextVector,
        clock: StudyClock,
        free: &[usize],
        global: f64,
    ) -> f64 {
        if free.is_empty() {
            if let Some(p) = fitted[self.row_index(ctx, clock)] {
                return p;
            }
        }
        let vars = self.schema.variables();
        let mut siblings = Vec::new();
        let mut cur = ctx.clone();
        let mut counters = vec![0u16; free.len()];
        'outer: loop {
            for (k, &j) in free.iter().enumerate() {
                cur.0[j] = counters[k];
            }
            if let Some(p) = fitted[self.row_index(&cur, clock)] {
                siblings.push(p);
            }
            for k in (0..free.len()).rev() {
                counters[k] += 1;
                if (counters[k] as usize) < vars[free[k]].levels.len() {
                    continue 'outer;
                }
                counters[k] = 0;
            }
            break;
        }
        impute_scenario1(&siblings, global, self.clip)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let vars = self.schema.variables();
        let mut header: Vec<String> = vars.iter().map(|v| v.name.clone()).collect();
        header.extend(["s1", "s2", "send_prob", "provenance", "flags"].map(String::from));
        out.write_record(&header)?;
        for r in &self.rows {
            let mut rec: Vec<String> = (0..vars.len())
                .map(|j| vars[j].levels[r.context.level(j)].clone())
                .collect();
            rec.push((r.clock.s1() as u8).to_string());
            rec.push((r.clock.s2() as u8).to_string());
            rec.push(r.send_prob.to_string());
            rec.push(r.provenance.as_str().into());
            rec.push(
                r.flags
                    .iter()
                    .map(|&(j, l)| format!("{}={}", vars[j].name, vars[j].levels[l as usize]))
                    .collect::<Vec<_>>()
                    .join(";"),
            );
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Builds the complete table. Rows whose levels were all observed get
/// Thompson probabilities; others are imputed: configured nearest levels
/// first, then averaging over the unobserved variables' observed levels.
pub fn build_policy_table(
    draws: &PosteriorDraws,
    spec: &ModelSpec,
    schema: &CovariateSchema,
    observed_levels: &[Vec<bool>],
    participant: Option<u32>,
    clip: ClipBounds,
    nearest: &NearestMap,
) -> Result<PolicyTable> {
    clip.validate()?;
    spec.check_schema(schema)?;
    let vars = schema.variables();
    if observed_levels.len() != vars.len() || observed_levels.iter().zip(vars).any(|(o, v)| o.len() != v.levels.len()) {
        return Err(Error::InvalidArgument(
            "observed-level mask does not match the schema".into(),
        ));
    }
    if draws.n_draws() == 0 {
        return Err(Error::NoDraws);
    }
    let contexts: Vec<ContextVector> = schema.enumerate_contexts().collect();
    let clocks = StudyClock::periods();
    let fitted_probs: Vec<Option<[f64; 3]>> = Execution::default()
        .map(contexts.len(), |i| {
            let ctx = &contexts[i];
            let ok = (0..vars.len()).all(|j| observed_levels[j][ctx.level(j)]);
            if !ok {
                return Ok(None);
            }
            let mut out = [0.0; 3];
            for (k, &clock) in clocks.iter().enumerate() {
                out[k] = thompson_probability(draws, spec, ctx, clock, participant, clip)?;
            }
            Ok(Some(out))
        })
        .into_iter()
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(contexts.len() * 3);
    for (ctx, probs) in contexts.into_iter().zip(&fitted_probs) {
        let flags: Vec<(usize, u16)> = (0..vars.len())
            .filter(|&j| !observed_levels[j][ctx.level(j)])
            .map(|j| (j, ctx.level(j) as u16))
            .collect();
        let provenance = if flags.is_empty() {
            Provenance::Fitted
        } else if flags.iter().any(|&(j, l)| vars[j].levels[l as usize] == UNKNOWN) {
            Provenance::Scenario1Imputed
        } else {
            Provenance::Scenario2Imputed
        };
        for (k, &clock) in clocks.iter().enumerate() {
            rows.push(PolicyRow {
                context: ctx.clone(),
                clock,
                send_prob: probs.map(|p| p[k]).unwrap_or(f64::NAN),
                provenance,
                flags: flags.clone(),
            });
        }
    }
    let mut table = PolicyTable {
        schema: schema.clone(),
        clip,
        rows,
    };

    let fitted = table.fitted_lookup();
    let global = if fitted.iter().any(Option::is_some) {
        table.global_fitted_mean()
    } else {
        // nothing observed: fall back to the population reference context
        let reference = ContextVector(vars.iter().map(|v| v.reference_index() as u16).collect());
        thompson_probability(
            draws,
            spec,
            &reference,
            StudyClock { days_in_study: 0 },
            participant,
            clip,
        )
        .unwrap_or(0.5)
    };
    for i in 0..table.rows.len() {
        if table.rows[i].provenance == Provenance::Fitted {
            continue;
        }
        let row = &table.rows[i];
        let mut ctx = row.context.clone();
        let mut free = Vec::new();
        for &(j, l) in &row.flags {
            let mapped = nearest
                .get(&vars[j].name)
                .and_then(|m| m.get(&vars[j].levels[l as usize]))
                .and_then(|t| vars[j].level_index(t))
                .filter(|&t| observed_levels[j][t]);
            match mapped {
                Some(t) => ctx.0[j] = t as u16,
                None => free.push(j),
            }
        }
        let p = table.impute_from(&fitted, &ctx, row.clock, &free, global);
        table.rows[i].send_prob = p;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_bounds() {
        assert!(ClipBounds::new(0.5, 0.5).is_err());
        assert!(ClipBounds::new(0.0, 0.9).is_err());
        let c = ClipBounds::default();
        assert_eq!(c.apply(1.0), 0.95);
        assert_eq!(c.apply(0.9), 0.9);
    }

    #[test]
    fn scenario1_means() {
        let c = ClipBounds::default();
        assert!((impute_scenario1(&[0.5, 0.7], 0.0, c) - 0.6).abs() < 1e-12);
        assert_eq!(impute_scenario1(&[0.95, 0.95], 0.0, c), 0.95);
        assert!((impute_scenario1(&[0.05, 0.95, 0.5], 0.0, c) - 0.5).abs() < 1e-12);
        assert!((impute_scenario1(&[0.2, 0.4], 0.0, c) - 0.3).abs() < 1e-12);
        assert_eq!(impute_scenario1(&[], 0.42, c), 0.42);
    }
}
