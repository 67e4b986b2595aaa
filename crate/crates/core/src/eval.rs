//! Regret scoring, calibration monitoring and update-failure monitoring.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::{Action, DecisionRecord, TrueProbs};
use crate::error::{Error, Result};
use crate::learner::{FitHealth, FitStatus};
use crate::sim::{TrialConfig, UpdateEvent};

/// Probability weight the clipped-optimal policy puts on the optimal action.
pub const OPTIMAL_WEIGHT: f64 = 0.95;

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("{name} = {p} is not a probability")));
    }
    Ok(())
}

/// `0.95 p_opt + 0.05 p_other - p_chosen`.
pub fn step_regret(p_opt: f64, p_other: f64, p_chosen: f64) -> Result<f64> {
    check_prob("p_opt", p_opt)?;
    check_prob("p_other", p_other)?;
    check_prob("p_chosen", p_chosen)?;
    if p_opt < p_other {
        return Err(Error::InvalidArgument(format!(
            "p_opt {p_opt} is below p_other {p_other}"
        )));
    }
    Ok(OPTIMAL_WEIGHT * p_opt + (1.0 - OPTIMAL_WEIGHT) * p_other - p_chosen)
}

/// Optimal action under the true probabilities; ties go to not sending.
pub fn optimal_action(truth: &TrueProbs) -> Action {
    if truth.send > truth.nosend {
        Action::Send
    } else {
        Action::NoSend
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegretMode {
    /// Scores the realized action.
    #[default]
    Realized,
    /// Scores the logged policy's expected success probability.
    Expected,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegretTrace {
    pub step: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl RegretTrace {
    pub fn final_value(&self) -> Option<f64> {
        self.cumulative.last().copied()
    }
}

pub fn cumulative_regret(records: &[DecisionRecord], mode: RegretMode) -> Result<RegretTrace> {
    let mut order: Vec<&DecisionRecord> = records.iter().collect();
    order.sort_by_key(|r| r.decision_index);
    let mut trace = RegretTrace::default();
    let mut total = 0.0;
    for r in order {
        let t = r.truth.ok_or(Error::MissingTruth(r.decision_index))?;
        let best = optimal_action(&t);
        let (p_opt, p_other) = (t.for_action(best), t.for_action(best.flip()));
        let step = match mode {
            RegretMode::Realized => step_regret(p_opt, p_other, t.for_action(r.action))?,
            RegretMode::Expected => {
                let chosen = r.policy_prob * t.send + (1.0 - r.policy_prob) * t.nosend;
                step_regret(p_opt, p_other, chosen)?
            }
        };
        total += step;
        trace.step.push(step);
        trace.cumulative.push(total);
    }
    Ok(trace)
}

/// Pointwise mean and quartiles of cumulative regret.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretCurve {
    pub mean: Vec<f64>,
    pub q25: Vec<f64>,
    pub q75: Vec<f64>,
    /// True when traces had different lengths and were cut to the shortest.
    pub truncated: bool,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn aggregate_replicates(traces: &[RegretTrace]) -> Result<RegretCurve> {
    if traces.is_empty() {
        return Err(Error::InvalidArgument("no regret traces to aggregate".into()));
    }
    let len = traces.iter().map(|t| t.cumulative.len()).min().unwrap_or(0);
    let truncated = traces.iter().any(|t| t.cumulative.len() != len);
    let mut curve = RegretCurve {
        mean: Vec::with_capacity(len),
        q25: Vec::with_capacity(len),
        q75: Vec::with_capacity(len),
        truncated,
    };
    let mut col = vec![0.0; traces.len()];
    for i in 0..len {
        for (c, t) in col.iter_mut().zip(traces) {
            *c = t.cumulative[i];
        }
        let mean = col
            .iter()
            .enumerate()
            .fold(0.0, |m, (k, x)| m + (x - m) / (k + 1) as f64);
        curve.mean.push(mean);
        col.sort_by(f64::total_cmp);
        curve.q25.push(quantile_sorted(&col, 0.25));
        curve.q75.push(quantile_sorted(&col, 0.75));
    }
    Ok(curve)
}

impl RegretCurve {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["decision_index", "mean", "q25", "q75"])?;
        for i in 0..self.mean.len() {
            out.write_record([
                i.to_string(),
                self.mean[i].to_string(),
                self.q25[i].to_string(),
                self.q75[i].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// 95% normal-approximation interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.low <= x && x <= self.high
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationBin {
    pub low: f64,
    pub high: f64,
    pub n: usize,
    pub sent: usize,
    pub p_hat: Option<f64>,
    pub ci: Option<Interval>,
    /// Mean logged send probability within the bin.
    pub mean_prob: Option<f64>,
    /// Whether the interval covers the bin's geometric midpoint.
    pub covers_midpoint: Option<bool>,
    /// Whether the interval covers the within-bin mean probability.
    pub covers_mean: Option<bool>,
}

impl CalibrationBin {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.low + self.high)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub bin_width: f64,
    pub bins: Vec<CalibrationBin>,
}

pub const Z_95: f64 = 1.96;

pub fn wald_interval(sent: usize, n: usize) -> Option<Interval> {
    if n == 0 {
        return None;
    }
    let p = sent as f64 / n as f64;
    let half = Z_95 * (p * (1.0 - p) / n as f64).sqrt();
    Some(Interval {
        low: p - half,
        high: p + half,
    })
}

/// Bins decisions by logged send probability (left-closed, the last bin
/// also holds 1.0) and compares the empirical send rate per bin.
pub fn calibration_report(records: &[DecisionRecord], bin_width: f64) -> Result<CalibrationReport> {
    let count = (1.0 / bin_width).round();
    if !(bin_width > 0.0) || count < 1.0 || (count * bin_width - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "bin width {bin_width} does not divide 1 evenly"
        )));
    }
    let count = count as usize;
    let mut n = vec![0usize; count];
    let mut sent = vec![0usize; count];
    let mut prob_sum = vec![0.0; count];
    for r in records {
        check_prob("policy_prob", r.policy_prob)?;
        let idx = ((r.policy_prob / bin_width + 1e-9).floor() as usize).min(count - 1);
        n[idx] += 1;
        sent[idx] += r.action.is_send() as usize;
        prob_sum[idx] += r.policy_prob;
    }
    let bins = (0..count)
        .map(|i| {
            let ci = wald_interval(sent[i], n[i]);
            let mean_prob = (n[i] > 0).then(|| prob_sum[i] / n[i] as f64);
            let low = i as f64 / count as f64;
            let high = (i + 1) as f64 / count as f64;
            CalibrationBin {
                low,
                high,
                n: n[i],
                sent: sent[i],
                p_hat: (n[i] > 0).then(|| sent[i] as f64 / n[i] as f64),
                ci,
                mean_prob,
                covers_midpoint: ci.map(|c| c.contains(0.5 * (low + high))),
                covers_mean: ci.zip(mean_prob).map(|(c, m)| c.contains(m)),
            }
        })
        .collect();
    Ok(CalibrationReport { bin_width, bins })
}

impl CalibrationReport {
    pub fn occupied(&self) -> impl Iterator<Item = &CalibrationBin> {
        self.bins.iter().filter(|b| b.n > 0)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "bin_low",
            "bin_high",
            "n",
            "p_hat",
            "ci_low",
            "ci_high",
            "covers",
            "mean_prob",
            "covers_mean",
        ])?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let flag = |x: Option<bool>| x.map(|v| v.to_string()).unwrap_or_default();
        for b in &self.bins {
            out.write_record([
                b.low.to_string(),
                b.high.to_string(),
                b.n.to_string(),
                opt(b.p_hat),
                opt(b.ci.map(|c| c.low)),
                opt(b.ci.map(|c| c.high)),
                flag(b.covers_midpoint),
                opt(b.mean_prob),
                flag(b.covers_mean),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureFlag {
    Missing,
    Broken,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureEntry {
    pub participant_id: u32,
    pub scheduled_day: u32,
    pub executed: bool,
    pub health: Option<FitHealth>,
    pub checksum: Option<String>,
    pub flag: Option<FailureFlag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureReport {
    pub entries: Vec<FailureEntry>,
}

impl FailureReport {
    pub fn flagged(&self) -> impl Iterator<Item = &FailureEntry> {
        self.entries.iter().filter(|e| e.flag.is_some())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "participant_id",
            "scheduled_day",
            "executed",
            "status",
            "checksum",
            "flag",
            "offending",
        ])?;
        for e in &self.entries {
            let status = e.health.as_ref().map(|h| match h.status {
                FitStatus::Ok => "ok",
                FitStatus::BrokenNoDraws => "broken-no-draws",
                FitStatus::BrokenMixing => "broken-mixing",
            });
            out.write_record([
                e.participant_id.to_string(),
                e.scheduled_day.to_string(),
                e.executed.to_string(),
                status.unwrap_or("").to_string(),
                e.checksum.clone().unwrap_or_default(),
                match e.flag {
                    Some(FailureFlag::Missing) => "missing".into(),
                    Some(FailureFlag::Broken) => "broken".into(),
                    None => String::new(),
                },
                e.health.as_ref().map(|h| h.offending.join(";")).unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Every (participant, day) update the trial configuration calls for.
pub fn expected_schedule(cfg: &TrialConfig) -> Vec<(u32, u32)> {
    (0..cfg.participants)
        .flat_map(|p| {
            cfg.update_days
                .iter()
                .filter(|&&d| d <= cfg.study_days)
                .map(move |&d| (p, d))
        })
        .collect()
}

/// One entry per scheduled update; absent updates are flagged missing and
/// non-ok fits are flagged broken with their diagnostics.
pub fn failure_report(schedule: &[(u32, u32)], events: &[UpdateEvent]) -> FailureReport {
    let by_key: BTreeMap<(u32, u32), &UpdateEvent> = events
        .iter()
        .map(|e| ((e.participant_id, e.scheduled_day), e))
        .collect();
    let entries = schedule
        .iter()
        .map(|&(p, d)| match by_key.get(&(p, d)) {
            Some(e) if e.executed => FailureEntry {
                participant_id: p,
                scheduled_day: d,
                executed: true,
                health: e.health.clone(),
                checksum: e.checksum.clone(),
                flag: match &e.health {
                    Some(h) if h.is_ok() => None,
                    _ => Some(FailureFlag::Broken),
                },
            },
            _ => FailureEntry {
                participant_id: p,
                scheduled_day: d,
                executed: false,
                health: None,
                checksum: None,
                flag: Some(FailureFlag::Missing),
            },
        })
        .collect();
    FailureReport { entries }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_regret_fixtures() {
        assert!((step_regret(0.6, 0.4, 0.6).unwrap() + 0.01).abs() < 1e-12);
        assert!((step_regret(0.6, 0.4, 0.4).unwrap() - 0.19).abs() < 1e-12);
        assert_eq!(step_regret(0.5, 0.5, 0.5).unwrap(), 0.0);
        assert!(step_regret(1.2, 0.4, 0.4).is_err());
        assert!(step_regret(0.4, 0.6, 0.4).is_err());
    }

    #[test]
    fn bin_width_must_divide_one() {
        assert!(calibration_report(&[], 0.3).is_err());
        assert_eq!(calibration_report(&[], 0.05).unwrap().bins.len(), 20);
        assert!(aggregate_replicates(&[]).is_err());
    }
}
