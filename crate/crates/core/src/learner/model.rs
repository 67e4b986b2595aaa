//! Log posterior of the hierarchical logistic regression in an
//! unconstrained, standardized parameterization.
//!
//! Layout of the sampled vector:
//! `[theta (n_fixed) | log tau (n_random_terms) | z (n_groups * n_random_cols)]`
//! with `beta_k = scale_k * theta_k` and `b_{g,c} = tau_{term(c)} * z_{g,c}`.

use std::collections::HashMap;

use super::{PriorFamily, PriorSpec};
use crate::domain::DecisionRecord;
use crate::error::Result;
use crate::spec::{DesignPoint, DesignRow, ModelSpec};

pub trait LogDensity: Sync {
    fn dim(&self) -> usize;
    /// Log density and its gradient; non-finite values mark invalid points.
    fn logp_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// Aggregated binomial rows in compressed sparse form.
#[derive(Debug, Clone)]
pub(crate) struct HierarchicalLogit {
    n_fixed: usize,
    n_terms: usize,
    n_cols: usize,
    n_groups: usize,
    fixed_scale: Vec<f64>,
    fixed_family: PriorFamily,
    tau_scale: Vec<f64>,
    tau_df: f64,
    col_term: Vec<usize>,
    /// Distinct fixed-effect rows, shared by many aggregated rows.
    fixed_ptr: Vec<usize>,
    fixed_idx: Vec<u32>,
    fixed_val: Vec<f64>,
    pattern: Vec<u32>,
    rand_ptr: Vec<usize>,
    rand_idx: Vec<u32>,
    rand_val: Vec<f64>,
    group: Vec<u32>,
    successes: Vec<f64>,
    trials: Vec<f64>,
}

impl HierarchicalLogit {
    /// Builds the target; `participants` fixes the order of random blocks.
    pub(crate) fn new(
        data: &[DecisionRecord],
        spec: &ModelSpec,
        prior: &PriorSpec,
        participants: &[u32],
    ) -> Result<Self> {
        let n_fixed = spec.n_fixed();
        let n_cols = spec.n_random();
        let fixed_scale = spec
            .fixed_column_orders()
            .into_iter()
            .map(|o| prior.scale(o))
            .collect::<Result<Vec<_>>>()?;
        let mut col_term = vec![0; n_cols];
        let mut tau_scale = Vec::new();
        for (r, (t, range)) in spec.random_terms().enumerate() {
            tau_scale.push(prior.scale(t.interaction_order())?);
            for c in range {
                col_term[c] = r;
            }
        }
        let n_terms = tau_scale.len();
        let group_of: HashMap<u32, u32> = participants.iter().enumerate().map(|(g, &p)| (p, g as u32)).collect();

        // aggregate identical (group, design row) pairs into binomial counts
        let mut index: HashMap<(u32, Vec<(u32, u64)>, Vec<(u32, u64)>), usize> = HashMap::new();
        let mut rows: Vec<(u32, DesignRow)> = Vec::new();
        let mut successes = Vec::new();
        let mut trials = Vec::new();
        let mut row = DesignRow::default();
        for rec in data {
            spec.design_row_into(
                DesignPoint {
                    context: &rec.context,
                    action: rec.action,
                    clock: rec.clock(),
                    participant: Some(rec.participant_id),
                },
                &mut row,
            )?;
            let g = if n_cols > 0 { group_of[&rec.participant_id] } else { 0 };
            let key = (
                g,
                row.fixed.iter().map(|&(c, v)| (c as u32, v.to_bits())).collect(),
                row.random.iter().map(|&(c, v)| (c as u32, v.to_bits())).collect(),
            );
            let y = rec.reward.bit() as f64;
            match index.get(&key) {
                Some(&i) => {
                    successes[i] += y;
                    trials[i] += 1.0;
                }
                None => {
                    index.insert(key, rows.len());
                    rows.push((g, row.clone()));
                    successes.push(y);
                    trials.push(1.0);
                }
            }
        }

        let mut patterns: HashMap<Vec<(u32, u64)>, u32> = HashMap::new();
        let mut fixed_ptr = vec![0];
        let mut fixed_idx = Vec::new();
        let mut fixed_val = Vec::new();
        let mut pattern = Vec::with_capacity(rows.len());
        let mut rand_ptr = vec![0];
        let mut rand_idx = Vec::new();
        let mut rand_val = Vec::new();
        let mut group = Vec::with_capacity(rows.len());
        for (g, r) in &rows {
            let key: Vec<(u32, u64)> = r.fixed.iter().map(|&(c, v)| (c as u32, v.to_bits())).collect();
            let next = patterns.len() as u32;
            let pid = *patterns.entry(key).or_insert_with(|| {
                for &(c, v) in &r.fixed {
                    fixed_idx.push(c as u32);
                    fixed_val.push(v * fixed_scale[c]);
                }
                fixed_ptr.push(fixed_idx.len());
                next
            });
            pattern.push(pid);
            for &(c, v) in &r.random {
                rand_idx.push(c as u32);
                rand_val.push(v);
            }
            rand_ptr.push(rand_idx.len());
            group.push(*g);
        }

        Ok(HierarchicalLogit {
            n_fixed,
            n_terms,
            n_cols,
            n_groups: if n_cols > 0 { participants.len() } else { 0 },
            fixed_scale,
            fixed_family: prior.family,
            tau_scale,
            tau_df: prior.random_scale_df,
            col_term,
            fixed_ptr,
            fixed_idx,
            fixed_val,
            pattern,
            rand_ptr,
            rand_idx,
            rand_val,
            group,
            successes,
            trials,
        })
    }

    pub(crate) fn n_fixed(&self) -> usize {
        self.n_fixed
    }

    pub(crate) fn n_terms(&self) -> usize {
        self.n_terms
    }

    pub(crate) fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub(crate) fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Number of distinct aggregated rows.
    #[cfg(test)]
    pub(crate) fn n_rows(&self) -> usize {
        self.group.len()
    }

    /// Maps a sampled vector to `[beta | tau | b]` on the natural scale.
    pub(crate) fn constrain(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for k in 0..self.n_fixed {
            out.push(self.fixed_scale[k] * x[k]);
        }
        let tau: Vec<f64> = x[self.n_fixed..self.n_fixed + self.n_terms]
            .iter()
            .map(|u| u.exp())
            .collect();
        out.extend_from_slice(&tau);
        let z = &x[self.n_fixed + self.n_terms..];
        for g in 0..self.n_groups {
            for c in 0..self.n_cols {
                out.push(tau[self.col_term[c]] * z[g * self.n_cols + c]);
            }
        }
    }
}

/// `(log(1 + e^x), 1 / (1 + e^-x))` sharing one exponential.
fn softplus_sigmoid(x: f64) -> (f64, f64) {
    let e = (-x.abs()).exp();
    let inv = 1.0 / (1.0 + e);
    if x >= 0.0 {
        (x - inv.ln(), inv)
    } else {
        (-inv.ln(), e * inv)
    }
}

impl LogDensity for HierarchicalLogit {
    fn dim(&self) -> usize {
        self.n_fixed + self.n_terms + self.n_groups * self.n_cols
    }

    fn logp_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let nf = self.n_fixed;
        let nt = self.n_terms;
        let (theta, rest) = x.split_at(nf);
        let (logtau, z) = rest.split_at(nt);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut lp = 0.0;

        for (k, &t) in theta.iter().enumerate() {
            match self.fixed_family {
                PriorFamily::Normal => {
                    lp -= 0.5 * t * t;
                    grad[k] = -t;
                }
                PriorFamily::StudentT { df } => {
                    lp -= 0.5 * (df + 1.0) * (t * t / df).ln_1p();
                    grad[k] = -(df + 1.0) * t / (df + t * t);
                }
            }
        }
        let tau: Vec<f64> = logtau.iter().map(|u| u.exp()).collect();
        for r in 0..nt {
            let s2nu = self.tau_scale[r] * self.tau_scale[r] * self.tau_df;
            let t2 = tau[r] * tau[r];
            lp += -0.5 * (self.tau_df + 1.0) * (t2 / s2nu).ln_1p() + logtau[r];
            grad[nf + r] = -(self.tau_df + 1.0) * t2 / (s2nu + t2) + 1.0;
        }
        for (i, &zi) in z.iter().enumerate() {
            lp -= 0.5 * zi * zi;
            grad[nf + nt + i] = -zi;
        }

        let zoff = nf + nt;
        let n_patterns = self.fixed_ptr.len() - 1;
        let mut eta_fixed = vec![0.0; n_patterns];
        for (p, eta) in eta_fixed.iter_mut().enumerate() {
            for e in self.fixed_ptr[p]..self.fixed_ptr[p + 1] {
                *eta += self.fixed_val[e] * theta[self.fixed_idx[e] as usize];
            }
        }
        let mut resid_fixed = vec![0.0; n_patterns];
        for n in 0..self.group.len() {
            let p = self.pattern[n] as usize;
            let mut eta = eta_fixed[p];
            let (ra, rb) = (self.rand_ptr[n], self.rand_ptr[n + 1]);
            let gbase = self.group[n] as usize * self.n_cols;
            for e in ra..rb {
                let c = self.rand_idx[e] as usize;
                eta += self.rand_val[e] * tau[self.col_term[c]] * z[gbase + c];
            }
            let (k, m) = (self.successes[n], self.trials[n]);
            let (sp, sig) = softplus_sigmoid(eta);
            lp += k * eta - m * sp;
            let resid = k - m * sig;
            resid_fixed[p] += resid;
            for e in ra..rb {
                let c = self.rand_idx[e] as usize;
                let r = self.col_term[c];
                let zc = z[gbase + c];
                grad[zoff + gbase + c] += self.rand_val[e] * tau[r] * resid;
                grad[nf + r] += self.rand_val[e] * tau[r] * zc * resid;
            }
        }
        for (p, &resid) in resid_fixed.iter().enumerate() {
            for e in self.fixed_ptr[p]..self.fixed_ptr[p + 1] {
                grad[self.fixed_idx[e] as usize] += self.fixed_val[e] * resid;
            }
        }
        lp
    }
}
