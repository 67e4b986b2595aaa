//! Columnar CSV of draws plus a JSON diagnostics sidecar.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{FitHealth, PosteriorDraws};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct ParameterDoc {
    name: String,
    mean: f64,
    sd: f64,
    rhat: Option<f64>,
    ess: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct SidecarDoc {
    chains: usize,
    draws_per_chain: usize,
    n_fixed: usize,
    n_scales: usize,
    n_random_cols: usize,
    participants: Vec<u32>,
    divergences: usize,
    health: FitHealth,
    parameters: Vec<ParameterDoc>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl PosteriorDraws {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.names)?;
        for i in 0..self.n_draws() {
            out.write_record(self.draw(i).iter().map(|v| v.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }

    /// Diagnostics sidecar. Wall-clock time is left out so identical runs
    /// produce identical files.
    pub fn diagnostics_json(&self, health: &FitHealth) -> String {
        let doc = SidecarDoc {
            chains: self.chains,
            draws_per_chain: self.draws_per_chain,
            n_fixed: self.n_fixed,
            n_scales: self.n_scales,
            n_random_cols: self.n_random_cols,
            participants: self.participants.clone(),
            divergences: self.divergences,
            health: health.clone(),
            parameters: (0..self.n_params())
                .map(|j| ParameterDoc {
                    name: self.names[j].clone(),
                    mean: self.mean(j),
                    sd: self.sd(j),
                    rhat: finite(self.rhat[j]),
                    ess: finite(self.ess[j]),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("sidecar serializes")
    }

    /// Reads draws back from the CSV and its sidecar.
    pub fn read<R1: Read, R2: Read>(csv_in: R1, sidecar: R2) -> Result<(Self, FitHealth)> {
        let doc: SidecarDoc = serde_json::from_reader(sidecar)?;
        let mut rdr = csv::Reader::from_reader(csv_in);
        let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if names.len() != doc.parameters.len() || names.iter().zip(&doc.parameters).any(|(a, b)| *a != b.name) {
            return Err(Error::Parse("draw columns do not match the sidecar".into()));
        }
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            for f in rec.iter() {
                let v: f64 = f.parse().map_err(|_| Error::Parse(format!("bad draw value {f:?}")))?;
                values.push(v);
            }
        }
        let expected = doc.chains * doc.draws_per_chain * names.len();
        if values.len() != expected {
            return Err(Error::Parse(format!(
                "expected {expected} draw values, found {}",
                values.len()
            )));
        }
        if doc.n_fixed + doc.n_scales + doc.participants.len() * doc.n_random_cols != names.len() {
            return Err(Error::Parse("sidecar layout does not add up".into()));
        }
        let mut d = PosteriorDraws {
            names,
            n_fixed: doc.n_fixed,
            n_scales: doc.n_scales,
            n_random_cols: doc.n_random_cols,
            participants: doc.participants,
            chains: doc.chains,
            draws_per_chain: doc.draws_per_chain,
            values,
            rhat: vec![],
            ess: vec![],
            divergences: doc.divergences,
            wall_seconds: 0.0,
        };
        d.compute_diagnostics();
        Ok((d, doc.health))
    }
}
