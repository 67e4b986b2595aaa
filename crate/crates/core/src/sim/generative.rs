//! Ground-truth reward models for the two simulation settings.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{Action, ContextVector, CovariateSchema, StudyClock};
use crate::error::{Error, Result};
use crate::learner::{inv_logit, prior_scale, PriorSpec};
use crate::spec::{DesignPoint, Encoding, ModelSpec, ModelTerm, PeriodRound, TermKind};

/// Setting 1 has an unmoderated treatment effect; setting 2 has strong
/// moderation by weekend, night and high engagement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Setting {
    One,
    Two,
}

impl TryFrom<u8> for Setting {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Setting::One),
            2 => Ok(Setting::Two),
            _ => Err(Error::InvalidArgument(format!("unknown setting {v}; expected 1 or 2"))),
        }
    }
}

impl From<Setting> for u8 {
    fn from(s: Setting) -> u8 {
        match s {
            Setting::One => 1,
            Setting::Two => 2,
        }
    }
}

/// Moderator columns shifted in setting 2: (variable, level).
pub const MODERATORS: [(&str, &str); 3] = [
    ("time_of_week", "weekend"),
    ("time_of_day", "night"),
    ("past_app_engagement", "1"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeModel {
    setting: Setting,
    spec: ModelSpec,
    coefficients: Vec<f64>,
}

/// Fixed-effect term set of each setting over the schema's covariates.
pub fn setting_terms(setting: Setting, p: usize) -> Vec<ModelTerm> {
    let mut terms = vec![ModelTerm::fixed(TermKind::Treatment, PeriodRound::All)];
    for round in PeriodRound::ALL {
        terms.push(ModelTerm::fixed(TermKind::Intercept, round));
        if setting == Setting::Two && round != PeriodRound::All {
            terms.push(ModelTerm::fixed(TermKind::Treatment, round));
        }
        for j in 0..p {
            terms.push(ModelTerm::fixed(TermKind::Main(j), round));
            if setting == Setting::Two {
                terms.push(ModelTerm::fixed(TermKind::TreatmentBy(j), round));
            }
            for k in j + 1..p {
                terms.push(ModelTerm::fixed(TermKind::TwoWay(j, k), round));
                if setting == Setting::Two {
                    terms.push(ModelTerm::fixed(TermKind::TreatmentByPair(j, k), round));
                }
            }
        }
    }
    terms
}

fn setting_spec(setting: Setting, schema: &CovariateSchema) -> ModelSpec {
    ModelSpec::new(setting_terms(setting, schema.len()), Encoding::full(schema)).expect("setting term sets are valid")
}

/// Draws the true coefficients. Deterministic given `seed`.
pub fn sample_coefficients(setting: Setting, schema: &CovariateSchema, seed: u64) -> GenerativeModel {
    let spec = setting_spec(setting, schema);
    let prior = PriorSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vars = spec.encoding().variables();
    let moderator_cols: Vec<(usize, u16)> = MODERATORS
        .iter()
        .filter_map(|(v, l)| {
            let j = vars.iter().position(|e| e.name == *v)?;
            let lv = vars[j].levels.iter().position(|x| x == l)?;
            Some((j, lv as u16))
        })
        .collect();

    let mut coefficients = vec![0.0; spec.n_fixed()];
    for (t, range) in spec.term_columns() {
        for (local, c) in range.enumerate() {
            let normal = |m: f64, s: f64| Normal::new(m, s).expect("positive sd");
            let dist = match (setting, t.kind, t.round) {
                (Setting::One, TermKind::Treatment, PeriodRound::All) => normal(0.4, 0.125),
                (Setting::Two, TermKind::Treatment, PeriodRound::All) => normal(-0.4, 0.125),
                (Setting::Two, TermKind::Treatment, _) => normal(-0.1, 1.0 / 32.0),
                (Setting::Two, TermKind::TreatmentBy(j), PeriodRound::All)
                    if moderator_cols.contains(&(j, vars[j].active[local])) =>
                {
                    normal(0.5, 1.0 / 16.0)
                }
                _ => normal(0.0, prior_scale(t.interaction_order(), &prior).expect("order >= 1")),
            };
            coefficients[c] = dist.sample(&mut rng);
        }
    }
    GenerativeModel {
        setting,
        spec,
        coefficients,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CoefficientRow {
    term_id: usize,
    factors: String,
    interaction_order: usize,
    period_round: u8,
    value: f64,
}

impl GenerativeModel {
    /// Builds a model from explicit coefficients in the setting's column order.
    pub fn from_coefficients(setting: Setting, schema: &CovariateSchema, coefficients: Vec<f64>) -> Result<Self> {
        let spec = setting_spec(setting, schema);
        if coefficients.len() != spec.n_fixed() {
            return Err(Error::InvalidArgument(format!(
                "{} coefficients given, setting needs {}",
                coefficients.len(),
                spec.n_fixed()
            )));
        }
        Ok(GenerativeModel {
            setting,
            spec,
            coefficients,
        })
    }

    pub fn setting(&self) -> Setting {
        self.setting
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// (factor label, period round, interaction order) per coefficient.
    pub fn column_info(&self) -> Vec<(String, PeriodRound, usize)> {
        let labels = self.spec.fixed_column_labels();
        let mut out = Vec::with_capacity(labels.len());
        for (t, range) in self.spec.term_columns() {
            for c in range {
                let full = &labels[c];
                let factors = match t.round {
                    PeriodRound::All => full.clone(),
                    _ => {
                        let stripped = full.rsplit_once(':').map(|(a, _)| a.to_string());
                        stripped.unwrap_or_else(|| "(Intercept)".into())
                    }
                };
                out.push((factors, t.round, t.interaction_order()));
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for (i, ((factors, round, order), v)) in self.column_info().into_iter().zip(&self.coefficients).enumerate() {
            out.serialize(CoefficientRow {
                term_id: i,
                factors,
                interaction_order: order,
                period_round: round.index(),
                value: *v,
            })?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a coefficient file; rows are matched by (factors, round) and the
    /// file must cover the setting's term set exactly.
    pub fn read_csv<R: Read>(setting: Setting, schema: &CovariateSchema, r: R) -> Result<Self> {
        let spec = setting_spec(setting, schema);
        let mut model = GenerativeModel {
            setting,
            spec,
            coefficients: vec![],
        };
        let info = model.column_info();
        let mut values = vec![None; info.len()];
        let mut rdr = csv::Reader::from_reader(r);
        for row in rdr.deserialize::<CoefficientRow>() {
            let row = row?;
            let pos = info
                .iter()
                .position(|(f, rd, _)| *f == row.factors && rd.index() == row.period_round)
                .ok_or_else(|| {
                    Error::Parse(format!(
                        "term {:?} round {} is not in this setting",
                        row.factors, row.period_round
                    ))
                })?;
            if info[pos].2 != row.interaction_order {
                return Err(Error::Parse(format!(
                    "term {:?} has wrong interaction order",
                    row.factors
                )));
            }
            if values[pos].replace(row.value).is_some() {
                return Err(Error::Parse(format!("term {:?} listed twice", row.factors)));
            }
        }
        model.coefficients = values
            .into_iter()
            .zip(&info)
            .map(|(v, (f, r, _))| v.ok_or_else(|| Error::Parse(format!("missing term {f:?} round {}", r.index()))))
            .collect::<Result<_>>()?;
        Ok(model)
    }

    pub fn linear_predictor(&self, ctx: &ContextVector, action: Action, clock: StudyClock) -> Result<f64> {
        let row = self.spec.design_row(DesignPoint {
            context: ctx,
            action,
            clock,
            participant: None,
        })?;
        Ok(row.fixed.iter().map(|&(c, v)| v * self.coefficients[c]).sum())
    }
}

pub fn true_success_prob(
    model: &GenerativeModel,
    ctx: &ContextVector,
    action: Action,
    clock: StudyClock,
) -> Result<f64> {
    Ok(inv_logit(model.linear_predictor(ctx, action, clock)?))
}
