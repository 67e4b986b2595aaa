use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{BaselineFactor, TermKind};
use crate::domain::{ContextVector, CovariateSchema, DecisionRecord};
use crate::error::{Error, Result};

/// Participant-level covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub age: f64,
    pub gender: String,
}

pub type BaselineTable = BTreeMap<u32, Baseline>;

/// One-hot coding of a context variable against its reference level.
/// Columns exist only for observed non-reference levels, `Unknown` included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableEncoding {
    pub name: String,
    pub levels: Vec<String>,
    pub reference: u16,
    pub active: Vec<u16>,
    observed: Vec<bool>,
}

impl VariableEncoding {
    fn new(name: &str, levels: &[String], schema_reference: usize, observed: Vec<bool>) -> Self {
        let reference = if observed[schema_reference] {
            schema_reference
        } else {
            observed.iter().position(|&o| o).unwrap_or(schema_reference)
        };
        let active = (0..levels.len())
            .filter(|&l| observed[l] && l != reference)
            .map(|l| l as u16)
            .collect();
        VariableEncoding {
            name: name.to_string(),
            levels: levels.to_vec(),
            reference: reference as u16,
            active,
            observed,
        }
    }

    pub(crate) fn from_parts(name: String, levels: Vec<String>, reference: u16, active: Vec<u16>) -> Result<Self> {
        let mut observed = vec![false; levels.len()];
        for &l in active.iter().chain(std::iter::once(&reference)) {
            *observed
                .get_mut(l as usize)
                .ok_or_else(|| Error::Parse(format!("level index {l} out of range for {name:?}")))? = true;
        }
        if active.contains(&reference) {
            return Err(Error::Parse(format!("reference of {name:?} is also active")));
        }
        Ok(VariableEncoding {
            name,
            levels,
            reference,
            active,
            observed,
        })
    }

    pub fn is_observed(&self, level: usize) -> bool {
        self.observed[level]
    }

    /// `Ok(None)` for the reference level, `Ok(Some(k))` for active column k.
    fn code(&self, level: usize) -> Result<Option<usize>> {
        if level >= self.levels.len() || !self.observed[level] {
            return Err(Error::Unencodable {
                variable: self.name.clone(),
                level: self.levels.get(level).cloned().unwrap_or_else(|| format!("#{level}")),
            });
        }
        if level == self.reference as usize {
            return Ok(None);
        }
        Ok(self.active.iter().position(|&a| a as usize == level))
    }

    fn label(&self, k: usize) -> String {
        format!("{}={}", self.name, self.levels[self.active[k] as usize])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineEncoding {
    pub age_mean: f64,
    pub gender_reference: String,
    pub gender_active: Vec<String>,
    pub participants: BaselineTable,
}

impl BaselineEncoding {
    pub fn from_table(table: &BaselineTable) -> Self {
        let n = table.len().max(1) as f64;
        let age_mean = table.values().map(|b| b.age).sum::<f64>() / n;
        let mut genders: Vec<String> = table.values().map(|b| b.gender.clone()).collect();
        genders.sort();
        genders.dedup();
        let gender_reference = genders.first().cloned().unwrap_or_default();
        let gender_active = genders.into_iter().skip(1).collect();
        BaselineEncoding {
            age_mean,
            gender_reference,
            gender_active,
            participants: table.clone(),
        }
    }
}

/// Categorical coding shared by every term of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    variables: Vec<VariableEncoding>,
    baseline: Option<BaselineEncoding>,
}

impl Encoding {
    /// Every schema level is treated as observed.
    pub fn full(schema: &CovariateSchema) -> Self {
        let variables = schema
            .variables()
            .iter()
            .map(|v| VariableEncoding::new(&v.name, &v.levels, v.reference_index(), vec![true; v.levels.len()]))
            .collect();
        Encoding {
            variables,
            baseline: None,
        }
    }

    /// Levels are active only if they occur in `data`.
    pub fn observed(data: &[DecisionRecord], schema: &CovariateSchema) -> Self {
        let mut seen: Vec<Vec<bool>> = schema.variables().iter().map(|v| vec![false; v.levels.len()]).collect();
        for r in data {
            for (j, &l) in r.context.levels().iter().enumerate() {
                seen[j][l as usize] = true;
            }
        }
        let variables = schema
            .variables()
            .iter()
            .zip(seen)
            .map(|(v, obs)| VariableEncoding::new(&v.name, &v.levels, v.reference_index(), obs))
            .collect();
        Encoding {
            variables,
            baseline: None,
        }
    }

    pub(crate) fn from_parts(variables: Vec<VariableEncoding>, baseline: Option<BaselineEncoding>) -> Self {
        Encoding { variables, baseline }
    }

    pub fn with_baseline(mut self, table: &BaselineTable) -> Self {
        self.baseline = Some(BaselineEncoding::from_table(table));
        self
    }

    pub fn variables(&self) -> &[VariableEncoding] {
        &self.variables
    }

    pub fn baseline(&self) -> Option<&BaselineEncoding> {
        self.baseline.as_ref()
    }

    /// Per-variable observed flags, indexed by schema level.
    pub fn observed_levels(&self) -> Vec<Vec<bool>> {
        self.variables.iter().map(|v| v.observed.clone()).collect()
    }

    pub fn is_encodable(&self, ctx: &ContextVector) -> bool {
        self.code_context(ctx).is_ok()
    }

    pub(crate) fn code_context(&self, ctx: &ContextVector) -> Result<Vec<Option<usize>>> {
        if ctx.levels().len() != self.variables.len() {
            return Err(Error::InvalidArgument(format!(
                "context has {} values, model has {} covariates",
                ctx.levels().len(),
                self.variables.len()
            )));
        }
        self.variables
            .iter()
            .zip(ctx.levels())
            .map(|(v, &l)| v.code(l as usize))
            .collect()
    }

    /// Centered age and active gender column for a participant.
    pub(crate) fn baseline_values(&self, participant: Option<u32>) -> (f64, Option<usize>) {
        let Some(be) = &self.baseline else {
            return (0.0, None);
        };
        match participant.and_then(|p| be.participants.get(&p)) {
            Some(b) => (
                b.age - be.age_mean,
                be.gender_active.iter().position(|g| *g == b.gender),
            ),
            None => (0.0, None),
        }
    }

    pub(crate) fn width(&self, kind: TermKind) -> usize {
        let a = |j: usize| self.variables[j].active.len();
        let g = || self.baseline.as_ref().map_or(0, |b| b.gender_active.len());
        match kind {
            TermKind::Intercept | TermKind::Treatment => 1,
            TermKind::Main(j) | TermKind::TreatmentBy(j) => a(j),
            TermKind::TwoWay(j, k) | TermKind::TreatmentByPair(j, k) => a(j) * a(k),
            TermKind::BaselineMain(BaselineFactor::Age) | TermKind::BaselineByTreatment(BaselineFactor::Age) => 1,
            TermKind::BaselineMain(BaselineFactor::Gender)
            | TermKind::BaselineByTreatment(BaselineFactor::Gender)
            | TermKind::BaselineThreeWay => g(),
        }
    }

    pub(crate) fn term_entry(
        &self,
        kind: TermKind,
        coded: &[Option<usize>],
        (age, gender): (f64, Option<usize>),
    ) -> Option<(usize, f64)> {
        match kind {
            TermKind::Intercept | TermKind::Treatment => Some((0, 1.0)),
            TermKind::Main(j) | TermKind::TreatmentBy(j) => coded[j].map(|c| (c, 1.0)),
            TermKind::TwoWay(j, k) | TermKind::TreatmentByPair(j, k) => match (coded[j], coded[k]) {
                (Some(a), Some(b)) => Some((a * self.variables[k].active.len() + b, 1.0)),
                _ => None,
            },
            TermKind::BaselineMain(BaselineFactor::Age) | TermKind::BaselineByTreatment(BaselineFactor::Age) => {
                (age != 0.0).then_some((0, age))
            }
            TermKind::BaselineMain(BaselineFactor::Gender) | TermKind::BaselineByTreatment(BaselineFactor::Gender) => {
                gender.map(|g| (g, 1.0))
            }
            TermKind::BaselineThreeWay => match gender {
                Some(g) if age != 0.0 => Some((g, age)),
                _ => None,
            },
        }
    }

    /// Factor labels of each column of a term, excluding the period factor.
    pub(crate) fn column_factors(&self, kind: TermKind) -> Vec<Vec<String>> {
        let a = "A".to_string();
        let var = |j: usize| &self.variables[j];
        let genders = || -> Vec<String> {
            self.baseline
                .as_ref()
                .map(|b| b.gender_active.iter().map(|g| format!("gender={g}")).collect())
                .unwrap_or_default()
        };
        match kind {
            TermKind::Intercept => vec![vec![]],
            TermKind::Treatment => vec![vec![a]],
            TermKind::Main(j) => (0..var(j).active.len()).map(|k| vec![var(j).label(k)]).collect(),
            TermKind::TreatmentBy(j) => (0..var(j).active.len())
                .map(|k| vec![a.clone(), var(j).label(k)])
                .collect(),
            TermKind::TwoWay(j, l) | TermKind::TreatmentByPair(j, l) => {
                let mut out = Vec::new();
                for x in 0..var(j).active.len() {
                    for y in 0..var(l).active.len() {
                        let mut f = vec![var(j).label(x), var(l).label(y)];
                        if matches!(kind, TermKind::TreatmentByPair(..)) {
                            f.insert(0, a.clone());
                        }
                        out.push(f);
                    }
                }
                out
            }
            TermKind::BaselineMain(BaselineFactor::Age) => vec![vec!["age".into()]],
            TermKind::BaselineByTreatment(BaselineFactor::Age) => vec![vec![a, "age".into()]],
            TermKind::BaselineMain(BaselineFactor::Gender) => genders().into_iter().map(|g| vec![g]).collect(),
            TermKind::BaselineByTreatment(BaselineFactor::Gender) => {
                genders().into_iter().map(|g| vec![a.clone(), g]).collect()
            }
            TermKind::BaselineThreeWay => genders()
                .into_iter()
                .map(|g| vec![a.clone(), "age".into(), g])
                .collect(),
        }
    }
}
