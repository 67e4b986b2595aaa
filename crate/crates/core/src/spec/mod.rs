//! Model terms, categorical encoding and the data-adaptive term builder.

mod builder;
mod encoding;
mod json;

pub use builder::{baseline_terms, build_model_spec, SpecBuilder};
pub use encoding::{Baseline, BaselineEncoding, BaselineTable, Encoding, VariableEncoding};

use serde::{Deserialize, Serialize};

use crate::domain::{Action, ContextVector, CovariateSchema, StudyClock};
use crate::error::{Error, Result};

/// Which study-period indicator multiplies a term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PeriodRound {
    All = 0,
    First = 1,
    Second = 2,
}

impl PeriodRound {
    pub const ALL: [PeriodRound; 3] = [PeriodRound::All, PeriodRound::First, PeriodRound::Second];

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            0 => Ok(PeriodRound::All),
            1 => Ok(PeriodRound::First),
            2 => Ok(PeriodRound::Second),
            _ => Err(Error::InvalidArgument(format!(
                "period round must be 0, 1 or 2, got {i}"
            ))),
        }
    }

    /// Whether the term is switched on at this clock.
    pub fn active(self, clock: StudyClock) -> bool {
        match self {
            PeriodRound::All => true,
            PeriodRound::First => clock.s1(),
            PeriodRound::Second => clock.s2(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BaselineFactor {
    Age,
    Gender,
}

/// Structural kind of a term. Covariate indices refer to schema order and
/// pairs are stored with the smaller index first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TermKind {
    Intercept,
    Main(usize),
    TwoWay(usize, usize),
    Treatment,
    TreatmentBy(usize),
    TreatmentByPair(usize, usize),
    BaselineMain(BaselineFactor),
    BaselineByTreatment(BaselineFactor),
    BaselineThreeWay,
}

impl TermKind {
    pub fn has_treatment(self) -> bool {
        matches!(
            self,
            TermKind::Treatment
                | TermKind::TreatmentBy(_)
                | TermKind::TreatmentByPair(..)
                | TermKind::BaselineByTreatment(_)
                | TermKind::BaselineThreeWay
        )
    }

    fn factor_count(self) -> usize {
        match self {
            TermKind::Intercept => 0,
            TermKind::Main(_) | TermKind::Treatment | TermKind::BaselineMain(_) => 1,
            TermKind::TwoWay(..) | TermKind::TreatmentBy(_) | TermKind::BaselineByTreatment(_) => 2,
            TermKind::TreatmentByPair(..) | TermKind::BaselineThreeWay => 3,
        }
    }

    /// Rank used for deterministic ordering within an interaction order.
    pub(crate) fn rank(self) -> (u8, usize, usize) {
        match self {
            TermKind::Intercept => (0, 0, 0),
            TermKind::Treatment => (1, 0, 0),
            TermKind::Main(j) => (2, j, 0),
            TermKind::TreatmentBy(j) => (3, j, 0),
            TermKind::TwoWay(j, k) => (4, j, k),
            TermKind::TreatmentByPair(j, k) => (5, j, k),
            TermKind::BaselineMain(f) => (6, f as usize, 0),
            TermKind::BaselineByTreatment(f) => (7, f as usize, 0),
            TermKind::BaselineThreeWay => (8, 0, 0),
        }
    }

    fn random_allowed(self) -> bool {
        matches!(
            self,
            TermKind::Intercept | TermKind::Main(_) | TermKind::Treatment | TermKind::TreatmentBy(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scope {
    PopulationFixed,
    ParticipantRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelTerm {
    pub kind: TermKind,
    pub round: PeriodRound,
    pub scope: Scope,
}

impl ModelTerm {
    pub fn fixed(kind: TermKind, round: PeriodRound) -> Self {
        ModelTerm {
            kind,
            round,
            scope: Scope::PopulationFixed,
        }
    }

    pub fn random(kind: TermKind) -> Self {
        ModelTerm {
            kind,
            round: PeriodRound::All,
            scope: Scope::ParticipantRandom,
        }
    }

    /// Number of multiplied non-constant factors, counting treatment and the
    /// period indicator; the plain intercept is treated as order 1.
    pub fn interaction_order(&self) -> usize {
        let period = usize::from(self.round != PeriodRound::All);
        (self.kind.factor_count() + period).max(1)
    }

    pub(crate) fn sort_key(&self) -> (Scope, PeriodRound, (u8, usize, usize)) {
        (self.scope, self.round, self.kind.rank())
    }
}

/// Which families of terms the builder may consider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TermFamilies {
    pub covariate_pairs: bool,
    pub treatment_moderation: bool,
    pub period_rounds: bool,
    pub random_effects: bool,
}

impl Default for TermFamilies {
    fn default() -> Self {
        TermFamilies {
            covariate_pairs: true,
            treatment_moderation: true,
            period_rounds: true,
            random_effects: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpecConfig {
    pub min_cell_size: usize,
    pub max_interaction_terms: usize,
    pub enable_baseline_rules: bool,
    pub families: TermFamilies,
}

impl Default for SpecConfig {
    fn default() -> Self {
        SpecConfig {
            min_cell_size: 5,
            max_interaction_terms: 20,
            enable_baseline_rules: true,
            families: TermFamilies::default(),
        }
    }
}

impl SpecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_cell_size < 1 {
            return Err(Error::InvalidArgument("min_cell_size must be at least 1".into()));
        }
        Ok(())
    }

    /// Main effects and treatment only, no period blocks.
    pub fn mains_only() -> Self {
        SpecConfig {
            families: TermFamilies {
                covariate_pairs: false,
                treatment_moderation: false,
                period_rounds: false,
                random_effects: false,
            },
            ..SpecConfig::default()
        }
    }
}

/// Where a term's columns live in the expanded coefficient vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Block {
    offset: usize,
    width: usize,
}

/// An ordered, validated term list together with its categorical encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    terms: Vec<ModelTerm>,
    encoding: Encoding,
    blocks: Vec<Block>,
    n_fixed: usize,
    n_random: usize,
}

/// One evaluation point of the linear predictor.
#[derive(Debug, Clone, Copy)]
pub struct DesignPoint<'a> {
    pub context: &'a ContextVector,
    pub action: Action,
    pub clock: StudyClock,
    /// Participant whose baseline covariates apply; `None` is the population.
    pub participant: Option<u32>,
}

/// Non-zero entries of a design row, split into fixed and random columns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DesignRow {
    pub fixed: Vec<(usize, f64)>,
    pub random: Vec<(usize, f64)>,
}

impl ModelSpec {
    pub fn new(mut terms: Vec<ModelTerm>, encoding: Encoding) -> Result<Self> {
        let p = encoding.variables().len();
        let mut seen = std::collections::HashSet::new();
        let mut intercepts = 0;
        for t in &terms {
            if !seen.insert((t.kind, t.round, t.scope)) {
                return Err(Error::InvalidArgument(format!("duplicate term {:?}", t)));
            }
            if t.kind == TermKind::Intercept && t.round == PeriodRound::All && t.scope == Scope::PopulationFixed {
                intercepts += 1;
            }
            match t.kind {
                TermKind::Main(j) | TermKind::TreatmentBy(j) if j >= p => {
                    return Err(Error::InvalidArgument(format!("covariate index {j} out of range")))
                }
                TermKind::TwoWay(j, k) | TermKind::TreatmentByPair(j, k) if j >= k || k >= p => {
                    return Err(Error::InvalidArgument(format!("bad covariate pair ({j}, {k})")))
                }
                TermKind::BaselineMain(_) | TermKind::BaselineByTreatment(_) | TermKind::BaselineThreeWay
                    if encoding.baseline().is_none() =>
                {
                    return Err(Error::InvalidArgument(
                        "baseline term requires baseline encoding".into(),
                    ))
                }
                _ => {}
            }
            if t.scope == Scope::ParticipantRandom {
                if !t.kind.random_allowed() || t.round != PeriodRound::All {
                    return Err(Error::InvalidArgument(format!(
                        "term {:?} cannot be participant-random",
                        t.kind
                    )));
                }
            }
        }
        if intercepts != 1 {
            return Err(Error::InvalidArgument(
                "model needs exactly one population intercept in round 0".into(),
            ));
        }
        for t in terms.iter().filter(|t| t.scope == Scope::ParticipantRandom) {
            if !seen.contains(&(t.kind, PeriodRound::All, Scope::PopulationFixed)) {
                return Err(Error::InvalidArgument(format!(
                    "random term {:?} has no population counterpart",
                    t.kind
                )));
            }
        }
        terms.sort_by_key(|t| t.sort_key());

        let mut blocks = Vec::with_capacity(terms.len());
        let (mut n_fixed, mut n_random) = (0usize, 0usize);
        for t in &terms {
            let width = encoding.width(t.kind);
            let slot = match t.scope {
                Scope::PopulationFixed => &mut n_fixed,
                Scope::ParticipantRandom => &mut n_random,
            };
            blocks.push(Block { offset: *slot, width });
            *slot += width;
        }
        Ok(ModelSpec {
            terms,
            encoding,
            blocks,
            n_fixed,
            n_random,
        })
    }

    /// Fixed-form model with main effects, treatment and both period blocks,
    /// with random intercept and treatment.
    pub fn simple(encoding: Encoding) -> Self {
        Self::fixed_form(encoding, false)
    }

    /// Maximal fixed-form model: all pairwise covariate interactions and
    /// their treatment interactions, replicated in both period blocks.
    pub fn complicated(encoding: Encoding) -> Self {
        Self::fixed_form(encoding, true)
    }

    fn fixed_form(encoding: Encoding, pairs: bool) -> Self {
        let p = encoding.variables().len();
        let mut terms = Vec::new();
        for round in PeriodRound::ALL {
            terms.push(ModelTerm::fixed(TermKind::Intercept, round));
            terms.push(ModelTerm::fixed(TermKind::Treatment, round));
            for j in 0..p {
                terms.push(ModelTerm::fixed(TermKind::Main(j), round));
                if pairs {
                    terms.push(ModelTerm::fixed(TermKind::TreatmentBy(j), round));
                }
            }
            if pairs {
                for j in 0..p {
                    for k in j + 1..p {
                        terms.push(ModelTerm::fixed(TermKind::TwoWay(j, k), round));
                        terms.push(ModelTerm::fixed(TermKind::TreatmentByPair(j, k), round));
                    }
                }
            }
        }
        terms.push(ModelTerm::random(TermKind::Intercept));
        terms.push(ModelTerm::random(TermKind::Treatment));
        ModelSpec::new(terms, encoding).expect("fixed-form specs are valid")
    }

    pub fn terms(&self) -> &[ModelTerm] {
        &self.terms
    }

    pub fn encoding(&self) -> &Encoding {
        &self.encoding
    }

    pub fn n_fixed(&self) -> usize {
        self.n_fixed
    }

    pub fn n_random(&self) -> usize {
        self.n_random
    }

    /// Fixed and random terms in order, paired with their column ranges.
    pub fn term_columns(&self) -> impl Iterator<Item = (&ModelTerm, std::ops::Range<usize>)> {
        self.terms
            .iter()
            .zip(&self.blocks)
            .map(|(t, b)| (t, b.offset..b.offset + b.width))
    }

    pub fn random_terms(&self) -> impl Iterator<Item = (&ModelTerm, std::ops::Range<usize>)> {
        self.term_columns().filter(|(t, _)| t.scope == Scope::ParticipantRandom)
    }

    /// Number of terms of order two or more.
    pub fn interaction_term_count(&self) -> usize {
        self.terms.iter().filter(|t| t.interaction_order() >= 2).count()
    }

    /// Interaction order of every fixed column.
    pub fn fixed_column_orders(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_fixed];
        for (t, range) in self.term_columns() {
            if t.scope == Scope::PopulationFixed {
                for c in range {
                    out[c] = t.interaction_order();
                }
            }
        }
        out
    }

    /// Human-readable label of every fixed column.
    pub fn fixed_column_labels(&self) -> Vec<String> {
        self.column_labels(Scope::PopulationFixed)
    }

    pub fn random_column_labels(&self) -> Vec<String> {
        self.column_labels(Scope::ParticipantRandom)
    }

    fn column_labels(&self, scope: Scope) -> Vec<String> {
        let mut out = Vec::new();
        for t in self.terms.iter().filter(|t| t.scope == scope) {
            for factors in self.encoding.column_factors(t.kind) {
                let mut parts = factors;
                match t.round {
                    PeriodRound::All => {}
                    PeriodRound::First => parts.push("S1".into()),
                    PeriodRound::Second => parts.push("S2".into()),
                }
                out.push(if parts.is_empty() {
                    "(Intercept)".into()
                } else {
                    parts.join(":")
                });
            }
        }
        out
    }

    /// Factor names of a term, treatment first when present.
    pub fn term_factors(&self, kind: TermKind) -> Vec<String> {
        let vars = self.encoding.variables();
        let name = |j: usize| vars[j].name.clone();
        let base = |f: BaselineFactor| match f {
            BaselineFactor::Age => "age".to_string(),
            BaselineFactor::Gender => "gender".to_string(),
        };
        match kind {
            TermKind::Intercept => vec![],
            TermKind::Treatment => vec!["A".into()],
            TermKind::Main(j) => vec![name(j)],
            TermKind::TwoWay(j, k) => vec![name(j), name(k)],
            TermKind::TreatmentBy(j) => vec!["A".into(), name(j)],
            TermKind::TreatmentByPair(j, k) => vec!["A".into(), name(j), name(k)],
            TermKind::BaselineMain(f) => vec![base(f)],
            TermKind::BaselineByTreatment(f) => vec!["A".into(), base(f)],
            TermKind::BaselineThreeWay => vec!["A".into(), "age".into(), "gender".into()],
        }
    }

    /// Short label of a whole term, e.g. `A:weather:S1`.
    pub fn term_label(&self, term: &ModelTerm) -> String {
        let mut parts = self.term_factors(term.kind);
        match term.round {
            PeriodRound::All => {}
            PeriodRound::First => parts.push("S1".into()),
            PeriodRound::Second => parts.push("S2".into()),
        }
        if parts.is_empty() {
            "(Intercept)".into()
        } else {
            parts.join(":")
        }
    }

    /// Sparse design row for one point.
    pub fn design_row(&self, point: DesignPoint<'_>) -> Result<DesignRow> {
        let mut row = DesignRow::default();
        self.design_row_into(point, &mut row)?;
        Ok(row)
    }

    pub fn design_row_into(&self, point: DesignPoint<'_>, row: &mut DesignRow) -> Result<()> {
        row.fixed.clear();
        row.random.clear();
        let coded = self.encoding.code_context(point.context)?;
        let baseline = self.encoding.baseline_values(point.participant);
        for (t, b) in self.terms.iter().zip(&self.blocks) {
            if !t.round.active(point.clock) {
                continue;
            }
            if t.kind.has_treatment() && !point.action.is_send() {
                continue;
            }
            if let Some((local, value)) = self.encoding.term_entry(t.kind, &coded, baseline) {
                let target = match t.scope {
                    Scope::PopulationFixed => &mut row.fixed,
                    Scope::ParticipantRandom => &mut row.random,
                };
                target.push((b.offset + local, value));
            }
        }
        Ok(())
    }

    /// Checks the model's encoding against a schema.
    pub fn check_schema(&self, schema: &CovariateSchema) -> Result<()> {
        let vars = self.encoding.variables();
        if vars.len() != schema.len() {
            return Err(Error::InvalidArgument(format!(
                "spec has {} covariates, schema has {}",
                vars.len(),
                schema.len()
            )));
        }
        for (e, v) in vars.iter().zip(schema.variables()) {
            if e.name != v.name || e.levels != v.levels {
                return Err(Error::InvalidArgument(format!(
                    "spec covariate {:?} does not match schema variable {:?}",
                    e.name, v.name
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        json::to_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        json::from_json(text)
    }
}

/// Number of population-level scalar coefficients after one-hot expansion.
pub fn count_parameters(spec: &ModelSpec, schema: &CovariateSchema) -> Result<usize> {
    spec.check_schema(schema)?;
    Ok(spec.n_fixed())
}
