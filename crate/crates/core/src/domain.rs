//! Trial vocabulary: covariate schema, contexts, actions, rewards, the
//! per-participant study clock and the decision record.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved level name for a missing context measurement.
pub const UNKNOWN: &str = "Unknown";

/// Day after which the first study-period indicator switches on.
pub const FIRST_UPDATE_DAY: u32 = 56;
/// Day after which the second study-period indicator switches on.
pub const SECOND_UPDATE_DAY: u32 = 112;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextVariable {
    pub name: String,
    pub levels: Vec<String>,
    /// Name of the reference level used by one-hot encoding.
    pub reference: String,
}

impl ContextVariable {
    /// Builds a variable from its known levels. `Unknown` is appended when it
    /// is not already listed; the first level is the reference.
    pub fn new(name: &str, levels: &[&str]) -> Self {
        let mut levels: Vec<String> = levels.iter().map(|s| s.to_string()).collect();
        if !levels.iter().any(|l| l == UNKNOWN) {
            levels.push(UNKNOWN.to_string());
        }
        let reference = levels[0].clone();
        ContextVariable {
            name: name.to_string(),
            levels,
            reference,
        }
    }

    pub fn with_reference(mut self, reference: &str) -> Self {
        self.reference = reference.to_string();
        self
    }

    pub fn level_index(&self, level: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == level)
    }

    pub fn unknown_index(&self) -> usize {
        self.level_index(UNKNOWN).expect("validated schema has Unknown")
    }

    pub fn reference_index(&self) -> usize {
        self.level_index(&self.reference)
            .expect("validated schema has its reference level")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    NumericAge,
    CategoricalGender,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineVariable {
    pub name: String,
    pub kind: BaselineKind,
}

/// Ordered context variables plus participant-level baseline covariates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema")]
pub struct CovariateSchema {
    variables: Vec<ContextVariable>,
    #[serde(default)]
    baseline: Vec<BaselineVariable>,
}

#[derive(Deserialize)]
struct RawSchema {
    variables: Vec<ContextVariable>,
    #[serde(default)]
    baseline: Vec<BaselineVariable>,
}

impl TryFrom<RawSchema> for CovariateSchema {
    type Error = Error;
    fn try_from(raw: RawSchema) -> Result<Self> {
        CovariateSchema::new(raw.variables, raw.baseline)
    }
}

impl CovariateSchema {
    pub fn new(variables: Vec<ContextVariable>, baseline: Vec<BaselineVariable>) -> Result<Self> {
        let mut names = std::collections::HashSet::new();
        for v in &variables {
            if !names.insert(v.name.as_str()) {
                return Err(Error::InvalidSchema(format!("duplicate variable {:?}", v.name)));
            }
            if v.levels.is_empty() {
                return Err(Error::InvalidSchema(format!("variable {:?} has no levels", v.name)));
            }
            let mut seen = std::collections::HashSet::new();
            for l in &v.levels {
                if !seen.insert(l.as_str()) {
                    return Err(Error::InvalidSchema(format!(
                        "variable {:?} repeats level {:?}",
                        v.name, l
                    )));
                }
            }
            if !seen.contains(UNKNOWN) {
                return Err(Error::InvalidSchema(format!(
                    "variable {:?} lacks the reserved level {UNKNOWN:?}",
                    v.name
                )));
            }
            if !seen.contains(v.reference.as_str()) {
                return Err(Error::InvalidSchema(format!(
                    "reference {:?} is not a level of {:?}",
                    v.reference, v.name
                )));
            }
        }
        Ok(CovariateSchema { variables, baseline })
    }

    /// The five passively sensed variables of the deployed trial.
    pub fn ls4l2_default() -> Self {
        CovariateSchema::new(
            vec![
                ContextVariable::new("time_of_week", &["weekday", "weekend", "holiday"]),
                ContextVariable::new("time_of_day", &["morning", "afternoon", "evening", "night"]),
                ContextVariable::new("situation", &["shopping", "social", "working_out", "other"]),
                ContextVariable::new("weather", &["very_cold", "cold", "cool", "warm", "hot"]),
                ContextVariable::new("past_app_engagement", &["0", "1"]),
            ],
            vec![
                BaselineVariable {
                    name: "age".into(),
                    kind: BaselineKind::NumericAge,
                },
                BaselineVariable {
                    name: "gender".into(),
                    kind: BaselineKind::CategoricalGender,
                },
            ],
        )
        .expect("default schema is valid")
    }

    /// Three binary variables carrying the strong moderators used in the
    /// desk-scale simulation study.
    pub fn desk_scale() -> Self {
        CovariateSchema::new(
            vec![
                ContextVariable::new("time_of_week", &["weekday", "weekend"]),
                ContextVariable::new("time_of_day", &["day", "night"]),
                ContextVariable::new("past_app_engagement", &["0", "1"]),
            ],
            vec![],
        )
        .expect("desk-scale schema is valid")
    }

    /// `n` binary variables named `x1..xn` with levels `0`, `1`, `Unknown`.
    pub fn binary(n: usize) -> Self {
        let vars = (1..=n)
            .map(|i| ContextVariable::new(&format!("x{i}"), &["0", "1"]))
            .collect();
        CovariateSchema::new(vars, vec![]).expect("binary schema is valid")
    }

    pub fn variables(&self) -> &[ContextVariable] {
        &self.variables
    }

    pub fn baseline(&self) -> &[BaselineVariable] {
        &self.baseline
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    /// Number of distinct contexts (product of level counts).
    pub fn context_count(&self) -> usize {
        self.variables.iter().map(|v| v.levels.len()).product()
    }

    /// Every context in row-major order, last variable fastest.
    pub fn enumerate_contexts(&self) -> impl Iterator<Item = ContextVector> + '_ {
        let sizes: Vec<usize> = self.variables.iter().map(|v| v.levels.len()).collect();
        (0..self.context_count()).map(move |mut k| {
            let mut idx = vec![0u16; sizes.len()];
            for j in (0..sizes.len()).rev() {
                idx[j] = (k % sizes[j]) as u16;
                k /= sizes[j];
            }
            ContextVector(idx)
        })
    }

    /// Resolves level names into a context, reporting the first illegal level.
    pub fn resolve<S: AsRef<str>>(&self, levels: &[S]) -> Result<ContextVector> {
        if levels.len() != self.variables.len() {
            return Err(Error::InvalidArgument(format!(
                "context has {} values, schema has {} variables",
                levels.len(),
                self.variables.len()
            )));
        }
        let mut idx = Vec::with_capacity(levels.len());
        for (v, l) in self.variables.iter().zip(levels) {
            match v.level_index(l.as_ref()) {
                Some(i) => idx.push(i as u16),
                None => {
                    return Err(Error::InvalidLevel {
                        variable: v.name.clone(),
                        level: l.as_ref().to_string(),
                    })
                }
            }
        }
        Ok(ContextVector(idx))
    }

    /// Level names of a context.
    pub fn level_names(&self, ctx: &ContextVector) -> Vec<&str> {
        self.variables
            .iter()
            .zip(ctx.levels())
            .map(|(v, &i)| v.levels[i as usize].as_str())
            .collect()
    }

    /// Checks that every index of `ctx` names a level of its variable.
    pub fn check(&self, ctx: &ContextVector) -> Result<()> {
        if ctx.0.len() != self.variables.len() {
            return Err(Error::InvalidArgument(format!(
                "context has {} values, schema has {} variables",
                ctx.0.len(),
                self.variables.len()
            )));
        }
        for (v, &i) in self.variables.iter().zip(&ctx.0) {
            if i as usize >= v.levels.len() {
                return Err(Error::InvalidLevel {
                    variable: v.name.clone(),
                    level: format!("#{i}"),
                });
            }
        }
        Ok(())
    }
}

/// Validates a context given by level names against the schema.
pub fn validate_context<S: AsRef<str>>(ctx: &[S], schema: &CovariateSchema) -> Result<()> {
    schema.resolve(ctx).map(|_| ())
}

/// One level index per schema variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContextVector(pub Vec<u16>);

impl ContextVector {
    pub fn levels(&self) -> &[u16] {
        &self.0
    }

    pub fn level(&self, var: usize) -> usize {
        self.0[var] as usize
    }

    pub fn all_unknown(schema: &CovariateSchema) -> Self {
        ContextVector(schema.variables().iter().map(|v| v.unknown_index() as u16).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    NoSend,
    Send,
}

impl Action {
    pub fn from_bit(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Action::NoSend),
            1 => Ok(Action::Send),
            _ => Err(Error::InvalidArgument(format!("action must be 0 or 1, got {b}"))),
        }
    }

    pub fn bit(self) -> u8 {
        self as u8
    }

    pub fn is_send(self) -> bool {
        self == Action::Send
    }

    pub fn flip(self) -> Self {
        match self {
            Action::NoSend => Action::Send,
            Action::Send => Action::NoSend,
        }
    }
}

/// Whether the app was opened in the 30-minute window after a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Reward(pub bool);

impl Reward {
    pub fn from_bit(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Reward(false)),
            1 => Ok(Reward(true)),
            _ => Err(Error::InvalidArgument(format!("reward must be 0 or 1, got {b}"))),
        }
    }

    pub fn bit(self) -> u8 {
        self.0 as u8
    }
}

/// Days since the participant's own recruitment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StudyClock {
    pub days_in_study: u32,
}

impl StudyClock {
    pub fn new(days_in_study: u32) -> Self {
        StudyClock { days_in_study }
    }

    pub fn s1(self) -> bool {
        self.days_in_study > FIRST_UPDATE_DAY
    }

    pub fn s2(self) -> bool {
        self.days_in_study > SECOND_UPDATE_DAY
    }

    /// Representative clocks for the three valid (s1, s2) combinations.
    pub fn periods() -> [StudyClock; 3] {
        [
            StudyClock::new(0),
            StudyClock::new(FIRST_UPDATE_DAY + 1),
            StudyClock::new(SECOND_UPDATE_DAY + 1),
        ]
    }

    pub fn from_indicators(s1: bool, s2: bool) -> Result<Self> {
        match (s1, s2) {
            (false, false) => Ok(Self::periods()[0]),
            (true, false) => Ok(Self::periods()[1]),
            (true, true) => Ok(Self::periods()[2]),
            (false, true) => Err(Error::InvalidArgument("s2 = 1 requires s1 = 1".into())),
        }
    }
}

/// Study-period indicators `(s1, s2)` for a day count.
pub fn period_indicators(days_in_study: i64) -> Result<(bool, bool)> {
    if days_in_study < 0 {
        return Err(Error::InvalidArgument(format!(
            "days_in_study must be non-negative, got {days_in_study}"
        )));
    }
    let clock = StudyClock::new(days_in_study.min(u32::MAX as i64) as u32);
    Ok((clock.s1(), clock.s2()))
}

/// Simulation ground truth attached to a decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueProbs {
    pub send: f64,
    pub nosend: f64,
}

impl TrueProbs {
    pub fn for_action(&self, a: Action) -> f64 {
        match a {
            Action::Send => self.send,
            Action::NoSend => self.nosend,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub participant_id: u32,
    pub decision_index: u64,
    pub days_in_study: u32,
    pub context: ContextVector,
    pub policy_prob: f64,
    pub action: Action,
    pub reward: Reward,
    pub truth: Option<TrueProbs>,
}

impl DecisionRecord {
    pub fn clock(&self) -> StudyClock {
        StudyClock::new(self.days_in_study)
    }
}
