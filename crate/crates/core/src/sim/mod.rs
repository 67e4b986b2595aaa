//! Synthetic closed-loop trials: enrollment, decision schedules, contexts,
//! ground-truth rewards and periodic refits of the learning algorithm.

mod generative;

use std::collections::{BTreeMap, HashMap};

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use generative::{sample_coefficients, setting_terms, true_success_prob, GenerativeModel, Setting, MODERATORS};

use crate::domain::{Action, ContextVector, CovariateSchema, DecisionRecord, Reward, StudyClock, TrueProbs};
use crate::error::{Error, Result};
use crate::learner::{fit_posterior, FitHealth, PriorSpec, SamplerConfig};
use crate::policy::{build_policy_table, ClipBounds, NearestMap, PolicyTable};
use crate::seeds::{checksum, derive_seed};
use crate::spec::{Encoding, ModelSpec, SpecBuilder, SpecConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgorithmKind {
    Simple,
    Ls4l2,
    Complicated,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 3] = [AlgorithmKind::Simple, AlgorithmKind::Ls4l2, AlgorithmKind::Complicated];

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::Simple => "simple",
            AlgorithmKind::Ls4l2 => "ls4l2",
            AlgorithmKind::Complicated => "complicated",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(AlgorithmKind::Simple),
            "ls4l2" => Ok(AlgorithmKind::Ls4l2),
            "complicated" => Ok(AlgorithmKind::Complicated),
            _ => Err(Error::InvalidArgument(format!(
                "unknown algorithm {s:?}; expected simple, ls4l2 or complicated"
            ))),
        }
    }

    /// Model spec fitted at an update. `own` is the updating participant's data.
    pub fn model_spec(
        self,
        data: &[DecisionRecord],
        own: &[DecisionRecord],
        schema: &CovariateSchema,
        config: &SpecConfig,
    ) -> Result<ModelSpec> {
        match self {
            AlgorithmKind::Simple => Ok(ModelSpec::simple(Encoding::observed(data, schema))),
            AlgorithmKind::Complicated => Ok(ModelSpec::complicated(Encoding::observed(data, schema))),
            AlgorithmKind::Ls4l2 => SpecBuilder::new(schema, config.clone()).random_data(own).build(data),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialConfig {
    pub participants: u32,
    /// Enrollment day is uniform on `0..enrollment_days`.
    pub enrollment_days: u32,
    pub study_days: u32,
    pub min_decisions_per_week: u32,
    pub max_decisions_per_week: u32,
    /// Days in study at whose end the participant's policy is refreshed.
    pub update_days: Vec<u32>,
    pub initial_send_prob: f64,
    /// Level weights per variable; missing variables are uniform over all levels.
    pub context_weights: BTreeMap<String, Vec<f64>>,
    pub seed: u64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig {
            participants: 20,
            enrollment_days: 56,
            study_days: 168,
            min_decisions_per_week: 2,
            max_decisions_per_week: 4,
            update_days: vec![56, 112],
            initial_send_prob: 0.8,
            context_weights: BTreeMap::new(),
            seed: 0,
        }
    }
}

impl TrialConfig {
    pub fn validate(&self, schema: &CovariateSchema) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.participants == 0 {
            return bad("participants must be positive".into());
        }
        if self.enrollment_days == 0 || self.study_days == 0 {
            return bad("enrollment_days and study_days must be positive".into());
        }
        if self.max_decisions_per_week == 0 || self.min_decisions_per_week > self.max_decisions_per_week {
            return bad("decision rate must be positive with min <= max".into());
        }
        if self.update_days.windows(2).any(|w| w[0] >= w[1]) {
            return bad("update_days must be strictly increasing".into());
        }
        if !(0.0..=1.0).contains(&self.initial_send_prob) {
            return bad("initial_send_prob must lie in [0, 1]".into());
        }
        for (name, w) in &self.context_weights {
            let Some(j) = schema.variable_index(name) else {
                return bad(format!("context_weights: unknown variable {name:?}"));
            };
            if w.len() != schema.variables()[j].levels.len() {
                return bad(format!("context_weights.{name}: expected one weight per level"));
            }
            if w.iter().any(|x| !(*x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return bad(format!(
                    "context_weights.{name}: weights must be non-negative with positive sum"
                ));
            }
        }
        Ok(())
    }

    /// Weights that exclude every variable's `Unknown` level.
    pub fn known_levels_only(schema: &CovariateSchema) -> BTreeMap<String, Vec<f64>> {
        schema
            .variables()
            .iter()
            .map(|v| {
                let u = v.unknown_index();
                (
                    v.name.clone(),
                    (0..v.levels.len()).map(|l| if l == u { 0.0 } else { 1.0 }).collect(),
                )
            })
            .collect()
    }
}

/// Learner and policy settings shared by all updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub prior: PriorSpec,
    pub sampler: SamplerConfig,
    pub spec: SpecConfig,
    pub clip: ClipBounds,
    pub nearest: NearestMap,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            prior: PriorSpec::default(),
            sampler: SamplerConfig::default(),
            spec: SpecConfig::default(),
            clip: ClipBounds::default(),
            nearest: NearestMap::new(),
        }
    }
}

/// One scheduled policy refresh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateEvent {
    pub participant_id: u32,
    /// Days in study at which the update was due.
    pub scheduled_day: u32,
    pub calendar_day: u32,
    pub executed: bool,
    pub health: Option<FitHealth>,
    /// SHA-256 of the posterior draws CSV.
    pub checksum: Option<String>,
    pub n_fixed: usize,
    pub n_random: usize,
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub records: Vec<DecisionRecord>,
    pub updates: Vec<UpdateEvent>,
    /// Set when a fit broke and the trial stopped.
    pub aborted: Option<String>,
}

struct Planned {
    participant: u32,
    day: u32,
    calendar: u32,
    context: ContextVector,
    u_reward: f64,
}

/// Enrollment, schedules, contexts and reward uniforms; shared by all
/// algorithms run on the same dataset seed.
fn plan_dataset(cfg: &TrialConfig, schema: &CovariateSchema) -> Result<(Vec<u32>, Vec<Planned>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samplers: Vec<WeightedIndex<f64>> = schema
        .variables()
        .iter()
        .map(|v| {
            let w = cfg
                .context_weights
                .get(&v.name)
                .cloned()
                .unwrap_or_else(|| vec![1.0; v.levels.len()]);
            WeightedIndex::new(w).map_err(|e| Error::InvalidArgument(format!("context_weights.{}: {e}", v.name)))
        })
        .collect::<Result<_>>()?;
    let enroll: Vec<u32> = (0..cfg.participants)
        .map(|_| rng.random_range(0..cfg.enrollment_days))
        .collect();
    let mut planned = Vec::new();
    for (pid, &e) in enroll.iter().enumerate() {
        let weeks = cfg.study_days.div_ceil(7);
        for w in 0..weeks {
            let first = 7 * w + 1;
            let last = (7 * w + 7).min(cfg.study_days);
            let n = rng.random_range(cfg.min_decisions_per_week..=cfg.max_decisions_per_week);
            let mut days: Vec<u32> = (0..n).map(|_| rng.random_range(first..=last)).collect();
            days.sort_unstable();
            for day in days {
                let context = ContextVector(samplers.iter().map(|s| rng.sample(s) as u16).collect());
                planned.push(Planned {
                    participant: pid as u32,
                    day,
                    calendar: e + day,
                    context,
                    u_reward: rng.random(),
                });
            }
        }
    }
    // stable: within a participant, schedule order is kept
    planned.sort_by_key(|p| (p.calendar, p.participant));
    Ok((enroll, planned))
}

/// Runs one trial. Deterministic given the configs; the model only supplies
/// rewards, the algorithm only sees logged data.
pub fn simulate_trial(
    cfg: &TrialConfig,
    algo: AlgorithmKind,
    model: &GenerativeModel,
    schema: &CovariateSchema,
    learner: &LearnerConfig,
) -> Result<TrialOutcome> {
    cfg.validate(schema)?;
    learner.clip.validate()?;
    model.spec().check_schema(schema)?;
    let (enroll, planned) = plan_dataset(cfg, schema)?;
    let algo_seed = derive_seed(cfg.seed, algo.name(), 0);
    let mut rng = ChaCha8Rng::seed_from_u64(algo_seed);

    // update schedule in calendar order
    let mut schedule: Vec<(u32, u32, u32)> = Vec::new();
    for (pid, &e) in enroll.iter().enumerate() {
        for &d in &cfg.update_days {
            if d <= cfg.study_days {
                schedule.push((e + d, pid as u32, d));
            }
        }
    }
    schedule.sort_unstable();

    let mut tables: HashMap<u32, (u32, PolicyTable)> = HashMap::new();
    let mut records: Vec<DecisionRecord> = Vec::with_capacity(planned.len());
    let mut updates = Vec::new();
    let mut next_update = 0;
    let mut i = 0;
    while i < planned.len() || next_update < schedule.len() {
        let today = match (planned.get(i), schedule.get(next_update)) {
            (Some(p), Some(s)) => p.calendar.min(s.0),
            (Some(p), None) => p.calendar,
            (None, Some(s)) => s.0,
            (None, None) => break,
        };
        while i < planned.len() && planned[i].calendar == today {
            let p = &planned[i];
            let clock = StudyClock::new(p.day);
            let send_prob = match tables.get(&p.participant) {
                Some((after, table)) if p.day > *after => table.send_prob(&p.context, clock)?,
                _ => cfg.initial_send_prob,
            };
            let action = if rng.random::<f64>() < send_prob {
                Action::Send
            } else {
                Action::NoSend
            };
            let truth = TrueProbs {
                send: true_success_prob(model, &p.context, Action::Send, clock)?,
                nosend: true_success_prob(model, &p.context, Action::NoSend, clock)?,
            };
            records.push(DecisionRecord {
                participant_id: p.participant,
                decision_index: records.len() as u64,
                days_in_study: p.day,
                context: p.context.clone(),
                policy_prob: send_prob,
                action,
                reward: Reward(p.u_reward < truth.for_action(action)),
                truth: Some(truth),
            });
            i += 1;
        }
        while next_update < schedule.len() && schedule[next_update].0 == today {
            let (calendar, pid, day) = schedule[next_update];
            next_update += 1;
            let own: Vec<DecisionRecord> = records.iter().filter(|r| r.participant_id == pid).cloned().collect();
            let spec = algo.model_spec(&records, &own, schema, &learner.spec)?;
            let sampler = SamplerConfig {
                seed: derive_seed(algo_seed, "fit", ((calendar as u64) << 32) | pid as u64),
                ..learner.sampler.clone()
            };
            let fit = fit_posterior(&records, &spec, &learner.prior, &sampler)?;
            let mut event = UpdateEvent {
                participant_id: pid,
                scheduled_day: day,
                calendar_day: calendar,
                executed: true,
                health: Some(fit.health.clone()),
                checksum: None,
                n_fixed: spec.n_fixed(),
                n_random: spec.n_random(),
            };
            let draws = match fit.draws {
                Some(d) if fit.health.is_ok() => d,
                other => {
                    if let Some(d) = other {
                        let mut buf = Vec::new();
                        d.write_csv(&mut buf)?;
                        event.checksum = Some(checksum(&buf));
                    }
                    let detail = format!(
                        "participant {pid} day {day}: {:?} {}",
                        fit.health.status,
                        fit.health.offending.join(", ")
                    );
                    updates.push(event);
                    return Ok(TrialOutcome {
                        records,
                        updates,
                        aborted: Some(detail),
                    });
                }
            };
            let mut buf = Vec::new();
            draws.write_csv(&mut buf)?;
            event.checksum = Some(checksum(&buf));
            let observed = spec.encoding().observed_levels();
            let table = build_policy_table(
                &draws,
                &spec,
                schema,
                &observed,
                Some(pid),
                learner.clip,
                &learner.nearest,
            )?;
            tables.insert(pid, (day, table));
            updates.push(event);
        }
    }
    Ok(TrialOutcome {
        records,
        updates,
        aborted: None,
    })
}
