use std::collections::BTreeSet;

use super::{BaselineFactor, BaselineTable, Encoding, ModelSpec, ModelTerm, PeriodRound, Scope, SpecConfig, TermKind};
use crate::domain::{CovariateSchema, DecisionRecord};
use crate::error::Result;

/// Cell counts for one round. `Unknown` never enters a covariate cell.
struct Cells {
    n: usize,
    actions: [usize; 2],
    /// [var][level][action]
    level_action: Vec<Vec<[usize; 2]>>,
    /// [pair index][l * levels_k + m][action]
    pair_action: Vec<Vec<[usize; 2]>>,
    sizes: Vec<usize>,
}

fn pair_index(p: usize, j: usize, k: usize) -> usize {
    // row-major upper triangle
    j * p - j * (j + 1) / 2 + (k - j - 1)
}

impl Cells {
    fn tally<'a>(schema: &CovariateSchema, data: impl Iterator<Item = &'a DecisionRecord>) -> Self {
        let sizes: Vec<usize> = schema.variables().iter().map(|v| v.levels.len()).collect();
        let unknown: Vec<usize> = schema.variables().iter().map(|v| v.unknown_index()).collect();
        let p = sizes.len();
        let mut level_action: Vec<Vec<[usize; 2]>> = sizes.iter().map(|&s| vec![[0; 2]; s]).collect();
        let mut pair_action = Vec::with_capacity(p * p.saturating_sub(1) / 2);
        for j in 0..p {
            for k in j + 1..p {
                pair_action.push(vec![[0; 2]; sizes[j] * sizes[k]]);
            }
        }
        let mut n = 0;
        let mut actions = [0; 2];
        for r in data {
            n += 1;
            let a = r.action.bit() as usize;
            actions[a] += 1;
            let lv = r.context.levels();
            for j in 0..p {
                let l = lv[j] as usize;
                if l == unknown[j] {
                    continue;
                }
                level_action[j][l][a] += 1;
                for k in j + 1..p {
                    let m = lv[k] as usize;
                    if m == unknown[k] {
                        continue;
                    }
                    pair_action[pair_index(p, j, k)][l * sizes[k] + m][a] += 1;
                }
            }
        }
        Cells {
            n,
            actions,
            level_action,
            pair_action,
            sizes,
        }
    }

    fn main_ok(&self, j: usize, min: usize) -> bool {
        self.level_action[j].iter().filter(|c| c[0] + c[1] >= min).count() >= 2
    }

    fn treatment_by_ok(&self, j: usize, min: usize) -> bool {
        self.level_action[j]
            .iter()
            .filter(|c| c[0] >= min && c[1] >= min)
            .count()
            >= 2
    }

    /// True when some 2x2 sub-table of levels has every cell satisfying `ok`.
    fn pair_ok(&self, j: usize, k: usize, ok: impl Fn(&[usize; 2]) -> bool) -> bool {
        let p = self.sizes.len();
        let cells = &self.pair_action[pair_index(p, j, k)];
        let (sj, sk) = (self.sizes[j], self.sizes[k]);
        let full: Vec<Vec<bool>> = (0..sj)
            .map(|l| (0..sk).map(|m| ok(&cells[l * sk + m])).collect())
            .collect();
        for l1 in 0..sj {
            for l2 in l1 + 1..sj {
                let shared = (0..sk).filter(|&m| full[l1][m] && full[l2][m]).count();
                if shared >= 2 {
                    return true;
                }
            }
        }
        false
    }
}

/// Data-adaptive term selection.
pub struct SpecBuilder<'a> {
    schema: &'a CovariateSchema,
    config: SpecConfig,
    random_data: Option<&'a [DecisionRecord]>,
    baseline: Option<&'a BaselineTable>,
}

impl<'a> SpecBuilder<'a> {
    pub fn new(schema: &'a CovariateSchema, config: SpecConfig) -> Self {
        SpecBuilder {
            schema,
            config,
            random_data: None,
            baseline: None,
        }
    }

    /// Data used for the participant-random rules; defaults to the fit data.
    pub fn random_data(mut self, data: &'a [DecisionRecord]) -> Self {
        self.random_data = Some(data);
        self
    }

    pub fn baseline(mut self, table: &'a BaselineTable) -> Self {
        self.baseline = Some(table);
        self
    }

    pub fn build(&self, data: &[DecisionRecord]) -> Result<ModelSpec> {
        self.config.validate()?;
        let cfg = &self.config;
        let fam = cfg.families;
        let min = cfg.min_cell_size;
        let p = self.schema.len();

        let mut admitted: Vec<ModelTerm> = Vec::new();
        let mut interactions: Vec<ModelTerm> = Vec::new();
        let mut offer = |t: ModelTerm, admitted: &mut Vec<ModelTerm>| {
            if t.interaction_order() >= 2 {
                interactions.push(t);
            } else {
                admitted.push(t);
            }
        };

        let rounds: &[PeriodRound] = if fam.period_rounds {
            &PeriodRound::ALL
        } else {
            &[PeriodRound::All]
        };
        for &round in rounds {
            let cells = Cells::tally(self.schema, data.iter().filter(|r| round.active(r.clock())));
            let fixed = |k| ModelTerm::fixed(k, round);
            if round == PeriodRound::All {
                offer(fixed(TermKind::Intercept), &mut admitted);
                offer(fixed(TermKind::Treatment), &mut admitted);
            } else {
                if cells.n >= min {
                    offer(fixed(TermKind::Intercept), &mut admitted);
                }
                if cells.actions[0] >= min && cells.actions[1] >= min {
                    offer(fixed(TermKind::Treatment), &mut admitted);
                }
            }
            for j in 0..p {
                if cells.main_ok(j, min) {
                    offer(fixed(TermKind::Main(j)), &mut admitted);
                }
                if fam.treatment_moderation && cells.treatment_by_ok(j, min) {
                    offer(fixed(TermKind::TreatmentBy(j)), &mut admitted);
                }
            }
            for j in 0..p {
                for k in j + 1..p {
                    if fam.covariate_pairs && cells.pair_ok(j, k, |c| c[0] + c[1] >= min) {
                        offer(fixed(TermKind::TwoWay(j, k)), &mut admitted);
                    }
                    if fam.covariate_pairs
                        && fam.treatment_moderation
                        && cells.pair_ok(j, k, |c| c[0] >= min && c[1] >= min)
                    {
                        offer(fixed(TermKind::TreatmentByPair(j, k)), &mut admitted);
                    }
                }
            }
        }

        interactions.sort_by_key(|t| (t.interaction_order(), t.round, t.kind.rank()));
        let mut budget = cfg.max_interaction_terms;
        for t in interactions {
            if budget == 0 {
                break;
            }
            admitted.push(t);
            budget -= 1;
        }

        if fam.random_effects {
            let rdata = self.random_data.unwrap_or(data);
            let cells = Cells::tally(self.schema, rdata.iter());
            let has_fixed =
                |k: TermKind, admitted: &[ModelTerm]| admitted.contains(&ModelTerm::fixed(k, PeriodRound::All));
            let mut random = Vec::new();
            if cells.n >= min {
                random.push(TermKind::Intercept);
            }
            if cells.actions[0] >= min && cells.actions[1] >= min {
                random.push(TermKind::Treatment);
            }
            for j in 0..p {
                if cells.main_ok(j, min) && has_fixed(TermKind::Main(j), &admitted) {
                    random.push(TermKind::Main(j));
                }
            }
            for j in 0..p {
                if fam.treatment_moderation
                    && cells.treatment_by_ok(j, min)
                    && has_fixed(TermKind::TreatmentBy(j), &admitted)
                {
                    random.push(TermKind::TreatmentBy(j));
                }
            }
            for k in random {
                let t = ModelTerm::random(k);
                if t.interaction_order() >= 2 {
                    if budget == 0 {
                        continue;
                    }
                    budget -= 1;
                }
                admitted.push(t);
            }
        }

        let mut encoding = Encoding::observed(data, self.schema);
        if cfg.enable_baseline_rules {
            if let Some(table) = self.baseline {
                let present: BTreeSet<u32> = data.iter().map(|r| r.participant_id).collect();
                let sub: BaselineTable = table
                    .iter()
                    .filter(|(id, _)| present.contains(id))
                    .map(|(id, b)| (*id, b.clone()))
                    .collect();
                let roster: Vec<(f64, String)> = sub.values().map(|b| (b.age, b.gender.clone())).collect();
                admitted.extend(baseline_terms(&roster, cfg));
                encoding = encoding.with_baseline(&sub);
            }
        }
        debug_assert!(admitted
            .iter()
            .all(|t| t.scope == Scope::PopulationFixed || t.round == PeriodRound::All));
        ModelSpec::new(admitted, encoding)
    }
}

/// Data-adaptive spec with fixed and random rules applied to the same data.
pub fn build_model_spec(data: &[DecisionRecord], schema: &CovariateSchema, config: &SpecConfig) -> Result<ModelSpec> {
    SpecBuilder::new(schema, *config).build(data)
}

/// Age and gender terms admitted by the variability of the roster.
pub fn baseline_terms(participants: &[(f64, String)], config: &SpecConfig) -> Vec<ModelTerm> {
    if !config.enable_baseline_rules || participants.is_empty() {
        return Vec::new();
    }
    let mut ages: Vec<f64> = participants.iter().map(|(a, _)| *a).collect();
    ages.sort_by(f64::total_cmp);
    ages.dedup();
    let genders: BTreeSet<&str> = participants.iter().map(|(_, g)| g.as_str()).collect();

    let mut out = Vec::new();
    let all = PeriodRound::All;
    for (factor, distinct) in [
        (BaselineFactor::Age, ages.len()),
        (BaselineFactor::Gender, genders.len()),
    ] {
        if distinct >= 2 {
            out.push(ModelTerm::fixed(TermKind::BaselineMain(factor), all));
        }
        if distinct >= 4 {
            out.push(ModelTerm::fixed(TermKind::BaselineByTreatment(factor), all));
        }
    }

    let mean = participants.iter().map(|(a, _)| a).sum::<f64>() / participants.len() as f64;
    let mut cells = std::collections::BTreeMap::<(bool, &str), usize>::new();
    for (age, g) in participants {
        *cells.entry((*age > mean, g.as_str())).or_default() += 1;
    }
    if cells.values().any(|&c| c >= 4) {
        out.push(ModelTerm::fixed(TermKind::BaselineThreeWay, all));
    }
    out
}
