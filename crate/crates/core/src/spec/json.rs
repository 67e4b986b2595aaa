//! Human-readable JSON form of a model spec.

use serde::{Deserialize, Serialize};

use super::{
    BaselineEncoding, BaselineFactor, Encoding, ModelSpec, ModelTerm, PeriodRound, Scope, TermKind, VariableEncoding,
};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct SpecDoc {
    covariates: Vec<CovariateDoc>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    baseline: Option<BaselineEncoding>,
    terms: Vec<TermDoc>,
}

#[derive(Serialize, Deserialize)]
struct CovariateDoc {
    name: String,
    levels: Vec<String>,
    reference: String,
    active: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct TermDoc {
    kind: String,
    factors: Vec<String>,
    round: u8,
    scope: String,
    order: usize,
}

fn kind_name(kind: TermKind) -> &'static str {
    match kind {
        TermKind::Intercept => "intercept",
        TermKind::Main(_) => "main",
        TermKind::TwoWay(..) => "two-way",
        TermKind::Treatment => "treatment-main",
        TermKind::TreatmentBy(_) => "treatment-by-covariate",
        TermKind::TreatmentByPair(..) => "treatment-by-two-covariates",
        TermKind::BaselineMain(_) => "baseline-main",
        TermKind::BaselineByTreatment(_) => "baseline-by-treatment",
        TermKind::BaselineThreeWay => "baseline-three-way",
    }
}

fn scope_name(s: Scope) -> &'static str {
    match s {
        Scope::PopulationFixed => "population-fixed",
        Scope::ParticipantRandom => "participant-random",
    }
}

pub(super) fn to_json(spec: &ModelSpec) -> String {
    let enc = spec.encoding();
    let vars = enc.variables();
    let covariates = vars
        .iter()
        .map(|v| CovariateDoc {
            name: v.name.clone(),
            levels: v.levels.clone(),
            reference: v.levels[v.reference as usize].clone(),
            active: v.active.iter().map(|&l| v.levels[l as usize].clone()).collect(),
        })
        .collect();
    let terms = spec
        .terms()
        .iter()
        .map(|t| {
            let factors = spec.term_factors(t.kind);
            TermDoc {
                kind: kind_name(t.kind).into(),
                factors,
                round: t.round.index(),
                scope: scope_name(t.scope).into(),
                order: t.interaction_order(),
            }
        })
        .collect();
    let doc = SpecDoc {
        covariates,
        baseline: enc.baseline().cloned(),
        terms,
    };
    serde_json::to_string_pretty(&doc).expect("spec document serializes")
}

pub(super) fn from_json(text: &str) -> Result<ModelSpec> {
    let doc: SpecDoc = serde_json::from_str(text)?;
    let mut variables = Vec::with_capacity(doc.covariates.len());
    for c in &doc.covariates {
        let idx = |l: &str| -> Result<u16> {
            c.levels
                .iter()
                .position(|x| x == l)
                .map(|i| i as u16)
                .ok_or_else(|| Error::Parse(format!("level {l:?} not in {:?}", c.name)))
        };
        let reference = idx(&c.reference)?;
        let active = c.active.iter().map(|l| idx(l)).collect::<Result<Vec<_>>>()?;
        variables.push(VariableEncoding::from_parts(
            c.name.clone(),
            c.levels.clone(),
            reference,
            active,
        )?);
    }
    let var_index = |n: &str| -> Result<usize> {
        doc.covariates
            .iter()
            .position(|c| c.name == n)
            .ok_or_else(|| Error::Parse(format!("unknown covariate {n:?}")))
    };
    let baseline_factor = |n: &str| -> Result<BaselineFactor> {
        match n {
            "age" => Ok(BaselineFactor::Age),
            "gender" => Ok(BaselineFactor::Gender),
            _ => Err(Error::Parse(format!("unknown baseline factor {n:?}"))),
        }
    };
    let mut terms = Vec::with_capacity(doc.terms.len());
    for t in &doc.terms {
        let f: Vec<&str> = t.factors.iter().map(String::as_str).collect();
        let covs: Vec<&str> = f.iter().copied().filter(|x| *x != "A").collect();
        let kind = match (t.kind.as_str(), covs.as_slice()) {
            ("intercept", []) => TermKind::Intercept,
            ("treatment-main", []) => TermKind::Treatment,
            ("main", [a]) => TermKind::Main(var_index(a)?),
            ("treatment-by-covariate", [a]) => TermKind::TreatmentBy(var_index(a)?),
            ("two-way", [a, b]) => TermKind::TwoWay(var_index(a)?, var_index(b)?),
            ("treatment-by-two-covariates", [a, b]) => TermKind::TreatmentByPair(var_index(a)?, var_index(b)?),
            ("baseline-main", [a]) => TermKind::BaselineMain(baseline_factor(a)?),
            ("baseline-by-treatment", [a]) => TermKind::BaselineByTreatment(baseline_factor(a)?),
            ("baseline-three-way", _) => TermKind::BaselineThreeWay,
            (k, _) => return Err(Error::Parse(format!("bad term {k:?} with factors {:?}", t.factors))),
        };
        let scope = match t.scope.as_str() {
            "population-fixed" => Scope::PopulationFixed,
            "participant-random" => Scope::ParticipantRandom,
            s => return Err(Error::Parse(format!("bad scope {s:?}"))),
        };
        let term = ModelTerm {
            kind,
            round: PeriodRound::from_index(t.round)?,
            scope,
        };
        if term.interaction_order() != t.order {
            return Err(Error::Parse(format!(
                "term {:?} declares order {} but has order {}",
                t.factors,
                t.order,
                term.interaction_order()
            )));
        }
        terms.push(term);
    }
    ModelSpec::new(terms, Encoding::from_parts(variables, doc.baseline))
}
