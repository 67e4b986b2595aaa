#![allow(dead_code)]

use jitai_core::domain::{Action, ContextVector, DecisionRecord, Reward};

pub fn record(pid: u32, day: u32, ctx: &[u16], action: Action, reward: bool) -> DecisionRecord {
    DecisionRecord {
        participant_id: pid,
        decision_index: 0,
        days_in_study: day,
        context: ContextVector(ctx.to_vec()),
        policy_prob: 0.5,
        action,
        reward: Reward(reward),
        truth: None,
    }
}

/// Numbers records in order.
pub fn indexed(mut recs: Vec<DecisionRecord>) -> Vec<DecisionRecord> {
    for (i, r) in recs.iter_mut().enumerate() {
        r.decision_index = i as u64;
    }
    recs
}

pub fn log_student_t(x: f64, df: f64, scale: f64) -> f64 {
    -(df + 1.0) / 2.0 * (1.0 + (x / scale).powi(2) / df).ln()
}

pub fn log_lik(eta: f64, y: bool) -> f64 {
    // log sigmoid(eta) or log sigmoid(-eta)
    let z = if y { eta } else { -eta };
    -(1.0 + (-z).exp()).ln()
}
