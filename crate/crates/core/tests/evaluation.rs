mod common;

use common::record;
use jitai_core::domain::{Action, DecisionRecord, TrueProbs};
use jitai_core::eval::{
    aggregate_replicates, calibration_report, cumulative_regret, expected_schedule, failure_report, step_regret,
    FailureFlag, RegretMode, RegretTrace,
};
use jitai_core::learner::{FitHealth, FitStatus};
use jitai_core::sim::{TrialConfig, UpdateEvent};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scored(i: u64, send: f64, nosend: f64, action: Action, policy_prob: f64) -> DecisionRecord {
    let mut r = record(0, 1, &[0], action, false);
    r.decision_index = i;
    r.policy_prob = policy_prob;
    r.truth = Some(TrueProbs { send, nosend });
    r
}

#[test]
fn empty_log_gives_empty_trace() {
    let t = cumulative_regret(&[], RegretMode::Realized).unwrap();
    assert!(t.step.is_empty());
    assert_eq!(t.final_value(), None);
}

#[test]
fn always_optimal_accrues_minus_one_percent_of_the_gap() {
    let recs: Vec<_> = (0..40)
        .map(|i| {
            if i % 2 == 0 {
                scored(i, 0.7, 0.5, Action::Send, 0.8)
            } else {
                scored(i, 0.3, 0.5, Action::NoSend, 0.8)
            }
        })
        .collect();
    let t = cumulative_regret(&recs, RegretMode::Realized).unwrap();
    for (k, c) in t.cumulative.iter().enumerate() {
        assert!((c + 0.01 * (k + 1) as f64).abs() < 1e-12);
    }
}

#[test]
fn mixed_log_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let recs: Vec<_> = (0..10)
        .rev()
        .map(|i| {
            let a = if rng.random::<bool>() {
                Action::Send
            } else {
                Action::NoSend
            };
            scored(i, rng.random(), rng.random(), a, 0.5)
        })
        .collect();
    let t = cumulative_regret(&recs, RegretMode::Realized).unwrap();
    // records were given out of order; the trace follows decision_index
    let mut sorted = recs.clone();
    sorted.sort_by_key(|r| r.decision_index);
    let mut total = 0.0;
    for (k, r) in sorted.iter().enumerate() {
        let p = r.truth.unwrap();
        let (hi, lo) = if p.send > p.nosend {
            (p.send, p.nosend)
        } else {
            (p.nosend, p.send)
        };
        let got = if r.action == Action::Send { p.send } else { p.nosend };
        let step = 0.95 * hi + 0.05 * lo - got;
        total += step;
        assert!((t.step[k] - step).abs() < 1e-12);
        assert!((t.cumulative[k] - total).abs() < 1e-12);
    }
}

#[test]
fn missing_truth_is_an_error() {
    let mut r = scored(0, 0.5, 0.4, Action::Send, 0.5);
    r.truth = None;
    assert!(cumulative_regret(&[r], RegretMode::Realized).is_err());
}

fn trace(values: &[f64]) -> RegretTrace {
    RegretTrace {
        step: vec![0.0; values.len()],
        cumulative: values.to_vec(),
    }
}

#[test]
fn identical_traces_collapse_the_band() {
    let t = trace(&[0.1, 0.3, 0.2]);
    let c = aggregate_replicates(&[t.clone(), t.clone(), t]).unwrap();
    assert_eq!(c.mean, c.q25);
    assert_eq!(c.mean, c.q75);
    assert!(!c.truncated);
}

#[test]
fn constant_traces_average() {
    let c = aggregate_replicates(&[trace(&[0.0; 5]), trace(&[2.0; 5])]).unwrap();
    assert!(c.mean.iter().all(|&m| m == 1.0));
    assert!(aggregate_replicates(&[]).is_err());
    let c = aggregate_replicates(&[trace(&[0.0; 5]), trace(&[2.0; 3])]).unwrap();
    assert_eq!(c.mean.len(), 3);
    assert!(c.truncated);
}

/// Type-7 quantile by sorting.
fn reference_quantile(mut xs: Vec<f64>, q: f64) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (xs.len() - 1) as f64;
    let i = pos as usize;
    if i + 1 >= xs.len() {
        return xs[i];
    }
    xs[i] * (1.0 - (pos - i as f64)) + xs[i + 1] * (pos - i as f64)
}

#[test]
fn quartiles_match_sorting() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let traces: Vec<RegretTrace> = (0..50)
        .map(|_| trace(&(0..30).map(|_| rng.random_range(-2.0..5.0)).collect::<Vec<f64>>()))
        .collect();
    let c = aggregate_replicates(&traces).unwrap();
    for i in 0..30 {
        let col: Vec<f64> = traces.iter().map(|t| t.cumulative[i]).collect();
        assert!((c.q25[i] - reference_quantile(col.clone(), 0.25)).abs() < 1e-12);
        assert!((c.q75[i] - reference_quantile(col.clone(), 0.75)).abs() < 1e-12);
        assert!((c.mean[i] - col.iter().sum::<f64>() / 50.0).abs() < 1e-12);
    }
}

fn at(p: f64, action: Action) -> DecisionRecord {
    scored(0, 0.5, 0.5, action, p)
}

#[test]
fn seventy_seven_of_a_hundred() {
    let recs: Vec<_> = (0..100)
        .map(|i| at(0.775, if i < 77 { Action::Send } else { Action::NoSend }))
        .collect();
    let rep = calibration_report(&recs, 0.05).unwrap();
    assert_eq!(rep.bins.len(), 20);
    let occupied: Vec<_> = rep.occupied().collect();
    assert_eq!(occupied.len(), 1);
    let b = occupied[0];
    assert!((b.low - 0.75).abs() < 1e-12 && (b.high - 0.80).abs() < 1e-12);
    assert_eq!((b.n, b.sent), (100, 77));
    assert!((b.p_hat.unwrap() - 0.77).abs() < 1e-12);
    let ci = b.ci.unwrap();
    assert!((ci.high - 0.77 - 0.0825).abs() < 1e-4 && (0.77 - ci.low - 0.0825).abs() < 1e-4);
    assert_eq!(b.covers_midpoint, Some(true));
    assert!((b.midpoint() - 0.775).abs() < 1e-12);
    let empty = &rep.bins[0];
    assert_eq!(empty.n, 0);
    assert!(empty.ci.is_none() && empty.p_hat.is_none() && empty.covers_midpoint.is_none());
}

#[test]
fn bins_are_left_closed_and_width_must_divide_one() {
    let rep = calibration_report(
        &[at(0.8, Action::Send), at(0.95, Action::Send), at(0.0, Action::NoSend)],
        0.05,
    )
    .unwrap();
    let occ: Vec<(f64, usize)> = rep.occupied().map(|b| (b.low, b.n)).collect();
    assert_eq!(occ.len(), 3);
    assert!((occ[1].0 - 0.8).abs() < 1e-12);
    assert!((occ[2].0 - 0.95).abs() < 1e-12);
    assert!(calibration_report(&[], 0.03).is_err());
    assert!(calibration_report(&[], 0.0).is_err());
    assert_eq!(calibration_report(&[], 0.1).unwrap().bins.len(), 10);
}

#[test]
fn fair_actions_are_covered_about_95_percent_of_the_time() {
    let seeds = 2000;
    let mut covered = 0;
    for s in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let recs: Vec<_> = (0..400)
            .map(|_| {
                at(
                    0.8,
                    if rng.random::<f64>() < 0.8 {
                        Action::Send
                    } else {
                        Action::NoSend
                    },
                )
            })
            .collect();
        let rep = calibration_report(&recs, 0.05).unwrap();
        let occ: Vec<_> = rep.occupied().collect();
        assert_eq!(occ.len(), 1);
        covered += occ[0].covers_mean.unwrap() as usize;
    }
    let rate = covered as f64 / seeds as f64;
    assert!((0.93..=0.97).contains(&rate), "{rate}");
}

fn event(pid: u32, day: u32, status: FitStatus) -> UpdateEvent {
    let offending = if status == FitStatus::Ok {
        vec![]
    } else {
        vec!["A: rhat 1.31".to_string()]
    };
    UpdateEvent {
        participant_id: pid,
        scheduled_day: day,
        calendar_day: day + pid,
        executed: true,
        health: Some(FitHealth { status, offending }),
        checksum: Some(format!("sum{pid}-{day}")),
        n_fixed: 2,
        n_random: 0,
    }
}

#[test]
fn failure_report_flags() {
    let cfg = TrialConfig {
        participants: 3,
        ..TrialConfig::default()
    };
    let schedule = expected_schedule(&cfg);
    assert_eq!(schedule.len(), 6);
    let mut events: Vec<_> = schedule.iter().map(|&(p, d)| event(p, d, FitStatus::Ok)).collect();
    let rep = failure_report(&schedule, &events);
    assert_eq!(rep.entries.len(), 6);
    assert_eq!(rep.flagged().count(), 0);
    assert_eq!(rep.entries[0].checksum.as_deref(), Some("sum0-56"));

    events.retain(|e| !(e.participant_id == 1 && e.scheduled_day == 112));
    let rep = failure_report(&schedule, &events);
    let flagged: Vec<_> = rep.flagged().collect();
    assert_eq!(flagged.len(), 1);
    assert_eq!((flagged[0].participant_id, flagged[0].scheduled_day), (1, 112));
    assert_eq!(flagged[0].flag, Some(FailureFlag::Missing));

    events.push(event(1, 112, FitStatus::BrokenMixing));
    let rep = failure_report(&schedule, &events);
    let flagged: Vec<_> = rep.flagged().collect();
    assert_eq!(flagged.len(), 1);
    assert_eq!(flagged[0].flag, Some(FailureFlag::Broken));
    assert_eq!(flagged[0].health.as_ref().unwrap().offending, vec!["A: rhat 1.31"]);
    let mut buf = Vec::new();
    rep.write_csv(&mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().contains("A: rhat 1.31"));
}

fn probs() -> impl Strategy<Value = (f64, f64)> {
    (0.0f64..=1.0, 0.0f64..=1.0).prop_map(|(a, b)| if a >= b { (a, b) } else { (b, a) })
}

proptest! {
    #[test]
    fn step_regret_is_bounded_by_the_gap((hi, lo) in probs()) {
        let gap = hi - lo;
        let best = step_regret(hi, lo, hi).unwrap();
        let worst = step_regret(hi, lo, lo).unwrap();
        prop_assert!((best + 0.05 * gap).abs() < 1e-12);
        prop_assert!((worst - 0.95 * gap).abs() < 1e-12);
        prop_assert!(best <= worst + 1e-15);
    }

    #[test]
    fn clipped_optimal_policy_has_zero_expected_regret(
        truths in prop::collection::vec(probs(), 1..60),
        flips in prop::collection::vec(any::<bool>(), 60),
    ) {
        let recs: Vec<_> = truths
            .iter()
            .zip(&flips)
            .enumerate()
            .map(|(i, (&(hi, lo), &f))| {
                let (send, nosend) = if f { (hi, lo) } else { (lo, hi) };
                let p = if send > nosend { 0.95 } else { 0.05 };
                scored(i as u64, send, nosend, Action::Send, p)
            })
            .collect();
        let t = cumulative_regret(&recs, RegretMode::Expected).unwrap();
        for s in &t.step {
            prop_assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn cumulative_is_the_running_sum(
        truths in prop::collection::vec(probs(), 0..40),
        acts in prop::collection::vec(any::<bool>(), 40),
    ) {
        let recs: Vec<_> = truths
            .iter()
            .zip(&acts)
            .enumerate()
            .map(|(i, (&(a, b), &s))| scored(i as u64, a, b, if s { Action::Send } else { Action::NoSend }, 0.5))
            .collect();
        let t = cumulative_regret(&recs, RegretMode::Realized).unwrap();
        prop_assert_eq!(t.step.len(), recs.len());
        for i in 0..t.step.len() {
            let prev = if i == 0 { 0.0 } else { t.cumulative[i - 1] };
            prop_assert_eq!(t.cumulative[i], prev + t.step[i]);
        }
    }

    #[test]
    fn aggregation_ignores_input_order(
        rows in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 8), 1..12),
        seed in any::<u64>(),
    ) {
        let traces: Vec<RegretTrace> = rows.iter().map(|r| trace(r)).collect();
        let mut shuffled = traces.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let a = aggregate_replicates(&traces).unwrap();
        let b = aggregate_replicates(&shuffled).unwrap();
        prop_assert_eq!(&a.q25, &b.q25);
        prop_assert_eq!(&a.q75, &b.q75);
        for (x, y) in a.mean.iter().zip(&b.mean) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
