mod common;

use jitai_core::domain::{
    period_indicators, validate_context, Action, ContextVariable, ContextVector, CovariateSchema, DecisionRecord,
    Reward, StudyClock, TrueProbs, UNKNOWN,
};
use jitai_core::log;
use jitai_core::Error;
use proptest::prelude::*;

#[test]
fn period_boundaries_are_strict() {
    assert_eq!(period_indicators(56).unwrap(), (false, false));
    assert_eq!(period_indicators(57).unwrap(), (true, false));
    assert_eq!(period_indicators(112).unwrap(), (true, false));
    assert_eq!(period_indicators(113).unwrap(), (true, true));
    assert_eq!(period_indicators(150).unwrap(), (true, true));
    assert!(period_indicators(-1).is_err());
    assert!(StudyClock::from_indicators(false, true).is_err());
}

#[test]
fn context_validation() {
    let schema = CovariateSchema::ls4l2_default();
    assert!(validate_context(&[UNKNOWN; 5], &schema).is_ok());
    assert!(validate_context(&["weekday", "night", "other", "cold", "1"], &schema).is_ok());
    let err = validate_context(&["weekday", "night", "other", "tropical", "1"], &schema).unwrap_err();
    match err {
        Error::InvalidLevel { variable, level } => {
            assert_eq!(variable, "weather");
            assert_eq!(level, "tropical");
        }
        other => panic!("{other}"),
    }
    assert!(validate_context(&["weekday"], &schema).is_err());
}

#[test]
fn schema_invariants() {
    for schema in [
        CovariateSchema::ls4l2_default(),
        CovariateSchema::desk_scale(),
        CovariateSchema::binary(4),
    ] {
        for v in schema.variables() {
            assert_eq!(v.levels.iter().filter(|l| *l == UNKNOWN).count(), 1);
        }
    }
    let names: Vec<_> = CovariateSchema::ls4l2_default()
        .variables()
        .iter()
        .map(|v| v.name.clone())
        .collect();
    assert_eq!(
        names,
        [
            "time_of_week",
            "time_of_day",
            "situation",
            "weather",
            "past_app_engagement"
        ]
    );
    let dup = ContextVariable {
        name: "w".into(),
        levels: vec!["a".into(), "a".into(), UNKNOWN.into()],
        reference: "a".into(),
    };
    assert!(CovariateSchema::new(vec![dup], vec![]).is_err());
    let no_unknown = ContextVariable {
        name: "w".into(),
        levels: vec!["a".into()],
        reference: "a".into(),
    };
    assert!(CovariateSchema::new(vec![no_unknown], vec![]).is_err());
}

#[test]
fn every_enumerated_context_validates() {
    let schema = CovariateSchema::ls4l2_default();
    let mut n = 0;
    for ctx in schema.enumerate_contexts() {
        assert!(validate_context(&schema.level_names(&ctx), &schema).is_ok());
        n += 1;
    }
    assert_eq!(n, schema.context_count());
    assert_eq!(n, 4 * 5 * 5 * 6 * 3);
}

fn arb_record() -> impl Strategy<Value = DecisionRecord> {
    (
        0u32..50,
        0u64..10_000,
        1u32..200,
        (0u16..4, 0u16..5, 0u16..5, 0u16..6, 0u16..3),
        0.0f64..=1.0,
        any::<bool>(),
        any::<bool>(),
        prop::option::of((0.0f64..=1.0, 0.0f64..=1.0)),
    )
        .prop_map(|(pid, idx, day, c, p, a, y, truth)| DecisionRecord {
            participant_id: pid,
            decision_index: idx,
            days_in_study: day,
            context: ContextVector(vec![c.0, c.1, c.2, c.3, c.4]),
            policy_prob: p,
            action: if a { Action::Send } else { Action::NoSend },
            reward: Reward(y),
            truth: truth.map(|(send, nosend)| TrueProbs { send, nosend }),
        })
}

proptest! {
    #[test]
    fn indicators_never_switch_off(a in 0i64..400, b in 0i64..400) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (s1a, s2a) = period_indicators(lo).unwrap();
        let (s1b, s2b) = period_indicators(hi).unwrap();
        prop_assert!(s1b >= s1a && s2b >= s2a);
        prop_assert!(!s2b || s1b);
    }

    #[test]
    fn records_round_trip(recs in prop::collection::vec(arb_record(), 0..30)) {
        let schema = CovariateSchema::ls4l2_default();
        let mut buf = Vec::new();
        log::write_csv(&schema, &recs, &mut buf).unwrap();
        prop_assert_eq!(&log::read_csv(&schema, buf.as_slice()).unwrap(), &recs);
        let mut buf = Vec::new();
        log::write_jsonl(&schema, &recs, &mut buf).unwrap();
        prop_assert_eq!(&log::read_jsonl(&schema, buf.as_slice()).unwrap(), &recs);
    }
}
