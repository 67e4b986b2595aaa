//! Decision-log persistence in JSONL and CSV with a fixed column order.

use std::io::{BufRead, Write};

use serde_json::{Map, Value};

use crate::domain::{Action, CovariateSchema, DecisionRecord, Reward, StudyClock, TrueProbs};
use crate::error::{Error, Result};

/// Column names in file order.
pub fn header(schema: &CovariateSchema) -> Vec<String> {
    let mut cols: Vec<String> = vec!["participant_id".into(), "decision_index".into(), "days_in_study".into()];
    cols.extend(schema.variables().iter().map(|v| v.name.clone()));
    cols.extend(
        [
            "s1",
            "s2",
            "policy_prob",
            "action",
            "reward",
            "true_prob_send",
            "true_prob_nosend",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    cols
}

fn row_fields(schema: &CovariateSchema, r: &DecisionRecord) -> Vec<String> {
    let clock = r.clock();
    let mut out = vec![
        r.participant_id.to_string(),
        r.decision_index.to_string(),
        r.days_in_study.to_string(),
    ];
    out.extend(schema.level_names(&r.context).into_iter().map(str::to_string));
    out.push((clock.s1() as u8).to_string());
    out.push((clock.s2() as u8).to_string());
    out.push(r.policy_prob.to_string());
    out.push(r.action.bit().to_string());
    out.push(r.reward.bit().to_string());
    match r.truth {
        Some(t) => {
            out.push(t.send.to_string());
            out.push(t.nosend.to_string());
        }
        None => {
            out.push(String::new());
            out.push(String::new());
        }
    }
    out
}

pub fn write_csv<W: Write>(schema: &CovariateSchema, records: &[DecisionRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(header(schema))?;
    for r in records {
        wr.write_record(row_fields(schema, r))?;
    }
    wr.flush()?;
    Ok(())
}

fn parse<T: std::str::FromStr>(field: &str, what: &str) -> Result<T> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("bad {what}: {field:?}")))
}

fn parse_bit(field: &str, what: &str) -> Result<u8> {
    parse::<u8>(field, what)
}

fn build_record(
    schema: &CovariateSchema,
    participant_id: u32,
    decision_index: u64,
    days_in_study: u32,
    levels: &[String],
    s1: u8,
    s2: u8,
    policy_prob: f64,
    action: u8,
    reward: u8,
    truth: (Option<f64>, Option<f64>),
) -> Result<DecisionRecord> {
    let context = schema.resolve(levels)?;
    let clock = StudyClock::new(days_in_study);
    if (clock.s1() as u8, clock.s2() as u8) != (s1, s2) {
        return Err(Error::Parse(format!(
            "decision {decision_index}: s1/s2 ({s1}, {s2}) disagree with day {days_in_study}"
        )));
    }
    if !(0.0..=1.0).contains(&policy_prob) {
        return Err(Error::Parse(format!(
            "decision {decision_index}: policy_prob {policy_prob} outside [0, 1]"
        )));
    }
    let truth = match truth {
        (Some(send), Some(nosend)) => Some(TrueProbs { send, nosend }),
        (None, None) => None,
        _ => {
            return Err(Error::Parse(format!(
                "decision {decision_index}: true probabilities must be both present or both absent"
            )))
        }
    };
    Ok(DecisionRecord {
        participant_id,
        decision_index,
        days_in_study,
        context,
        policy_prob,
        action: Action::from_bit(action)?,
        reward: Reward::from_bit(reward)?,
        truth,
    })
}

pub fn read_csv<R: std::io::Read>(schema: &CovariateSchema, r: R) -> Result<Vec<DecisionRecord>> {
    let mut rd = csv::Reader::from_reader(r);
    let expected = header(schema);
    let got: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if got != expected {
        return Err(Error::Parse(format!(
            "decision log header mismatch: expected {expected:?}, got {got:?}"
        )));
    }
    let p = schema.len();
    let opt = |s: &str| -> Result<Option<f64>> {
        if s.trim().is_empty() {
            Ok(None)
        } else {
            parse::<f64>(s, "probability").map(Some)
        }
    };
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let f: Vec<&str> = rec.iter().collect();
        let levels: Vec<String> = f[3..3 + p].iter().map(|s| s.to_string()).collect();
        let k = 3 + p;
        out.push(build_record(
            schema,
            parse(f[0], "participant_id")?,
            parse(f[1], "decision_index")?,
            parse(f[2], "days_in_study")?,
            &levels,
            parse_bit(f[k], "s1")?,
            parse_bit(f[k + 1], "s2")?,
            parse(f[k + 2], "policy_prob")?,
            parse_bit(f[k + 3], "action")?,
            parse_bit(f[k + 4], "reward")?,
            (opt(f[k + 5])?, opt(f[k + 6])?),
        )?);
    }
    Ok(out)
}

fn to_json(schema: &CovariateSchema, r: &DecisionRecord) -> Value {
    let clock = r.clock();
    let mut m = Map::new();
    m.insert("participant_id".into(), r.participant_id.into());
    m.insert("decision_index".into(), r.decision_index.into());
    m.insert("days_in_study".into(), r.days_in_study.into());
    for (v, name) in schema.variables().iter().zip(schema.level_names(&r.context)) {
        m.insert(v.name.clone(), name.into());
    }
    m.insert("s1".into(), (clock.s1() as u8).into());
    m.insert("s2".into(), (clock.s2() as u8).into());
    m.insert("policy_prob".into(), r.policy_prob.into());
    m.insert("action".into(), r.action.bit().into());
    m.insert("reward".into(), r.reward.bit().into());
    m.insert(
        "true_prob_send".into(),
        r.truth.map(|t| Value::from(t.send)).unwrap_or(Value::Null),
    );
    m.insert(
        "true_prob_nosend".into(),
        r.truth.map(|t| Value::from(t.nosend)).unwrap_or(Value::Null),
    );
    Value::Object(m)
}

pub fn write_jsonl<W: Write>(schema: &CovariateSchema, records: &[DecisionRecord], mut w: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, &to_json(schema, r))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(schema: &CovariateSchema, r: R) -> Result<Vec<DecisionRecord>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Map<String, Value> = serde_json::from_str(&line)?;
        let get = |k: &str| v.get(k).ok_or_else(|| Error::Parse(format!("missing field {k:?}")));
        let int = |k: &str| -> Result<u64> {
            get(k)?
                .as_u64()
                .ok_or_else(|| Error::Parse(format!("field {k:?} is not an integer")))
        };
        let float_opt = |k: &str| -> Result<Option<f64>> {
            match v.get(k) {
                None | Some(Value::Null) => Ok(None),
                Some(x) => x
                    .as_f64()
                    .map(Some)
                    .ok_or_else(|| Error::Parse(format!("field {k:?} is not a number"))),
            }
        };
        let levels = schema
            .variables()
            .iter()
            .map(|var| {
                get(&var.name)?
                    .as_str()
                    .map(str::to_string)
                    .ok_or_else(|| Error::Parse(format!("field {:?} is not a string", var.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        let small = |k: &str| -> Result<u8> {
            u8::try_from(int(k)?).map_err(|_| Error::Parse(format!("field {k:?} out of range")))
        };
        out.push(build_record(
            schema,
            u32::try_from(int("participant_id")?).map_err(|_| Error::Parse("participant_id out of range".into()))?,
            int("decision_index")?,
            u32::try_from(int("days_in_study")?).map_err(|_| Error::Parse("days_in_study out of range".into()))?,
            &levels,
            small("s1")?,
            small("s2")?,
            float_opt("policy_prob")?.ok_or_else(|| Error::Parse("missing policy_prob".into()))?,
            small("action")?,
            small("reward")?,
            (float_opt("true_prob_send")?, float_opt("true_prob_nosend")?),
        )?);
    }
    Ok(out)
}
