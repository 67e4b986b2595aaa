//! The five subcommands. Each writes its files atomically and appends one
//! run to the output directory's manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use jitai_core::domain::{Action, DecisionRecord, TrueProbs};
use jitai_core::eval::{
    aggregate_replicates, calibration_report, cumulative_regret, expected_schedule, failure_report, RegretMode,
};
use jitai_core::learner::{fit_posterior, PosteriorDraws};
use jitai_core::log;
use jitai_core::policy::build_policy_table;
use jitai_core::sim::{true_success_prob, AlgorithmKind, GenerativeModel};
use jitai_core::spec::ModelSpec;

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::experiment::{coefficient_name, log_name, parse_log_name, replicate_model, run_replicate};
use crate::manifest::{digest_file, versions, ManifestFile, OutDir, RunManifest};

pub const LOGS: &str = "logs";
pub const COEFFICIENTS: &str = "coefficients";
pub const FAILURES: &str = "failures";
pub const REGRET: &str = "regret";
pub const POSTERIOR: &str = "posterior.csv";
pub const DIAGNOSTICS: &str = "diagnostics.json";
pub const SPEC: &str = "spec.json";
pub const POLICY: &str = "policy_table.csv";
pub const CALIBRATION: &str = "calibration.csv";

fn run_record(command: &str, cfg: &ExperimentConfig, inputs: Vec<crate::manifest::FileDigest>) -> RunManifest {
    RunManifest {
        command: command.into(),
        config: cfg.to_json(),
        seed: cfg.seed,
        versions: versions(),
        inputs,
        outputs: vec![],
        warnings: vec![],
        wall_seconds: 0.0,
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> jitai_core::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn read_log(path: &Path, cfg: &ExperimentConfig) -> Result<Vec<DecisionRecord>, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    log::read_csv(&cfg.schema(), file).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

/// Runs every (algorithm, replicate) trial and writes logs, true coefficient
/// files and update-failure reports.
pub fn simulate(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    let start = Instant::now();
    let schema = cfg.schema();
    let mut out = OutDir::create(&cfg.out)?;
    let max_rep = cfg.algorithms.iter().map(|&a| cfg.replicates_for(a)).max().unwrap_or(0);
    let models: Vec<GenerativeModel> = (0..max_rep).map(|r| replicate_model(cfg, &schema, r)).collect();
    for (r, m) in models.iter().enumerate() {
        let bytes = csv_bytes(|b| m.write_csv(b))?;
        out.write(&format!("{COEFFICIENTS}/{}", coefficient_name(r as u32)), &bytes)?;
    }

    let jobs: Vec<(AlgorithmKind, u32)> = cfg
        .algorithms
        .iter()
        .flat_map(|&a| (0..cfg.replicates_for(a)).map(move |r| (a, r)))
        .collect();
    let outcomes = cfg.execution.map(jobs.len(), |i| {
        let (algo, r) = jobs[i];
        run_replicate(cfg, &schema, algo, r, &models[r as usize])
    });

    let schedule = expected_schedule(&cfg.trial);
    let mut run = run_record("simulate", cfg, vec![]);
    for (&(algo, r), outcome) in jobs.iter().zip(outcomes) {
        let outcome = outcome?;
        let name = log_name(algo, r);
        let bytes = csv_bytes(|b| log::write_csv(&schema, &outcome.records, b))?;
        out.write(&format!("{LOGS}/{name}"), &bytes)?;
        let report = failure_report(&schedule, &outcome.updates);
        let bytes = csv_bytes(|b| report.write_csv(b))?;
        out.write(&format!("{FAILURES}/{name}"), &bytes)?;
        if let Some(detail) = outcome.aborted {
            run.warnings.push(format!("{name}: trial aborted: {detail}"));
        }
    }
    run.wall_seconds = start.elapsed().as_secs_f64();
    let broken = run.warnings.clone();
    let path = out.finish(run)?;
    if !broken.is_empty() {
        return Err(CliError::Breakage(broken.join("; ")));
    }
    Ok(path)
}

/// Fills missing true probabilities from the replicate's coefficient file.
fn attach_truth(records: &mut [DecisionRecord], model: &GenerativeModel) -> Result<(), CliError> {
    for r in records.iter_mut().filter(|r| r.truth.is_none()) {
        let clock = r.clock();
        r.truth = Some(TrueProbs {
            send: true_success_prob(model, &r.context, Action::Send, clock)?,
            nosend: true_success_prob(model, &r.context, Action::NoSend, clock)?,
        });
    }
    Ok(())
}

/// Aggregates cumulative regret per algorithm from a `simulate` directory.
pub fn regret(log_dir: &Path, out_dir: &Path, mode: Option<RegretMode>) -> Result<PathBuf, CliError> {
    let start = Instant::now();
    let manifest = ManifestFile::read(log_dir)?
        .ok_or_else(|| CliError::validation(format!("{}: no manifest; run simulate first", log_dir.display())))?;
    let sim = manifest
        .last("simulate")
        .ok_or_else(|| CliError::validation(format!("{}: manifest has no simulate run", log_dir.display())))?;
    let cfg: ExperimentConfig = serde_json::from_value(sim.config.clone())
        .map_err(|e| CliError::validation(format!("simulate config in manifest: {e}")))?;
    let schema = cfg.schema();
    let mode = mode.unwrap_or(cfg.regret_mode);

    let logs_path = log_dir.join(LOGS);
    let mut logs: Vec<(AlgorithmKind, u32, PathBuf)> = fs::read_dir(&logs_path)
        .map_err(|e| CliError::io(&logs_path, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().to_string();
            parse_log_name(&name).map(|(a, r)| (a, r, e.path()))
        })
        .collect();
    logs.sort();
    if logs.is_empty() {
        return Err(CliError::validation(format!(
            "{}: no decision logs",
            logs_path.display()
        )));
    }

    let mut run = run_record("regret", &cfg, vec![]);
    let mut traces: BTreeMap<AlgorithmKind, Vec<_>> = BTreeMap::new();
    for (algo, r, path) in &logs {
        let coef_rel = format!("{COEFFICIENTS}/{}", coefficient_name(*r));
        let coef_path = log_dir.join(&coef_rel);
        let file = fs::File::open(&coef_path)
            .map_err(|e| CliError::validation(format!("{}: missing coefficient file ({e})", coef_path.display())))?;
        let model = GenerativeModel::read_csv(cfg.setting, &schema, file)?;
        let mut records = read_log(path, &cfg)?;
        attach_truth(&mut records, &model)?;
        traces
            .entry(*algo)
            .or_default()
            .push(cumulative_regret(&records, mode)?);
        let rel = format!("{LOGS}/{}", log_name(*algo, *r));
        run.inputs.push(digest_file(path, rel)?);
        if !run.inputs.iter().any(|d| d.path == coef_rel) {
            run.inputs.push(digest_file(&coef_path, coef_rel)?);
        }
    }

    let mut out = OutDir::create(out_dir)?;
    for (algo, t) in &traces {
        let curve = aggregate_replicates(t)?;
        if curve.truncated {
            run.warnings.push(format!(
                "{}: replicate lengths differ; curves truncated to {} decisions",
                algo.name(),
                curve.mean.len()
            ));
        }
        let bytes = csv_bytes(|b| curve.write_csv(b))?;
        out.write(&format!("{REGRET}/{}.csv", algo.name()), &bytes)?;
    }
    run.wall_seconds = start.elapsed().as_secs_f64();
    out.finish(run)
}

/// Fits one algorithm's model to a decision log.
pub fn fit(
    log_path: &Path,
    cfg: &ExperimentConfig,
    algo: AlgorithmKind,
    participant: Option<u32>,
) -> Result<PathBuf, CliError> {
    let start = Instant::now();
    let schema = cfg.schema();
    let records = read_log(log_path, cfg)?;
    let own: Vec<DecisionRecord> = match participant {
        Some(p) => records.iter().filter(|r| r.participant_id == p).cloned().collect(),
        None => vec![],
    };
    let spec = algo.model_spec(&records, &own, &schema, &cfg.spec)?;
    let mut sampler = cfg.sampler.clone();
    sampler.seed = cfg.seed;
    let fit = fit_posterior(&records, &spec, &cfg.prior, &sampler)?;

    let mut run = run_record("fit", cfg, vec![digest_file(log_path, log_path.display().to_string())?]);
    let mut out = OutDir::create(&cfg.out)?;
    out.write(SPEC, spec.to_json().as_bytes())?;
    match &fit.draws {
        Some(d) => {
            let bytes = csv_bytes(|b| d.write_csv(b))?;
            out.write(POSTERIOR, &bytes)?;
            out.write(DIAGNOSTICS, d.diagnostics_json(&fit.health).as_bytes())?;
        }
        None => {
            let doc = serde_json::json!({ "health": fit.health });
            out.write(
                DIAGNOSTICS,
                serde_json::to_string_pretty(&doc).expect("json").as_bytes(),
            )?;
        }
    }
    let ok = fit.health.is_ok();
    if !ok {
        run.warnings.push(format!(
            "fit health {:?}: {}",
            fit.health.status,
            fit.health.offending.join(", ")
        ));
    }
    run.wall_seconds = start.elapsed().as_secs_f64();
    let warnings = run.warnings.clone();
    let path = out.finish(run)?;
    if !ok {
        return Err(CliError::Breakage(warnings.join("; ")));
    }
    Ok(path)
}

/// Builds the send-probability table from a `fit` directory.
pub fn policy_table(fit_dir: &Path, cfg: &ExperimentConfig, participant: Option<u32>) -> Result<PathBuf, CliError> {
    let start = Instant::now();
    let schema = cfg.schema();
    let read = |name: &str| {
        let p = fit_dir.join(name);
        fs::read(&p).map_err(|e| CliError::io(&p, e))
    };
    let spec_bytes = read(SPEC)?;
    let spec = ModelSpec::from_json(&String::from_utf8_lossy(&spec_bytes))?;
    let (draws, health) = PosteriorDraws::read(&read(POSTERIOR)?[..], &read(DIAGNOSTICS)?[..])?;
    if !health.is_ok() {
        return Err(CliError::Breakage(format!(
            "posterior in {} is {:?}: {}",
            fit_dir.display(),
            health.status,
            health.offending.join(", ")
        )));
    }
    let table = build_policy_table(
        &draws,
        &spec,
        &schema,
        &spec.encoding().observed_levels(),
        participant,
        cfg.clip,
        &cfg.nearest,
    )?;
    let inputs = [SPEC, POSTERIOR, DIAGNOSTICS]
        .iter()
        .map(|n| digest_file(&fit_dir.join(n), n.to_string()))
        .collect::<Result<_, _>>()?;
    let mut run = run_record("policy-table", cfg, inputs);
    let mut out = OutDir::create(&cfg.out)?;
    let bytes = csv_bytes(|b| table.write_csv(b))?;
    out.write(POLICY, &bytes)?;
    run.wall_seconds = start.elapsed().as_secs_f64();
    out.finish(run)
}

/// Calibration of logged send probabilities against realized actions.
pub fn calibrate(log_path: &Path, cfg: &ExperimentConfig, bin_width: f64) -> Result<PathBuf, CliError> {
    let start = Instant::now();
    let records = read_log(log_path, cfg)?;
    let report = calibration_report(&records, bin_width)?;
    let mut run = run_record(
        "calibrate",
        cfg,
        vec![digest_file(log_path, log_path.display().to_string())?],
    );
    let mut out = OutDir::create(&cfg.out)?;
    let bytes = csv_bytes(|b| report.write_csv(b))?;
    out.write(CALIBRATION, &bytes)?;
    let uncovered = report.occupied().filter(|b| b.covers_midpoint == Some(false)).count();
    if uncovered > 0 {
        run.warnings
            .push(format!("{uncovered} occupied bins do not cover their midpoint"));
    }
    run.wall_seconds = start.elapsed().as_secs_f64();
    out.finish(run)
}
