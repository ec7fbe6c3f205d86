use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use underdamp::diagnostics::{
    certify_gradient_trend, certify_objective_rate, compare_ode_nag, interpolate_gap, read_csv_file, write_csv_file,
    RateBound, RecordIndex, RunLog, TrajectoryRecord,
};
use underdamp::lyapunov::{
    audit, continuous_samples, continuous_threshold, discrete_threshold, AuditKind, LyapunovAudit, LyapunovSample,
    LyapunovTracker,
};
use underdamp::ode::{integrate, run_ode, Model, OdeConfig, OdeOutput};
use underdamp::optimizers::{run, Iterates, Method, MomentumParameter, RunConfig, RunOutput};
use underdamp::problems::{load, NamedProblem};

use crate::config::{Engine, ExperimentConfig};

/// How a command that ran to completion turned out.
pub enum Status {
    Ok,
    CertificateFailed(String),
}

pub type CmdResult = Result<Status, String>;

fn err(e: impl ToString) -> String {
    e.to_string()
}

fn ensure_dir(dir: &Path) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), String> {
    let text = serde_json::to_string_pretty(value).map_err(err)?;
    fs::write(path, text + "\n").map_err(|e| format!("{}: {e}", path.display()))
}

fn check_step(cfg: &ExperimentConfig, named: &NamedProblem) -> Result<(), String> {
    let bound = 1.0 / named.problem.lipschitz();
    if !cfg.allow_large_step && cfg.s > bound {
        return Err(format!(
            "step size s = {} exceeds 1/L = {bound} (pass --allow-large-step to override)",
            cfg.s
        ));
    }
    Ok(())
}

fn discrete_run(cfg: &ExperimentConfig, named: &NamedProblem, method: Method) -> Result<RunOutput, String> {
    let mut rc = RunConfig::new(cfg.momentum()?, cfg.s, cfg.iterations);
    rc.record_every = cfg.cadence();
    rc.allow_large_step = cfg.allow_large_step;
    rc.problem_id = named.id.clone();
    run(&rc, &named.problem, method, named.initial_point.clone()).map_err(err)
}

fn ode_config(cfg: &ExperimentConfig, named: &NamedProblem, model: Model, t_end: f64) -> Result<OdeConfig, String> {
    let mut oc = OdeConfig::new(model, cfg.momentum()?, cfg.s, cfg.dt, t_end, named.initial_point.clone());
    oc.sample_every = cfg.record_every;
    Ok(oc)
}

fn ode_run(cfg: &ExperimentConfig, named: &NamedProblem, model: Model) -> Result<OdeOutput, String> {
    run_ode(&ode_config(cfg, named, model, cfg.t_end)?, &named.problem).map_err(err)
}

fn refused(reason: impl ToString) -> Value {
    json!({ "refused": reason.to_string() })
}

fn with_passed(value: &impl Serialize, passed: bool) -> Value {
    let mut v = serde_json::to_value(value).expect("certificate serializes");
    v["passed"] = Value::Bool(passed);
    v
}

fn audit_value(result: underdamp::Result<LyapunovAudit>) -> Value {
    match result {
        Ok(a) => with_passed(&a, a.passed()),
        Err(e) => refused(e),
    }
}

/// Lyapunov audit, objective bound and gradient trend for a discrete run.
fn discrete_certificates(
    out: &RunOutput,
    named: &NamedProblem,
    method: Method,
    momentum: &MomentumParameter,
    s: f64,
) -> Value {
    let gamma = momentum.gamma();
    if gamma > 1.0 {
        let reason = "no Lyapunov certificate for r > 2";
        return json!({ "lyapunov": refused(reason), "objective_rate": refused(reason), "gradient_trend": refused(reason) });
    }
    let kind = AuditKind::for_run(method, &named.problem, momentum);
    let lyapunov = audit(&out.lyapunov, kind, gamma, s);
    let mut certs = serde_json::Map::new();
    let (objective, trend) = match (&lyapunov, gamma > 0.0) {
        (Ok(a), true) => {
            let k0 = a.threshold as u64;
            let bound = match kind {
                AuditKind::Fista => RateBound::Fista,
                _ => RateBound::Nag,
            };
            let objective = match out.lyapunov.iter().find(|x| x.index == k0 as f64) {
                Some(e) => {
                    let c = certify_objective_rate(&out.records, k0, e.value, gamma, s, bound);
                    with_passed(&c, c.passed)
                }
                None => refused(format!("no Lyapunov value at K0 = {k0}")),
            };
            let trend = match certify_gradient_trend(&out.records, k0) {
                Ok(t) => with_passed(&t, t.passed),
                Err(e) => refused(e),
            };
            (objective, trend)
        }
        (Ok(_), false) => (
            refused("rate certificates need gamma > 0"),
            refused("rate certificates need gamma > 0"),
        ),
        (Err(e), _) => (refused(e), refused(e)),
    };
    certs.insert("lyapunov".into(), audit_value(lyapunov));
    certs.insert("objective_rate".into(), objective);
    certs.insert("gradient_trend".into(), trend);
    Value::Object(certs)
}

fn ode_certificates(out: &OdeOutput, model: Model, gamma: f64, s: f64) -> Value {
    match model {
        Model::LowRes => json!({ "lyapunov": refused("no Lyapunov certificate for the low-resolution model") }),
        Model::HighRes if !(gamma > 0.0 && gamma < 1.0) => {
            json!({ "lyapunov": refused("continuous Lyapunov certificate needs -1 < r < 2") })
        }
        Model::HighRes if out.lyapunov.is_empty() => {
            json!({ "lyapunov": refused("Lyapunov function undefined for this run") })
        }
        Model::HighRes => json!({ "lyapunov": audit_value(audit(&out.lyapunov, AuditKind::Continuous, gamma, s)) }),
    }
}

fn failed_certificates(certs: &Value) -> Vec<String> {
    certs
        .as_object()
        .map(|m| {
            m.iter()
                .filter(|(_, v)| v.get("passed") == Some(&Value::Bool(false)))
                .map(|(k, _)| k.clone())
                .collect()
        })
        .unwrap_or_default()
}

fn discrete_threshold_value(gamma: f64, iterations: u64) -> Value {
    if gamma == 0.0 {
        json!(0)
    } else if gamma <= 1.0 {
        discrete_threshold(gamma, iterations.max(10)).map_or(Value::Null, |t| json!(t.k0))
    } else {
        Value::Null
    }
}

fn continuous_threshold_value(model: Model, gamma: f64, s: f64) -> Value {
    match model {
        Model::HighRes if gamma == 0.0 => json!(0.0),
        Model::HighRes => continuous_threshold(gamma, s).map_or(Value::Null, |t| json!(t.t0)),
        Model::LowRes => Value::Null,
    }
}

fn file_stem(cfg: &ExperimentConfig) -> String {
    format!("{}_r{}", cfg.method.name(), cfg.r)
}

pub fn cmd_run(cfg: &ExperimentConfig) -> CmdResult {
    let named = load(&cfg.problem).map_err(err)?;
    check_step(cfg, &named)?;
    let momentum = cfg.momentum()?;
    let gamma = momentum.gamma();
    let (records, threshold, certificates) = match cfg.method.engine() {
        Engine::Discrete(method) => {
            let out = discrete_run(cfg, &named, method)?;
            let certs = if cfg.audit {
                discrete_certificates(&out, &named, method, &momentum, cfg.s)
            } else {
                json!({})
            };
            (out.records, discrete_threshold_value(gamma, cfg.iterations), certs)
        }
        Engine::Ode(model) => {
            let out = ode_run(cfg, &named, model)?;
            let certs = if cfg.audit {
                ode_certificates(&out, model, gamma, cfg.s)
            } else {
                json!({})
            };
            (out.records, continuous_threshold_value(model, gamma, cfg.s), certs)
        }
    };
    ensure_dir(&cfg.output)?;
    let stem = file_stem(cfg);
    let csv_path = cfg.output.join(format!("{stem}.csv"));
    write_csv_file(&csv_path, &records).map_err(err)?;
    let last = records.last().expect("runs record their final state");
    let failed = failed_certificates(&certificates);
    let summary = json!({
        "problem": cfg.problem,
        "method": cfg.method.name(),
        "r": cfg.r,
        "gamma": gamma,
        "s": cfg.s,
        "records": records.len(),
        "csv": csv_path,
        "final_gap": last.gap,
        "final_min_grad_sq": last.min_grad_sq,
        "K0_or_t0": threshold,
        "certificates": certificates,
        "allow_large_step": cfg.allow_large_step,
    });
    write_json(&cfg.output.join(format!("{stem}.summary.json")), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary).map_err(err)?);
    Ok(if failed.is_empty() {
        Status::Ok
    } else {
        Status::CertificateFailed(failed.join(", "))
    })
}

fn dedupe(values: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut kept: Vec<f64> = Vec::new();
    let mut dropped = Vec::new();
    for &v in values {
        if kept.contains(&v) {
            dropped.push(v);
        } else {
            kept.push(v);
        }
    }
    (kept, dropped)
}

#[derive(Serialize)]
struct SweepEntry {
    csv: PathBuf,
    gap_at_k: BTreeMap<u64, f64>,
    min_grad_sq_at_k: BTreeMap<u64, f64>,
}

pub fn cmd_sweep(cfg: &ExperimentConfig, r_values: &[f64], checkpoints: &[u64]) -> CmdResult {
    let r_values = if r_values.is_empty() { &cfg.r_values[..] } else { r_values };
    if r_values.is_empty() {
        return Err("sweep needs a non-empty r list (--r-values r1,r2,...)".into());
    }
    let (r_values, dropped) = dedupe(r_values);
    if !dropped.is_empty() {
        let list: Vec<String> = dropped.iter().map(f64::to_string).collect();
        eprintln!("warning: ignoring duplicate r values {}", list.join(", "));
    }
    let Engine::Discrete(method) = cfg.method.engine() else {
        return Err("sweep runs discrete methods (nag, phase, fista)".into());
    };
    let named = load(&cfg.problem).map_err(err)?;
    check_step(cfg, &named)?;
    for &r in &r_values {
        MomentumParameter::new(r).map_err(err)?;
    }
    ensure_dir(&cfg.output)?;
    let results: Vec<Result<(f64, SweepEntry), String>> = r_values
        .par_iter()
        .map(|&r| {
            let cell = ExperimentConfig { r, ..cfg.clone() };
            let out = discrete_run(&cell, &named, method)?;
            let csv = cfg.output.join(format!("{}.csv", file_stem(&cell)));
            write_csv_file(&csv, &out.records).map_err(err)?;
            let at = |k: u64| out.records.iter().find(|x| x.index == RecordIndex::Iteration(k));
            let mut entry = SweepEntry {
                csv,
                gap_at_k: BTreeMap::new(),
                min_grad_sq_at_k: BTreeMap::new(),
            };
            for &k in checkpoints {
                if let Some(rec) = at(k) {
                    entry.gap_at_k.insert(k, rec.gap);
                    entry.min_grad_sq_at_k.insert(k, rec.min_grad_sq);
                }
            }
            Ok((r, entry))
        })
        .collect();
    let mut aggregate = BTreeMap::new();
    for res in results {
        let (r, entry) = res?;
        aggregate.insert(r.to_string(), entry);
    }
    let doc = json!({
        "problem": cfg.problem,
        "method": cfg.method.name(),
        "s": cfg.s,
        "iterations": cfg.iterations,
        "checkpoints": checkpoints,
        "runs": aggregate,
    });
    write_json(&cfg.output.join("aggregate.json"), &doc)?;
    println!("{}", serde_json::to_string_pretty(&doc).map_err(err)?);
    Ok(Status::Ok)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum KindArg {
    Continuous,
    Nag,
    Fista,
    Critical,
}

fn same_gaps(a: &[TrajectoryRecord], b: &[TrajectoryRecord]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.index == y.index && x.gap == y.gap)
}

/// Recomputes the trajectory from the parameters and audits it. A recorded
/// CSV, when given, must match the recomputed trajectory.
pub fn cmd_audit(cfg: &ExperimentConfig, kind: Option<KindArg>, csv: Option<&Path>) -> CmdResult {
    let named = load(&cfg.problem).map_err(err)?;
    check_step(cfg, &named)?;
    let momentum = cfg.momentum()?;
    let gamma = momentum.gamma();
    let (samples, records, audit_kind): (Vec<LyapunovSample>, Vec<TrajectoryRecord>, AuditKind) = match cfg.method.engine() {
        Engine::Discrete(method) => {
            let inferred = AuditKind::for_run(method, &named.problem, &momentum);
            let composite = matches!(inferred, AuditKind::Fista | AuditKind::Critical { composite: true });
            let audit_kind = match kind {
                None => inferred,
                Some(KindArg::Nag) => AuditKind::Nag,
                Some(KindArg::Fista) => AuditKind::Fista,
                Some(KindArg::Critical) => AuditKind::Critical { composite },
                Some(KindArg::Continuous) => {
                    return Err("continuous audits need --method ode-high".into());
                }
            };
            let mut rc = RunConfig::new(momentum, cfg.s, cfg.iterations);
            rc.record_every = cfg.cadence();
            rc.allow_large_step = cfg.allow_large_step;
            let mut tracker = LyapunovTracker::new(audit_kind, momentum, cfg.s, &named.problem).map_err(err)?;
            let mut it = Iterates::new(&rc, &named.problem, method, named.initial_point.clone()).map_err(err)?;
            tracker.observe(it.state()).map_err(err)?;
            for _ in 0..cfg.iterations {
                tracker.observe(it.step().map_err(err)?).map_err(err)?;
            }
            let records = match csv {
                Some(_) => discrete_run(cfg, &named, method)?.records,
                None => Vec::new(),
            };
            (tracker.into_samples(), records, audit_kind)
        }
        Engine::Ode(Model::HighRes) => {
            if matches!(kind, Some(k) if k != KindArg::Continuous && !(k == KindArg::Critical && gamma == 0.0)) {
                return Err("ode-high runs support the continuous audit only".into());
            }
            let oc = ode_config(cfg, &named, Model::HighRes, cfg.t_end)?;
            let states = integrate(&oc, named.problem.smooth()).map_err(err)?;
            let samples = continuous_samples(&states, gamma, cfg.s, &named.problem).map_err(err)?;
            let records = match csv {
                Some(_) => ode_run(cfg, &named, Model::HighRes)?.records,
                None => Vec::new(),
            };
            (samples, records, AuditKind::Continuous)
        }
        Engine::Ode(Model::LowRes) => return Err("no Lyapunov audit for the low-resolution model".into()),
    };
    if let Some(path) = csv {
        let recorded = read_csv_file(path).map_err(err)?;
        if !same_gaps(&recorded, &records) {
            return Err(format!(
                "{} does not match the trajectory recomputed from the given parameters",
                path.display()
            ));
        }
    }
    let a = audit(&samples, audit_kind, gamma, cfg.s).map_err(err)?;
    println!("{}", serde_json::to_string_pretty(&a).map_err(err)?);
    Ok(if a.passed() {
        Status::Ok
    } else {
        Status::CertificateFailed(format!(
            "{} audit: max violation {:e} past threshold {}",
            a.kind, a.max_violation, a.threshold
        ))
    })
}

fn gap_at(records: &[TrajectoryRecord], t: f64) -> Result<f64, String> {
    match records.first() {
        Some(first) if t <= first.index.value() => Ok(first.gap),
        _ => interpolate_gap(records, t).map_err(err),
    }
}

pub fn cmd_compare(cfg: &ExperimentConfig, k_max: u64) -> CmdResult {
    if k_max == 0 {
        return Err("k_max must be positive".into());
    }
    let named = load(&cfg.problem).map_err(err)?;
    check_step(cfg, &named)?;
    let nag_cfg = ExperimentConfig {
        iterations: k_max,
        record_every: 1,
        thinned: false,
        ..cfg.clone()
    };
    let nag = discrete_run(&nag_cfg, &named, Method::Nag)?;
    let t_end = k_max as f64 * cfg.s.sqrt();
    let ode = |model| -> Result<OdeOutput, String> {
        let mut oc = ode_config(cfg, &named, model, t_end)?;
        oc.sample_every = 1;
        run_ode(&oc, &named.problem).map_err(err)
    };
    let low = ode(Model::LowRes)?;
    let high = ode(Model::HighRes)?;
    let log = |records: &[TrajectoryRecord]| RunLog {
        problem: named.id.clone(),
        records: records.to_vec(),
    };
    let report = compare_ode_nag(&log(&nag.records), &log(&low.records), &log(&high.records), cfg.s, k_max)
        .map_err(err)?;

    ensure_dir(&cfg.output)?;
    let stem = format!("compare_r{}", cfg.r);
    let csv_path = cfg.output.join(format!("{stem}.csv"));
    let mut w = csv::Writer::from_path(&csv_path).map_err(err)?;
    w.write_record(["k", "t", "gap_nag", "gap_low", "gap_high"]).map_err(err)?;
    for rec in &nag.records {
        let RecordIndex::Iteration(k) = rec.index else { continue };
        let t = k as f64 * cfg.s.sqrt();
        w.write_record([
            k.to_string(),
            format!("{t:.16e}"),
            format!("{:.16e}", rec.gap),
            format!("{:.16e}", gap_at(&low.records, t)?),
            format!("{:.16e}", gap_at(&high.records, t)?),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(err)?;
    let doc = json!({
        "problem": cfg.problem,
        "r": cfg.r,
        "s": cfg.s,
        "dt": cfg.dt,
        "k_max": k_max,
        "deviations": report,
        "csv": csv_path,
    });
    write_json(&cfg.output.join(format!("{stem}.json")), &doc)?;
    println!("{}", serde_json::to_string_pretty(&doc).map_err(err)?);
    Ok(Status::Ok)
}

pub struct RatesRequest<'a> {
    pub csv: &'a Path,
    pub r: f64,
    pub s: f64,
    pub k0: Option<u64>,
    pub bound: RateBound,
}

/// Rate certificates for a recorded trajectory; `E(K₀)` is read from its
/// `lyap` column.
pub fn cmd_rates(req: &RatesRequest) -> CmdResult {
    let momentum = MomentumParameter::new(req.r).map_err(err)?;
    let gamma = momentum.gamma();
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(format!("rate certificates need -1 < r <= 2, got r = {}", req.r));
    }
    let records = read_csv_file(req.csv).map_err(err)?;
    let k_max = records
        .iter()
        .filter_map(|r| match r.index {
            RecordIndex::Iteration(k) => Some(k),
            RecordIndex::Time(_) => None,
        })
        .max()
        .ok_or_else(|| format!("{} holds no iteration records", req.csv.display()))?;
    let k0 = match req.k0 {
        Some(k) => k,
        None => discrete_threshold(gamma, k_max.max(10)).map_err(err)?.k0,
    };
    let e_k0 = records
        .iter()
        .find(|r| r.index == RecordIndex::Iteration(k0))
        .and_then(|r| r.lyap)
        .ok_or_else(|| format!("{} has no Lyapunov value at K0 = {k0}", req.csv.display()))?;
    let objective = certify_objective_rate(&records, k0, e_k0, gamma, req.s, req.bound);
    let trend = certify_gradient_trend(&records, k0);
    let trend_value = match &trend {
        Ok(t) => with_passed(t, t.passed),
        Err(e) => refused(e),
    };
    let doc = json!({
        "k0": k0,
        "e_k0": e_k0,
        "certificates": {
            "objective_rate": with_passed(&objective, objective.passed),
            "gradient_trend": trend_value,
        }
    });
    println!("{}", serde_json::to_string_pretty(&doc).map_err(err)?);
    let failed = failed_certificates(&doc["certificates"]);
    Ok(if failed.is_empty() {
        Status::Ok
    } else {
        Status::CertificateFailed(failed.join(", "))
    })
}
