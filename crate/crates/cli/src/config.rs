//! Experiment configuration: command-line flags layered over an optional
//! JSON file, layered over defaults.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use underdamp::diagnostics::Cadence;
use underdamp::ode::Model;
use underdamp::optimizers::{Method, MomentumParameter};

pub const OUT_DIR_ENV: &str = "UNDERDAMP_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    Nag,
    Phase,
    Fista,
    OdeLow,
    OdeHigh,
}

pub enum Engine {
    Discrete(Method),
    Ode(Model),
}

impl MethodArg {
    pub fn engine(self) -> Engine {
        match self {
            MethodArg::Nag => Engine::Discrete(Method::Nag),
            MethodArg::Phase => Engine::Discrete(Method::Phase),
            MethodArg::Fista => Engine::Discrete(Method::Fista),
            MethodArg::OdeLow => Engine::Ode(Model::LowRes),
            MethodArg::OdeHigh => Engine::Ode(Model::HighRes),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MethodArg::Nag => "nag",
            MethodArg::Phase => "phase",
            MethodArg::Fista => "fista",
            MethodArg::OdeLow => "ode-low",
            MethodArg::OdeHigh => "ode-high",
        }
    }
}

/// Flags shared by the subcommands that execute a run.
#[derive(Args, Debug, Clone, Default)]
pub struct ExperimentArgs {
    /// paper-quadratic, quadratic:<file.json> or lasso:<file.json>
    #[arg(long)]
    pub problem: Option<String>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Momentum parameter r >= -1
    #[arg(long, allow_negative_numbers = true)]
    pub r: Option<f64>,
    /// Step size s
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long)]
    pub iters: Option<u64>,
    /// ODE horizon
    #[arg(long)]
    pub t_end: Option<f64>,
    /// ODE integration step
    #[arg(long)]
    pub dt: Option<f64>,
    /// Output directory (default: $UNDERDAMP_OUT_DIR or the current directory)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run Lyapunov and rate certificates; exit 2 if any fails
    #[arg(long)]
    pub audit: bool,
    /// Permit s > 1/L
    #[arg(long)]
    pub allow_large_step: bool,
    /// Record every n-th iteration (or integration step)
    #[arg(long)]
    pub record_every: Option<u64>,
    /// Record every iteration up to 1000, then every ceil(k/1000)-th
    #[arg(long)]
    pub thinned: bool,
    /// JSON file with experiment fields; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    problem: Option<String>,
    method: Option<MethodArg>,
    r: Option<f64>,
    r_values: Option<Vec<f64>>,
    s: Option<f64>,
    iterations: Option<u64>,
    t_end: Option<f64>,
    dt: Option<f64>,
    output: Option<PathBuf>,
    audit: Option<bool>,
    allow_large_step: Option<bool>,
    record_every: Option<u64>,
    thinned: Option<bool>,
    k_max: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub problem: String,
    pub method: MethodArg,
    pub r: f64,
    pub s: f64,
    pub iterations: u64,
    pub t_end: f64,
    pub dt: f64,
    pub output: PathBuf,
    pub audit: bool,
    pub allow_large_step: bool,
    pub record_every: u64,
    pub thinned: bool,
    #[serde(skip)]
    pub r_values: Vec<f64>,
    #[serde(skip)]
    pub k_max: Option<u64>,
}

impl ExperimentConfig {
    pub fn momentum(&self) -> Result<MomentumParameter, String> {
        MomentumParameter::new(self.r).map_err(|e| e.to_string())
    }

    pub fn cadence(&self) -> Cadence {
        if self.thinned {
            Cadence::Thinned
        } else {
            Cadence::Every(self.record_every)
        }
    }
}

fn read_config(path: &Path) -> Result<ConfigFile, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

/// Flags override the config file, which overrides defaults. The output
/// directory falls back to `$UNDERDAMP_OUT_DIR`, then `.`.
pub fn resolve(args: &ExperimentArgs) -> Result<ExperimentConfig, String> {
    let file = match &args.config {
        Some(path) => read_config(path)?,
        None => ConfigFile::default(),
    };
    let output = args
        .out
        .clone()
        .or(file.output)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let cfg = ExperimentConfig {
        problem: args
            .problem
            .clone()
            .or(file.problem)
            .unwrap_or_else(|| "paper-quadratic".into()),
        method: args.method.or(file.method).unwrap_or(MethodArg::Nag),
        r: args.r.or(file.r).unwrap_or(2.0),
        s: args.s.or(file.s).unwrap_or(0.1),
        iterations: args.iters.or(file.iterations).unwrap_or(1000),
        t_end: args.t_end.or(file.t_end).unwrap_or(100.0),
        dt: args.dt.or(file.dt).unwrap_or(underdamp::ode::DEFAULT_DT),
        output,
        audit: args.audit || file.audit.unwrap_or(false),
        allow_large_step: args.allow_large_step || file.allow_large_step.unwrap_or(false),
        record_every: args.record_every.or(file.record_every).unwrap_or(1),
        thinned: args.thinned || file.thinned.unwrap_or(false),
        r_values: file.r_values.unwrap_or_default(),
        k_max: file.k_max,
    };
    cfg.momentum()?;
    if !(cfg.s > 0.0 && cfg.s.is_finite()) {
        return Err(format!("step size must satisfy s > 0, got {}", cfg.s));
    }
    if cfg.record_every == 0 {
        return Err("record_every must be positive".into());
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_apply_without_flags() {
        let cfg = resolve(&ExperimentArgs {
            out: Some(".".into()),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(cfg.problem, "paper-quadratic");
        assert_eq!(cfg.method, MethodArg::Nag);
        assert_eq!((cfg.r, cfg.s, cfg.iterations), (2.0, 0.1, 1000));
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"r": 0.5, "s": 0.05, "iterations": 7, "method": "fista"}"#).unwrap();
        let cfg = resolve(&ExperimentArgs {
            config: Some(path),
            r: Some(-1.0),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(cfg.r, -1.0);
        assert_eq!(cfg.s, 0.05);
        assert_eq!(cfg.iterations, 7);
        assert_eq!(cfg.method, MethodArg::Fista);
    }

    #[test]
    fn unknown_config_field_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        fs::write(&path, r#"{"momentum": 3}"#).unwrap();
        let err = resolve(&ExperimentArgs {
            config: Some(path),
            ..Default::default()
        })
        .unwrap_err();
        assert!(err.contains("momentum"));
    }

    #[test]
    fn invalid_momentum_names_precondition() {
        let err = resolve(&ExperimentArgs {
            r: Some(-2.0),
            ..Default::default()
        })
        .unwrap_err();
        assert!(err.contains("r >= -1"));
    }
}
