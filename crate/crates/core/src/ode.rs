//! Low- and high-resolution ODE models of the momentum family, integrated
//! with fixed-step classical Runge–Kutta.
//!
//! ```text
//! low:  Ẍ + ((r+1)/t) Ẋ + ∇f(X) = 0
//! high: Ẍ + (3γ/t) Ẋ + (1 + 3γ√s/(2t)) ∇f(X + √s Ẋ) = 0
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{record_ode, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::lyapunov::{continuous_lyapunov, LyapunovSample};
use crate::optimizers::{MomentumParameter, DIVERGENCE_RADIUS};
use crate::problems::{CompositeProblem, Point, SmoothObjective};

pub const DEFAULT_DT: f64 = 1e-3;
const MIN_START: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct OdeState {
    pub t: f64,
    pub x: Point,
    /// `Ẋ`
    pub v: Point,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Model {
    #[serde(rename = "low")]
    LowRes,
    #[serde(rename = "high")]
    HighRes,
}

impl Model {
    pub fn as_str(&self) -> &'static str {
        match self {
            Model::LowRes => "low",
            Model::HighRes => "high",
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" | "ode-low" => Ok(Model::LowRes),
            "high" | "ode-high" => Ok(Model::HighRes),
            other => Err(Error::InvalidParameter(format!("unknown ODE model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OdeConfig {
    pub model: Model,
    pub momentum: MomentumParameter,
    /// Step size entering the high-resolution terms.
    pub s: f64,
    pub dt: f64,
    pub t_start: f64,
    pub t_end: f64,
    pub x0: Point,
    /// Keep every `n`-th integration step (plus the first and last).
    pub sample_every: u64,
}

impl OdeConfig {
    /// Starts at `t = 0` when the damping is absent (`r = −1`) and at
    /// `max(dt, 10⁻³)` otherwise, with `V(t_start) = 0`.
    pub fn new(model: Model, momentum: MomentumParameter, s: f64, dt: f64, t_end: f64, x0: Point) -> Self {
        let t_start = if momentum.is_critical() { 0.0 } else { dt.max(MIN_START) };
        Self {
            model,
            momentum,
            s,
            dt,
            t_start,
            t_end,
            x0,
            sample_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.s >= 0.0 && self.s.is_finite()) {
            return Err(Error::InvalidParameter(format!("s must be >= 0, got {}", self.s)));
        }
        if !self.momentum.is_critical() && !(self.t_start > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "t_start must be positive when r > -1, got {}",
                self.t_start
            )));
        }
        if !(self.t_start >= 0.0 && self.t_end >= self.t_start && self.t_end.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need 0 <= t_start <= t_end, got [{}, {}]",
                self.t_start, self.t_end
            )));
        }
        if self.sample_every == 0 {
            return Err(Error::InvalidParameter("sample_every must be positive".into()));
        }
        Ok(())
    }

    /// Number of RK4 steps; the last one may overshoot `t_end` by less than `dt`.
    pub fn steps(&self) -> u64 {
        (((self.t_end - self.t_start) / self.dt) - 1e-9).ceil().max(0.0) as u64
    }
}

fn singular_time(t: f64, what: &str) -> Error {
    Error::Domain(format!("{what} needs t > 0 when the damping is active, got t = {t}"))
}

/// `Ẍ = −(3γ/t) V − (1 + 3γ√s/(2t)) ∇f(X + √s V)`.
pub fn high_res_rhs(state: &OdeState, gamma: f64, s: f64, p: &dyn SmoothObjective) -> Result<Point> {
    let sqrt_s = s.sqrt();
    let grad = p.gradient(&(&state.x + &state.v * sqrt_s));
    if gamma == 0.0 {
        return Ok(-grad);
    }
    if !(state.t > 0.0) {
        return Err(singular_time(state.t, "high-resolution ODE"));
    }
    let t = state.t;
    Ok(&state.v * (-3.0 * gamma / t) - grad * (1.0 + 3.0 * gamma * sqrt_s / (2.0 * t)))
}

/// `Ẍ = −((r+1)/t) V − ∇f(X)`.
pub fn low_res_rhs(state: &OdeState, r: f64, p: &dyn SmoothObjective) -> Result<Point> {
    let grad = p.gradient(&state.x);
    if r == -1.0 {
        return Ok(-grad);
    }
    if !(state.t > 0.0) {
        return Err(singular_time(state.t, "low-resolution ODE"));
    }
    Ok(&state.v * (-(r + 1.0) / state.t) - grad)
}

fn acceleration(state: &OdeState, cfg: &OdeConfig, p: &dyn SmoothObjective) -> Result<Point> {
    match cfg.model {
        Model::LowRes => low_res_rhs(state, cfg.momentum.r(), p),
        Model::HighRes => high_res_rhs(state, cfg.momentum.gamma(), cfg.s, p),
    }
}

/// `½‖V‖² + f(X)`, conserved by the undamped low-resolution flow.
pub fn newton_energy(state: &OdeState, p: &dyn SmoothObjective) -> f64 {
    0.5 * state.v.norm_squared() + p.value(&state.x)
}

fn rk4_step(state: &OdeState, t_next: f64, cfg: &OdeConfig, p: &dyn SmoothObjective) -> Result<OdeState> {
    let h = cfg.dt;
    let at = |t: f64, x: Point, v: Point| OdeState { t, x, v };
    let k1x = state.v.clone();
    let k1v = acceleration(state, cfg, p)?;
    let mid = state.t + h / 2.0;
    let s2 = at(mid, &state.x + &k1x * (h / 2.0), &state.v + &k1v * (h / 2.0));
    let k2x = s2.v.clone();
    let k2v = acceleration(&s2, cfg, p)?;
    let s3 = at(mid, &state.x + &k2x * (h / 2.0), &state.v + &k2v * (h / 2.0));
    let k3x = s3.v.clone();
    let k3v = acceleration(&s3, cfg, p)?;
    let s4 = at(state.t + h, &state.x + &k3x * h, &state.v + &k3v * h);
    let k4x = s4.v.clone();
    let k4v = acceleration(&s4, cfg, p)?;
    let x = &state.x + (k1x + &k2x * 2.0 + &k3x * 2.0 + k4x) * (h / 6.0);
    let v = &state.v + (k1v + &k2v * 2.0 + &k3v * 2.0 + k4v) * (h / 6.0);
    Ok(at(t_next, x, v))
}

fn check_state(step: u64, state: &OdeState) -> Result<()> {
    let finite = state.x.iter().chain(state.v.iter()).all(|c| c.is_finite());
    if !finite || state.x.norm() > DIVERGENCE_RADIUS {
        return Err(Error::Divergence {
            iteration: step,
            detail: format!("ODE state left the finite region at t = {}", state.t),
        });
    }
    Ok(())
}

/// Integrates from `(t_start, x0, 0)` and hands every state, including the
/// initial one, to `visit` together with its step index. Times are computed
/// as `t_start + i·dt` rather than accumulated.
pub fn integrate_with(
    cfg: &OdeConfig,
    p: &dyn SmoothObjective,
    mut visit: impl FnMut(u64, &OdeState) -> Result<()>,
) -> Result<OdeState> {
    cfg.validate()?;
    if cfg.x0.len() != p.dimension() {
        return Err(Error::InvalidParameter(format!(
            "initial point has dimension {} but the problem has dimension {}",
            cfg.x0.len(),
            p.dimension()
        )));
    }
    let mut state = OdeState {
        t: cfg.t_start,
        x: cfg.x0.clone(),
        v: Point::zeros(cfg.x0.len()),
    };
    check_state(0, &state)?;
    visit(0, &state)?;
    let n = cfg.steps();
    for i in 1..=n {
        state = rk4_step(&state, cfg.t_start + i as f64 * cfg.dt, cfg, p)?;
        check_state(i, &state)?;
        visit(i, &state)?;
    }
    Ok(state)
}

fn keep(i: u64, n: u64, every: u64) -> bool {
    i == 0 || i == n || i % every == 0
}

/// States at the configured sampling, always including the endpoints.
pub fn integrate(cfg: &OdeConfig, p: &dyn SmoothObjective) -> Result<Vec<OdeState>> {
    let n = cfg.steps();
    let mut out = Vec::new();
    integrate_with(cfg, p, |i, st| {
        if keep(i, n, cfg.sample_every) {
            out.push(st.clone());
        }
        Ok(())
    })?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct OdeOutput {
    pub records: Vec<TrajectoryRecord>,
    /// Continuous Lyapunov values at the sampled times (high-resolution
    /// model with `γ ≤ 1` on problems with a known optimum).
    pub lyapunov: Vec<LyapunovSample>,
    pub final_state: OdeState,
}

/// Integrates and records diagnostics at the sampled times. The running
/// minimum of `‖∇f(X)‖²` is taken over every integration step.
pub fn run_ode(cfg: &OdeConfig, problem: &CompositeProblem) -> Result<OdeOutput> {
    if !problem.is_smooth() {
        return Err(Error::InvalidParameter("ODE models need a smooth problem".into()));
    }
    let gamma = cfg.momentum.gamma();
    let s = cfg.s;
    let with_lyapunov = cfg.model == Model::HighRes && gamma <= 1.0 && problem.minimizer().is_some();
    let n = cfg.steps();
    let mut records = Vec::new();
    let mut lyapunov = Vec::new();
    let mut min_grad_sq = f64::INFINITY;
    let final_state = integrate_with(cfg, problem.smooth(), |i, st| {
        let sampled = keep(i, n, cfg.sample_every);
        let lyap = if sampled && with_lyapunov && (gamma == 0.0 || st.t > 3.0 * gamma * s.sqrt()) {
            let value = continuous_lyapunov(st, gamma, s, problem)?;
            lyapunov.push(LyapunovSample {
                index: st.t,
                value,
                decrement: Some(crate::lyapunov::continuous_decrease_rate(st, gamma, s, problem)),
            });
            Some(value)
        } else {
            None
        };
        let rec = record_ode(st, problem, gamma, min_grad_sq, lyap)?;
        min_grad_sq = rec.min_grad_sq;
        if sampled {
            records.push(rec);
        }
        Ok(())
    })?;
    Ok(OdeOutput {
        records,
        lyapunov,
        final_state,
    })
}
