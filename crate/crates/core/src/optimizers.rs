//! Iteration engines: the two-line NAG scheme, its phase-space form, and
//! FISTA, all driven by the momentum parameter `r ≥ −1` (`γ = (r+1)/3`).
//!
//! Indexing follows the displayed schemes: `y₀ = x₀`, step `k` forms
//! `y_k = x_k + w_k (x_k − x_{k−1})` with `w_k = (k−1)/(k+r)` and produces
//! `x_{k+1}` from `y_k`. A [`RunState`] at counter `k` holds
//! `(x_k, x_{k−1}, y_{k−1}, v_k)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{Cadence, Recorder, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::lyapunov::LyapunovSample;
use crate::problems::{CompositeProblem, Point, SmoothObjective};

/// Iterates leaving this ball are treated as divergent.
pub const DIVERGENCE_RADIUS: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentumParameter {
    r: f64,
    gamma: f64,
}

impl MomentumParameter {
    pub fn new(r: f64) -> Result<Self> {
        if !r.is_finite() || r < -1.0 {
            return Err(Error::InvalidParameter(format!(
                "momentum parameter must satisfy r >= -1, got {r}"
            )));
        }
        Ok(Self { r, gamma: (r + 1.0) / 3.0 })
    }

    /// Parameterizes by `γ` directly; `r = 3γ − 1`. `γ` is kept as given so
    /// that audits run at exactly the requested value.
    pub fn from_gamma(gamma: f64) -> Result<Self> {
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(Error::InvalidParameter(format!("gamma must be >= 0, got {gamma}")));
        }
        Ok(Self { r: 3.0 * gamma - 1.0, gamma })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn is_critical(&self) -> bool {
        self.gamma == 0.0
    }

    /// `w_k = (k−1)/(k+r)`, the weight on `x_k − x_{k−1}` when forming `y_k`.
    ///
    /// For `k ≤ 1` the weight is 0: at `k = 0` there is no previous iterate
    /// and at `k = 1` the numerator vanishes, which also fixes the `0/0` case
    /// `r = −1` by continuity in `r`.
    pub fn weight(&self, k: u64) -> f64 {
        if k <= 1 {
            0.0
        } else {
            (k as f64 - 1.0) / (k as f64 + self.r)
        }
    }

    /// `3γ/(k+3γ−1) = 1 − w_k`, the velocity damping in phase-space form,
    /// under the same `k ≤ 1` convention as [`weight`](Self::weight).
    pub fn damping(&self, k: u64) -> f64 {
        if k <= 1 {
            1.0
        } else {
            3.0 * self.gamma / (k as f64 + 3.0 * self.gamma - 1.0)
        }
    }
}

impl fmt::Display for MomentumParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r={} (gamma={})", self.r, self.gamma)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunState {
    pub k: u64,
    pub x_curr: Point,
    pub x_prev: Point,
    pub y_prev: Point,
    /// `(x_k − x_{k−1}) / √s`
    pub v: Point,
}

impl RunState {
    /// `k = 0`, `x₀ = y₀`, `v₀ = 0`.
    pub fn initial(x0: Point) -> Self {
        let v = Point::zeros(x0.len());
        Self {
            k: 0,
            x_prev: x0.clone(),
            y_prev: x0.clone(),
            x_curr: x0,
            v,
        }
    }

    /// `y_k = x_k + w_k (x_k − x_{k−1})`.
    pub fn lookahead(&self, momentum: &MomentumParameter) -> Point {
        let w = momentum.weight(self.k);
        if w == 0.0 {
            self.x_curr.clone()
        } else {
            &self.x_curr + (&self.x_curr - &self.x_prev) * w
        }
    }

    /// `y_k = x_k + w_k √s v_k`, the phase-space form of [`lookahead`](Self::lookahead).
    pub fn phase_lookahead(&self, momentum: &MomentumParameter, s: f64) -> Point {
        let w = momentum.weight(self.k);
        if w == 0.0 {
            self.x_curr.clone()
        } else {
            &self.x_curr + &self.v * (w * s.sqrt())
        }
    }

    fn advance(&self, x_next: Point, y_k: Point, v_next: Point) -> Self {
        Self {
            k: self.k + 1,
            x_prev: self.x_curr.clone(),
            x_curr: x_next,
            y_prev: y_k,
            v: v_next,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Nag,
    Phase,
    Fista,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Nag => "nag",
            Method::Phase => "phase",
            Method::Fista => "fista",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nag" => Ok(Method::Nag),
            "phase" => Ok(Method::Phase),
            "fista" => Ok(Method::Fista),
            other => Err(Error::InvalidParameter(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub momentum: MomentumParameter,
    pub step: f64,
    pub max_iter: u64,
    pub record_every: Cadence,
    /// Lifts the `s ≤ 1/L` guard.
    pub allow_large_step: bool,
    pub problem_id: String,
}

impl RunConfig {
    pub fn new(momentum: MomentumParameter, step: f64, max_iter: u64) -> Self {
        Self {
            momentum,
            step,
            max_iter,
            record_every: Cadence::Every(1),
            allow_large_step: false,
            problem_id: String::new(),
        }
    }

    pub fn validate(&self, lipschitz: f64) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "step size must satisfy s > 0, got {}",
                self.step
            )));
        }
        if !self.allow_large_step && self.step > 1.0 / lipschitz {
            return Err(Error::InvalidParameter(format!(
                "step size s = {} exceeds 1/L = {} (pass allow_large_step to override)",
                self.step,
                1.0 / lipschitz
            )));
        }
        if let Cadence::Every(0) = self.record_every {
            return Err(Error::InvalidParameter("record_every must be positive".into()));
        }
        Ok(())
    }
}

fn check_finite(k: u64, what: &str, v: &Point) -> Result<()> {
    if v.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence {
            iteration: k,
            detail: format!("non-finite {what}"),
        })
    }
}

fn check_iterate(state: &RunState) -> Result<()> {
    check_finite(state.k, "iterate", &state.x_curr)?;
    check_finite(state.k, "velocity", &state.v)?;
    let norm = state.x_curr.norm();
    if norm > DIVERGENCE_RADIUS {
        return Err(Error::Divergence {
            iteration: state.k,
            detail: format!("iterate norm {norm:e} exceeds {DIVERGENCE_RADIUS:e}"),
        });
    }
    Ok(())
}

/// `x_{k+1} = y_k − s∇f(y_k)`.
pub fn nag_step(state: &RunState, problem: &dyn SmoothObjective, cfg: &RunConfig) -> Result<RunState> {
    let s = cfg.step;
    let y = state.lookahead(&cfg.momentum);
    let grad = problem.gradient(&y);
    check_finite(state.k, "gradient", &grad)?;
    let x_next = &y - grad * s;
    let v_next = (&x_next - &state.x_curr) / s.sqrt();
    let next = state.advance(x_next, y, v_next);
    check_iterate(&next)?;
    Ok(next)
}

/// `v_{k+1} = v_k − (3γ/(k+3γ−1)) v_k − √s ∇f(y_k)`, `x_{k+1} = x_k + √s v_{k+1}`.
///
/// For composite problems the gradient is replaced by the gradient map
/// `G_s(y_k)`. At `γ = 0` the damping vanishes for `k ≥ 2` and the update is
/// the undamped `v_{k+1} = v_k − √s ∇f(y_k)` with `y_k = x_k + √s v_k`.
pub fn phase_space_step(state: &RunState, problem: &CompositeProblem, cfg: &RunConfig) -> Result<RunState> {
    let s = cfg.step;
    let sqrt_s = s.sqrt();
    let y = state.phase_lookahead(&cfg.momentum, s);
    let direction = problem.descent_direction(&y, s);
    check_finite(state.k, "gradient", &direction)?;
    let damping = cfg.momentum.damping(state.k);
    let v_next = &state.v - &state.v * damping - direction * sqrt_s;
    let x_next = &state.x_curr + &v_next * sqrt_s;
    let next = state.advance(x_next, y, v_next);
    check_iterate(&next)?;
    Ok(next)
}

/// `x_{k+1} = P_s(y_k) = y_k − s G_s(y_k)`.
pub fn fista_step(state: &RunState, problem: &CompositeProblem, cfg: &RunConfig) -> Result<RunState> {
    let s = cfg.step;
    let y = state.lookahead(&cfg.momentum);
    let x_next = problem.proximal_map(&y, s);
    check_finite(state.k, "proximal step", &x_next)?;
    let v_next = (&x_next - &state.x_curr) / s.sqrt();
    let next = state.advance(x_next, y, v_next);
    check_iterate(&next)?;
    Ok(next)
}

/// Stepping engine over a fixed problem and configuration.
pub struct Iterates<'a> {
    cfg: &'a RunConfig,
    problem: &'a CompositeProblem,
    method: Method,
    state: RunState,
}

impl<'a> Iterates<'a> {
    pub fn new(cfg: &'a RunConfig, problem: &'a CompositeProblem, method: Method, x0: Point) -> Result<Self> {
        cfg.validate(problem.lipschitz())?;
        if x0.len() != problem.dimension() {
            return Err(Error::InvalidParameter(format!(
                "initial point has dimension {} but the problem has dimension {}",
                x0.len(),
                problem.dimension()
            )));
        }
        if method == Method::Nag && !problem.is_smooth() {
            return Err(Error::InvalidParameter(
                "nag needs a smooth problem; use fista for composite objectives".into(),
            ));
        }
        let state = RunState::initial(x0);
        check_iterate(&state)?;
        Ok(Self {
            cfg,
            problem,
            method,
            state,
        })
    }

    pub fn state(&self) -> &RunState {
        &self.state
    }

    pub fn step(&mut self) -> Result<&RunState> {
        self.state = match self.method {
            Method::Nag => nag_step(&self.state, self.problem.smooth(), self.cfg)?,
            Method::Phase => phase_space_step(&self.state, self.problem, self.cfg)?,
            Method::Fista => fista_step(&self.state, self.problem, self.cfg)?,
        };
        Ok(&self.state)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<TrajectoryRecord>,
    /// Lyapunov value at every iteration where it is defined, for audits.
    pub lyapunov: Vec<LyapunovSample>,
    pub final_state: RunState,
}

/// Runs `max_iter` steps from `x0`, recording diagnostics at the configured
/// cadence (always including the first and last iteration).
pub fn run(cfg: &RunConfig, problem: &CompositeProblem, method: Method, x0: Point) -> Result<RunOutput> {
    let mut iterates = Iterates::new(cfg, problem, method, x0)?;
    let mut recorder = Recorder::new(problem, method, cfg);
    recorder.observe(iterates.state())?;
    for _ in 0..cfg.max_iter {
        let state = iterates.step()?;
        recorder.observe(state)?;
    }
    let final_state = iterates.state().clone();
    let (records, lyapunov) = recorder.finish(&final_state)?;
    Ok(RunOutput {
        records,
        lyapunov,
        final_state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{l1_term, make_quadratic, paper_quadratic, synthetic_lasso};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};

    fn v(xs: &[f64]) -> Point {
        Point::from_column_slice(xs)
    }

    fn cfg(r: f64, s: f64, iters: u64) -> RunConfig {
        RunConfig::new(MomentumParameter::new(r).unwrap(), s, iters)
    }

    #[test]
    fn gamma_reparameterization() {
        assert_eq!(MomentumParameter::new(-1.0).unwrap().gamma(), 0.0);
        assert_eq!(MomentumParameter::new(2.0).unwrap().gamma(), 1.0);
        assert_eq!(MomentumParameter::new(0.5).unwrap().gamma(), 0.5);
        assert!(MomentumParameter::new(-1.5).is_err());
        assert!(MomentumParameter::new(f64::NAN).is_err());
    }

    #[test]
    fn degenerate_weights() {
        let m = MomentumParameter::new(-1.0).unwrap();
        assert_eq!(m.weight(0), 0.0);
        assert_eq!(m.weight(1), 0.0);
        assert_eq!(m.weight(2), 1.0);
        assert_eq!(m.weight(50), 1.0);
        assert_eq!(m.damping(1), 1.0);
        assert_eq!(m.damping(2), 0.0);
        let m0 = MomentumParameter::new(0.0).unwrap();
        assert_eq!(m0.weight(0), 0.0);
        assert_eq!(m0.damping(0), 1.0);
        for k in 2..20 {
            let m = MomentumParameter::new(0.7).unwrap();
            assert_relative_eq!(m.damping(k), 1.0 - m.weight(k), max_relative = 1e-14);
        }
    }

    #[test]
    fn first_nag_step_on_paper_quadratic() {
        let f = paper_quadratic();
        let c = cfg(2.0, 0.1, 1);
        let s0 = RunState::initial(v(&[1.0, 1.0]));
        let s1 = nag_step(&s0, &f, &c).unwrap();
        assert_relative_eq!(s1.x_curr[0], 0.996, max_relative = 1e-15);
        assert_relative_eq!(s1.x_curr[1], 0.999, max_relative = 1e-15);
        assert_eq!(s1.lookahead(&c.momentum), s1.x_curr);
        assert_eq!(s1.k, 1);
    }

    #[test]
    fn minimizer_is_a_fixed_point() {
        let f = paper_quadratic();
        for r in [-1.0, 0.0, 2.0] {
            let c = cfg(r, 0.1, 1);
            let mut s = RunState::initial(v(&[0.0, 0.0]));
            for _ in 0..10 {
                s = nag_step(&s, &f, &c).unwrap();
                assert_eq!(s.x_curr, v(&[0.0, 0.0]));
            }
        }
    }

    /// Independent scalar transcript of the two-line recursion.
    fn scalar_nag(a: f64, x0: f64, s: f64, r: f64, steps: usize) -> Vec<f64> {
        let mut xs = vec![x0];
        let mut y = x0;
        for k in 1..=steps {
            let x = y - s * a * y;
            let w = if k == 1 { 0.0 } else { (k as f64 - 1.0) / (k as f64 + r) };
            y = x + w * (x - xs[k - 1]);
            xs.push(x);
        }
        xs
    }

    #[test]
    fn critical_nag_matches_scalar_transcript() {
        let f = paper_quadratic();
        let c = cfg(-1.0, 0.1, 3);
        let mut s = RunState::initial(v(&[1.0, 1.0]));
        for _ in 0..3 {
            s = nag_step(&s, &f, &c).unwrap();
        }
        let x1 = scalar_nag(0.04, 1.0, 0.1, -1.0, 3);
        let x2 = scalar_nag(0.01, 1.0, 0.1, -1.0, 3);
        assert_relative_eq!(s.x_curr[0], x1[3], max_relative = 1e-15);
        assert_relative_eq!(s.x_curr[1], x2[3], max_relative = 1e-15);
    }

    #[test]
    fn critical_phase_step_by_hand() {
        // f = ½x², s = 1, x₀ = 1: v₁ = −1, x₁ = 0
        let f = make_quadratic(DMatrix::identity(1, 1), DVector::zeros(1)).unwrap();
        let p = CompositeProblem::smooth_only(f);
        let c = cfg(-1.0, 1.0, 1);
        let s1 = phase_space_step(&RunState::initial(v(&[1.0])), &p, &c).unwrap();
        assert_eq!(s1.v, v(&[-1.0]));
        assert_eq!(s1.x_curr, v(&[0.0]));
    }

    #[test]
    fn phase_space_from_rest_at_minimizer() {
        let p = CompositeProblem::smooth_only(paper_quadratic());
        let c = cfg(0.5, 0.1, 1);
        let mut s = RunState::initial(v(&[0.0, 0.0]));
        for _ in 0..5 {
            s = phase_space_step(&s, &p, &c).unwrap();
        }
        assert_eq!(s.x_curr, v(&[0.0, 0.0]));
        assert_eq!(s.v, v(&[0.0, 0.0]));
    }

    #[test]
    fn velocity_matches_iterate_difference() {
        let p = CompositeProblem::smooth_only(paper_quadratic());
        let c = cfg(0.3, 0.1, 1);
        let mut s = RunState::initial(v(&[1.0, 1.0]));
        for _ in 0..200 {
            s = phase_space_step(&s, &p, &c).unwrap();
            let diff = (&s.x_curr - &s.x_prev) / 0.1f64.sqrt();
            let scale = s.v.norm().max(1e-300);
            assert!((&diff - &s.v).norm() <= 1e-12 * scale.max(diff.norm()));
        }
    }

    #[test]
    fn first_fista_step_soft_thresholds() {
        let p = CompositeProblem::new(paper_quadratic(), l1_term(0.01).unwrap());
        let c = cfg(2.0, 0.1, 1);
        let s1 = fista_step(&RunState::initial(v(&[1.0, 1.0])), &p, &c).unwrap();
        assert_relative_eq!(s1.x_curr[0], 0.995, max_relative = 1e-14);
        assert_relative_eq!(s1.x_curr[1], 0.998, max_relative = 1e-14);
    }

    #[test]
    fn fista_from_lasso_minimizer_is_stationary() {
        let p = synthetic_lasso(30, 12, 2, 0.15).unwrap();
        let x_star = p.minimizer().unwrap().clone();
        let c = cfg(2.0, 1.0 / p.lipschitz(), 1);
        let mut s = RunState::initial(x_star.clone());
        for _ in 0..50 {
            s = fista_step(&s, &p, &c).unwrap();
        }
        assert!((&s.x_curr - &x_star).norm() <= 1e-11);
    }

    #[test]
    fn step_guard() {
        let p = CompositeProblem::smooth_only(paper_quadratic());
        let mut c = cfg(2.0, 30.0, 10);
        assert!(matches!(
            Iterates::new(&c, &p, Method::Nag, v(&[1.0, 1.0])),
            Err(Error::InvalidParameter(_))
        ));
        c.allow_large_step = true;
        assert!(Iterates::new(&c, &p, Method::Nag, v(&[1.0, 1.0])).is_ok());
        let c = cfg(2.0, 0.0, 10);
        assert!(Iterates::new(&c, &p, Method::Nag, v(&[1.0, 1.0])).is_err());
        let c = cfg(2.0, -0.1, 10);
        assert!(Iterates::new(&c, &p, Method::Nag, v(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn large_step_diverges_loudly() {
        let p = CompositeProblem::smooth_only(paper_quadratic());
        let mut c = cfg(2.0, 200.0, 100_000);
        c.allow_large_step = true;
        let err = run(&c, &p, Method::Nag, v(&[1.0, 1.0])).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn nag_rejects_composite_problem() {
        let p = CompositeProblem::new(paper_quadratic(), l1_term(0.1).unwrap());
        let c = cfg(2.0, 0.1, 10);
        assert!(Iterates::new(&c, &p, Method::Nag, v(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn iterates_stay_bounded() {
        let p = CompositeProblem::smooth_only(paper_quadratic());
        let x0 = v(&[1.0, 1.0]);
        for s in [0.1, 25.0] {
            for r in [-1.0, -0.5, 0.0, 1.0, 2.0, 3.0] {
                let c = cfg(r, s, 2000);
                let mut it = Iterates::new(&c, &p, Method::Nag, x0.clone()).unwrap();
                for _ in 0..2000 {
                    let st = it.step().unwrap();
                    assert!(st.x_curr.norm() <= 10.0 * x0.norm());
                }
            }
        }
    }
}
