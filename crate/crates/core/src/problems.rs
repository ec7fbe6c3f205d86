//! Convex test objectives.
//!
//! A [`SmoothObjective`] carries its value, gradient and gradient Lipschitz
//! constant; a [`NonsmoothTerm`] carries its value and proximal map. The two
//! are combined into a [`CompositeProblem`] `Φ = f + g`, which is what the
//! iteration engines consume. Smooth-only problems use [`ZeroTerm`].
//!
//! Problems are immutable once built and can be shared across threads.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Deserialize;

use crate::error::{Error, Result};

pub type Point = DVector<f64>;

/// Relative tolerance used by power iteration for Lipschitz constants.
pub const POWER_ITERATION_TOL: f64 = 1e-10;
pub const POWER_ITERATION_MAX_ITER: usize = 10_000;

/// Gradient-map norm at which the reference composite solve stops.
pub const REFERENCE_GRADIENT_MAP_TOL: f64 = 1e-12;
pub const REFERENCE_MAX_ITER: u64 = 1_000_000;

/// Relative asymmetry allowed in a quadratic's matrix.
const SYMMETRY_TOL: f64 = 1e-12;

/// A convex function with `L`-Lipschitz gradient.
pub trait SmoothObjective: fmt::Debug + Send + Sync {
    fn dimension(&self) -> usize;
    fn value(&self, x: &Point) -> f64;
    fn gradient(&self, x: &Point) -> Point;
    fn lipschitz(&self) -> f64;

    fn minimizer(&self) -> Option<&Point> {
        None
    }

    fn optimal_value(&self) -> Option<f64> {
        None
    }

    /// `f(x) − f(reference)`.
    ///
    /// Implementations override this when the difference can be formed
    /// without subtracting two nearly equal objective values, which matters
    /// once the Lyapunov weights (growing like `k^{2γ}`) multiply it.
    fn excess(&self, x: &Point, reference: &Point) -> f64 {
        self.value(x) - self.value(reference)
    }
}

/// A closed convex function with a computable proximal map.
pub trait NonsmoothTerm: fmt::Debug + Send + Sync {
    /// May be `f64::INFINITY` for indicator functions.
    fn value(&self, x: &Point) -> f64;

    /// `argmin_u ‖u − z‖²/(2σ) + g(u)`.
    fn prox(&self, z: &Point, sigma: f64) -> Point;

    /// `g(x) − g(reference)`.
    fn excess(&self, x: &Point, reference: &Point) -> f64 {
        self.value(x) - self.value(reference)
    }

    fn is_zero(&self) -> bool {
        false
    }
}

/// `f(x) = ½ xᵀQx − bᵀx`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    q: DMatrix<f64>,
    b: DVector<f64>,
    lipschitz: f64,
    minimizer: Option<Point>,
    optimal_value: Option<f64>,
}

impl Quadratic {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn linear_term(&self) -> &DVector<f64> {
        &self.b
    }
}

impl SmoothObjective for Quadratic {
    fn dimension(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &Point) -> f64 {
        0.5 * x.dot(&(&self.q * x)) - self.b.dot(x)
    }

    fn gradient(&self, x: &Point) -> Point {
        &self.q * x - &self.b
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn minimizer(&self) -> Option<&Point> {
        self.minimizer.as_ref()
    }

    fn optimal_value(&self) -> Option<f64> {
        self.optimal_value
    }

    // f(x) − f(r) = ⟨Qr − b, d⟩ + ½ dᵀQd with d = x − r, exactly.
    fn excess(&self, x: &Point, reference: &Point) -> f64 {
        let d = x - reference;
        let qd = &self.q * &d;
        self.gradient(reference).dot(&d) + 0.5 * d.dot(&qd)
    }
}

/// `f(x) = ½‖Ax − b‖²`, the smooth part of a LASSO problem.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    a: DMatrix<f64>,
    b: DVector<f64>,
    lipschitz: f64,
}

impl LeastSquares {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::InvalidProblem(format!(
                "A has {} rows but b has length {}",
                a.nrows(),
                b.len()
            )));
        }
        if a.ncols() == 0 {
            return Err(Error::InvalidProblem("A has no columns".into()));
        }
        let lipschitz = power_iteration(a.ncols(), |v| a.tr_mul(&(&a * v)))?;
        Ok(Self { a, b, lipschitz })
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.b
    }
}

impl SmoothObjective for LeastSquares {
    fn dimension(&self) -> usize {
        self.a.ncols()
    }

    fn value(&self, x: &Point) -> f64 {
        0.5 * (&self.a * x - &self.b).norm_squared()
    }

    fn gradient(&self, x: &Point) -> Point {
        self.a.tr_mul(&(&self.a * x - &self.b))
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn excess(&self, x: &Point, reference: &Point) -> f64 {
        let residual = &self.a * reference - &self.b;
        let ad = &self.a * (x - reference);
        residual.dot(&ad) + 0.5 * ad.norm_squared()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroTerm;

impl NonsmoothTerm for ZeroTerm {
    fn value(&self, _x: &Point) -> f64 {
        0.0
    }

    fn prox(&self, z: &Point, _sigma: f64) -> Point {
        z.clone()
    }

    fn excess(&self, _x: &Point, _reference: &Point) -> f64 {
        0.0
    }

    fn is_zero(&self) -> bool {
        true
    }
}

/// `g(x) = λ‖x‖₁`.
#[derive(Debug, Clone, Copy)]
pub struct L1Term {
    lambda: f64,
}

impl L1Term {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

pub fn soft_threshold(z: f64, threshold: f64) -> f64 {
    if z > threshold {
        z - threshold
    } else if z < -threshold {
        z + threshold
    } else {
        0.0
    }
}

impl NonsmoothTerm for L1Term {
    fn value(&self, x: &Point) -> f64 {
        self.lambda * x.lp_norm(1)
    }

    fn prox(&self, z: &Point, sigma: f64) -> Point {
        let t = self.lambda * sigma;
        z.map(|zi| soft_threshold(zi, t))
    }

    fn excess(&self, x: &Point, reference: &Point) -> f64 {
        self.lambda
            * x.iter()
                .zip(reference.iter())
                .map(|(a, b)| a.abs() - b.abs())
                .sum::<f64>()
    }
}

/// `Φ = f + g` together with its minimizer, when known.
#[derive(Debug, Clone)]
pub struct CompositeProblem {
    smooth: Arc<dyn SmoothObjective>,
    nonsmooth: Arc<dyn NonsmoothTerm>,
    composite_minimizer: Option<Point>,
    composite_optimum: Option<f64>,
}

impl CompositeProblem {
    /// Wraps a smooth objective with the zero nonsmooth term.
    pub fn smooth_only(smooth: impl SmoothObjective + 'static) -> Self {
        let minimizer = smooth.minimizer().cloned();
        let optimum = smooth.optimal_value();
        Self {
            smooth: Arc::new(smooth),
            nonsmooth: Arc::new(ZeroTerm),
            composite_minimizer: minimizer,
            composite_optimum: optimum,
        }
    }

    /// Builds `f + g` without solving for its minimizer.
    pub fn new(smooth: impl SmoothObjective + 'static, nonsmooth: impl NonsmoothTerm + 'static) -> Self {
        Self {
            smooth: Arc::new(smooth),
            nonsmooth: Arc::new(nonsmooth),
            composite_minimizer: None,
            composite_optimum: None,
        }
    }

    /// Builds `f + g` and caches `x⋆`, `Φ(x⋆)` from a reference FISTA run
    /// (`r = 2`, `s = 1/L`, started at the origin) stopped once the gradient
    /// map at the iterate has norm at most [`REFERENCE_GRADIENT_MAP_TOL`].
    pub fn with_reference_solution(
        smooth: impl SmoothObjective + 'static,
        nonsmooth: impl NonsmoothTerm + 'static,
    ) -> Result<Self> {
        let mut problem = Self::new(smooth, nonsmooth);
        let x_star = problem.reference_solve()?;
        problem.composite_optimum = Some(problem.value(&x_star));
        problem.composite_minimizer = Some(x_star);
        Ok(problem)
    }

    fn reference_solve(&self) -> Result<Point> {
        let s = 1.0 / self.lipschitz();
        let r = 2.0;
        let mut x_prev = Point::zeros(self.dimension());
        let mut y = x_prev.clone();
        for k in 1..=REFERENCE_MAX_ITER {
            let x = self.proximal_map(&y, s);
            let residual = self.proximal_subgradient(&x, s).norm();
            if !residual.is_finite() {
                return Err(Error::NoConvergence(format!(
                    "non-finite gradient map at iteration {k}"
                )));
            }
            if residual <= REFERENCE_GRADIENT_MAP_TOL {
                return Ok(x);
            }
            let w = (k as f64 - 1.0) / (k as f64 + r);
            y = &x + (&x - &x_prev) * w;
            x_prev = x;
        }
        Err(Error::NoConvergence(format!(
            "gradient map still above {REFERENCE_GRADIENT_MAP_TOL:e} after {REFERENCE_MAX_ITER} iterations"
        )))
    }

    pub fn smooth(&self) -> &dyn SmoothObjective {
        self.smooth.as_ref()
    }

    pub fn nonsmooth(&self) -> &dyn NonsmoothTerm {
        self.nonsmooth.as_ref()
    }

    pub fn is_smooth(&self) -> bool {
        self.nonsmooth.is_zero()
    }

    pub fn dimension(&self) -> usize {
        self.smooth.dimension()
    }

    pub fn lipschitz(&self) -> f64 {
        self.smooth.lipschitz()
    }

    pub fn minimizer(&self) -> Option<&Point> {
        self.composite_minimizer.as_ref()
    }

    pub fn optimum(&self) -> Option<f64> {
        self.composite_optimum
    }

    /// `Φ(x) = f(x) + g(x)`.
    pub fn value(&self, x: &Point) -> f64 {
        self.smooth.value(x) + self.nonsmooth.value(x)
    }

    /// `P_s(x) = prox_{s g}(x − s∇f(x))`.
    pub fn proximal_map(&self, x: &Point, s: f64) -> Point {
        let forward = x - self.smooth.gradient(x) * s;
        self.nonsmooth.prox(&forward, s)
    }

    /// `G_s(x) = (x − P_s(x)) / s`.
    pub fn proximal_subgradient(&self, x: &Point, s: f64) -> Point {
        (x - self.proximal_map(x, s)) / s
    }

    /// The direction the iteration engines descend along: `∇f` for smooth
    /// problems, the gradient map `G_s` otherwise.
    pub fn descent_direction(&self, x: &Point, s: f64) -> Point {
        if self.is_smooth() {
            self.smooth.gradient(x)
        } else {
            self.proximal_subgradient(x, s)
        }
    }

    fn require_minimizer(&self) -> Result<&Point> {
        self.composite_minimizer
            .as_ref()
            .ok_or_else(|| Error::MissingOptimum("problem has no known minimizer".into()))
    }

    /// `f(x) − f(x⋆)`, with `x⋆` the (composite) minimizer.
    pub fn smooth_gap(&self, x: &Point) -> Result<f64> {
        let x_star = self.require_minimizer()?;
        Ok(self.smooth.excess(x, x_star))
    }

    /// `Φ(x) − Φ(x⋆)`.
    pub fn composite_gap(&self, x: &Point) -> Result<f64> {
        let x_star = self.require_minimizer()?;
        Ok(self.smooth.excess(x, x_star) + self.nonsmooth.excess(x, x_star))
    }
}

/// Largest eigenvalue of a symmetric positive-semidefinite operator.
///
/// Iterates until the Rayleigh quotient changes by at most
/// [`POWER_ITERATION_TOL`] relative, or [`POWER_ITERATION_MAX_ITER`] steps.
pub fn power_iteration(dim: usize, apply: impl Fn(&Point) -> Point) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_1a2b);
    let mut v = Point::from_fn(dim, |_, _| rng.random_range(0.5..1.5));
    v.normalize_mut();
    let mut lambda = 0.0;
    for _ in 0..POWER_ITERATION_MAX_ITER {
        let w = apply(&v);
        let next = v.dot(&w);
        let norm = w.norm();
        if !norm.is_finite() {
            return Err(Error::InvalidProblem("operator produced non-finite values".into()));
        }
        if norm == 0.0 {
            return Err(Error::InvalidProblem("operator has no positive eigenvalue".into()));
        }
        v = w / norm;
        if (next - lambda).abs() <= POWER_ITERATION_TOL * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    if lambda <= 0.0 {
        return Err(Error::InvalidProblem("operator has no positive eigenvalue".into()));
    }
    Ok(lambda)
}

/// `f(x₁,x₂) = 2·10⁻² x₁² + 5·10⁻³ x₂²`, the two-dimensional objective used
/// throughout the experiments. `L = 0.04`, `x⋆ = 0`.
pub fn paper_quadratic() -> Quadratic {
    Quadratic {
        q: DMatrix::from_diagonal(&DVector::from_vec(vec![0.04, 0.01])),
        b: DVector::zeros(2),
        lipschitz: 0.04,
        minimizer: Some(Point::zeros(2)),
        optimal_value: Some(0.0),
    }
}

/// `f(x) = ½ xᵀQx − bᵀx` with `L = λ_max(Q)` by power iteration.
pub fn make_quadratic(q: DMatrix<f64>, b: DVector<f64>) -> Result<Quadratic> {
    let n = b.len();
    if q.nrows() != n || q.ncols() != n {
        return Err(Error::InvalidProblem(format!(
            "Q is {}x{} but b has length {n}",
            q.nrows(),
            q.ncols()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidProblem("empty quadratic".into()));
    }
    let scale = q.amax();
    let asym = (&q - q.transpose()).amax();
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::InvalidProblem(format!(
            "Q is not symmetric (max |Q - Qᵀ| = {asym:e})"
        )));
    }
    let lipschitz = power_iteration(n, |v| &q * v)?;
    let minimizer = Cholesky::new(q.clone()).map(|c| c.solve(&b));
    let mut quadratic = Quadratic {
        q,
        b,
        lipschitz,
        minimizer: None,
        optimal_value: None,
    };
    if let Some(x_star) = minimizer {
        quadratic.optimal_value = Some(quadratic.value(&x_star));
        quadratic.minimizer = Some(x_star);
    }
    Ok(quadratic)
}

pub fn l1_term(lambda: f64) -> Result<L1Term> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!("l1 weight must be positive, got {lambda}")));
    }
    Ok(L1Term { lambda })
}

/// LASSO `½‖Ax − b‖² + λ‖x‖₁` with its reference solution.
pub fn lasso(a: DMatrix<f64>, b: DVector<f64>, lambda: f64) -> Result<CompositeProblem> {
    CompositeProblem::with_reference_solution(LeastSquares::new(a, b)?, l1_term(lambda)?)
}

/// Deterministic random LASSO instance: `A` has i.i.d. `N(0, 1/rows)` entries,
/// `b` is standard normal, and `λ = lambda_ratio · ‖Aᵀb‖_∞`.
pub fn synthetic_lasso(rows: usize, cols: usize, seed: u64, lambda_ratio: f64) -> Result<CompositeProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (rows as f64).sqrt();
    let a = DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal) * scale);
    let b = DVector::from_fn(rows, |_, _| rng.sample::<f64, _>(StandardNormal));
    let lambda = lambda_ratio * a.tr_mul(&b).amax();
    lasso(a, b, lambda)
}

/// A problem resolved from its configuration identifier.
#[derive(Debug, Clone)]
pub struct NamedProblem {
    pub id: String,
    pub problem: CompositeProblem,
    pub initial_point: Point,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct QuadraticFile {
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    b: Vec<f64>,
    x0: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LassoFile {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    lambda: f64,
    x0: Option<Vec<f64>>,
}

fn matrix_from_rows(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::InvalidProblem(format!("{name} is empty")));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidProblem(format!("{name} has ragged rows")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn initial_point(x0: Option<Vec<f64>>, dim: usize) -> Result<Point> {
    match x0 {
        None => Ok(Point::from_element(dim, 1.0)),
        Some(v) if v.len() == dim => Ok(Point::from_vec(v)),
        Some(v) => Err(Error::InvalidProblem(format!(
            "x0 has length {} but the problem has dimension {dim}",
            v.len()
        ))),
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Resolves `paper-quadratic`, `quadratic:<path>` or `lasso:<path>`.
///
/// Unless the file gives `x0`, runs start from the all-ones point, which is
/// `(1, 1)` for the paper quadratic.
pub fn load(id: &str) -> Result<NamedProblem> {
    let (problem, initial_point) = if id == "paper-quadratic" {
        (CompositeProblem::smooth_only(paper_quadratic()), Point::from_element(2, 1.0))
    } else if let Some(path) = id.strip_prefix("quadratic:") {
        let file: QuadraticFile = read_json(Path::new(path))?;
        let q = matrix_from_rows(&file.q, "Q")?;
        let quadratic = make_quadratic(q, DVector::from_vec(file.b))?;
        let dim = quadratic.dimension();
        (CompositeProblem::smooth_only(quadratic), initial_point(file.x0, dim)?)
    } else if let Some(path) = id.strip_prefix("lasso:") {
        let file: LassoFile = read_json(Path::new(path))?;
        let a = matrix_from_rows(&file.a, "A")?;
        let dim = a.ncols();
        (lasso(a, DVector::from_vec(file.b), file.lambda)?, initial_point(file.x0, dim)?)
    } else {
        return Err(Error::UnknownProblem(id.to_string()));
    };
    Ok(NamedProblem {
        id: id.to_string(),
        problem,
        initial_point,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> Point {
        Point::from_column_slice(xs)
    }

    #[test]
    fn paper_quadratic_values() {
        let f = paper_quadratic();
        assert_relative_eq!(f.value(&v(&[1.0, 1.0])), 0.025, max_relative = 1e-15);
        assert_eq!(f.gradient(&v(&[0.0, 0.0])), v(&[0.0, 0.0]));
        let g = f.gradient(&v(&[1.0, 1.0]));
        assert_relative_eq!(g[0], 0.04, max_relative = 1e-15);
        assert_relative_eq!(g[1], 0.01, max_relative = 1e-15);
        assert_eq!(f.lipschitz(), 0.04);
    }

    #[test]
    fn identity_quadratic() {
        let f = make_quadratic(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        assert_relative_eq!(f.value(&v(&[3.0, 4.0])), 12.5, max_relative = 1e-15);
        assert_relative_eq!(f.lipschitz(), 1.0, max_relative = 1e-10);
    }

    #[test]
    fn make_quadratic_matches_paper_quadratic() {
        let q = DMatrix::from_diagonal(&v(&[0.04, 0.01]));
        let f = make_quadratic(q, DVector::zeros(2)).unwrap();
        let reference = paper_quadratic();
        assert_relative_eq!(f.lipschitz(), 0.04, max_relative = 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = v(&[rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)]);
            // oracle: term-by-term 2e-2 x1² + 5e-3 x2²
            let direct = 2e-2 * x[0] * x[0] + 5e-3 * x[1] * x[1];
            assert_relative_eq!(f.value(&x), direct, max_relative = 1e-14);
            assert_relative_eq!(reference.value(&x), direct, max_relative = 1e-14);
        }
    }

    #[test]
    fn quadratic_minimizer_solves_linear_system() {
        let q = DMatrix::from_diagonal(&v(&[2.0, 1.0]));
        let f = make_quadratic(q, v(&[2.0, 1.0])).unwrap();
        let x_star = f.minimizer().unwrap();
        assert_relative_eq!(x_star[0], 1.0, max_relative = 1e-14);
        assert_relative_eq!(x_star[1], 1.0, max_relative = 1e-14);
        assert_relative_eq!(f.optimal_value().unwrap(), -1.5, max_relative = 1e-14);
    }

    #[test]
    fn singular_quadratic_has_no_minimizer() {
        let q = DMatrix::from_diagonal(&v(&[1.0, 0.0]));
        let f = make_quadratic(q, DVector::zeros(2)).unwrap();
        assert!(f.minimizer().is_none());
    }

    #[test]
    fn rejects_asymmetric_matrix() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(
            make_quadratic(q, DVector::zeros(2)),
            Err(Error::InvalidProblem(_))
        ));
    }

    #[test]
    fn power_iteration_on_dense_matrix() {
        let q = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 2.0]);
        let f = make_quadratic(q.clone(), DVector::zeros(3)).unwrap();
        let exact = q.symmetric_eigenvalues().max();
        assert_relative_eq!(f.lipschitz(), exact, max_relative = 1e-9);
    }

    /// Scalar brute force: minimize (u − z)²/(2σ) + λ|u| over a fine grid.
    fn brute_force_prox(z: f64, sigma: f64, lambda: f64) -> f64 {
        let n = 400_001;
        let (lo, hi) = (z - 4.0, z + 4.0);
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .map(|u| (u, (u - z).powi(2) / (2.0 * sigma) + lambda * u.abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0
    }

    #[test]
    fn soft_threshold_examples() {
        let g = l1_term(1.0).unwrap();
        let p = g.prox(&v(&[1.0, -2.0]), 0.5);
        assert_relative_eq!(p[0], 0.5, max_relative = 1e-15);
        assert_relative_eq!(p[1], -1.5, max_relative = 1e-15);
        for (z, sigma) in [(1.0, 0.5), (-2.0, 0.5)] {
            let brute = brute_force_prox(z, sigma, 1.0);
            assert!((brute - soft_threshold(z, sigma)).abs() < 1e-4);
        }
        assert_eq!(g.prox(&v(&[0.1]), 1.0), v(&[0.0]));
        assert_eq!(l1_term(7.5).unwrap().prox(&v(&[0.0, 0.0]), 3.0), v(&[0.0, 0.0]));
    }

    #[test]
    fn l1_term_rejects_nonpositive_weight() {
        assert!(l1_term(0.0).is_err());
        assert!(l1_term(-1.0).is_err());
    }

    #[test]
    fn zero_term_prox_is_identity() {
        let z = v(&[0.3, -7.0, 1e-300]);
        assert_eq!(ZeroTerm.prox(&z, 0.25), z);
    }

    #[test]
    fn proximal_map_examples() {
        let smooth = CompositeProblem::smooth_only(paper_quadratic());
        let x = v(&[1.0, 1.0]);
        let step = &x - paper_quadratic().gradient(&x) * 0.1;
        assert_eq!(smooth.proximal_map(&x, 0.1), step);

        // gradient step (0.996, 0.999), then soft-threshold by 0.01·0.1
        let p = CompositeProblem::new(paper_quadratic(), l1_term(0.01).unwrap());
        let px = p.proximal_map(&x, 0.1);
        assert_relative_eq!(px[0], 0.995, max_relative = 1e-14);
        assert_relative_eq!(px[1], 0.998, max_relative = 1e-14);
        let gs = p.proximal_subgradient(&x, 0.1);
        assert_relative_eq!(gs[0], 0.05, max_relative = 1e-10);
        assert_relative_eq!(gs[1], 0.02, max_relative = 1e-10);
    }

    #[test]
    fn gradient_map_reduces_to_gradient_without_nonsmooth_term() {
        let p = CompositeProblem::smooth_only(paper_quadratic());
        let x = v(&[0.7, -1.3]);
        let gs = p.proximal_subgradient(&x, 0.1);
        let g = paper_quadratic().gradient(&x);
        assert_relative_eq!(gs, g, max_relative = 1e-12);
    }

    #[test]
    fn lasso_reference_solution_is_a_fixed_point() {
        let p = synthetic_lasso(40, 20, 11, 0.1).unwrap();
        let x_star = p.minimizer().unwrap();
        let s = 1.0 / p.lipschitz();
        assert!(p.proximal_subgradient(x_star, s).norm() <= REFERENCE_GRADIENT_MAP_TOL);
        let fixed = p.proximal_map(x_star, s);
        assert!((fixed - x_star).norm() <= s * REFERENCE_GRADIENT_MAP_TOL);
        assert_relative_eq!(p.optimum().unwrap(), p.value(x_star), max_relative = 1e-15);
    }

    #[test]
    fn stable_gap_agrees_with_value_difference() {
        let p = synthetic_lasso(30, 10, 5, 0.2).unwrap();
        let x_star = p.minimizer().unwrap();
        let x = x_star + Point::from_element(10, 0.3);
        let direct = p.value(&x) - p.optimum().unwrap();
        assert_relative_eq!(p.composite_gap(&x).unwrap(), direct, max_relative = 1e-10);
        assert!(p.composite_gap(x_star).unwrap().abs() < 1e-15);
    }

    #[test]
    fn gap_requires_minimizer() {
        let p = CompositeProblem::new(paper_quadratic(), l1_term(1.0).unwrap());
        assert!(matches!(p.composite_gap(&v(&[1.0, 1.0])), Err(Error::MissingOptimum(_))));
    }

    #[test]
    fn unknown_problem_id() {
        assert!(matches!(load("rosenbrock"), Err(Error::UnknownProblem(_))));
    }
}
