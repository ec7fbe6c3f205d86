use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use underdamp::diagnostics::{normalized_gap, normalized_grad, read_csv, write_csv, RecordIndex, TrajectoryRecord};
use underdamp::lyapunov::{audit, AuditKind};
use underdamp::optimizers::{run, Method, MomentumParameter, RunConfig};
use underdamp::problems::{
    l1_term, lasso, make_quadratic, paper_quadratic, CompositeProblem, LeastSquares, NonsmoothTerm, Point, SmoothObjective,
};

fn vector(dim: usize) -> impl Strategy<Value = Point> {
    prop::collection::vec(-3.0f64..3.0, dim).prop_map(Point::from_vec)
}

/// `MᵀM + εI` with a random linear term.
fn quadratic(dim: usize) -> impl Strategy<Value = (DMatrix<f64>, DVector<f64>)> {
    (prop::collection::vec(-1.0f64..1.0, dim * dim), vector(dim)).prop_map(move |(m, b)| {
        let m = DMatrix::from_vec(dim, dim, m);
        (m.transpose() * &m + DMatrix::identity(dim, dim) * 0.05, b)
    })
}

fn design(rows: usize, cols: usize) -> impl Strategy<Value = (DMatrix<f64>, DVector<f64>)> {
    (prop::collection::vec(-1.0f64..1.0, rows * cols), vector(rows))
        .prop_map(move |(a, b)| (DMatrix::from_vec(rows, cols, a), b))
}

fn lipschitz_inequality_holds(f: &dyn SmoothObjective, x: &Point, y: &Point) -> bool {
    let gy = f.gradient(y);
    let gx = f.gradient(x);
    let lhs = f.value(y) - f.value(x);
    let rhs = gy.dot(&(y - x)) - (&gy - &gx).norm_squared() / (2.0 * f.lipschitz());
    let scale = 1.0 + f.value(x).abs() + f.value(y).abs() + gy.norm() * (y - x).norm();
    lhs <= rhs + 1e-9 * scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn quadratic_gradient_lipschitz_inequality((q, b) in quadratic(4), x in vector(4), y in vector(4)) {
        let f = make_quadratic(q, b).unwrap();
        prop_assert!(lipschitz_inequality_holds(&f, &x, &y));
    }

    #[test]
    fn least_squares_gradient_lipschitz_inequality((a, b) in design(6, 3), x in vector(3), y in vector(3)) {
        let f = LeastSquares::new(a, b).unwrap();
        prop_assert!(lipschitz_inequality_holds(&f, &x, &y));
    }

    #[test]
    fn gradients_match_central_differences((q, b) in quadratic(3), x in vector(3)) {
        let f = make_quadratic(q, b).unwrap();
        let g = f.gradient(&x);
        for i in 0..3 {
            let h = 1e-5;
            let mut up = x.clone();
            up[i] += h;
            let mut down = x.clone();
            down[i] -= h;
            let fd = (f.value(&up) - f.value(&down)) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + g[i].abs()), "coord {}: {} vs {}", i, fd, g[i]);
        }
    }

    #[test]
    fn prox_is_nonexpansive(lambda in 0.01f64..2.0, sigma in 0.01f64..5.0, a in vector(5), b in vector(5)) {
        let g = l1_term(lambda).unwrap();
        let pa = g.prox(&a, sigma);
        let pb = g.prox(&b, sigma);
        prop_assert!((pa - pb).norm() <= (&a - &b).norm() * (1.0 + 1e-15));
    }

    #[test]
    fn improved_proximal_inequality(
        (a, b) in design(8, 4),
        lambda in 0.01f64..0.5,
        x in vector(4),
        y in vector(4),
        halve in any::<bool>(),
    ) {
        let p = lasso(a, b, lambda).unwrap();
        let l = p.lipschitz();
        let s = if halve { 0.5 / l } else { 1.0 / l };
        let g = p.proximal_subgradient(&y, s);
        let lhs = p.value(&(&y - &g * s));
        let rhs = p.value(&x) + g.dot(&(&y - &x)) - (s - l * s * s / 2.0) * g.norm_squared();
        let scale = 1.0 + p.value(&x).abs() + lhs.abs();
        prop_assert!(lhs <= rhs + 1e-9 * scale, "{} > {}", lhs, rhs);
    }

    #[test]
    fn recorded_minima_and_normalizations_replay(r in -1.0f64..3.0, frac in 0.05f64..1.0, iters in 1u64..400) {
        let p = CompositeProblem::smooth_only(paper_quadratic());
        let s = frac / p.lipschitz();
        let m = MomentumParameter::new(r).unwrap();
        let out = run(&RunConfig::new(m, s, iters), &p, Method::Nag, Point::from_column_slice(&[1.0, 1.0])).unwrap();
        let mut running = f64::INFINITY;
        for rec in &out.records {
            running = running.min(rec.grad_sq);
            prop_assert_eq!(rec.min_grad_sq, running);
            prop_assert_eq!(rec.norm_gap, normalized_gap(rec.index, rec.gap, m.gamma(), s));
            prop_assert_eq!(rec.norm_grad, normalized_grad(rec.index, rec.min_grad_sq, m.gamma(), s));
        }
    }

    #[test]
    fn lyapunov_decreases_on_random_quadratics((q, b) in quadratic(3), gamma in 0.05f64..0.95, frac in 0.1f64..1.0) {
        let f = make_quadratic(q, b).unwrap();
        let p = CompositeProblem::smooth_only(f);
        let s = frac / p.lipschitz();
        let m = MomentumParameter::from_gamma(gamma).unwrap();
        let out = run(&RunConfig::new(m, s, 1500), &p, Method::Nag, Point::from_element(3, 1.0)).unwrap();
        let a = audit(&out.lyapunov, AuditKind::Nag, gamma, s).unwrap();
        prop_assert!(a.certified, "max violation {}", a.max_violation);
    }

    #[test]
    fn fista_lyapunov_decreases_on_random_lasso((a, b) in design(10, 5), lambda in 0.01f64..0.3, gamma in 0.05f64..0.95) {
        let p = lasso(a, b, lambda).unwrap();
        let s = 1.0 / p.lipschitz();
        let m = MomentumParameter::from_gamma(gamma).unwrap();
        let out = run(&RunConfig::new(m, s, 1000), &p, Method::Fista, Point::from_element(5, 1.0)).unwrap();
        let a = audit(&out.lyapunov, AuditKind::Fista, gamma, s).unwrap();
        prop_assert!(a.certified, "max violation {}", a.max_violation);
    }

    #[test]
    fn phase_space_form_tracks_two_line_form(r in -1.0f64..3.0, frac in 0.05f64..1.0) {
        let p = CompositeProblem::smooth_only(paper_quadratic());
        let s = frac / p.lipschitz();
        let cfg = RunConfig::new(MomentumParameter::new(r).unwrap(), s, 300);
        let x0 = Point::from_column_slice(&[1.0, 1.0]);
        let nag = run(&cfg, &p, Method::Nag, x0.clone()).unwrap();
        let phase = run(&cfg, &p, Method::Phase, x0).unwrap();
        let scale = nag.records.iter().map(|r| r.gap).fold(0.0, f64::max);
        for (a, b) in nag.records.iter().zip(&phase.records) {
            prop_assert!((a.gap - b.gap).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn csv_round_trip(rows in prop::collection::vec((0u64..1_000_000, any::<f64>(), 0.0f64..1e300, prop::option::of(-1e300f64..1e300)), 1..40)) {
        let records: Vec<_> = rows
            .into_iter()
            .map(|(k, gap, grad, lyap)| {
                let gap = if gap.is_finite() { gap } else { 0.0 };
                TrajectoryRecord {
                    index: RecordIndex::Iteration(k),
                    gap,
                    grad_sq: grad,
                    min_grad_sq: grad / 3.0,
                    lyap,
                    norm_gap: gap * 7.0,
                    norm_grad: grad * 1e-9,
                }
            })
            .collect();
        let mut buf = Vec::new();
        write_csv(&mut buf, &records).unwrap();
        prop_assert_eq!(read_csv(buf.as_slice()).unwrap(), records);
    }
}
