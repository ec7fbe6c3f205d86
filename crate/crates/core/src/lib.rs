//! Nesterov's accelerated gradient method and FISTA across the whole
//! momentum family `w_k = (k−1)/(k+r)`, `r ≥ −1`, together with their
//! low- and high-resolution ODE models, Lyapunov certificates and
//! convergence diagnostics.
//!
//! ```
//! use underdamp::{optimizers, problems};
//!
//! let problem = problems::CompositeProblem::smooth_only(problems::paper_quadratic());
//! let momentum = optimizers::MomentumParameter::new(-1.0).unwrap();
//! let cfg = optimizers::RunConfig::new(momentum, 0.1, 200);
//! let x0 = problems::Point::from_column_slice(&[1.0, 1.0]);
//! let out = optimizers::run(&cfg, &problem, optimizers::Method::Nag, x0).unwrap();
//! assert_eq!(out.records.len(), 201);
//! ```

pub mod diagnostics;
pub mod error;
pub mod lyapunov;
pub mod ode;
pub mod optimizers;
pub mod problems;

pub use error::{Error, Result};
