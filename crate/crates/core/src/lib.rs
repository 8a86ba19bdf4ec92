//! Entropy-regularized softmax regression with second-order solvers.
//!
//! The objective interpolates between fitting a target distribution and
//! maximizing the entropy of the prediction:
//!
//! ```text
//! L(x) = (1 − γ)·½‖f(x) − b‖₂² − γ·(−⟨f(x), ln f(x)⟩) + ½‖WAx‖₂²
//! f(x) = exp(Ax) / ⟨exp(Ax), 1ₙ⟩
//! ```
//!
//! The crate provides exact calculus for this loss ([`calculus`]), spectral
//! and Lipschitz certificates for its Hessian ([`analysis`]), leverage-score
//! subsampling of the Hessian diagonal ([`sketch`]), exact and sketched
//! Newton solvers with contraction tracking ([`solver`]), and a seeded
//! experiment harness with JSON/CSV persistence ([`harness`]).
//!
//! ```
//! use entreg::harness::{generate_instance, BMode};
//! use entreg::solver::{solve, SolverConfig, SolverMode};
//! use nalgebra::DVector;
//!
//! let problem =
//!     generate_instance(16, 4, 1.5, 7, BMode::SimplexRandom, 200.0, 1.0, 0.5).unwrap();
//! let config = SolverConfig::new(SolverMode::ExactNewton, problem.l());
//! let (x, trace) = solve(&problem, &DVector::zeros(4), &config).unwrap();
//! assert!(trace.iterations() < 20);
//! assert_eq!(x.len(), 4);
//! ```

pub mod analysis;
pub mod calculus;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod linalg;
pub mod sketch;
pub mod solver;

pub use error::{Error, Result};
pub use kernel::{evaluate, min_weight_squared, Evaluation, ProblemInstance};
