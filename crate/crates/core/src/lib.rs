//! Dual power transformed Fay–Herriot (PTFH) small area models.
//!
//! The crate fits `h_λ(y_i) = x_i'β + v_i + ε_i` by maximum likelihood,
//! predicts the positive area means `μ_i = h_λ^{-1}(x_i'β + v_i)` with the
//! empirical best predictor, and estimates its mean squared error with a
//! parametric bootstrap. Simulation harnesses and model diagnostics sit on
//! top of the same machinery.

pub mod diagnostics;
pub mod error;
pub mod estimation;
pub mod io;
mod linalg;
pub mod model;
pub mod mse_bootstrap;
pub mod optimize;
pub mod prediction;
pub mod quadrature;
pub mod rng;
pub mod simulation;
pub mod transform;

pub use error::{PtfhError, Result};
pub use estimation::{fit, fit_fh, fit_logfh, fit_model, FitResult, SearchSettings};
pub use linalg::{mean, pairwise_sum, sample_variance};
pub use mse_bootstrap::{bootstrap_mse, Correction, MseReport, MseSettings};
pub use model::{AreaRecord, ModelKind, ModelParams, SamplingVariance, Scale};
pub use transform::{dpt, dpt_inv, log_jacobian_term, TransformParam};
