//! Masked autoregressive Bernstein flow over day vectors.
//!
//! For each of the `D` steps of a day, a MADE-masked network reads the
//! already-seen loads and two conditioner networks read the calendar,
//! temperature and sensor embedding. Their outputs are summed into a scale
//! `beta` and Bernstein coefficients `theta`, and the step density follows
//! from the change of variables through `log(h2(beta y))`.

mod bernstein;
mod model;
mod network;
mod sample;
mod train;

pub use bernstein::{
    basis, bernstein_deriv, bernstein_eval, draw_base, invert, norm_cdf, sigmoid, softplus, softplus_inv,
    step_log_density, theta_backward, theta_from_unconstrained, transform, truncation_mass, THETA_EPS,
};
pub use model::{FlowCondition, Layout, MabfArch, MabfModel, StepParams, N_FEATURES};
pub use network::{Dense, Mlp};
pub use sample::{day_conditions, generate_span, generate_year, sample_day, upsample_to_15min};
pub use train::{fit, fit_samples, nll, nll_gradient, FitReport, FlowSample, FlowTrainingConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MabfError {
    #[error("Bernstein argument {0} outside [0, 1]")]
    DomainError(f64),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("training data contains negative or all-zero loads")]
    NonPositiveData,
    #[error("training diverged at epoch {0}")]
    DivergedTraining(usize),
    #[error("inversion failed at step {step} (residual {residual:e})")]
    InversionFailure { step: usize, residual: f64 },
    #[error("expected {expected} day conditions, got {got}")]
    MissingConditions { expected: usize, got: usize },
    #[error("no training samples")]
    EmptyInput,
    #[error("samples of length {got} do not match model steps {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid model file: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
}
