//! Gaussian-process emulation of the fine/coarse residual.

mod dataset;
mod emulator;
mod kernel;
mod likelihood;
mod linalg;

pub use dataset::{merge_legacy, Provenance, ResidualDataset};
pub use emulator::{condition, GpEmulator, Prediction};
pub use kernel::{kernel_eval, Hyperparameters};
pub use likelihood::{
    log_marginal_likelihood, log_marginal_likelihood_with_gradient, optimize_hyperparameters, DimensionFit,
    OptimizerSettings, SIGMA2_FLOOR,
};
