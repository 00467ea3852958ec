//! Losses, the Adam optimizer, metrics, a finite-difference gradient checker
//! and the training loop.

mod adam;
mod fit;
mod gradcheck;
mod loss;
mod metrics;

pub use adam::{AdamConfig, AdamState};
pub use fit::{evaluate, fit, predict, EpochRecord, History, TrainConfig, Trainer};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, GRAD_CHECK_EPSILON};
pub use loss::{cross_entropy_loss, evaluate_loss, mse_loss, Loss};
pub use metrics::{accuracy, nrmse, Metric};
