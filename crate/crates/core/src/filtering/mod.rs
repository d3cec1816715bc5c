//! Savitzky-Golay differentiation and a discrete extended Kalman filter.

mod ekf;
mod savgol;

pub use ekf::{
    ekf_predict, ekf_update, ekf_update_with_innovation, is_symmetric_psd, EkfModel, EkfState,
};
pub use savgol::{savgol_derivatives, SavGol, SgConfig};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("window of {window} samples exceeds the series length {len}")]
    WindowTooLarge { window: usize, len: usize },
    #[error("window of {window} samples cannot fit a polynomial of order {order}")]
    OrderTooHigh { window: usize, order: usize },
    #[error("polynomial order {0} is below 2; second derivatives need at least a quadratic")]
    OrderTooLow(usize),
    #[error("window length {0} must be odd")]
    EvenWindow(usize),
    #[error("sampling interval must be positive, got {0}")]
    InvalidStep(f64),
    #[error("innovation covariance is singular")]
    SingularInnovation,
}
