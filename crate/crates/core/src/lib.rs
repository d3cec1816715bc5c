//! Modeling, identification and thrust control of small turbojet engines.
//!
//! The crate is organised around the second-order thrust model
//!
//! ```text
//! T'' = f(T, T') + g(T, T') * v(u)
//! f   = K_T T + K_TT T^2 + K_D T' + K_DD T'^2 + K_TD T T' + c
//! g   = B_U + B_T T + B_D T'
//! v   = u + B_UU u^2
//! ```
//!
//! * [`engine`] holds the model, its parameter vector and the published presets.
//! * [`simulation`] generates excitation campaigns and synthetic datasets.
//! * [`filtering`] provides Savitzky-Golay differentiation and a discrete EKF.
//! * [`sindy`] discovers model structure by sparse regression.
//! * [`grayid`] estimates the parameters of the fixed structure.
//! * [`control`] closes the loop with feedback-linearizing and sliding-mode laws.
//! * [`sizing`] compares electric and jet propulsion for hovering robots.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod control;
pub mod engine;
pub mod filtering;
pub mod format;
pub mod grayid;
pub mod linalg;
pub mod series;
pub mod simulation;
pub mod sindy;
pub mod sizing;

pub use engine::{EngineSpec, JetParams, ThrustState};
pub use series::TimeSeries;
