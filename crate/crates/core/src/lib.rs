//! Exactly decoupled Kalman filtering for joint multitarget state and
//! sensor-bias estimation.
//!
//! The crate provides the decoupled filter bank, the augmented-state Kalman
//! filter it is equivalent to, a baseline that ignores the target/bias cross
//! covariance, a multistatic radar simulator and the metrics used to compare
//! them. All numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`.

pub mod approx;
pub mod askf;
pub mod complexity;
pub mod decoupled;
pub mod error;
pub mod export;
pub mod kalman;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod radar;
pub mod scalar;
pub mod scenario;
pub mod synthetic;

pub use error::{Error, Result};
pub use models::TargetId;
pub use scalar::Scalar;

pub type Matrix = nalgebra::DMatrix<f64>;
pub type Vector = nalgebra::DVector<f64>;
pub type Belief = linalg::GaussianBelief<f64>;
pub type Partitioned = linalg::PartitionedCov<f64>;
pub type Branch = decoupled::BranchBelief<f64>;
pub type Fused = decoupled::FusedBias<f64>;
pub type Bank = decoupled::FilterBank<f64>;
pub type Askf = askf::AskfState<f64>;
pub type Target = models::TargetModel<f64>;
pub type Meas = models::MeasModel<f64>;
