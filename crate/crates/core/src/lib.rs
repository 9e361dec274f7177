//! Discrete playstyle measures: compare, classify and count decision-making
//! styles from observation-action logs.

pub mod cli;
pub mod distributions;
pub mod diversity;
pub mod encoders;
pub mod error;
pub mod format;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod measures;
pub mod model;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Measure64 = measures::Measure<f64>;
pub type Measure32 = measures::Measure<f32>;
pub type MeasureConfig64 = measures::MeasureConfig<f64>;
pub type ComparisonReport64 = measures::ComparisonReport<f64>;
pub type Categorical64 = distributions::CategoricalDistribution<f64>;
pub type GaussianFit64 = distributions::GaussianFit<f64>;
pub type ActionDistribution64 = distributions::ActionDistribution<f64>;
pub type Matrix64 = linalg::Matrix<f64>;
