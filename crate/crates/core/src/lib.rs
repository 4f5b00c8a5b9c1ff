//! Small-sample quality-control classifiers: simulated QC datasets, the
//! closed-form limit rule, a 1-D CNN trained from scratch, and the Monte Carlo
//! comparison between them.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the CLI uses.

// `!(x > 0)` style checks are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod cnn;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod numerics;
pub mod reference;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type StatQcFunction = analytic::StatQcFunction<f64>;
pub type Scenario = analytic::Scenario<f64>;
pub type PsRow = analytic::PsRow<f64>;
pub type TupleRecord = datasets::TupleRecord<f64>;
pub type Parameters = cnn::Parameters<f64>;
pub type StatClassifier = evaluation::StatClassifier<f64>;
pub type TrainedClassifier = evaluation::TrainedClassifier<f64>;

/// Runs `f` on a dedicated rayon pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}
