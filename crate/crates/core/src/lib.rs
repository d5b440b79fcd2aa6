//! Land-then-transport (LTT) generative decoding.
//!
//! A channel observation is treated as a sample on an AWGN-aligned Gaussian
//! probability path at a calibrated landing time `t*`; a learned velocity field
//! then transports it deterministically to the clean end `t = 1`.
//!
//! Module map:
//! - [`schedule`]: noise schedule `σ(t)`, derivative and inverse.
//! - [`flow_path`]: conditional Gaussian path, teacher velocity, continuity residual.
//! - [`scalar_bench`]: closed-form scalar Gaussian benchmark.
//! - [`student_field`]: trainable MLP velocity field with checkpoints.
//! - [`cfm_trainer`]: conditional flow matching training loop.
//! - [`ode_decoder`]: Euler / midpoint probability-flow decoding.
//! - [`channel`]: AWGN, Rayleigh + MMSE, MIMO + SVD front-ends.
//! - [`metrics`]: MSE, PSNR, ΔPSNR.
//! - [`pipeline`]: one message through channel, front-end and decoder.
//! - [`data_io`]: IDX ingestion, synthetic sources, CSV output.
//! - [`verification`]: self-check suite shared by the CLI and the acceptance tests.

// `!(x > 0.0)` style guards reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cfm_trainer;
pub mod channel;
pub mod data_io;
mod error;
pub mod flow_path;
pub mod metrics;
pub mod ode_decoder;
pub mod pipeline;
pub mod rng;
pub mod scalar_bench;
pub mod schedule;
pub mod student_field;
pub mod verification;

pub use error::{Error, Result};
pub use ode_decoder::{DecodeConfig, Solver, VelocityField};
pub use schedule::NoiseSchedule;

/// Directory holding the bundled MNIST subset.
pub fn bundled_data_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}
