//! Compressed predictive information coding.
//!
//! A stochastic linear encoder `y_t ~ N(Uᵀx_t, diag σ_t²)` is trained to keep
//! the information its past window codes carry about future window codes
//! while discarding the rest of the input, using variational bounds on both
//! mutual informations. The crate also ships the noisy Lorenz benchmark and
//! the linear evaluation tools used to score learned projections.

pub mod artifact;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod lorenz;
pub mod mibounds;
pub mod ndmath;
pub mod objective;
pub mod rng;
pub mod selftest;
pub mod series;
pub mod sweep;
pub mod synthetic;

pub use artifact::ModelArtifact;
pub use encoder::{Encoder, EncoderMode, EncoderSpec, WindowCode};
pub use error::{CpicError, Result};
pub use objective::{train, CpicConfig, CpicModel, TrainReport};
pub use selftest::{run_selftest, SelfTestConfig, SelfTestReport};
pub use series::{LaggedCovariance, Series, WindowPairBatch};
pub use sweep::{run_sweep, SweepConfig, SweepMethod, SweepOutput};
