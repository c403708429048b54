//! The CPIC objective: loss assembly, model construction and training.

mod config;
mod loss;
mod model;
mod train;

pub use config::{Compression, CpicConfig, LossFamily, MarginalKind, PiEstimator, Preprocess};
pub use loss::{cpic_loss, cpic_loss_multi, cpic_loss_uni, CompressionTerm, LossParts, PiTerm};
pub use model::{CpicModel, CpicNetworks, Preprocessing};
pub use train::{gaussian_objective, train, TrainReport};
