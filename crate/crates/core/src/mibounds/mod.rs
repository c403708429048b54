//! Variational bounds on mutual information.
//!
//! Upper bounds (VUB, L1Out) measure how much a code retains about its input;
//! lower bounds (InfoNCE, TUBA family, LBA) measure how much past codes tell
//! about future codes. The Gaussian closed forms serve as the deterministic
//! baseline and as test oracles.

mod baseline;
mod bounds;
mod critic;
mod decoder;
mod gaussian;
mod marginal;

pub use baseline::{Baseline, BaselineKind, BaselineTrace};
pub use bounds::{
    infonce, l1out, lba, tuba, vub, LbaBound, ScoreBound, TubaBound, TubaForm, VubBound,
};
pub use critic::{Critic, CriticKind, CriticSpec, CriticTrace, ScoreMatrix};
pub use decoder::GaussianDecoder;
pub use gaussian::{gaussian_mi, gaussian_pi, GaussianPi};
pub use marginal::VariationalMarginal;
