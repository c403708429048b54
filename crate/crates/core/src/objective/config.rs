use serde::{Deserialize, Serialize};

use crate::encoder::EncoderMode;
use crate::error::{CpicError, Result};
use crate::mibounds::{CriticKind, TubaForm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossFamily {
    /// Per-sample bounds: VUB compression with a TUBA-family PI bound.
    Uni,
    /// Multi-sample bounds: L1Out compression with InfoNCE.
    Multi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PiEstimator {
    Infonce,
    /// TUBA with `a = e`.
    Nwj,
    /// TUBA with `a = 1`.
    Mine,
    /// TUBA with a learned baseline network.
    Tuba,
    Lba,
    /// Closed-form Gaussian predictive information (deterministic encoder only).
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Compression {
    Vub,
    L1out,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarginalKind {
    Learnable,
    StandardNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preprocess {
    Center,
    /// Centers, then divides every channel by one shared scale (the root mean
    /// channel variance). Relative channel variances, and so SNR, are kept.
    CenterScale,
    Standardize,
}

/// Full description of a training run. Together with the data it determines
/// the run bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpicConfig {
    pub latent_dim: usize,
    pub window: usize,
    pub beta: f64,
    pub encoder: EncoderMode,
    pub family: LossFamily,
    pub pi_estimator: PiEstimator,
    pub compression: Compression,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub critic: CriticKind,
    pub tuba_form: TubaForm,
    pub critic_hidden: usize,
    pub embed_dim: usize,
    pub encoder_hidden: usize,
    pub sigma_floor: f64,
    /// Initial pre-softplus output bias of the encoder variance network.
    pub variance_bias: f64,
    pub marginal: MarginalKind,
    pub orthonormalize: bool,
    pub preprocess: Preprocess,
    /// Lower clamp on each per-dimension conditional log density in L1Out.
    pub log_density_floor: f64,
}

impl CpicConfig {
    /// Multi-sample stochastic configuration: L1Out + InfoNCE.
    pub fn multi(latent_dim: usize, window: usize) -> Self {
        Self {
            latent_dim,
            window,
            beta: 0.001,
            encoder: EncoderMode::Stochastic,
            family: LossFamily::Multi,
            pi_estimator: PiEstimator::Infonce,
            compression: Compression::L1out,
            batch_size: 64,
            steps: 5000,
            learning_rate: 3e-3,
            seed: 0,
            critic: CriticKind::Separable,
            tuba_form: TubaForm::Standard,
            critic_hidden: 64,
            embed_dim: 32,
            encoder_hidden: 64,
            sigma_floor: 0.1,
            variance_bias: -5.0,
            marginal: MarginalKind::Learnable,
            orthonormalize: false,
            preprocess: Preprocess::CenterScale,
            log_density_floor: -30.0,
        }
    }

    /// Uni-sample stochastic configuration: VUB + the given TUBA-family estimator.
    pub fn uni(latent_dim: usize, window: usize, pi: PiEstimator) -> Self {
        Self {
            family: LossFamily::Uni,
            pi_estimator: pi,
            compression: Compression::Vub,
            ..Self::multi(latent_dim, window)
        }
    }

    /// Deterministic encoder trained on the closed-form Gaussian predictive
    /// information (the DCA-equivalent configuration).
    pub fn gaussian(latent_dim: usize, window: usize) -> Self {
        Self {
            encoder: EncoderMode::Deterministic,
            pi_estimator: PiEstimator::Gaussian,
            compression: Compression::None,
            orthonormalize: true,
            learning_rate: 1e-2,
            steps: 3000,
            ..Self::multi(latent_dim, window)
        }
    }

    /// Switches to a deterministic encoder and drops the compression term.
    pub fn deterministic(mut self) -> Self {
        self.encoder = EncoderMode::Deterministic;
        self.compression = Compression::None;
        self
    }

    pub fn needs_critic(&self) -> bool {
        matches!(
            self.pi_estimator,
            PiEstimator::Infonce | PiEstimator::Nwj | PiEstimator::Mine | PiEstimator::Tuba
        )
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CpicError::Config(m));
        if self.latent_dim == 0 || self.window == 0 {
            return fail("latent_dim and window must be positive".into());
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return fail(format!(
                "beta must be finite and nonnegative, got {}",
                self.beta
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.encoder == EncoderMode::Deterministic && self.compression != Compression::None {
            return fail(
                "compression term constant for a deterministic encoder; use --compression none"
                    .into(),
            );
        }
        if self.pi_estimator == PiEstimator::Gaussian && self.encoder != EncoderMode::Deterministic
        {
            return fail("the gaussian PI estimator requires --encoder deterministic".into());
        }
        if self.pi_estimator != PiEstimator::Gaussian && self.batch_size < 2 {
            return fail(format!(
                "batch size must be at least 2, got {}",
                self.batch_size
            ));
        }
        if self.sigma_floor <= 0.0 {
            return fail("sigma floor must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        CpicConfig::multi(3, 4).validate().unwrap();
        CpicConfig::uni(3, 4, PiEstimator::Nwj).validate().unwrap();
        CpicConfig::gaussian(3, 4).validate().unwrap();
        CpicConfig::multi(3, 4).deterministic().validate().unwrap();
    }

    #[test]
    fn deterministic_with_compression_rejected() {
        let mut c = CpicConfig::multi(3, 4);
        c.encoder = EncoderMode::Deterministic;
        c.compression = Compression::Vub;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("compression term constant"), "{err}");
    }

    #[test]
    fn gaussian_requires_deterministic() {
        let mut c = CpicConfig::gaussian(3, 4);
        c.encoder = EncoderMode::Stochastic;
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = CpicConfig::uni(2, 3, PiEstimator::Tuba);
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"pi_estimator\":\"tuba\""));
        let back: CpicConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }
}
