use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::config::{Compression, CpicConfig, MarginalKind, PiEstimator, Preprocess};
use super::loss::{cpic_loss, CompressionTerm, LossParts, PiTerm};
use crate::encoder::{Encoder, EncoderSpec};
use crate::error::{CpicError, Result};
use crate::mibounds::{
    Baseline, BaselineKind, Critic, CriticSpec, GaussianDecoder, VariationalMarginal,
};
use crate::ndmath::ParamStore;
use crate::rng::Rng;
use crate::series::{Series, WindowPairBatch};

/// Affine input map applied before encoding: `(x − mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub mean: Vec<f64>,
    pub scale: Option<Vec<f64>>,
}

impl Preprocessing {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: None,
        }
    }

    /// Fits the map selected by `kind` and returns it with the transformed series.
    pub fn fit(series: &Series, kind: Preprocess) -> (Self, Series) {
        let p = match kind {
            Preprocess::Center => series.center(),
            Preprocess::CenterScale => series.center_scale(),
            Preprocess::Standardize => series.standardize(),
        };
        (
            Self {
                mean: p.mean,
                scale: p.scale,
            },
            p.series,
        )
    }

    pub fn apply(&self, series: &Series) -> Result<Series> {
        let n = self.mean.len();
        if series.dim() != n {
            return Err(CpicError::shape("series channels", n, series.dim()));
        }
        let data = series
            .data()
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let c = k % n;
                let s = self.scale.as_ref().map_or(1.0, |s| s[c]);
                (v - self.mean[c]) / s
            })
            .collect();
        Series::from_rows(series.len(), n, data)
    }
}

/// Handles to every network of a model. All values live in the model's
/// [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpicNetworks {
    pub encoder: Encoder,
    pub critic: Option<Critic>,
    pub baseline: Option<Baseline>,
    pub marginal: Option<VariationalMarginal>,
    pub decoder: Option<GaussianDecoder>,
}

/// Encoder plus the auxiliary networks its training objective needs.
#[derive(Debug, Clone)]
pub struct CpicModel {
    pub config: CpicConfig,
    pub input_dim: usize,
    pub preprocessing: Preprocessing,
    pub nets: CpicNetworks,
    pub store: ParamStore,
}

impl CpicModel {
    /// Builds a freshly initialized model. Initialization depends only on
    /// the configuration (including its seed) and `input_dim`.
    pub fn new(config: CpicConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(config.seed);
        let mut spec = EncoderSpec::new(input_dim, config.latent_dim, config.encoder);
        spec.hidden = config.encoder_hidden;
        spec.sigma_floor = config.sigma_floor;
        spec.variance_bias = config.variance_bias;
        let encoder = Encoder::new(&mut store, spec)?;
        let code_width = config.window * config.latent_dim;
        let critic = if config.needs_critic() {
            let mut cs = CriticSpec::new(config.critic, code_width, code_width);
            cs.hidden = vec![config.critic_hidden];
            cs.embed_dim = config.embed_dim;
            Some(Critic::new(&mut store, "critic", cs)?)
        } else {
            None
        };
        let baseline = match config.pi_estimator {
            PiEstimator::Nwj => Some(Baseline::constant(BaselineKind::ConstantE)),
            PiEstimator::Mine => Some(Baseline::constant(BaselineKind::ConstantOne)),
            PiEstimator::Tuba => Some(Baseline::new(
                &mut store,
                "baseline",
                BaselineKind::LearnedNetwork,
                code_width,
                config.critic_hidden,
            )?),
            _ => None,
        };
        let marginal = match config.compression {
            Compression::Vub => Some(VariationalMarginal::new(
                &mut store,
                "marginal",
                code_width,
                config.marginal == MarginalKind::Learnable,
            )?),
            _ => None,
        };
        let decoder = match config.pi_estimator {
            PiEstimator::Lba => Some(GaussianDecoder::new(
                &mut store,
                "decoder",
                code_width,
                code_width,
                Some(config.critic_hidden),
            )?),
            _ => None,
        };
        let mut model = Self {
            input_dim,
            preprocessing: Preprocessing::identity(input_dim),
            nets: CpicNetworks {
                encoder,
                critic,
                baseline,
                marginal,
                decoder,
            },
            store,
            config,
        };
        if model.config.orthonormalize {
            model.nets.encoder.retract(&mut model.store)?;
        }
        Ok(model)
    }

    pub fn u_matrix(&self) -> DMatrix<f64> {
        self.nets.encoder.u_matrix(&self.store)
    }

    /// Evaluates the configured stochastic loss on one batch and accumulates
    /// its gradient. Not defined for the Gaussian estimator, which is
    /// full-batch.
    pub fn batch_loss(&mut self, batch: &WindowPairBatch, rng: &mut Rng) -> Result<LossParts> {
        let c = &self.config;
        let nets = &self.nets;
        let compression = match c.compression {
            Compression::None => CompressionTerm::None,
            Compression::Vub => {
                CompressionTerm::Vub(nets.marginal.as_ref().expect("marginal built with vub"))
            }
            Compression::L1out => CompressionTerm::L1Out {
                log_density_floor: c.log_density_floor,
            },
        };
        let pi = match c.pi_estimator {
            PiEstimator::Infonce => PiTerm::InfoNce(nets.critic.as_ref().expect("critic")),
            PiEstimator::Nwj | PiEstimator::Mine | PiEstimator::Tuba => PiTerm::Tuba {
                critic: nets.critic.as_ref().expect("critic"),
                baseline: nets.baseline.as_ref().expect("baseline"),
                form: c.tuba_form,
            },
            PiEstimator::Lba => PiTerm::Lba(nets.decoder.as_ref().expect("decoder")),
            PiEstimator::Gaussian => {
                return Err(CpicError::Unsupported(
                    "the gaussian estimator is evaluated on the full series, not on batches".into(),
                ))
            }
        };
        cpic_loss(
            &nets.encoder,
            compression,
            pi,
            c.beta,
            &mut self.store,
            batch,
            rng,
        )
    }

    /// Per-step mean codes `µ_t` of a raw (unpreprocessed) series.
    pub fn project(&self, series: &Series) -> Result<Series> {
        let x = self.preprocessing.apply(series)?;
        let d = self.config.latent_dim;
        let mut out = Vec::with_capacity(x.len() * d);
        for t in 0..x.len() {
            out.extend(self.nets.encoder.encode_mean(&self.store, x.row(t))?);
        }
        let names = (0..d).map(|k| format!("y{k}")).collect();
        Series::from_rows(x.len(), d, out)?.with_names(names)
    }
}
