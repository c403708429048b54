//! Self-describing JSON snapshot of a trained model.
//!
//! Floats are written in shortest round-trip form, so
//! serialize → parse → serialize reproduces the same bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CpicError, Result};
use crate::objective::{CpicConfig, CpicModel, Preprocessing, TrainReport};

pub const FORMAT_VERSION: u32 = 1;

/// A parameter block in the store's row-major layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedParam {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weight: NamedParam,
    pub bias: NamedParam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub deterministic: bool,
    /// Projection `U`, `input_dim × latent_dim`, row-major.
    pub u: NamedParam,
    /// Variance network, input layer first. Empty for deterministic encoders.
    pub variance_layers: Vec<LayerParams>,
    /// Unconstrained floor parameter; the floor is its softplus.
    pub floor: Option<NamedParam>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub config: CpicConfig,
    pub input_dim: usize,
    pub seed: u64,
    pub preprocessing: Preprocessing,
    pub encoder: EncoderParams,
    /// Critic, baseline, marginal and decoder parameters.
    pub auxiliary: Vec<NamedParam>,
    /// SHA-256 of the loss, compression and PI traces, when training produced them.
    pub traces_digest: Option<String>,
}

/// Hex SHA-256 over the little-endian bytes of every trace, in the order
/// loss, compression, PI.
pub fn traces_digest(report: &TrainReport) -> String {
    let mut hasher = Sha256::new();
    for trace in [&report.loss, &report.compression, &report.pi] {
        hasher.update((trace.len() as u64).to_le_bytes());
        for v in trace {
            hasher.update(v.to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}

fn snapshot(model: &CpicModel, name: &str) -> Result<NamedParam> {
    let id = model
        .store
        .find(name)
        .ok_or_else(|| CpicError::Degenerate(format!("model has no parameter `{name}`")))?;
    let p = model.store.param(id);
    Ok(NamedParam {
        name: p.name.clone(),
        rows: p.rows,
        cols: p.cols,
        values: p.value.clone(),
    })
}

impl ModelArtifact {
    pub fn from_model(model: &CpicModel, report: Option<&TrainReport>) -> Result<Self> {
        let enc = &model.nets.encoder;
        let name_of = |id| model.store.param(id).name.clone();
        let u = snapshot(model, &name_of(enc.u_id()))?;
        let mut variance_layers = Vec::new();
        if let Some(mlp) = enc.variance_net() {
            for (w, b) in mlp.layer_params() {
                variance_layers.push(LayerParams {
                    weight: snapshot(model, &name_of(w))?,
                    bias: snapshot(model, &name_of(b))?,
                });
            }
        }
        let floor = match enc.floor_id() {
            Some(id) => Some(snapshot(model, &name_of(id))?),
            None => None,
        };
        let mut encoder_names: Vec<&str> = vec![&u.name];
        for l in &variance_layers {
            encoder_names.extend([l.weight.name.as_str(), l.bias.name.as_str()]);
        }
        if let Some(f) = &floor {
            encoder_names.push(&f.name);
        }
        let auxiliary = model
            .store
            .params()
            .iter()
            .filter(|p| !encoder_names.contains(&p.name.as_str()))
            .map(|p| snapshot(model, &p.name))
            .collect::<Result<Vec<_>>>()?;
        let encoder = EncoderParams {
            deterministic: enc.is_deterministic(),
            u,
            variance_layers,
            floor,
        };
        Ok(Self {
            format_version: FORMAT_VERSION,
            config: model.config.clone(),
            input_dim: model.input_dim,
            seed: model.config.seed,
            preprocessing: model.preprocessing.clone(),
            encoder,
            auxiliary,
            traces_digest: report.map(traces_digest),
        })
    }

    fn params(&self) -> impl Iterator<Item = &NamedParam> {
        let e = &self.encoder;
        std::iter::once(&e.u)
            .chain(e.variance_layers.iter().flat_map(|l| [&l.weight, &l.bias]))
            .chain(e.floor.iter())
            .chain(self.auxiliary.iter())
    }

    /// Rebuilds the model from its configuration, then overwrites every
    /// parameter by name. Every store parameter must be covered exactly once.
    pub fn to_model(&self) -> Result<CpicModel> {
        if self.format_version != FORMAT_VERSION {
            return Err(CpicError::Unsupported(format!(
                "model artifact format {} (this build reads {FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.seed != self.config.seed {
            return Err(CpicError::Config(format!(
                "artifact seed {} disagrees with its config seed {}",
                self.seed, self.config.seed
            )));
        }
        let mut model = CpicModel::new(self.config.clone(), self.input_dim)?;
        if self.encoder.deterministic != model.nets.encoder.is_deterministic() {
            return Err(CpicError::Config(
                "encoder mode disagrees with the config".into(),
            ));
        }
        if self.preprocessing.mean.len() != self.input_dim {
            return Err(CpicError::shape(
                "preprocessing mean",
                self.input_dim,
                self.preprocessing.mean.len(),
            ));
        }
        let mut seen = vec![false; model.store.len()];
        for p in self.params() {
            let id = model.store.find(&p.name).ok_or_else(|| {
                CpicError::Config(format!(
                    "artifact parameter `{}` is not part of this model",
                    p.name
                ))
            })?;
            let target = model.store.param(id);
            if (target.rows, target.cols) != (p.rows, p.cols) {
                return Err(CpicError::shape(
                    format!("parameter `{}`", p.name),
                    format!("{}x{}", target.rows, target.cols),
                    format!("{}x{}", p.rows, p.cols),
                ));
            }
            if std::mem::replace(&mut seen[id.index()], true) {
                return Err(CpicError::Config(format!(
                    "artifact lists parameter `{}` twice",
                    p.name
                )));
            }
            model.store.set_value(id, &p.values)?;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(CpicError::Config(format!(
                "artifact is missing parameter `{}`",
                model.store.params()[i].name
            )));
        }
        model.preprocessing = self.preprocessing.clone();
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|source| CpicError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CpicError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}
