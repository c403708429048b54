use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ndmath::{
    Activation, Init, Mlp, MlpSpec, MlpTrace, OutputTransform, ParamId, ParamStore,
};

/// Variational conditional `q(y_future | y_past) = N(net(y_past), diag(exp(2 s)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianDecoder {
    pub mean: Mlp,
    pub log_sigma: ParamId,
}

impl GaussianDecoder {
    /// `hidden = None` gives an affine mean map.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        past_dim: usize,
        future_dim: usize,
        hidden: Option<usize>,
    ) -> Result<Self> {
        let widths = match hidden {
            Some(h) => vec![past_dim, h, future_dim],
            None => vec![past_dim, future_dim],
        };
        let mean = Mlp::new(
            store,
            &format!("{prefix}.mean"),
            MlpSpec::new(widths, Activation::Tanh, OutputTransform::Identity),
        )?;
        let log_sigma = store.add(&format!("{prefix}.log_sigma"), future_dim, 1, Init::Zeros)?;
        Ok(Self { mean, log_sigma })
    }

    pub(crate) fn forward(&self, store: &ParamStore, past: &[f64]) -> Result<MlpTrace> {
        self.mean.forward(store, past)
    }
}
