use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ndmath::{Init, ParamId, ParamStore};

/// Diagonal Gaussian `r(y) = N(m, diag(exp(2 s)))` standing in for the
/// marginal of the window codes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalMarginal {
    pub mean: ParamId,
    pub log_sigma: ParamId,
    pub learnable: bool,
}

impl VariationalMarginal {
    /// Starts at the standard normal. A non-learnable marginal stays there.
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, learnable: bool) -> Result<Self> {
        let mean = store.add(&format!("{prefix}.mean"), dim, 1, Init::Zeros)?;
        let log_sigma = store.add(&format!("{prefix}.log_sigma"), dim, 1, Init::Zeros)?;
        store.set_trainable(mean, learnable);
        store.set_trainable(log_sigma, learnable);
        Ok(Self {
            mean,
            log_sigma,
            learnable,
        })
    }

    pub fn dim(&self, store: &ParamStore) -> usize {
        store.value(self.mean).len()
    }
}
