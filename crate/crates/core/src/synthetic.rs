//! Forecasting task whose predictive subspace is not the high-variance one.
//!
//! A slow, lightly damped 2-D oscillator with unit variance is embedded in an
//! `N`-channel observation together with `k` channels of loud white noise and
//! weak isotropic noise. Variance-maximizing projections pick the white noise;
//! only a projection that seeks temporal predictability recovers the
//! oscillator.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CpicError, Result};
use crate::ndmath::orthonormalize_columns;
use crate::rng::{domain, substream};
use crate::series::Series;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenOscillatorConfig {
    pub len: usize,
    pub observed_dim: usize,
    /// Oscillator period in steps.
    pub period: f64,
    /// Per-step radius retention of the rotation, below 1.
    pub damping: f64,
    /// Number of white-noise directions.
    pub loud_dims: usize,
    /// Standard deviation of each white-noise direction; the oscillator has
    /// unit standard deviation per coordinate.
    pub loud_std: f64,
    /// Isotropic observation noise standard deviation.
    pub floor_std: f64,
    pub seed: u64,
}

impl Default for HiddenOscillatorConfig {
    fn default() -> Self {
        Self {
            len: 6000,
            observed_dim: 10,
            period: 40.0,
            damping: 0.98,
            loud_dims: 2,
            loud_std: 4.0,
            floor_std: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HiddenOscillator {
    pub observed: Series,
    /// Unit-variance oscillator coordinates, the forecasting target.
    pub latents: Series,
    /// Orthonormal `observed_dim × (2 + loud_dims)` mixing; the first two
    /// columns carry the oscillator.
    pub mixing: DMatrix<f64>,
}

pub fn hidden_oscillator(cfg: &HiddenOscillatorConfig) -> Result<HiddenOscillator> {
    let k = 2 + cfg.loud_dims;
    if cfg.observed_dim < k {
        return Err(CpicError::Config(format!(
            "observed dimension {} cannot hold {k} mixed sources",
            cfg.observed_dim
        )));
    }
    if !(0.0..1.0).contains(&cfg.damping) || cfg.period <= 2.0 {
        return Err(CpicError::Config(
            "damping must lie in [0, 1) and the period exceed 2".into(),
        ));
    }
    let mut rng = substream(cfg.seed, domain::SYNTHETIC, 0);
    let raw = DMatrix::from_fn(cfg.observed_dim, k, |_, _| {
        rng.sample::<f64, _>(StandardNormal)
    });
    let mixing = orthonormalize_columns(&raw);

    // Stationary variance of a damped rotation driven by unit noise is 1/(1−r²).
    let (r, w) = (cfg.damping, std::f64::consts::TAU / cfg.period);
    let drive = (1.0 - r * r).sqrt();
    let (c, s) = (r * w.cos(), r * w.sin());
    let burn_in = (10.0 / (1.0 - r)).ceil() as usize;
    let mut state = [0.0f64; 2];
    let mut latents = Vec::with_capacity(cfg.len * 2);
    let mut observed = Vec::with_capacity(cfg.len * cfg.observed_dim);
    for t in 0..burn_in + cfg.len {
        let e: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        state = [
            c * state[0] - s * state[1] + drive * e[0],
            s * state[0] + c * state[1] + drive * e[1],
        ];
        if t < burn_in {
            continue;
        }
        let mut sources = Vec::with_capacity(k);
        sources.extend(state);
        sources.extend(
            (0..cfg.loud_dims).map(|_| cfg.loud_std * rng.sample::<f64, _>(StandardNormal)),
        );
        for i in 0..cfg.observed_dim {
            let mixed: f64 = (0..k).map(|j| mixing[(i, j)] * sources[j]).sum();
            observed.push(mixed + cfg.floor_std * rng.sample::<f64, _>(StandardNormal));
        }
        latents.extend(state);
    }
    Ok(HiddenOscillator {
        observed: Series::from_rows(cfg.len, cfg.observed_dim, observed)?,
        latents: Series::from_rows(cfg.len, 2, latents)?
            .with_names(vec!["s0".into(), "s1".into()])?,
        mixing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{forecast_r2, pca_project, ForecastTask};

    #[test]
    fn oscillator_is_unit_variance_and_hidden_from_pca() {
        let task = hidden_oscillator(&HiddenOscillatorConfig::default()).unwrap();
        let var = task
            .latents
            .center()
            .series
            .data()
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            / (2.0 * 6000.0);
        assert!((var - 1.0).abs() < 0.2, "{var}");
        let gram = task.mixing.transpose() * &task.mixing;
        assert!((gram - DMatrix::identity(4, 4)).norm() < 1e-10);

        // Oracle projection onto the oscillator columns forecasts well; PCA does not.
        let oracle = task.mixing.columns(0, 2).into_owned();
        let x = task.observed.to_matrix();
        let proj = Series::from_matrix(&(x * oracle)).unwrap();
        let good = forecast_r2(&ForecastTask::new(&proj, &task.latents, 5))
            .unwrap()
            .mean_r2;
        let pca = pca_project(&task.observed, 2).unwrap();
        let bad = forecast_r2(&ForecastTask::new(&pca, &task.latents, 5))
            .unwrap()
            .mean_r2;
        assert!(good > 0.5, "oracle {good}");
        assert!(bad < 0.1, "pca {bad}");
    }

    #[test]
    fn deterministic_and_validated() {
        let cfg = HiddenOscillatorConfig {
            len: 200,
            ..Default::default()
        };
        assert_eq!(
            hidden_oscillator(&cfg).unwrap().observed,
            hidden_oscillator(&cfg).unwrap().observed
        );
        assert!(hidden_oscillator(&HiddenOscillatorConfig {
            observed_dim: 3,
            ..cfg.clone()
        })
        .is_err());
        assert!(hidden_oscillator(&HiddenOscillatorConfig {
            damping: 1.0,
            ..cfg
        })
        .is_err());
    }
}
