use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::config::{CpicConfig, PiEstimator};
use super::model::{CpicModel, Preprocessing};
use crate::error::{CpicError, Result};
use crate::mibounds::GaussianPi;
use crate::ndmath::{to_row_major, AdamConfig, AdamState};
use crate::rng::{domain, substream};
use crate::series::{LaggedCovariance, Series};

/// Per-run record. Traces hold one entry per completed step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: CpicConfig,
    pub seed: u64,
    pub input_dim: usize,
    pub loss: Vec<f64>,
    pub compression: Vec<f64>,
    pub pi: Vec<f64>,
    pub clamp_events: u64,
    pub wall_time_secs: f64,
    /// Final `U`, row-major `N × D`.
    pub final_u: Vec<f64>,
}

impl TrainReport {
    pub fn final_pi(&self) -> Option<f64> {
        self.pi.last().copied()
    }
}

/// `−gaussian_pi` and its gradient in `U`.
pub fn gaussian_objective(
    u: &DMatrix<f64>,
    cov: &LaggedCovariance,
    window: usize,
) -> Result<(f64, DMatrix<f64>)> {
    let (v, g) = GaussianPi::new(cov, window)?.value_and_grad(u)?;
    Ok((-v, -g))
}

fn diverged(step: usize, report: &TrainReport, what: &str) -> CpicError {
    CpicError::Diverged {
        step,
        reason: format!(
            "{what}; last finite loss {:?}, compression {:?}, PI {:?}",
            report.loss.last(),
            report.compression.last(),
            report.pi.last()
        ),
    }
}

/// Trains a model on `series` with Adam. Fully determined by the config
/// (including its seed) and the data.
pub fn train(config: &CpicConfig, series: &Series) -> Result<(CpicModel, TrainReport)> {
    config.validate()?;
    let started = Instant::now();
    let (preprocessing, data) = Preprocessing::fit(series, config.preprocess);
    let (lo, hi) = data.anchor_range(config.window)?;
    let mut model = CpicModel::new(config.clone(), series.dim())?;
    model.preprocessing = preprocessing;
    let mut adam = AdamState::new(
        &model.store,
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut report = TrainReport {
        config: config.clone(),
        seed: config.seed,
        input_dim: series.dim(),
        loss: Vec::with_capacity(config.steps),
        compression: Vec::with_capacity(config.steps),
        pi: Vec::with_capacity(config.steps),
        clamp_events: 0,
        wall_time_secs: 0.0,
        final_u: Vec::new(),
    };
    let gaussian = if config.pi_estimator == PiEstimator::Gaussian {
        Some(GaussianPi::new(
            &data.lagged_covariance(2 * config.window - 1)?,
            config.window,
        )?)
    } else {
        None
    };
    model.store.zero_grads();
    for step in 0..config.steps {
        let parts = match &gaussian {
            Some(pi) => {
                let (v, g) = pi.value_and_grad(&model.u_matrix())?;
                let neg: Vec<f64> = to_row_major(&g).iter().map(|x| -x).collect();
                model.store.accumulate(model.nets.encoder.u_id(), &neg);
                super::LossParts {
                    loss: -v,
                    compression: 0.0,
                    pi: v,
                    clamp_events: 0,
                }
            }
            None => {
                let mut rng = substream(config.seed, domain::TRAIN_STEP, step as u64);
                let anchors: Vec<usize> = (0..config.batch_size)
                    .map(|_| rng.random_range(lo..=hi))
                    .collect();
                let batch = data.window_pairs(config.window, &anchors)?;
                model.batch_loss(&batch, &mut rng)?
            }
        };
        if !(parts.loss.is_finite() && parts.compression.is_finite() && parts.pi.is_finite()) {
            return Err(diverged(step, &report, "non-finite loss"));
        }
        if let Err(e) = adam.step(&mut model.store) {
            return Err(diverged(step, &report, &e.to_string()));
        }
        if config.orthonormalize {
            model.nets.encoder.retract(&mut model.store)?;
        }
        report.loss.push(parts.loss);
        report.compression.push(parts.compression);
        report.pi.push(parts.pi);
        report.clamp_events += parts.clamp_events;
        if step % 500 == 0 {
            log::debug!(
                "step {step}: loss {:.4} compression {:.4} pi {:.4}",
                parts.loss,
                parts.compression,
                parts.pi
            );
        }
    }
    report.final_u = to_row_major(&model.u_matrix());
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok((model, report))
}
