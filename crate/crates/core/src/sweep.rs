//! SNR × method × seed grid on the Lorenz benchmark.
//!
//! The dataset (trajectory, embedding, noise draw) depends only on the data
//! seed and the SNR level; training seeds vary the model initialization and
//! minibatch stream. Runs execute in parallel and are merged in
//! `(SNR, method, seed)` order, so the report is independent of scheduling.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CpicError, Result};
use crate::eval::{align_r2, pca_project, sweep_report, RunReport, SweepReport};
use crate::lorenz::{generate, snr_grid, LorenzConfig, NoiseSpectrum};
use crate::objective::{train, CpicConfig, PiEstimator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum SweepMethod {
    /// Multi-sample stochastic CPIC (L1Out + InfoNCE).
    Cpic,
    /// Deterministic encoder trained on InfoNCE alone.
    CpicDet,
    /// Uni-sample stochastic CPIC (VUB + the given TUBA-family bound).
    CpicUni(PiEstimator),
    /// Deterministic encoder on the closed-form Gaussian PI.
    Dca,
    Pca,
}

impl SweepMethod {
    pub const ALL: [SweepMethod; 7] = [
        SweepMethod::Cpic,
        SweepMethod::CpicDet,
        SweepMethod::CpicUni(PiEstimator::Nwj),
        SweepMethod::CpicUni(PiEstimator::Mine),
        SweepMethod::CpicUni(PiEstimator::Tuba),
        SweepMethod::Dca,
        SweepMethod::Pca,
    ];

    /// Training configuration, or `None` for PCA.
    pub fn config(self, latent_dim: usize, window: usize) -> Option<CpicConfig> {
        match self {
            SweepMethod::Cpic => Some(CpicConfig::multi(latent_dim, window)),
            SweepMethod::CpicDet => Some(CpicConfig::multi(latent_dim, window).deterministic()),
            SweepMethod::CpicUni(pi) => Some(CpicConfig::uni(latent_dim, window, pi)),
            SweepMethod::Dca => Some(CpicConfig::gaussian(latent_dim, window)),
            SweepMethod::Pca => None,
        }
    }

    /// Whether repeated seeds give different results.
    pub fn is_seeded(self) -> bool {
        !matches!(self, SweepMethod::Pca)
    }
}

impl fmt::Display for SweepMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SweepMethod::Cpic => "cpic",
            SweepMethod::CpicDet => "cpic-det",
            SweepMethod::CpicUni(PiEstimator::Nwj) => "cpic-nwj",
            SweepMethod::CpicUni(PiEstimator::Mine) => "cpic-mine",
            SweepMethod::CpicUni(PiEstimator::Tuba) => "cpic-tuba",
            SweepMethod::CpicUni(other) => return write!(f, "cpic-{other:?}"),
            SweepMethod::Dca => "dca",
            SweepMethod::Pca => "pca",
        };
        f.write_str(s)
    }
}

impl FromStr for SweepMethod {
    type Err = CpicError;

    fn from_str(s: &str) -> Result<Self> {
        SweepMethod::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| {
                let names: Vec<String> = SweepMethod::ALL.iter().map(|m| m.to_string()).collect();
                CpicError::Config(format!(
                    "unknown method {s:?}; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

impl From<SweepMethod> for String {
    fn from(m: SweepMethod) -> Self {
        m.to_string()
    }
}

impl TryFrom<String> for SweepMethod {
    type Error = CpicError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub levels: usize,
    pub seeds: Vec<u64>,
    pub methods: Vec<SweepMethod>,
    /// Base data configuration; its `snr` is replaced by each grid level.
    pub data: LorenzConfig,
    pub latent_dim: usize,
    pub window: usize,
    /// Overrides every method's training step count.
    pub steps: Option<usize>,
    /// Overrides every stochastic method's batch size.
    pub batch_size: Option<usize>,
    /// Keep per-time-step alignment errors in each run report.
    pub pointwise_errors: bool,
    /// Keep training traces in each run report.
    pub keep_traces: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            levels: 10,
            seeds: vec![0, 1, 2],
            methods: vec![SweepMethod::Cpic],
            data: LorenzConfig::default(),
            latent_dim: 3,
            window: 4,
            steps: None,
            batch_size: None,
            pointwise_errors: false,
            keep_traces: false,
        }
    }
}

impl SweepConfig {
    /// Identifier shared by every run of this grid.
    pub fn benchmark_id(&self) -> String {
        let noise = match self.data.noise {
            NoiseSpectrum::Wishart => "wishart".to_string(),
            NoiseSpectrum::Decaying { dim } => format!("decaying{dim}"),
        };
        format!(
            "lorenz-n{}-l{}-{}-data{}",
            self.data.embed_dim,
            self.data.params.steps - self.data.params.burn_in,
            noise,
            self.data.seed
        )
    }

    pub fn method_config(&self, method: SweepMethod, seed: u64) -> Option<CpicConfig> {
        let mut c = method.config(self.latent_dim, self.window)?;
        c.seed = seed;
        if let Some(steps) = self.steps {
            c.steps = steps;
        }
        if let (Some(b), false) = (self.batch_size, c.pi_estimator == PiEstimator::Gaussian) {
            c.batch_size = b;
        }
        Some(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutput {
    pub config: SweepConfig,
    pub report: SweepReport,
    pub runs: Vec<RunReport>,
}

/// Runs the full grid. Unseeded methods run once per level with seed 0.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutput> {
    if cfg.seeds.is_empty() || cfg.methods.is_empty() {
        return Err(CpicError::Config(
            "sweep needs at least one seed and one method".into(),
        ));
    }
    let grid = snr_grid(cfg.levels)?;
    let benchmark = cfg.benchmark_id();
    let datasets = grid
        .par_iter()
        .map(|&snr| {
            generate(&LorenzConfig {
                snr,
                ..cfg.data.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut jobs = Vec::new();
    for level in 0..grid.len() {
        for &method in &cfg.methods {
            let seeds: &[u64] = if method.is_seeded() { &cfg.seeds } else { &[0] };
            for &seed in seeds {
                jobs.push((level, method, seed));
            }
        }
    }
    let runs = jobs
        .par_iter()
        .map(|&(level, method, seed)| {
            let data = &datasets[level];
            let (latents, train_report) = match cfg.method_config(method, seed) {
                Some(c) => {
                    let (model, report) = train(&c, &data.noisy)?;
                    (model.project(&data.noisy)?, Some(report))
                }
                None => (pca_project(&data.noisy, cfg.latent_dim)?, None),
            };
            let aligned = align_r2(&latents, &data.latents)?;
            log::info!(
                "{method} snr {:.5} seed {seed}: R2 {:.4}",
                grid[level],
                aligned.r2
            );
            Ok(RunReport {
                benchmark: benchmark.clone(),
                method: method.to_string(),
                snr: grid[level],
                seed,
                r2: aligned.r2,
                train: train_report.filter(|_| cfg.keep_traces),
                pointwise_errors: if cfg.pointwise_errors {
                    aligned.pointwise_errors
                } else {
                    Vec::new()
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = sweep_report(&runs)?;
    Ok(SweepOutput {
        config: cfg.clone(),
        report,
        runs,
    })
}
