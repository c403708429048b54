//! Mutual-information estimators on a Gaussian channel with known answer.
//!
//! `x ~ N(0, I_d)`, `y = ρx + √(1−ρ²) ε` has `I(X; Y) = −(d/2) ln(1−ρ²)`.
//! Lower bounds train a critic (or decoder) on fresh batches; the L1Out and
//! VUB upper bounds use the exact channel conditional. Every estimate is the
//! mean over evaluation batches drawn after training.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::encoder::diag_gaussian_log_density;
use crate::error::{CpicError, Result};
use crate::mibounds::{
    infonce, l1out, lba, tuba, vub, Baseline, BaselineKind, BaselineTrace, Critic, CriticKind,
    CriticSpec, CriticTrace, GaussianDecoder, ScoreMatrix, TubaForm, VariationalMarginal,
};
use crate::ndmath::{AdamConfig, AdamState, ParamStore};
use crate::rng::{domain, substream, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTestConfig {
    pub rho: f64,
    pub dim: usize,
    pub batch: usize,
    pub steps: usize,
    pub eval_batches: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SelfTestConfig {
    fn default() -> Self {
        Self {
            rho: 0.5,
            dim: 1,
            batch: 128,
            steps: 2000,
            eval_batches: 50,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl SelfTestConfig {
    pub fn truth(&self) -> f64 {
        -0.5 * self.dim as f64 * (1.0 - self.rho * self.rho).ln()
    }

    fn validate(&self) -> Result<()> {
        if !(self.rho.abs() < 1.0) {
            return Err(CpicError::Config(format!(
                "|rho| must be below 1, got {}",
                self.rho
            )));
        }
        if self.dim == 0 || self.batch < 2 || self.eval_batches == 0 {
            return Err(CpicError::Config(
                "dim, eval batches must be positive and batch at least 2".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundSide {
    Lower,
    Upper,
    /// Not a bound on `I(X; Y)` by itself.
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorResult {
    pub name: String,
    pub side: BoundSide,
    pub estimate: f64,
    /// Standard error of the mean over evaluation batches.
    pub std_error: f64,
    /// Pass band as multiples of the true MI; `None` for informational rows.
    pub band: Option<(f64, f64)>,
    pub pass: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfTestReport {
    pub config: SelfTestConfig,
    pub truth: f64,
    pub results: Vec<EstimatorResult>,
}

impl SelfTestReport {
    pub fn get(&self, name: &str) -> Option<&EstimatorResult> {
        self.results.iter().find(|r| r.name == name)
    }

    pub fn all_pass(&self) -> bool {
        self.results.iter().all(|r| r.pass != Some(false))
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "truth {:.4} nats (rho {}, dim {})\n",
            self.truth, self.config.rho, self.config.dim
        );
        for r in &self.results {
            let flag = match r.pass {
                Some(true) => "PASS",
                Some(false) => "FAIL",
                None => "info",
            };
            let band = r
                .band
                .map(|(lo, hi)| {
                    let hi = if hi.is_finite() {
                        format!("{:.4}", hi * self.truth)
                    } else {
                        "inf".into()
                    };
                    format!("[{:.4}, {hi}]", lo * self.truth)
                })
                .unwrap_or_default();
            out.push_str(&format!(
                "{:<10} {:>8.4} ± {:.4}  {:<5} {}\n",
                r.name, r.estimate, r.std_error, flag, band
            ));
        }
        out
    }
}

struct Pairs {
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
}

fn draw(cfg: &SelfTestConfig, rng: &mut Rng) -> Pairs {
    let noise = (1.0 - cfg.rho * cfg.rho).sqrt();
    let mut x = Vec::with_capacity(cfg.batch);
    let mut y = Vec::with_capacity(cfg.batch);
    for _ in 0..cfg.batch {
        let xi: Vec<f64> = (0..cfg.dim).map(|_| rng.sample(StandardNormal)).collect();
        let yi = xi
            .iter()
            .map(|v| cfg.rho * v + noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        x.push(xi);
        y.push(yi);
    }
    Pairs { x, y }
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, (var / n).sqrt())
}

/// Trains with `step_fn` (which returns its estimate and adds the gradient of
/// `−estimate`), then averages `eval_fn` over fresh batches.
fn fit_and_evaluate(
    cfg: &SelfTestConfig,
    tag: u64,
    store: &mut ParamStore,
    lr: f64,
    mut step_fn: impl FnMut(&mut ParamStore, &Pairs) -> Result<f64>,
    mut eval_fn: impl FnMut(&ParamStore, &Pairs) -> Result<f64>,
) -> Result<(f64, f64)> {
    let mut adam = AdamState::new(
        store,
        AdamConfig {
            learning_rate: lr,
            ..AdamConfig::default()
        },
    );
    store.zero_grads();
    for step in 0..cfg.steps {
        let mut rng = substream(cfg.seed, domain::SELFTEST, tag << 32 | step as u64);
        let batch = draw(cfg, &mut rng);
        let v = step_fn(store, &batch)?;
        if !v.is_finite() {
            return Err(CpicError::Diverged {
                step,
                reason: format!("self-test estimator {tag} produced {v}"),
            });
        }
        adam.step(store)?;
    }
    let values = (0..cfg.eval_batches)
        .map(|b| {
            let mut rng = substream(cfg.seed, domain::EVAL, tag << 32 | b as u64);
            eval_fn(store, &draw(cfg, &mut rng))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_and_se(&values))
}

/// Value, score cotangent, baseline cotangent and the traces to replay.
type Estimate = (
    f64,
    ScoreMatrix,
    Vec<f64>,
    CriticTrace,
    Option<BaselineTrace>,
);

fn critic_for(cfg: &SelfTestConfig, store: &mut ParamStore) -> Result<Critic> {
    Critic::new(
        store,
        "critic",
        CriticSpec::new(CriticKind::Separable, cfg.dim, cfg.dim),
    )
}

fn critic_bound(cfg: &SelfTestConfig, tag: u64, kind: Option<BaselineKind>) -> Result<(f64, f64)> {
    let mut store = ParamStore::new(cfg.seed ^ tag);
    let critic = critic_for(cfg, &mut store)?;
    let baseline = match kind {
        Some(BaselineKind::LearnedNetwork) => Some(Baseline::new(
            &mut store,
            "baseline",
            BaselineKind::LearnedNetwork,
            cfg.dim,
            64,
        )?),
        Some(k) => Some(Baseline::constant(k)),
        None => None,
    };
    let estimate = |store: &ParamStore, p: &Pairs| -> Result<Estimate> {
        let (scores, trace) = critic.score_matrix(store, &p.x, &p.y)?;
        match &baseline {
            None => {
                let b = infonce(&scores)?;
                Ok((b.value, b.d_scores, Vec::new(), trace, None))
            }
            Some(base) => {
                let (log_a, bt) = base.log_values(store, &p.y)?;
                let b = tuba(&scores, &log_a, TubaForm::Standard)?;
                Ok((b.value, b.d_scores, b.d_log_baseline, trace, Some(bt)))
            }
        }
    };
    fit_and_evaluate(
        cfg,
        tag,
        &mut store,
        cfg.learning_rate,
        |store, p| {
            let (v, d, d_log, trace, bt) = estimate(store, p)?;
            critic.backward(store, &trace, &d.map(|g| -g));
            if let (Some(base), Some(bt)) = (&baseline, bt) {
                let neg: Vec<f64> = d_log.iter().map(|g| -g).collect();
                base.backward(store, &bt, &neg, cfg.dim);
            }
            Ok(v)
        },
        |store, p| estimate(store, p).map(|e| e.0),
    )
}

fn channel_sigma(cfg: &SelfTestConfig) -> f64 {
    (1.0 - cfg.rho * cfg.rho).sqrt()
}

fn l1out_known_channel(cfg: &SelfTestConfig) -> Result<(f64, f64)> {
    let sigma = vec![channel_sigma(cfg); cfg.dim];
    let values = (0..cfg.eval_batches)
        .map(|b| {
            let mut rng = substream(cfg.seed, domain::EVAL, 3 << 32 | b as u64);
            let p = draw(cfg, &mut rng);
            let means: Vec<Vec<f64>> =
                p.x.iter()
                    .map(|x| x.iter().map(|v| cfg.rho * v).collect())
                    .collect();
            let m = ScoreMatrix::from_fn(cfg.batch, |i, j| {
                diag_gaussian_log_density(&p.y[i], &means[j], &sigma)
            });
            l1out(&m).map(|b| b.value)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_and_se(&values))
}

fn vub_learned_marginal(cfg: &SelfTestConfig) -> Result<(f64, f64)> {
    let mut store = ParamStore::new(cfg.seed ^ 4);
    let marginal = VariationalMarginal::new(&mut store, "marginal", cfg.dim, true)?;
    let sigma = vec![vec![channel_sigma(cfg); cfg.dim]; cfg.batch];
    let eval = |store: &ParamStore, p: &Pairs| {
        let mu: Vec<Vec<f64>> =
            p.x.iter()
                .map(|x| x.iter().map(|v| cfg.rho * v).collect())
                .collect();
        vub(
            &mu,
            &sigma,
            store.value(marginal.mean),
            store.value(marginal.log_sigma),
        )
    };
    fit_and_evaluate(
        cfg,
        4,
        &mut store,
        cfg.learning_rate,
        |store, p| {
            let b = eval(store, p)?;
            store.accumulate(marginal.mean, &b.d_marginal_mean);
            store.accumulate(marginal.log_sigma, &b.d_marginal_log_sigma);
            Ok(b.value)
        },
        |store, p| eval(store, p).map(|b| b.value),
    )
}

/// Decoder log-likelihood; adding the known `H(Y)` turns it into an MI estimate.
fn lba_decoder(cfg: &SelfTestConfig) -> Result<(f64, f64)> {
    let mut store = ParamStore::new(cfg.seed ^ 6);
    let decoder = GaussianDecoder::new(&mut store, "decoder", cfg.dim, cfg.dim, None)?;
    fit_and_evaluate(
        cfg,
        6,
        &mut store,
        cfg.learning_rate * 10.0,
        |store, p| {
            let b = lba(&decoder, store, &p.x, &p.y)?;
            b.backward(&decoder, store, &p.y, -1.0);
            Ok(b.value)
        },
        |store, p| lba(&decoder, store, &p.x, &p.y).map(|b| b.value),
    )
}

/// Runs every estimator. Pass bands (multiples of the truth): InfoNCE
/// `[0.625, 1.11]`, NWJ `[0.487, 1.25]`, L1Out and VUB `≥ 0.834`.
pub fn run_selftest(cfg: &SelfTestConfig) -> Result<SelfTestReport> {
    cfg.validate()?;
    let truth = cfg.truth();
    let entropy_y = 0.5 * cfg.dim as f64 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    let mut results = Vec::new();
    let mut push =
        |name: &str, side, (estimate, std_error): (f64, f64), band: Option<(f64, f64)>| {
            let pass = band.map(|(lo, hi)| estimate >= lo * truth && estimate <= hi * truth);
            results.push(EstimatorResult {
                name: name.into(),
                side,
                estimate,
                std_error,
                band,
                pass,
            });
        };
    push(
        "infonce",
        BoundSide::Lower,
        critic_bound(cfg, 1, None)?,
        Some((0.625, 1.11)),
    );
    push(
        "nwj",
        BoundSide::Lower,
        critic_bound(cfg, 2, Some(BaselineKind::ConstantE))?,
        Some((0.487, 1.25)),
    );
    push(
        "l1out",
        BoundSide::Upper,
        l1out_known_channel(cfg)?,
        Some((0.834, f64::INFINITY)),
    );
    push(
        "vub",
        BoundSide::Upper,
        vub_learned_marginal(cfg)?,
        Some((0.834, f64::INFINITY)),
    );
    push(
        "mine",
        BoundSide::Lower,
        critic_bound(cfg, 5, Some(BaselineKind::ConstantOne))?,
        None,
    );
    push(
        "tuba",
        BoundSide::Lower,
        critic_bound(cfg, 7, Some(BaselineKind::LearnedNetwork))?,
        None,
    );
    let (lba_value, lba_se) = lba_decoder(cfg)?;
    push("lba", BoundSide::Other, (lba_value, lba_se), None);
    push(
        "lba+H(Y)",
        BoundSide::Lower,
        (lba_value + entropy_y, lba_se),
        None,
    );
    Ok(SelfTestReport {
        config: cfg.clone(),
        truth,
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truth_values() {
        let c = SelfTestConfig::default();
        assert!((c.truth() - 0.143_841).abs() < 1e-6);
        let c2 = SelfTestConfig { dim: 3, ..c };
        assert!((c2.truth() - 3.0 * 0.143_841).abs() < 1e-5);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(run_selftest(&SelfTestConfig {
            rho: 1.0,
            ..Default::default()
        })
        .is_err());
        assert!(run_selftest(&SelfTestConfig {
            batch: 1,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn short_run_produces_every_row() {
        let cfg = SelfTestConfig {
            steps: 20,
            eval_batches: 3,
            batch: 16,
            ..Default::default()
        };
        let rep = run_selftest(&cfg).unwrap();
        assert_eq!(rep.results.len(), 8);
        assert!(rep.results.iter().all(|r| r.estimate.is_finite()));
        assert!(rep.to_table().contains("infonce"));
        // Without training the lower bounds sit near zero, never far above ln S.
        assert!(rep.get("infonce").unwrap().estimate <= (16f64).ln());
    }

    #[test]
    fn upper_bounds_need_no_training() {
        let cfg = SelfTestConfig {
            steps: 0,
            ..Default::default()
        };
        let (l1, _) = l1out_known_channel(&cfg).unwrap();
        assert!(l1 > 0.12, "{l1}");
        let (v, _) = vub_learned_marginal(&cfg).unwrap();
        assert!((v - cfg.truth()).abs() < 0.03, "{v}");
    }
}
