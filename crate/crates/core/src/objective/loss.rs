//! The CPIC loss `β · (compression bound) − (predictive-information bound)`
//! evaluated on one batch of window pairs, with its gradient accumulated into
//! the parameter store.

use crate::encoder::{Encoder, EncoderTrace, WindowCode};
use crate::error::{CpicError, Result};
use crate::mibounds::{
    infonce, l1out, lba, tuba, vub, Baseline, Critic, GaussianDecoder, ScoreMatrix, TubaForm,
    VariationalMarginal,
};
use crate::ndmath::ParamStore;
use crate::rng::Rng;
use crate::series::WindowPairBatch;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Upper bound used for the compression term.
#[derive(Debug, Clone, Copy)]
pub enum CompressionTerm<'a> {
    None,
    Vub(&'a VariationalMarginal),
    L1Out { log_density_floor: f64 },
}

/// Lower bound used for the predictive-information term.
#[derive(Debug, Clone, Copy)]
pub enum PiTerm<'a> {
    InfoNce(&'a Critic),
    Tuba {
        critic: &'a Critic,
        baseline: &'a Baseline,
        form: TubaForm,
    },
    Lba(&'a GaussianDecoder),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub loss: f64,
    pub compression: f64,
    pub pi: f64,
    /// Per-dimension log densities raised to the L1Out floor.
    pub clamp_events: u64,
}

struct Side {
    codes: Vec<WindowCode>,
    traces: Vec<EncoderTrace>,
    d_y: Vec<Vec<f64>>,
    d_mu: Vec<Vec<f64>>,
    d_sigma: Vec<Vec<f64>>,
}

impl Side {
    fn encode(
        encoder: &Encoder,
        store: &ParamStore,
        windows: impl Iterator<Item = Vec<f64>>,
        noise: &mut Vec<Vec<f64>>,
    ) -> Result<Self> {
        let mut codes = Vec::new();
        let mut traces = Vec::new();
        for (x, eps) in windows.zip(noise.drain(..)) {
            let (c, t) = encoder.encode_with_noise(store, &x, eps)?;
            codes.push(c);
            traces.push(t);
        }
        let width = codes.first().map_or(0, |c| c.y.len());
        let zeros = vec![vec![0.0; width]; codes.len()];
        Ok(Self {
            codes,
            traces,
            d_y: zeros.clone(),
            d_mu: zeros.clone(),
            d_sigma: zeros,
        })
    }

    fn samples(&self) -> Vec<Vec<f64>> {
        self.codes.iter().map(|c| c.y.clone()).collect()
    }

    fn add_y(&mut self, d: &[Vec<f64>], scale: f64) {
        for (acc, g) in self.d_y.iter_mut().zip(d) {
            acc.iter_mut().zip(g).for_each(|(a, b)| *a += scale * b);
        }
    }

    fn backward(
        mut self,
        encoder: &Encoder,
        store: &mut ParamStore,
        window: impl Fn(usize) -> Vec<f64>,
    ) {
        for i in 0..self.codes.len() {
            let (d_mu, d_sigma) = (&mut self.d_mu[i], &mut self.d_sigma[i]);
            self.codes[i].pullback_sample(&self.d_y[i], d_mu, d_sigma);
            encoder.backward(store, &window(i), &self.traces[i], d_mu, d_sigma);
        }
    }
}

/// Draws `ε` for every past window then every future window, in batch order.
/// Deterministic encoders consume no randomness.
fn draw_noise(
    encoder: &Encoder,
    batch: &WindowPairBatch,
    rng: &mut Rng,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    use rand::Rng as _;
    use rand_distr::StandardNormal;
    let width = batch.window * encoder.spec().latent_dim;
    let mut draw = || -> Vec<f64> {
        if encoder.is_deterministic() {
            vec![0.0; width]
        } else {
            (0..width).map(|_| rng.sample(StandardNormal)).collect()
        }
    };
    let past = (0..batch.len()).map(|_| draw()).collect();
    let future = (0..batch.len()).map(|_| draw()).collect();
    (past, future)
}

/// Evaluates the loss and adds its gradient into `store`.
pub fn cpic_loss(
    encoder: &Encoder,
    compression: CompressionTerm<'_>,
    pi: PiTerm<'_>,
    beta: f64,
    store: &mut ParamStore,
    batch: &WindowPairBatch,
    rng: &mut Rng,
) -> Result<LossParts> {
    let s = batch.len();
    if s < 2 {
        return Err(CpicError::InsufficientData {
            required: 2,
            available: s,
        });
    }
    if batch.dim != encoder.spec().input_dim {
        return Err(CpicError::shape(
            "batch channels",
            encoder.spec().input_dim,
            batch.dim,
        ));
    }
    let (mut noise_p, mut noise_f) = draw_noise(encoder, batch, rng);
    let mut past = Side::encode(
        encoder,
        store,
        (0..s).map(|i| batch.past(i).to_vec()),
        &mut noise_p,
    )?;
    let mut future = Side::encode(
        encoder,
        store,
        (0..s).map(|i| batch.future(i).to_vec()),
        &mut noise_f,
    )?;

    let mut clamp_events = 0;
    let compression_value = match compression {
        CompressionTerm::None => 0.0,
        CompressionTerm::Vub(marginal) => {
            let mu: Vec<Vec<f64>> = future.codes.iter().map(|c| c.mu.clone()).collect();
            let sigma: Vec<Vec<f64>> = future.codes.iter().map(|c| c.sigma.clone()).collect();
            let b = vub(
                &mu,
                &sigma,
                store.value(marginal.mean),
                store.value(marginal.log_sigma),
            )?;
            for i in 0..s {
                for k in 0..mu[i].len() {
                    future.d_mu[i][k] += beta * b.d_mu[i][k];
                    future.d_sigma[i][k] += beta * b.d_sigma[i][k];
                }
            }
            let scaled = |v: &[f64]| v.iter().map(|x| beta * x).collect::<Vec<_>>();
            store.accumulate(marginal.mean, &scaled(&b.d_marginal_mean));
            store.accumulate(marginal.log_sigma, &scaled(&b.d_marginal_log_sigma));
            b.value
        }
        CompressionTerm::L1Out { log_density_floor } => {
            if encoder.is_deterministic() {
                return Err(CpicError::Unsupported(
                    "L1Out undefined for deterministic encoder".into(),
                ));
            }
            let codes = &future.codes;
            let width = codes[0].y.len();
            // Per-conditional constants, hoisted out of the S² loop.
            let log_norm: Vec<Vec<f64>> = codes
                .iter()
                .map(|c| c.sigma.iter().map(|s| -0.5 * LN_2PI - s.ln()).collect())
                .collect();
            let inv_sigma: Vec<Vec<f64>> = codes
                .iter()
                .map(|c| c.sigma.iter().map(|s| 1.0 / s).collect())
                .collect();
            let mut clamped = vec![false; s * s * width];
            let mut matrix = ScoreMatrix::zeros(s);
            for i in 0..s {
                for j in 0..s {
                    let mut total = 0.0;
                    for k in 0..width {
                        let z = (codes[i].y[k] - codes[j].mu[k]) * inv_sigma[j][k];
                        let v = log_norm[j][k] - 0.5 * z * z;
                        if v < log_density_floor {
                            clamp_events += 1;
                            clamped[(i * s + j) * width + k] = true;
                            total += log_density_floor;
                        } else {
                            total += v;
                        }
                    }
                    matrix.set(i, j, total);
                }
            }
            let b = l1out(&matrix)?;
            for i in 0..s {
                for j in 0..s {
                    let w = beta * b.d_scores.get(i, j);
                    if w == 0.0 {
                        continue;
                    }
                    for k in 0..width {
                        if clamped[(i * s + j) * width + k] {
                            continue;
                        }
                        let inv = inv_sigma[j][k];
                        let z = (codes[i].y[k] - codes[j].mu[k]) * inv;
                        let g = z * inv;
                        future.d_y[i][k] -= w * g;
                        future.d_mu[j][k] += w * g;
                        future.d_sigma[j][k] += w * (z * z - 1.0) * inv;
                    }
                }
            }
            b.value
        }
    };

    let y_past = past.samples();
    let y_future = future.samples();
    let pi_value = match pi {
        PiTerm::InfoNce(critic) => {
            let (scores, trace) = critic.score_matrix(store, &y_past, &y_future)?;
            let b = infonce(&scores)?;
            let (dp, df) = critic.backward(store, &trace, &b.d_scores.map(|v| -v));
            past.add_y(&dp, 1.0);
            future.add_y(&df, 1.0);
            b.value
        }
        PiTerm::Tuba {
            critic,
            baseline,
            form,
        } => {
            let (scores, trace) = critic.score_matrix(store, &y_past, &y_future)?;
            let (log_a, btrace) = baseline.log_values(store, &y_future)?;
            let b = tuba(&scores, &log_a, form)?;
            let (dp, df) = critic.backward(store, &trace, &b.d_scores.map(|v| -v));
            past.add_y(&dp, 1.0);
            future.add_y(&df, 1.0);
            let neg: Vec<f64> = b.d_log_baseline.iter().map(|v| -v).collect();
            let width = y_future[0].len();
            let db = baseline.backward(store, &btrace, &neg, width);
            future.add_y(&db, 1.0);
            b.value
        }
        PiTerm::Lba(decoder) => {
            let b = lba(decoder, store, &y_past, &y_future)?;
            let (dp, df) = b.backward(decoder, store, &y_future, -1.0);
            past.add_y(&dp, 1.0);
            future.add_y(&df, 1.0);
            b.value
        }
    };

    past.backward(encoder, store, |i| batch.past(i).to_vec());
    future.backward(encoder, store, |i| batch.future(i).to_vec());

    Ok(LossParts {
        loss: beta * compression_value - pi_value,
        compression: compression_value,
        pi: pi_value,
        clamp_events,
    })
}

/// Multi-sample loss: `β · L1Out − InfoNCE`. The compression term is dropped
/// for a deterministic encoder.
pub fn cpic_loss_multi(
    batch: &WindowPairBatch,
    encoder: &Encoder,
    critic: &Critic,
    beta: f64,
    store: &mut ParamStore,
    rng: &mut Rng,
) -> Result<LossParts> {
    let compression = if encoder.is_deterministic() {
        CompressionTerm::None
    } else {
        CompressionTerm::L1Out {
            log_density_floor: -30.0,
        }
    };
    cpic_loss(
        encoder,
        compression,
        PiTerm::InfoNce(critic),
        beta,
        store,
        batch,
        rng,
    )
}

/// Uni-sample loss: `β · VUB − TUBA`. The compression term is dropped for a
/// deterministic encoder.
#[allow(clippy::too_many_arguments)]
pub fn cpic_loss_uni(
    batch: &WindowPairBatch,
    encoder: &Encoder,
    critic: &Critic,
    baseline: &Baseline,
    marginal: &VariationalMarginal,
    form: TubaForm,
    beta: f64,
    store: &mut ParamStore,
    rng: &mut Rng,
) -> Result<LossParts> {
    let compression = if encoder.is_deterministic() {
        CompressionTerm::None
    } else {
        CompressionTerm::Vub(marginal)
    };
    cpic_loss(
        encoder,
        compression,
        PiTerm::Tuba {
            critic,
            baseline,
            form,
        },
        beta,
        store,
        batch,
        rng,
    )
}
