//! Batch estimators of mutual-information bounds with their gradients.
//!
//! Each estimator is a pure function of its inputs and returns the estimate
//! together with the cotangents needed to chain it into a larger loss.

use serde::{Deserialize, Serialize};

use super::critic::ScoreMatrix;
use super::decoder::GaussianDecoder;
use crate::error::{CpicError, Result};
use crate::ndmath::{logsumexp_unchecked, MlpTrace, ParamStore};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Which algebraic form of the unnormalized Barber–Agakov bound to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TubaForm {
    /// `E_p[f̃] − E_q[e^{f̃}] + 1`.
    Standard,
    /// `E_p[f̃] − ln E_q[e^{f̃}]`; constant baselines cancel in this form.
    Printed,
}

/// An estimate and its gradient with respect to the score matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBound {
    pub value: f64,
    pub d_scores: ScoreMatrix,
}

fn require_batch(s: usize) -> Result<()> {
    if s < 2 {
        return Err(CpicError::InsufficientData {
            required: 2,
            available: s,
        });
    }
    Ok(())
}

/// Noise-contrastive lower bound
/// `(1/S) Σ_i [f_ii − ln Σ_j e^{f_ij} + ln S]`, never above `ln S`.
pub fn infonce(scores: &ScoreMatrix) -> Result<ScoreBound> {
    let s = scores.size();
    require_batch(s)?;
    let sf = s as f64;
    let mut total = 0.0;
    let mut d = ScoreMatrix::zeros(s);
    for i in 0..s {
        let row = scores.row(i);
        let lse = logsumexp_unchecked(row);
        total += row[i] - lse;
        for j in 0..s {
            let p = (row[j] - lse).exp();
            d.set(i, j, -p / sf);
        }
        d.set(i, i, d.get(i, i) + 1.0 / sf);
    }
    let value = total / sf + sf.ln();
    if !value.is_finite() {
        return Err(CpicError::NonFinite {
            step: 0,
            context: "InfoNCE estimate".into(),
        });
    }
    Ok(ScoreBound { value, d_scores: d })
}

/// TUBA estimate with its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct TubaBound {
    pub value: f64,
    pub d_scores: ScoreMatrix,
    /// Cotangent on `ln a(y_j)`.
    pub d_log_baseline: Vec<f64>,
}

/// Unnormalized Barber–Agakov lower bound on scores shifted by the log
/// baseline, `f̃_ij = f_ij − ln a(y_j)`. Joint expectations use the diagonal,
/// marginal expectations the off-diagonal pairs.
pub fn tuba(scores: &ScoreMatrix, log_baseline: &[f64], form: TubaForm) -> Result<TubaBound> {
    let s = scores.size();
    require_batch(s)?;
    if log_baseline.len() != s {
        return Err(CpicError::shape("log baseline", s, log_baseline.len()));
    }
    let sf = s as f64;
    let pairs = sf * (sf - 1.0);
    let shifted = |i: usize, j: usize| scores.get(i, j) - log_baseline[j];

    let joint = (0..s).map(|i| shifted(i, i)).sum::<f64>() / sf;
    let off: Vec<f64> = (0..s)
        .flat_map(|i| (0..s).filter(move |&j| j != i).map(move |j| (i, j)))
        .map(|(i, j)| shifted(i, j))
        .collect();
    let lse = logsumexp_unchecked(&off);
    let log_marginal = lse - pairs.ln();

    let mut d = ScoreMatrix::zeros(s);
    let mut d_log = vec![0.0; s];
    for i in 0..s {
        d.set(i, i, 1.0 / sf);
        d_log[i] -= 1.0 / sf;
    }
    // weight of each off-diagonal term in the marginal part
    let (value, scale) = match form {
        TubaForm::Standard => {
            let marginal = log_marginal.exp();
            (joint - marginal + 1.0, 1.0 / pairs)
        }
        TubaForm::Printed => (joint - log_marginal, 1.0),
    };
    if !value.is_finite() {
        return Err(CpicError::NonFinite {
            step: 0,
            context: format!(
                "TUBA estimate (joint term {joint}, log marginal term {log_marginal})"
            ),
        });
    }
    for i in 0..s {
        for j in 0..s {
            if i == j {
                continue;
            }
            let w = match form {
                TubaForm::Standard => shifted(i, j).exp() * scale,
                TubaForm::Printed => (shifted(i, j) - lse).exp(),
            };
            d.set(i, j, -w);
            d_log[j] += w;
        }
    }
    Ok(TubaBound {
        value,
        d_scores: d,
        d_log_baseline: d_log,
    })
}

/// Leave-one-out upper bound from a matrix of conditional log densities,
/// entry `(i, j) = ln p(y_i | x_j)`:
/// `(1/S) Σ_i [ℓ_ii − ln((1/(S−1)) Σ_{j≠i} e^{ℓ_ij})]`.
pub fn l1out(log_density: &ScoreMatrix) -> Result<ScoreBound> {
    let s = log_density.size();
    require_batch(s)?;
    let sf = s as f64;
    let ln_rest = (sf - 1.0).ln();
    let mut total = 0.0;
    let mut d = ScoreMatrix::zeros(s);
    let mut others = Vec::with_capacity(s - 1);
    for i in 0..s {
        let row = log_density.row(i);
        others.clear();
        others.extend(
            row.iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, v)| *v),
        );
        let lse = logsumexp_unchecked(&others);
        total += row[i] - lse + ln_rest;
        for j in 0..s {
            if j == i {
                d.set(i, i, 1.0 / sf);
            } else {
                d.set(i, j, -(row[j] - lse).exp() / sf);
            }
        }
    }
    let value = total / sf;
    if !value.is_finite() {
        return Err(CpicError::NonFinite {
            step: 0,
            context: "L1Out estimate".into(),
        });
    }
    Ok(ScoreBound { value, d_scores: d })
}

/// Variational upper bound with gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct VubBound {
    pub value: f64,
    pub d_mu: Vec<Vec<f64>>,
    pub d_sigma: Vec<Vec<f64>>,
    pub d_marginal_mean: Vec<f64>,
    pub d_marginal_log_sigma: Vec<f64>,
}

/// Batch mean of `KL(N(µ_i, diag σ_i²) ‖ N(m, diag e^{2s}))`.
pub fn vub(
    mu: &[Vec<f64>],
    sigma: &[Vec<f64>],
    marginal_mean: &[f64],
    marginal_log_sigma: &[f64],
) -> Result<VubBound> {
    let s = mu.len();
    if s == 0 {
        return Err(CpicError::Empty("vub batch"));
    }
    let dim = marginal_mean.len();
    if marginal_log_sigma.len() != dim {
        return Err(CpicError::shape(
            "marginal log sigma",
            dim,
            marginal_log_sigma.len(),
        ));
    }
    if sigma.len() != s {
        return Err(CpicError::shape("vub sigma batch", s, sigma.len()));
    }
    let sf = s as f64;
    let mut value = 0.0;
    let mut d_mu = Vec::with_capacity(s);
    let mut d_sigma = Vec::with_capacity(s);
    let mut d_m = vec![0.0; dim];
    let mut d_ls = vec![0.0; dim];
    for (mu_i, sig_i) in mu.iter().zip(sigma) {
        if mu_i.len() != dim || sig_i.len() != dim {
            return Err(CpicError::shape(
                "vub code width",
                dim,
                mu_i.len().max(sig_i.len()),
            ));
        }
        if sig_i.iter().any(|v| *v <= 0.0) {
            return Err(CpicError::Unsupported(
                "compression term constant for a deterministic encoder; use compression=none"
                    .into(),
            ));
        }
        let mut gm = vec![0.0; dim];
        let mut gs = vec![0.0; dim];
        for k in 0..dim {
            let (m, sk, ls) = (mu_i[k], sig_i[k], marginal_log_sigma[k]);
            let r2 = (2.0 * ls).exp();
            let diff = m - marginal_mean[k];
            let ratio = (sk * sk + diff * diff) / r2;
            value += ls - sk.ln() + 0.5 * ratio - 0.5;
            gm[k] = diff / r2 / sf;
            gs[k] = (-1.0 / sk + sk / r2) / sf;
            d_m[k] -= diff / r2 / sf;
            d_ls[k] += (1.0 - ratio) / sf;
        }
        d_mu.push(gm);
        d_sigma.push(gs);
    }
    Ok(VubBound {
        value: value / sf,
        d_mu,
        d_sigma,
        d_marginal_mean: d_m,
        d_marginal_log_sigma: d_ls,
    })
}

/// Barber–Agakov estimate `(1/S) Σ_i ln q(y_future,i | y_past,i)` without the
/// marginal-entropy term.
#[derive(Debug)]
pub struct LbaBound {
    pub value: f64,
    traces: Vec<MlpTrace>,
}

pub fn lba(
    decoder: &GaussianDecoder,
    store: &ParamStore,
    past: &[Vec<f64>],
    future: &[Vec<f64>],
) -> Result<LbaBound> {
    let s = past.len();
    if s == 0 || future.len() != s {
        return Err(CpicError::shape("LBA batch", s.max(1), future.len()));
    }
    let log_sigma = store.value(decoder.log_sigma);
    let mut total = 0.0;
    let mut traces = Vec::with_capacity(s);
    for (p, f) in past.iter().zip(future) {
        let tr = decoder.forward(store, p)?;
        if f.len() != tr.output.len() {
            return Err(CpicError::shape(
                "LBA future code",
                tr.output.len(),
                f.len(),
            ));
        }
        for k in 0..f.len() {
            let z = (f[k] - tr.output[k]) * (-log_sigma[k]).exp();
            total += -0.5 * LN_2PI - log_sigma[k] - 0.5 * z * z;
        }
        traces.push(tr);
    }
    Ok(LbaBound {
        value: total / s as f64,
        traces,
    })
}

impl LbaBound {
    /// Chains `upstream · d(value)` into the decoder parameters; returns the
    /// cotangents on past and future codes.
    pub fn backward(
        &self,
        decoder: &GaussianDecoder,
        store: &mut ParamStore,
        future: &[Vec<f64>],
        upstream: f64,
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let s = self.traces.len();
        let sf = s as f64;
        let log_sigma = store.value(decoder.log_sigma).to_vec();
        let inv_var: Vec<f64> = log_sigma.iter().map(|l| (-2.0 * l).exp()).collect();
        let mut d_ls = vec![0.0; log_sigma.len()];
        let mut d_past = Vec::with_capacity(s);
        let mut d_future = Vec::with_capacity(s);
        for (tr, f) in self.traces.iter().zip(future) {
            let mut d_mean = vec![0.0; f.len()];
            let mut d_f = vec![0.0; f.len()];
            for k in 0..f.len() {
                let r = f[k] - tr.output[k];
                d_mean[k] = upstream * r * inv_var[k] / sf;
                d_f[k] = -d_mean[k];
                d_ls[k] += upstream * (-1.0 + r * r * inv_var[k]) / sf;
            }
            d_past.push(decoder.mean.backward(store, tr, &d_mean));
            d_future.push(d_f);
        }
        store.accumulate(decoder.log_sigma, &d_ls);
        (d_past, d_future)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_scores(s: usize, scale: f64, seed: u64) -> ScoreMatrix {
        let mut rng = substream(seed, 1, 1);
        ScoreMatrix::from_fn(s, |_, _| rng.random_range(-scale..scale))
    }

    fn fd_check(f: impl Fn(&ScoreMatrix) -> f64, m: &ScoreMatrix, grad: &ScoreMatrix) {
        let h = 1e-6;
        let s = m.size();
        for i in 0..s {
            for j in 0..s {
                let mut p = m.clone();
                p.set(i, j, m.get(i, j) + h);
                let mut q = m.clone();
                q.set(i, j, m.get(i, j) - h);
                let fd = (f(&p) - f(&q)) / (2.0 * h);
                assert!(
                    (fd - grad.get(i, j)).abs() < 1e-7,
                    "({i},{j}) {fd} vs {}",
                    grad.get(i, j)
                );
            }
        }
    }

    #[test]
    fn infonce_constant_scores_is_zero() {
        let b = infonce(&ScoreMatrix::from_fn(5, |_, _| 3.7)).unwrap();
        assert!(b.value.abs() < 1e-15);
    }

    #[test]
    fn infonce_saturates_at_ln_s() {
        let s = 16;
        let mut last = 0.0;
        for m in [1.0, 10.0, 100.0, 1000.0] {
            let v = infonce(&ScoreMatrix::from_fn(
                s,
                |i, j| if i == j { m } else { 0.0 },
            ))
            .unwrap()
            .value;
            assert!(v >= last);
            last = v;
        }
        assert!(((s as f64).ln() - last).abs() < 1e-12);
    }

    #[test]
    fn infonce_gradient() {
        let m = random_scores(5, 3.0, 2);
        fd_check(
            |x| infonce(x).unwrap().value,
            &m,
            &infonce(&m).unwrap().d_scores,
        );
    }

    #[test]
    fn infonce_batch_of_one_rejected() {
        assert!(infonce(&ScoreMatrix::zeros(1)).is_err());
    }

    #[test]
    fn tuba_zero_scores_standard() {
        let b = tuba(&ScoreMatrix::zeros(6), &[0.0; 6], TubaForm::Standard).unwrap();
        assert!(b.value.abs() < 1e-15);
    }

    #[test]
    fn printed_form_cancels_constant_baselines() {
        let m = random_scores(7, 2.0, 5);
        let base = tuba(&m, &[0.0; 7], TubaForm::Printed).unwrap().value;
        for c in [1.0, -3.5, 12.0] {
            let v = tuba(&m, &[c; 7], TubaForm::Printed).unwrap().value;
            assert!((v - base).abs() < 1e-10);
        }
        // the standard form does depend on the baseline
        let s1 = tuba(&m, &[0.0; 7], TubaForm::Standard).unwrap().value;
        let se = tuba(&m, &[1.0; 7], TubaForm::Standard).unwrap().value;
        assert!((s1 - se).abs() > 1e-3);
    }

    #[test]
    fn tuba_gradients() {
        let m = random_scores(5, 2.0, 8);
        let la: Vec<f64> = (0..5).map(|k| 0.3 * k as f64 - 0.4).collect();
        for form in [TubaForm::Standard, TubaForm::Printed] {
            let b = tuba(&m, &la, form).unwrap();
            fd_check(|x| tuba(x, &la, form).unwrap().value, &m, &b.d_scores);
            let h = 1e-6;
            for k in 0..5 {
                let mut p = la.clone();
                p[k] += h;
                let mut q = la.clone();
                q[k] -= h;
                let fd = (tuba(&m, &p, form).unwrap().value - tuba(&m, &q, form).unwrap().value)
                    / (2.0 * h);
                assert!((fd - b.d_log_baseline[k]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn tuba_large_scores_do_not_overflow_printed() {
        let m = ScoreMatrix::from_fn(4, |i, j| if i == j { 800.0 } else { 750.0 });
        let v = tuba(&m, &[0.0; 4], TubaForm::Printed).unwrap().value;
        assert!((v - 50.0).abs() < 1e-9);
        assert!(tuba(&m, &[0.0; 4], TubaForm::Standard).is_err());
    }

    #[test]
    fn l1out_identical_conditionals_is_zero() {
        let m = ScoreMatrix::from_fn(6, |i, _| -1.0 - i as f64);
        assert!(l1out(&m).unwrap().value.abs() < 1e-14);
    }

    #[test]
    fn l1out_gradient() {
        let m = random_scores(6, 4.0, 3);
        fd_check(
            |x| l1out(x).unwrap().value,
            &m,
            &l1out(&m).unwrap().d_scores,
        );
        assert!(l1out(&ScoreMatrix::zeros(1)).is_err());
    }

    #[test]
    fn vub_examples() {
        let m = vec![0.2, -0.4];
        let ls = vec![0.1, -0.3];
        let sig: Vec<f64> = ls.iter().map(|l: &f64| l.exp()).collect();
        let b = vub(
            &[m.clone(), m.clone()],
            &[sig.clone(), sig.clone()],
            &m,
            &ls,
        )
        .unwrap();
        assert!(b.value.abs() < 1e-14);

        let half = vub(&[vec![1.0]], &[vec![1.0]], &[0.0], &[0.0]).unwrap();
        assert!((half.value - 0.5).abs() < 1e-15);

        assert!(vub(&[vec![1.0]], &[vec![0.0]], &[0.0], &[0.0]).is_err());
    }

    #[test]
    fn vub_gradients() {
        let mu = vec![vec![0.3, -1.2], vec![0.8, 0.1]];
        let sig = vec![vec![0.5, 1.3], vec![0.9, 0.2]];
        let (m, ls) = (vec![0.1, -0.2], vec![0.4, -0.6]);
        let b = vub(&mu, &sig, &m, &ls).unwrap();
        let h = 1e-6;
        let f = |mu: &[Vec<f64>], sig: &[Vec<f64>], m: &[f64], ls: &[f64]| {
            vub(mu, sig, m, ls).unwrap().value
        };
        for i in 0..2 {
            for k in 0..2 {
                let (mut p, mut q) = (mu.clone(), mu.clone());
                p[i][k] += h;
                q[i][k] -= h;
                assert!(
                    ((f(&p, &sig, &m, &ls) - f(&q, &sig, &m, &ls)) / (2.0 * h) - b.d_mu[i][k])
                        .abs()
                        < 1e-7
                );
                let (mut p, mut q) = (sig.clone(), sig.clone());
                p[i][k] += h;
                q[i][k] -= h;
                assert!(
                    ((f(&mu, &p, &m, &ls) - f(&mu, &q, &m, &ls)) / (2.0 * h) - b.d_sigma[i][k])
                        .abs()
                        < 1e-7
                );
            }
        }
        for k in 0..2 {
            let (mut p, mut q) = (m.clone(), m.clone());
            p[k] += h;
            q[k] -= h;
            assert!(
                ((f(&mu, &sig, &p, &ls) - f(&mu, &sig, &q, &ls)) / (2.0 * h)
                    - b.d_marginal_mean[k])
                    .abs()
                    < 1e-7
            );
            let (mut p, mut q) = (ls.clone(), ls.clone());
            p[k] += h;
            q[k] -= h;
            assert!(
                ((f(&mu, &sig, &m, &p) - f(&mu, &sig, &m, &q)) / (2.0 * h)
                    - b.d_marginal_log_sigma[k])
                    .abs()
                    < 1e-7
            );
        }
    }

    proptest! {
        #[test]
        fn vub_nonnegative(mu in -5.0f64..5.0, sig in 0.01f64..5.0, m in -5.0f64..5.0, ls in -3.0f64..3.0) {
            let b = vub(&[vec![mu]], &[vec![sig]], &[m], &[ls]).unwrap();
            prop_assert!(b.value >= -1e-12);
        }

        #[test]
        fn infonce_shift_invariant(seed in 0u64..500, c in -100.0f64..100.0) {
            let m = random_scores(6, 5.0, seed);
            let a = infonce(&m).unwrap().value;
            let b = infonce(&m.map(|v| v + c)).unwrap().value;
            prop_assert!((a - b).abs() < 1e-10);
        }
    }
}
