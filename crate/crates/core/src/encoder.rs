//! Stochastic linear encoder.
//!
//! Each time step is coded independently as `y_t ~ N(Uᵀ x_t, diag(σ_t²))`
//! where `σ_t` comes from a small network applied to `x_t`. A window of `T`
//! steps is the time-major concatenation of its per-step codes, so the window
//! noise covariance is block diagonal.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CpicError, Result};
use crate::ndmath::{
    from_row_major, orthonormalize_columns, sigmoid, softplus, softplus_inv, to_row_major,
    Activation, Init, Mlp, MlpSpec, MlpTrace, OutputTransform, ParamId, ParamStore,
};
use crate::rng::Rng;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderMode {
    Stochastic,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub mode: EncoderMode,
    /// Hidden width of the variance network.
    pub hidden: usize,
    /// Initial value of the learnable σ floor `softplus(ρ_min)`.
    pub sigma_floor: f64,
    /// Initial output bias of the variance network (pre-softplus).
    pub variance_bias: f64,
}

impl EncoderSpec {
    pub fn new(input_dim: usize, latent_dim: usize, mode: EncoderMode) -> Self {
        Self {
            input_dim,
            latent_dim,
            mode,
            hidden: 64,
            sigma_floor: 0.1,
            variance_bias: -5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    spec: EncoderSpec,
    u: ParamId,
    variance: Option<Mlp>,
    floor: Option<ParamId>,
}

/// Sampled code for one window. `y == mu + sigma * eps` elementwise.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowCode {
    pub y: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub eps: Vec<f64>,
}

impl WindowCode {
    /// Splits a cotangent on `y` into cotangents on `mu` and `sigma`,
    /// adding into the given buffers.
    pub fn pullback_sample(&self, d_y: &[f64], d_mu: &mut [f64], d_sigma: &mut [f64]) {
        for k in 0..d_y.len() {
            d_mu[k] += d_y[k];
            d_sigma[k] += d_y[k] * self.eps[k];
        }
    }
}

/// Per-step variance-network activations kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    steps: Vec<MlpTrace>,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, spec: EncoderSpec) -> Result<Self> {
        if spec.input_dim == 0 || spec.latent_dim == 0 {
            return Err(CpicError::Config(
                "encoder dimensions must be positive".into(),
            ));
        }
        if spec.latent_dim > spec.input_dim {
            return Err(CpicError::Config(format!(
                "latent dimension {} exceeds input dimension {}",
                spec.latent_dim, spec.input_dim
            )));
        }
        let bound = 1.0 / (spec.input_dim as f64).sqrt();
        let u = store.add(
            "encoder.u",
            spec.input_dim,
            spec.latent_dim,
            Init::Uniform(bound),
        )?;
        let (variance, floor) = match spec.mode {
            EncoderMode::Deterministic => (None, None),
            EncoderMode::Stochastic => {
                let mlp = Mlp::new(
                    store,
                    "encoder.var",
                    MlpSpec::new(
                        vec![spec.input_dim, spec.hidden, spec.latent_dim],
                        Activation::Tanh,
                        OutputTransform::Softplus,
                    ),
                )?;
                let bias = mlp.output_bias();
                store
                    .value_mut(bias)
                    .iter_mut()
                    .for_each(|b| *b = spec.variance_bias);
                let floor = store.add(
                    "encoder.floor",
                    1,
                    1,
                    Init::Constant(softplus_inv(spec.sigma_floor)),
                )?;
                (Some(mlp), Some(floor))
            }
        };
        Ok(Self {
            spec,
            u,
            variance,
            floor,
        })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn is_deterministic(&self) -> bool {
        self.spec.mode == EncoderMode::Deterministic
    }

    pub fn u_id(&self) -> ParamId {
        self.u
    }

    pub fn variance_net(&self) -> Option<&Mlp> {
        self.variance.as_ref()
    }

    pub fn floor_id(&self) -> Option<ParamId> {
        self.floor
    }

    /// `U` as an `N × D` matrix.
    pub fn u_matrix(&self, store: &ParamStore) -> nalgebra::DMatrix<f64> {
        from_row_major(
            self.spec.input_dim,
            self.spec.latent_dim,
            store.value(self.u),
        )
    }

    pub fn set_u(&self, store: &mut ParamStore, u: &nalgebra::DMatrix<f64>) -> Result<()> {
        if (u.nrows(), u.ncols()) != (self.spec.input_dim, self.spec.latent_dim) {
            return Err(CpicError::shape(
                "encoder.u",
                format!("{}x{}", self.spec.input_dim, self.spec.latent_dim),
                format!("{}x{}", u.nrows(), u.ncols()),
            ));
        }
        store.set_value(self.u, &to_row_major(u))
    }

    /// Replaces `U` by an orthonormal basis of its column span.
    pub fn retract(&self, store: &mut ParamStore) -> Result<()> {
        let q = orthonormalize_columns(&self.u_matrix(store));
        self.set_u(store, &q)
    }

    fn steps(&self, x_window: &[f64]) -> Result<usize> {
        let n = self.spec.input_dim;
        if x_window.is_empty() || !x_window.len().is_multiple_of(n) {
            return Err(CpicError::shape(
                "encoder input window",
                format!("multiple of {n}"),
                x_window.len(),
            ));
        }
        Ok(x_window.len() / n)
    }

    /// Per-step means `Uᵀ x_t`, concatenated.
    pub fn encode_mean(&self, store: &ParamStore, x_window: &[f64]) -> Result<Vec<f64>> {
        let steps = self.steps(x_window)?;
        let (n, d) = (self.spec.input_dim, self.spec.latent_dim);
        let u = store.value(self.u);
        let mut mu = vec![0.0; steps * d];
        for t in 0..steps {
            let x = &x_window[t * n..(t + 1) * n];
            let out = &mut mu[t * d..(t + 1) * d];
            for (i, xi) in x.iter().enumerate() {
                let row = &u[i * d..(i + 1) * d];
                for (o, w) in out.iter_mut().zip(row) {
                    *o += xi * w;
                }
            }
        }
        Ok(mu)
    }

    fn floor_value(&self, store: &ParamStore) -> f64 {
        self.floor
            .map(|f| softplus(store.value(f)[0]))
            .unwrap_or(0.0)
    }

    /// Mean and standard deviation of the window code, plus the trace needed
    /// to differentiate them.
    pub fn distribution(
        &self,
        store: &ParamStore,
        x_window: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>, EncoderTrace)> {
        let mu = self.encode_mean(store, x_window)?;
        let steps = self.steps(x_window)?;
        let n = self.spec.input_dim;
        match &self.variance {
            None => Ok((
                mu.clone(),
                vec![0.0; mu.len()],
                EncoderTrace { steps: Vec::new() },
            )),
            Some(net) => {
                let floor = self.floor_value(store);
                let mut sigma = Vec::with_capacity(mu.len());
                let mut traces = Vec::with_capacity(steps);
                for t in 0..steps {
                    let tr = net.forward(store, &x_window[t * n..(t + 1) * n])?;
                    sigma.extend(tr.output.iter().map(|s| s + floor));
                    traces.push(tr);
                }
                Ok((mu, sigma, EncoderTrace { steps: traces }))
            }
        }
    }

    /// Reparameterized code `y = µ + σ ⊙ ε` with the given noise.
    pub fn encode_with_noise(
        &self,
        store: &ParamStore,
        x_window: &[f64],
        eps: Vec<f64>,
    ) -> Result<(WindowCode, EncoderTrace)> {
        let (mu, sigma, trace) = self.distribution(store, x_window)?;
        if eps.len() != mu.len() {
            return Err(CpicError::shape("encoder noise", mu.len(), eps.len()));
        }
        let y = mu
            .iter()
            .zip(&sigma)
            .zip(&eps)
            .map(|((m, s), e)| m + s * e)
            .collect();
        Ok((WindowCode { y, mu, sigma, eps }, trace))
    }

    /// Draws `ε ~ N(0, I)` and returns the sampled code. A deterministic
    /// encoder returns `y = µ` with `σ = ε = 0` and consumes no randomness.
    pub fn encode_sample(
        &self,
        store: &ParamStore,
        x_window: &[f64],
        rng: &mut Rng,
    ) -> Result<(WindowCode, EncoderTrace)> {
        let width = self.steps(x_window)? * self.spec.latent_dim;
        let eps = if self.is_deterministic() {
            vec![0.0; width]
        } else {
            (0..width).map(|_| rng.sample(StandardNormal)).collect()
        };
        self.encode_with_noise(store, x_window, eps)
    }

    /// Reverse pass from cotangents on `µ` and `σ` of one window.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        x_window: &[f64],
        trace: &EncoderTrace,
        d_mu: &[f64],
        d_sigma: &[f64],
    ) {
        let (n, d) = (self.spec.input_dim, self.spec.latent_dim);
        let steps = x_window.len() / n;
        let mut du = vec![0.0; n * d];
        for t in 0..steps {
            let x = &x_window[t * n..(t + 1) * n];
            let g = &d_mu[t * d..(t + 1) * d];
            for (i, xi) in x.iter().enumerate() {
                for (k, gk) in g.iter().enumerate() {
                    du[i * d + k] += xi * gk;
                }
            }
        }
        store.accumulate(self.u, &du);
        if let (Some(net), Some(floor)) = (&self.variance, self.floor) {
            let dfloor: f64 = d_sigma.iter().sum::<f64>() * sigmoid(store.value(floor)[0]);
            store.accumulate(floor, &[dfloor]);
            for (t, tr) in trace.steps.iter().enumerate() {
                net.backward(store, tr, &d_sigma[t * d..(t + 1) * d]);
            }
        }
    }

    /// `ln p(y | x)` for the diagonal-Gaussian window code.
    pub fn log_density(
        &self,
        store: &ParamStore,
        x_window: &[f64],
        y_window: &[f64],
    ) -> Result<f64> {
        if self.is_deterministic() {
            return Err(CpicError::Unsupported(
                "L1Out undefined for deterministic encoder".into(),
            ));
        }
        let (mu, sigma, _) = self.distribution(store, x_window)?;
        if y_window.len() != mu.len() {
            return Err(CpicError::shape("code window", mu.len(), y_window.len()));
        }
        Ok(diag_gaussian_log_density(y_window, &mu, &sigma))
    }
}

/// `Σ_k [−½ ln(2π σ_k²) − (y_k − µ_k)² / (2σ_k²)]`.
pub fn diag_gaussian_log_density(y: &[f64], mu: &[f64], sigma: &[f64]) -> f64 {
    y.iter()
        .zip(mu)
        .zip(sigma)
        .map(|((y, m), s)| {
            let z = (y - m) / s;
            -0.5 * LN_2PI - s.ln() - 0.5 * z * z
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use nalgebra::{DMatrix, DVector};

    fn stochastic(n: usize, d: usize, seed: u64) -> (ParamStore, Encoder) {
        let mut store = ParamStore::new(seed);
        let enc =
            Encoder::new(&mut store, EncoderSpec::new(n, d, EncoderMode::Stochastic)).unwrap();
        (store, enc)
    }

    fn random_vec(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = substream(seed, 9, 9);
        (0..len).map(|_| rng.sample(StandardNormal)).collect()
    }

    #[test]
    fn selector_mean() {
        let (mut store, enc) = stochastic(4, 2, 0);
        let mut u = DMatrix::zeros(4, 2);
        u[(0, 0)] = 1.0;
        u[(1, 1)] = 1.0;
        enc.set_u(&mut store, &u).unwrap();
        assert_eq!(
            enc.encode_mean(&store, &[1.0, 0.0, 0.0, 0.0]).unwrap(),
            vec![1.0, 0.0]
        );
        enc.set_u(&mut store, &DMatrix::zeros(4, 2)).unwrap();
        assert_eq!(
            enc.encode_mean(&store, &random_vec(8, 1)).unwrap(),
            vec![0.0; 4]
        );
    }

    #[test]
    fn mean_matches_matrix_product() {
        let (store, enc) = stochastic(6, 3, 4);
        let x = random_vec(18, 2);
        let mu = enc.encode_mean(&store, &x).unwrap();
        let u = enc.u_matrix(&store);
        for t in 0..3 {
            let xt = DVector::from_column_slice(&x[t * 6..(t + 1) * 6]);
            let expected = u.transpose() * xt;
            for k in 0..3 {
                assert!((mu[t * 3 + k] - expected[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mean_is_linear() {
        let (store, enc) = stochastic(5, 2, 7);
        let (x, xp) = (random_vec(10, 3), random_vec(10, 4));
        let (a, b) = (0.7, -2.3);
        let mix: Vec<f64> = x.iter().zip(&xp).map(|(p, q)| a * p + b * q).collect();
        let lhs = enc.encode_mean(&store, &mix).unwrap();
        let (m1, m2) = (
            enc.encode_mean(&store, &x).unwrap(),
            enc.encode_mean(&store, &xp).unwrap(),
        );
        for k in 0..lhs.len() {
            assert!((lhs[k] - (a * m1[k] + b * m2[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn collapsed_variance_gives_mean() {
        let (mut store, enc) = stochastic(3, 2, 5);
        let bias = enc.variance_net().unwrap().output_bias();
        store.value_mut(bias).iter_mut().for_each(|b| *b = -60.0);
        store.value_mut(enc.floor_id().unwrap())[0] = -60.0;
        let mut rng = substream(0, 0, 0);
        let (code, _) = enc
            .encode_sample(&store, &random_vec(6, 1), &mut rng)
            .unwrap();
        for k in 0..code.y.len() {
            assert!((code.y[k] - code.mu[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_noise_gives_mean_exactly() {
        let (store, enc) = stochastic(3, 2, 5);
        let (code, _) = enc
            .encode_with_noise(&store, &random_vec(9, 1), vec![0.0; 6])
            .unwrap();
        assert_eq!(code.y, code.mu);
    }

    #[test]
    fn reparameterization_identity_is_exact() {
        let (store, enc) = stochastic(4, 2, 8);
        let mut rng = substream(1, 2, 3);
        for _ in 0..20 {
            let (c, _) = enc
                .encode_sample(&store, &random_vec(12, 6), &mut rng)
                .unwrap();
            for k in 0..c.y.len() {
                assert_eq!(c.y[k], c.mu[k] + c.sigma[k] * c.eps[k]);
                assert!(c.sigma[k] > 0.0);
            }
        }
    }

    #[test]
    fn sample_mean_converges_to_mu() {
        let (store, enc) = stochastic(3, 2, 11);
        let x = random_vec(6, 8);
        let mut rng = substream(5, 5, 5);
        let draws = 100_000;
        let mut acc = [0.0; 4];
        let mut sigma = vec![0.0; 4];
        let mut mu = vec![0.0; 4];
        for _ in 0..draws {
            let (c, _) = enc.encode_sample(&store, &x, &mut rng).unwrap();
            acc.iter_mut().zip(&c.y).for_each(|(a, y)| *a += y);
            sigma = c.sigma;
            mu = c.mu;
        }
        for k in 0..4 {
            let mean = acc[k] / draws as f64;
            assert!((mean - mu[k]).abs() < 4.0 * sigma[k] / (draws as f64).sqrt());
        }
    }

    #[test]
    fn deterministic_mode() {
        let mut store = ParamStore::new(3);
        let det = Encoder::new(
            &mut store,
            EncoderSpec::new(4, 2, EncoderMode::Deterministic),
        )
        .unwrap();
        let (mut s2, sto) = stochastic(4, 2, 3);
        // same seed and name → same U
        assert_eq!(store.value(det.u_id()), s2.value(sto.u_id()));
        let bias = sto.variance_net().unwrap().output_bias();
        s2.value_mut(bias).iter_mut().for_each(|b| *b = -60.0);
        s2.value_mut(sto.floor_id().unwrap())[0] = -60.0;
        let x = random_vec(8, 2);
        let mut rng = substream(0, 0, 0);
        let (c, _) = det.encode_sample(&store, &x, &mut rng).unwrap();
        assert_eq!(c.y, c.mu);
        assert!(c.sigma.iter().all(|s| *s == 0.0));
        assert_eq!(c.mu, sto.encode_mean(&s2, &x).unwrap());
        assert!(det.log_density(&store, &x, &c.y).is_err());
    }

    #[test]
    fn log_density_examples() {
        let z = diag_gaussian_log_density(&[0.3], &[0.3], &[1.0]);
        assert!((z - (-0.918_938_533_204_672_7)).abs() < 1e-12);
        let s = 2.5;
        let off = diag_gaussian_log_density(&[0.3 + s], &[0.3], &[s]);
        assert!((off - (z - 0.5 - s.ln())).abs() < 1e-12);
    }

    #[test]
    fn log_density_matches_dense_mvn() {
        let (store, enc) = stochastic(3, 2, 13);
        let x = random_vec(9, 4);
        let y = random_vec(6, 5);
        let got = enc.log_density(&store, &x, &y).unwrap();
        let (mu, sigma, _) = enc.distribution(&store, &x).unwrap();
        // dense evaluation: −½[k ln 2π + ln det Σ + (y−µ)ᵀ Σ⁻¹ (y−µ)]
        let cov = DMatrix::from_diagonal(&DVector::from_iterator(6, sigma.iter().map(|s| s * s)));
        let diff = DVector::from_iterator(6, y.iter().zip(&mu).map(|(a, b)| a - b));
        let chol = cov.clone().cholesky().unwrap();
        let quad = (diff.transpose() * chol.inverse() * &diff)[(0, 0)];
        let logdet = cov.determinant().ln();
        let dense = -0.5 * (6.0 * LN_2PI + logdet + quad);
        assert!((got - dense).abs() < 1e-10, "{got} vs {dense}");
    }

    #[test]
    fn log_density_stationary_at_mean() {
        let (store, enc) = stochastic(3, 2, 13);
        let x = random_vec(3, 4);
        let (mu, _, _) = enc.distribution(&store, &x).unwrap();
        let h = 1e-5;
        for k in 0..mu.len() {
            let mut p = mu.clone();
            p[k] += h;
            let mut m = mu.clone();
            m[k] -= h;
            let g = (enc.log_density(&store, &x, &p).unwrap()
                - enc.log_density(&store, &x, &m).unwrap())
                / (2.0 * h);
            assert!(g.abs() < 1e-10, "{g}");
        }
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let (mut store, enc) = stochastic(4, 2, 21);
        let x = random_vec(12, 3);
        let eps = random_vec(6, 4);
        let w = random_vec(6, 5);
        let report = crate::ndmath::grad_check(
            &mut store,
            |s| {
                let (code, tr) = enc.encode_with_noise(s, &x, eps.clone())?;
                // loss = Σ w·y + Σ σ²
                let loss = code.y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
                    + code.sigma.iter().map(|v| v * v).sum::<f64>();
                let mut d_mu = vec![0.0; 6];
                let mut d_sigma: Vec<f64> = code.sigma.iter().map(|v| 2.0 * v).collect();
                code.pullback_sample(&w, &mut d_mu, &mut d_sigma);
                enc.backward(s, &x, &tr, &d_mu, &d_sigma);
                Ok(loss)
            },
            1e-5,
            usize::MAX,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
