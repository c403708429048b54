//! Noisy Lorenz benchmark: a 3-D chaotic latent trajectory, linearly lifted
//! to `N` observed channels and corrupted by anisotropic Gaussian noise at a
//! prescribed signal-to-noise ratio.
//!
//! SNR is the ratio of the leading eigenvalue of the signal covariance to the
//! leading eigenvalue of the noise covariance.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CpicError, Result};
use crate::ndmath::{orthonormalize_columns, to_row_major};
use crate::rng::{domain, substream};
use crate::series::Series;

const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorenzParams {
    pub sigma: f64,
    pub rho: f64,
    /// The `8/3` coefficient.
    pub b: f64,
    pub dt: f64,
    pub steps: usize,
    pub burn_in: usize,
    pub initial: [f64; 3],
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            rho: 28.0,
            b: 8.0 / 3.0,
            dt: 0.01,
            steps: 21_000,
            burn_in: 1_000,
            initial: [1.0, 1.0, 1.0],
        }
    }
}

impl LorenzParams {
    pub fn derivative(&self, s: [f64; 3]) -> [f64; 3] {
        [
            self.sigma * (s[1] - s[0]),
            s[0] * (self.rho - s[2]) - s[1],
            s[0] * s[1] - self.b * s[2],
        ]
    }

    /// One classical fourth-order Runge–Kutta step.
    pub fn rk4_step(&self, s: [f64; 3]) -> [f64; 3] {
        let h = self.dt;
        let add =
            |a: [f64; 3], k: [f64; 3], c: f64| [a[0] + c * k[0], a[1] + c * k[1], a[2] + c * k[2]];
        let k1 = self.derivative(s);
        let k2 = self.derivative(add(s, k1, h / 2.0));
        let k3 = self.derivative(add(s, k2, h / 2.0));
        let k4 = self.derivative(add(s, k3, h));
        std::array::from_fn(|i| s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(CpicError::Config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if self.steps <= self.burn_in {
            return Err(CpicError::Config(format!(
                "steps ({}) must exceed burn-in ({})",
                self.steps, self.burn_in
            )));
        }
        Ok(())
    }
}

/// Integrates the system and returns the `steps − burn_in` post-burn-in states.
pub fn integrate_lorenz(params: &LorenzParams) -> Result<Series> {
    params.validate()?;
    let mut s = params.initial;
    let mut data = Vec::with_capacity(3 * (params.steps - params.burn_in));
    for step in 0..params.steps {
        s = params.rk4_step(s);
        if s.iter()
            .any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT)
        {
            return Err(CpicError::Diverged {
                step,
                reason: format!("Lorenz state left the ball of radius {DIVERGENCE_LIMIT}"),
            });
        }
        if step >= params.burn_in {
            data.extend(s);
        }
    }
    Series::from_rows(params.steps - params.burn_in, 3, data)?.with_names(vec![
        "x".into(),
        "y".into(),
        "z".into(),
    ])
}

/// Random `n × k` matrix with orthonormal columns from the lift substream of `seed`.
pub fn embedding_matrix(n: usize, k: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = substream(seed, domain::LIFT, 0);
    let g = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    orthonormalize_columns(&g)
}

/// `x_t = V f_t` with a seeded orthonormal `V` (`n × latent dim`).
pub fn lift(latents: &Series, n: usize, seed: u64) -> Result<(Series, DMatrix<f64>)> {
    if n < latents.dim() {
        return Err(CpicError::Config(format!(
            "embedding dimension {n} is smaller than latent dimension {}",
            latents.dim()
        )));
    }
    let v = embedding_matrix(n, latents.dim(), seed);
    let lifted = latents.to_matrix() * v.transpose();
    Ok((Series::from_matrix(&lifted)?, v))
}

/// Population covariance of the channels.
pub fn covariance(series: &Series) -> DMatrix<f64> {
    let mean = series.mean();
    let n = series.dim();
    let mut c = DMatrix::zeros(n, n);
    for t in 0..series.len() {
        let r = series.row(t);
        for i in 0..n {
            let di = r[i] - mean[i];
            for j in i..n {
                c[(i, j)] += di * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            c[(i, j)] = c[(j, i)];
        }
    }
    c / series.len() as f64
}

/// Eigenvalues of a symmetric matrix, largest first.
pub fn eigenvalues_desc(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Shape of the noise covariance before it is scaled to the target SNR.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum NoiseSpectrum {
    /// `A Aᵀ / n` with `A` an `n × n` standard Gaussian draw.
    #[default]
    Wishart,
    /// `Q diag(exp(−2k / dim)) Qᵀ` with `Q` a random orthogonal matrix.
    Decaying { dim: usize },
}

fn base_noise(n: usize, spectrum: NoiseSpectrum, seed: u64) -> Result<DMatrix<f64>> {
    let mut rng = substream(seed, domain::NOISE_COV, 0);
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    match spectrum {
        NoiseSpectrum::Wishart => Ok(&a * a.transpose() / n as f64),
        NoiseSpectrum::Decaying { dim } => {
            if dim == 0 {
                return Err(CpicError::Config(
                    "decaying noise spectrum needs dim > 0".into(),
                ));
            }
            let q = orthonormalize_columns(&a);
            let d = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |k, _| {
                (-2.0 * k as f64 / dim as f64).exp()
            }));
            let m = &q * d * q.transpose();
            Ok((&m + m.transpose()) * 0.5)
        }
    }
}

/// Noise model: `Σ = c · B` for a base shape `B`, with `c` set so that the
/// leading eigenvalue ratio of signal to noise equals the target SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    /// Square root factor, `Σ = F Fᵀ`.
    pub factor: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
    pub snr: f64,
    pub achieved_snr: f64,
    pub signal_top_eigenvalue: f64,
    pub eigenvalues: Vec<f64>,
}

pub fn noise_model(
    signal_cov: &DMatrix<f64>,
    snr: f64,
    spectrum: NoiseSpectrum,
    seed: u64,
) -> Result<NoiseModel> {
    if !(snr > 0.0 && snr.is_finite()) {
        return Err(CpicError::Config(format!(
            "snr must be positive and finite, got {snr}"
        )));
    }
    let base = base_noise(signal_cov.nrows(), spectrum, seed)?;
    let base_top = eigenvalues_desc(&base)[0];
    let signal_top = eigenvalues_desc(signal_cov)[0];
    if signal_top <= 0.0 {
        return Err(CpicError::Degenerate(
            "signal covariance has no positive eigenvalue".into(),
        ));
    }
    let c = signal_top / (snr * base_top);
    let covariance = &base * c;
    let eigenvalues = eigenvalues_desc(&covariance);
    let factor = covariance
        .clone()
        .cholesky()
        .ok_or(CpicError::NotPositiveDefinite)?
        .l();
    Ok(NoiseModel {
        factor,
        achieved_snr: signal_top / eigenvalues[0],
        covariance,
        snr,
        signal_top_eigenvalue: signal_top,
        eigenvalues,
    })
}

/// Adds seeded noise drawn from `noise_model(cov(lifted), snr, spectrum, seed)`.
pub fn corrupt(
    lifted: &Series,
    snr: f64,
    spectrum: NoiseSpectrum,
    seed: u64,
) -> Result<(Series, NoiseModel)> {
    let model = noise_model(&covariance(lifted), snr, spectrum, seed)?;
    let n = lifted.dim();
    let mut rng = substream(seed, domain::NOISE_DRAW, 0);
    let mut data = lifted.data().to_vec();
    let mut z = nalgebra::DVector::zeros(n);
    for t in 0..lifted.len() {
        z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let e = &model.factor * &z;
        for (x, ei) in data[t * n..(t + 1) * n].iter_mut().zip(e.iter()) {
            *x += ei;
        }
    }
    Ok((Series::from_rows(lifted.len(), n, data)?, model))
}

/// `k` SNR levels spaced geometrically from `10⁻³` to `10⁻¹`.
pub fn snr_grid(k: usize) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(CpicError::Config(format!(
            "SNR grid needs at least 2 levels, got {k}"
        )));
    }
    Ok((0..k)
        .map(|i| 10f64.powf(-3.0 + 2.0 * i as f64 / (k - 1) as f64))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorenzConfig {
    pub params: LorenzParams,
    pub embed_dim: usize,
    pub snr: f64,
    #[serde(default)]
    pub noise: NoiseSpectrum,
    pub seed: u64,
}

impl Default for LorenzConfig {
    fn default() -> Self {
        Self {
            params: LorenzParams::default(),
            embed_dim: 30,
            snr: 0.1,
            noise: NoiseSpectrum::Wishart,
            seed: 0,
        }
    }
}

/// Reproducibility record written next to the generated series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LorenzSidecar {
    pub config: LorenzConfig,
    pub samples: usize,
    /// Embedding `V`, row-major `embed_dim × 3`.
    pub embedding: Vec<f64>,
    pub signal_top_eigenvalue: f64,
    pub noise_eigenvalues: Vec<f64>,
    pub achieved_snr: f64,
}

#[derive(Debug, Clone)]
pub struct LorenzDataset {
    /// Centered ground-truth latents.
    pub latents: Series,
    pub clean: Series,
    pub noisy: Series,
    pub embedding: DMatrix<f64>,
    pub noise: NoiseModel,
}

impl LorenzDataset {
    pub fn sidecar(&self, config: &LorenzConfig) -> LorenzSidecar {
        LorenzSidecar {
            config: config.clone(),
            samples: self.noisy.len(),
            embedding: to_row_major(&self.embedding),
            signal_top_eigenvalue: self.noise.signal_top_eigenvalue,
            noise_eigenvalues: self.noise.eigenvalues.clone(),
            achieved_snr: self.noise.achieved_snr,
        }
    }
}

/// Trajectory, centering, lift and corruption in one seeded pipeline.
pub fn generate(config: &LorenzConfig) -> Result<LorenzDataset> {
    let raw = integrate_lorenz(&config.params)?;
    let latents = raw.center().series;
    let (clean, embedding) = lift(&latents, config.embed_dim, config.seed)?;
    let (noisy, noise) = corrupt(&clean, config.snr, config.noise, config.seed)?;
    Ok(LorenzDataset {
        latents,
        clean,
        noisy,
        embedding,
        noise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(steps: usize) -> LorenzParams {
        LorenzParams {
            steps,
            burn_in: 100,
            ..LorenzParams::default()
        }
    }

    #[test]
    fn derivative_at_ones() {
        let d = LorenzParams::default().derivative([1.0, 1.0, 1.0]);
        assert_eq!(d[0], 0.0);
        assert_eq!(d[1], 26.0);
        assert!((d[2] + 5.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn fixed_point_is_stationary() {
        let p = LorenzParams::default();
        let r = 72f64.sqrt();
        let fp = [r, r, 27.0];
        let d = p.derivative(fp);
        assert!(d.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-9);
        let mut s = fp;
        for _ in 0..100 {
            s = p.rk4_step(s);
            assert!((0..3).all(|i| (s[i] - fp[i]).abs() < 1e-3));
        }
    }

    #[test]
    fn nearby_trajectories_separate() {
        let p = LorenzParams::default();
        // Start on the attractor; the transient from (1, 1, 1) contracts first.
        let mut a = [1.0, 1.0, 1.0];
        for _ in 0..p.burn_in {
            a = p.rk4_step(a);
        }
        let mut b = [a[0] + 1e-8, a[1], a[2]];
        let mut separated = false;
        for _ in 0..2500 {
            a = p.rk4_step(a);
            b = p.rk4_step(b);
            if (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt() > 1.0 {
                separated = true;
                break;
            }
        }
        assert!(separated);
    }

    #[test]
    fn divergence_is_reported() {
        let p = LorenzParams {
            dt: 1.0,
            ..short(500)
        };
        assert!(matches!(
            integrate_lorenz(&p),
            Err(CpicError::Diverged { .. })
        ));
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(integrate_lorenz(&short(50)).is_err());
        assert!(integrate_lorenz(&LorenzParams {
            dt: 0.0,
            ..short(500)
        })
        .is_err());
    }

    #[test]
    fn trajectory_length_and_names() {
        let s = integrate_lorenz(&short(600)).unwrap();
        assert_eq!((s.len(), s.dim()), (500, 3));
        assert_eq!(
            s.channel_names.as_deref(),
            Some(&["x".to_string(), "y".into(), "z".into()][..])
        );
    }

    #[test]
    fn embedding_is_orthonormal_and_rank_three() {
        let latents = integrate_lorenz(&short(2100)).unwrap().center().series;
        let (lifted, v) = lift(&latents, 30, 4).unwrap();
        assert!((v.transpose() * &v - DMatrix::identity(3, 3)).abs().max() < 1e-12);
        let sv = lifted.to_matrix().singular_values();
        let mut sv: Vec<f64> = sv.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        assert!(sv[3] < 1e-8 * sv[0]);
    }

    #[test]
    fn snr_is_exact_on_generating_covariances() {
        let latents = integrate_lorenz(&short(2100)).unwrap().center().series;
        let (lifted, _) = lift(&latents, 30, 1).unwrap();
        for snr in [0.001, 0.0215, 0.1, 3.0] {
            let m = noise_model(&covariance(&lifted), snr, NoiseSpectrum::Wishart, 2).unwrap();
            assert!(
                (m.achieved_snr - snr).abs() < 1e-6 * snr,
                "{snr} vs {}",
                m.achieved_snr
            );
            let ff = &m.factor * m.factor.transpose();
            assert!((ff - &m.covariance).abs().max() < 1e-9 * m.eigenvalues[0]);
        }
    }

    #[test]
    fn decaying_spectrum_shape() {
        let signal = DMatrix::<f64>::identity(10, 10) * 4.0;
        let m = noise_model(&signal, 0.25, NoiseSpectrum::Decaying { dim: 3 }, 1).unwrap();
        assert!((m.achieved_snr - 0.25).abs() < 1e-9);
        for k in 1..10 {
            let expect = m.eigenvalues[0] * (-2.0 * k as f64 / 3.0).exp();
            assert!((m.eigenvalues[k] - expect).abs() < 1e-9 * m.eigenvalues[0]);
        }
        assert!(noise_model(&signal, 0.25, NoiseSpectrum::Decaying { dim: 0 }, 1).is_err());
    }

    #[test]
    fn huge_snr_leaves_data_unchanged() {
        let latents = integrate_lorenz(&short(600)).unwrap().center().series;
        let (lifted, _) = lift(&latents, 10, 1).unwrap();
        let (noisy, _) = corrupt(&lifted, 1e12, NoiseSpectrum::Wishart, 1).unwrap();
        let num: f64 = noisy
            .data()
            .iter()
            .zip(lifted.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        let den: f64 = lifted.data().iter().map(|a| a * a).sum();
        assert!((num / den).sqrt() < 1e-4);
    }

    #[test]
    fn empirical_noise_covariance_matches() {
        let zero = Series::from_rows(20_000, 30, vec![0.0; 600_000]).unwrap();
        let signal = DMatrix::<f64>::identity(30, 30);
        let m = noise_model(&signal, 0.5, NoiseSpectrum::Wishart, 7).unwrap();
        // Reuse the draw path with an explicit model on a zero signal.
        let mut rng = substream(7, domain::NOISE_DRAW, 0);
        let mut data = zero.data().to_vec();
        for t in 0..20_000 {
            let z = nalgebra::DVector::from_fn(30, |_, _| rng.sample::<f64, _>(StandardNormal));
            let e = &m.factor * z;
            data[t * 30..(t + 1) * 30].copy_from_slice(e.as_slice());
        }
        let emp = covariance(&Series::from_rows(20_000, 30, data).unwrap());
        assert!((&emp - &m.covariance).norm() < 0.05 * m.covariance.norm());
    }

    #[test]
    fn grid_matches_table_labels() {
        let g = snr_grid(10).unwrap();
        assert!((g[0] - 0.001).abs() < 1e-15);
        assert!((g[9] - 0.1).abs() < 1e-15);
        assert!((g[4] - 0.00774).abs() < 5e-6);
        let r = g[1] / g[0];
        assert!(g.windows(2).all(|w| (w[1] / w[0] - r).abs() < 1e-12));
        assert!(snr_grid(1).is_err());
    }

    #[test]
    fn pipeline_is_deterministic() {
        let cfg = LorenzConfig {
            params: short(700),
            ..LorenzConfig::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.noisy, b.noisy);
        assert_eq!(a.latents, b.latents);
        let side = a.sidecar(&cfg);
        assert_eq!(side.embedding.len(), 90);
        assert!((side.achieved_snr - 0.1).abs() < 1e-6 * 0.1);
    }

    #[test]
    fn signal_and_noise_are_uncorrelated() {
        let cfg = LorenzConfig {
            params: short(20_100),
            snr: 0.1,
            ..LorenzConfig::default()
        };
        let ds = generate(&cfg).unwrap();
        let l = ds.clean.len();
        let n = ds.clean.dim();
        // Cross-covariance between standardized signal and noise.
        let noise: Vec<f64> = ds
            .noisy
            .data()
            .iter()
            .zip(ds.clean.data())
            .map(|(a, b)| a - b)
            .collect();
        let noise = Series::from_rows(l, n, noise).unwrap().standardize().series;
        let sig = ds.clean.standardize().series;
        let mut cross = DMatrix::<f64>::zeros(n, n);
        for t in 0..l {
            for i in 0..n {
                for j in 0..n {
                    cross[(i, j)] += sig.row(t)[i] * noise.row(t)[j];
                }
            }
        }
        cross /= l as f64;
        // Lorenz samples are strongly autocorrelated, which inflates the spread
        // of the cross terms relative to the i.i.d. rate.
        assert!(
            cross.norm() < 3.0 * n as f64 / (l as f64).sqrt() * 10.0,
            "{}",
            cross.norm()
        );
    }
}
