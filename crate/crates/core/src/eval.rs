//! Linear evaluation of learned latents: affine alignment to ground truth,
//! PCA, cross-validated lagged forecasting and sweep aggregation.
//!
//! Multi-output R² is variance-weighted: `1 − ΣSSE / ΣSST` over all outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{CpicError, Result};
use crate::ndmath::PSD_JITTER;
use crate::series::Series;

/// Least-squares affine map `y ≈ a + Bᵀ x`, fitted on centered data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub intercept: Vec<f64>,
    /// `inputs × outputs`, row-major.
    pub weights: Vec<f64>,
    pub inputs: usize,
    pub outputs: usize,
}

impl AffineMap {
    /// Solves the jittered normal equations on `x` (`S × p`) and `y` (`S × q`).
    pub fn fit(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Self> {
        let s = x.nrows();
        if y.nrows() != s {
            return Err(CpicError::shape("regression rows", s, y.nrows()));
        }
        if s == 0 {
            return Err(CpicError::Empty("regression"));
        }
        let xm = x.row_mean();
        let ym = y.row_mean();
        let xc = DMatrix::from_fn(s, x.ncols(), |i, j| x[(i, j)] - xm[j]);
        let yc = DMatrix::from_fn(s, y.ncols(), |i, j| y[(i, j)] - ym[j]);
        let mut gram = xc.transpose() * &xc;
        for i in 0..gram.nrows() {
            gram[(i, i)] += PSD_JITTER;
        }
        let rhs = xc.transpose() * &yc;
        let b = gram
            .cholesky()
            .ok_or(CpicError::NotPositiveDefinite)?
            .solve(&rhs);
        let intercept = (0..y.ncols())
            .map(|k| ym[k] - (0..x.ncols()).map(|j| xm[j] * b[(j, k)]).sum::<f64>())
            .collect();
        Ok(Self {
            intercept,
            weights: crate::ndmath::to_row_major(&b),
            inputs: x.ncols(),
            outputs: y.ncols(),
        })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let b = crate::ndmath::from_row_major(self.inputs, self.outputs, &self.weights);
        let mut out = x * b;
        for mut row in out.row_iter_mut() {
            for (v, a) in row.iter_mut().zip(&self.intercept) {
                *v += a;
            }
        }
        out
    }
}

/// Per-output and variance-weighted R² of `pred` against `truth`. `None`
/// entries mark outputs whose truth is constant.
fn r2_parts(truth: &DMatrix<f64>, pred: &DMatrix<f64>) -> (Vec<Option<f64>>, f64, f64) {
    let mut per = Vec::with_capacity(truth.ncols());
    let (mut sse_all, mut sst_all) = (0.0, 0.0);
    for k in 0..truth.ncols() {
        let col = truth.column(k);
        let mean = col.mean();
        let sst: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
        let sse: f64 = col
            .iter()
            .zip(pred.column(k).iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        sse_all += sse;
        sst_all += sst;
        per.push((sst > 0.0).then(|| 1.0 - sse / sst));
    }
    (per, sse_all, sst_all)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub map: AffineMap,
    pub per_dim_r2: Vec<f64>,
    /// Variance-weighted aggregate (headline value).
    pub r2: f64,
    /// Unweighted mean of `per_dim_r2`.
    pub mean_r2: f64,
    /// Euclidean distance between aligned and true latents at each step.
    pub pointwise_errors: Vec<f64>,
}

/// Fits the best affine map from `inferred` to `truth` and scores it.
pub fn align_r2(inferred: &Series, truth: &Series) -> Result<AlignmentResult> {
    if inferred.len() != truth.len() {
        return Err(CpicError::shape(
            "alignment length",
            truth.len(),
            inferred.len(),
        ));
    }
    let x = inferred.to_matrix();
    let y = truth.to_matrix();
    let map = AffineMap::fit(&x, &y)?;
    let pred = map.predict(&x);
    let (per, sse, sst) = r2_parts(&y, &pred);
    if per.iter().any(Option::is_none) {
        return Err(CpicError::Degenerate(
            "ground truth has a zero-variance dimension".into(),
        ));
    }
    let per_dim_r2: Vec<f64> = per.into_iter().flatten().collect();
    let pointwise_errors = (0..y.nrows())
        .map(|t| (y.row(t) - pred.row(t)).norm())
        .collect();
    Ok(AlignmentResult {
        map,
        mean_r2: per_dim_r2.iter().sum::<f64>() / per_dim_r2.len() as f64,
        per_dim_r2,
        r2: 1.0 - sse / sst,
        pointwise_errors,
    })
}

/// `t,error` CSV of pointwise alignment errors.
pub fn pointwise_error_csv(errors: &[f64]) -> String {
    let mut out = String::from("t,error\n");
    for (t, e) in errors.iter().enumerate() {
        let _ = writeln!(out, "{t},{e}");
    }
    out
}

/// Principal components of a series.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `N × D`, columns are unit eigenvectors, largest variance first.
    pub components: DMatrix<f64>,
    pub variances: Vec<f64>,
}

impl Pca {
    pub fn fit(series: &Series, d: usize) -> Result<Self> {
        if d == 0 || d > series.dim() {
            return Err(CpicError::Config(format!(
                "PCA dimension {d} must lie in 1..={}",
                series.dim()
            )));
        }
        let cov = crate::lorenz::covariance(series);
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..series.dim()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let components = DMatrix::from_fn(series.dim(), d, |i, j| eig.eigenvectors[(i, order[j])]);
        Ok(Self {
            mean: series.mean(),
            variances: order[..d].iter().map(|&k| eig.eigenvalues[k]).collect(),
            components,
        })
    }

    pub fn project(&self, series: &Series) -> Result<Series> {
        if series.dim() != self.mean.len() {
            return Err(CpicError::shape(
                "PCA input channels",
                self.mean.len(),
                series.dim(),
            ));
        }
        let x = series.to_matrix();
        let centered = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - self.mean[j]);
        Series::from_matrix(&(centered * &self.components))
    }
}

/// Scores of the top-`d` principal components.
pub fn pca_project(series: &Series, d: usize) -> Result<Series> {
    Pca::fit(series, d)?.project(series)
}

/// Predict `targets[t + lag]` from `latents[t − window + 1 ..= t]`.
#[derive(Debug, Clone)]
pub struct ForecastTask<'a> {
    pub latents: &'a Series,
    pub targets: &'a Series,
    pub lag: usize,
    pub window: usize,
    pub folds: usize,
}

impl<'a> ForecastTask<'a> {
    pub fn new(latents: &'a Series, targets: &'a Series, lag: usize) -> Self {
        Self {
            latents,
            targets,
            lag,
            window: 3,
            folds: 5,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.window * self.latents.dim()
    }

    /// Design and target matrices over every valid time index.
    pub fn design(&self) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if self.latents.len() != self.targets.len() {
            return Err(CpicError::shape(
                "forecast series length",
                self.latents.len(),
                self.targets.len(),
            ));
        }
        if self.window == 0 {
            return Err(CpicError::Config("forecast window must be positive".into()));
        }
        let l = self.latents.len();
        let first = self.window - 1;
        let samples = l.saturating_sub(first + self.lag);
        let x = DMatrix::from_fn(samples, self.feature_dim(), |i, j| {
            let t = first + i;
            self.latents.rows(t + 1 - self.window, t + 1)[j]
        });
        let y = DMatrix::from_fn(samples, self.targets.dim(), |i, k| {
            self.targets.row(first + i + self.lag)[k]
        });
        Ok((x, y))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    pub fold_r2: Vec<f64>,
    pub mean_r2: f64,
    pub lag: usize,
    pub window: usize,
}

/// Contiguous `k`-block split of `0..n`; block sizes differ by at most one.
pub fn contiguous_folds(n: usize, k: usize) -> Vec<std::ops::Range<usize>> {
    (0..k).map(|f| (f * n / k)..((f + 1) * n / k)).collect()
}

fn select_rows(m: &DMatrix<f64>, rows: impl Iterator<Item = usize>) -> DMatrix<f64> {
    let rows: Vec<usize> = rows.collect();
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// Out-of-sample R² of an OLS forecaster over contiguous folds.
pub fn forecast_r2(task: &ForecastTask<'_>) -> Result<ForecastResult> {
    let (x, y) = task.design()?;
    forecast_r2_design(&x, &y, task.folds).map(|(fold_r2, mean_r2)| ForecastResult {
        fold_r2,
        mean_r2,
        lag: task.lag,
        window: task.window,
    })
}

/// Cross-validated R² on a prepared design. Returns per-fold values and their mean.
pub fn forecast_r2_design(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    folds: usize,
) -> Result<(Vec<f64>, f64)> {
    if folds < 2 {
        return Err(CpicError::Config(format!(
            "need at least 2 folds, got {folds}"
        )));
    }
    let n = x.nrows();
    let required = folds * 10 * x.ncols().max(1);
    if n < required {
        return Err(CpicError::InsufficientData {
            required,
            available: n,
        });
    }
    let mut scores = Vec::with_capacity(folds);
    for test in contiguous_folds(n, folds) {
        let train = (0..n).filter(|i| !test.contains(i));
        let map = AffineMap::fit(&select_rows(x, train.clone()), &select_rows(y, train))?;
        let xt = select_rows(x, test.clone());
        let yt = select_rows(y, test);
        let (_, sse, sst) = r2_parts(&yt, &map.predict(&xt));
        if sst <= 0.0 {
            return Err(CpicError::Degenerate(
                "forecast target constant within a fold".into(),
            ));
        }
        scores.push(1.0 - sse / sst);
    }
    let mean = scores.iter().sum::<f64>() / folds as f64;
    Ok((scores, mean))
}

/// One benchmark run as consumed by [`sweep_report`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub benchmark: String,
    pub method: String,
    pub snr: f64,
    pub seed: u64,
    pub r2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<crate::objective::TrainReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pointwise_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub snr: f64,
    pub runs: usize,
    pub median: f64,
    pub mean: f64,
    /// Population standard deviation over seeds.
    pub std: f64,
    pub max: f64,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub benchmark: String,
    pub aggregation: String,
    pub methods: Vec<String>,
    pub rows: Vec<SweepRow>,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Aggregates R² over seeds per `(method, SNR)`. Rows are ordered by
/// ascending SNR, then by method in order of first appearance.
pub fn sweep_report(runs: &[RunReport]) -> Result<SweepReport> {
    let first = runs.first().ok_or(CpicError::Empty("sweep runs"))?;
    if let Some(bad) = runs.iter().find(|r| r.benchmark != first.benchmark) {
        return Err(CpicError::Config(format!(
            "mixed benchmark ids: {:?} and {:?}",
            first.benchmark, bad.benchmark
        )));
    }
    let mut methods: Vec<String> = Vec::new();
    for r in runs {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    let mut groups: BTreeMap<(u64, usize), Vec<&RunReport>> = BTreeMap::new();
    for r in runs {
        let m = methods
            .iter()
            .position(|m| *m == r.method)
            .expect("collected above");
        groups.entry((r.snr.to_bits(), m)).or_default().push(r);
    }
    let mut keys: Vec<_> = groups.keys().copied().collect();
    keys.sort_by(|a, b| {
        f64::from_bits(a.0)
            .total_cmp(&f64::from_bits(b.0))
            .then(a.1.cmp(&b.1))
    });
    let rows = keys
        .into_iter()
        .map(|key| {
            let mut g = groups[&key].clone();
            g.sort_by_key(|r| r.seed);
            let mut vals: Vec<f64> = g.iter().map(|r| r.r2).collect();
            let n = vals.len() as f64;
            // Shifted by the first value so identical inputs give exact results.
            let shift = vals[0];
            let mean = shift + vals.iter().map(|v| v - shift).sum::<f64>() / n;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            let seeds = g.iter().map(|r| r.seed).collect();
            vals.sort_by(f64::total_cmp);
            SweepRow {
                method: methods[key.1].clone(),
                snr: f64::from_bits(key.0),
                runs: vals.len(),
                median: median(&vals),
                mean,
                std,
                max: *vals.last().expect("nonempty group"),
                seeds,
            }
        })
        .collect();
    Ok(SweepReport {
        benchmark: first.benchmark.clone(),
        aggregation: "variance-weighted R2 over latent dimensions; population std over seeds"
            .into(),
        methods,
        rows,
    })
}

impl SweepReport {
    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<10} {:<16} {:>4} {:>8} {:>8} {:>8} {:>8}\n",
            "snr", "method", "runs", "median", "mean", "std", "max"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<10} {:<16} {:>4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                format_snr(r.snr),
                r.method,
                r.runs,
                r.median,
                r.mean,
                r.std,
                r.max
            );
        }
        out
    }

    /// Medians for one method, in ascending SNR order.
    pub fn medians(&self, method: &str) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.method == method)
            .map(|r| (r.snr, r.median))
            .collect()
    }
}

/// Three significant digits, matching the usual SNR row labels.
pub fn format_snr(snr: f64) -> String {
    let digits = (2 - snr.abs().log10().floor() as i32).max(0) as usize;
    let s = format!("{snr:.digits$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Centers every column; useful when comparing latent sets.
pub fn centered(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mean: DVector<f64> = m.row_mean().transpose();
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] - mean[j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::seq::SliceRandom;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn noise(len: usize, dim: usize, seed: u64) -> Series {
        let mut rng = substream(seed, 50, 0);
        Series::from_rows(
            len,
            dim,
            (0..len * dim).map(|_| rng.sample(StandardNormal)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_latents_align_perfectly() {
        let t = noise(500, 3, 1);
        let a = align_r2(&t, &t).unwrap();
        assert!((a.r2 - 1.0).abs() < 1e-10);
        assert!(a.per_dim_r2.iter().all(|r| (r - 1.0).abs() < 1e-10));
        assert!(a.pointwise_errors.iter().all(|e| *e < 1e-6));
    }

    #[test]
    fn affine_transform_is_absorbed() {
        let t = noise(500, 3, 2);
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, -1.0, 0.1, -0.5, 0.2, 0.7, 0.0, 1.5]);
        let x = t.to_matrix() * m;
        let x = DMatrix::from_fn(x.nrows(), 3, |i, j| x[(i, j)] + [4.0, -2.0, 9.0][j]);
        let a = align_r2(&Series::from_matrix(&x).unwrap(), &t).unwrap();
        assert!((a.r2 - 1.0).abs() < 1e-8, "{}", a.r2);
    }

    #[test]
    fn independent_noise_does_not_align() {
        let a = align_r2(&noise(20_000, 3, 3), &noise(20_000, 3, 4)).unwrap();
        assert!(a.r2 < 0.01);
        assert!(a.r2 <= 1.0);
    }

    #[test]
    fn constant_truth_is_degenerate() {
        let t = Series::from_rows(10, 1, vec![1.0; 10]).unwrap();
        assert!(matches!(
            align_r2(&noise(10, 1, 0), &t),
            Err(CpicError::Degenerate(_))
        ));
    }

    #[test]
    fn pca_recovers_rank_d_data() {
        let latent = noise(400, 2, 5).to_matrix();
        let mut rng = substream(1, 51, 0);
        let w = DMatrix::from_fn(2, 6, |_, _| rng.sample::<f64, _>(StandardNormal));
        let data = Series::from_matrix(&(latent * w)).unwrap();
        let pca = Pca::fit(&data, 2).unwrap();
        let scores = pca.project(&data).unwrap().to_matrix();
        let recon = &scores * pca.components.transpose();
        let c = centered(&data.to_matrix());
        assert!((recon - &c).abs().max() < 1e-8);
        let cov = scores.transpose() * &scores / 400.0;
        assert!(cov[(0, 1)].abs() < 1e-8);
        assert!(pca.variances[0] >= pca.variances[1]);
        assert!(
            align_r2(&pca.project(&data).unwrap(), &noise(400, 2, 5))
                .unwrap()
                .r2
                > 1.0 - 1e-6
        );
    }

    #[test]
    fn realizable_forecast() {
        let lat = noise(2000, 2, 6);
        let target: Vec<f64> = (0..2000)
            .map(|t| {
                if t >= 6 {
                    2.0 * lat.row(t - 5)[0] - lat.row(t - 6)[1]
                } else {
                    0.0
                }
            })
            .collect();
        let targets = Series::from_rows(2000, 1, target).unwrap();
        let r = forecast_r2(&ForecastTask::new(&lat, &targets, 5)).unwrap();
        assert_eq!(r.fold_r2.len(), 5);
        assert!(r.mean_r2 >= 0.999, "{r:?}");
    }

    #[test]
    fn noise_target_is_unpredictable() {
        let r = forecast_r2(&ForecastTask::new(
            &noise(3000, 3, 7),
            &noise(3000, 2, 8),
            5,
        ))
        .unwrap();
        assert!(r.mean_r2 <= 0.02, "{r:?}");
    }

    #[test]
    fn shuffled_test_targets_kill_skill() {
        let lat = noise(3000, 2, 9);
        let targets = Series::from_rows(
            3000,
            1,
            (0..3000usize)
                .map(|t| lat.row(t.saturating_sub(5))[0])
                .collect(),
        )
        .unwrap();
        let task = ForecastTask::new(&lat, &targets, 5);
        let (x, mut y) = task.design().unwrap();
        let mut rng = substream(0, 52, 0);
        for f in contiguous_folds(y.nrows(), 5) {
            let mut idx: Vec<usize> = f.clone().collect();
            idx.shuffle(&mut rng);
            let orig = y.clone();
            for (dst, src) in f.zip(idx) {
                y[(dst, 0)] = orig[(src, 0)];
            }
        }
        // Shuffled within every fold: nothing transferable remains.
        let (_, mean) = forecast_r2_design(&x, &y, 5).unwrap();
        assert!(mean <= 0.02, "{mean}");
    }

    #[test]
    fn insufficient_forecast_data() {
        let err =
            forecast_r2(&ForecastTask::new(&noise(100, 3, 1), &noise(100, 1, 2), 5)).unwrap_err();
        assert!(
            matches!(err, CpicError::InsufficientData { required: 450, .. }),
            "{err}"
        );
    }

    fn run(method: &str, snr: f64, seed: u64, r2: f64) -> RunReport {
        RunReport {
            benchmark: "b".into(),
            method: method.into(),
            snr,
            seed,
            r2,
            train: None,
            pointwise_errors: Vec::new(),
        }
    }

    #[test]
    fn sweep_single_and_constant() {
        let rep = sweep_report(&[run("m", 0.1, 0, 0.7)]).unwrap();
        let r = &rep.rows[0];
        assert_eq!((r.mean, r.median, r.max), (0.7, 0.7, 0.7));
        let runs: Vec<_> = (0..10).map(|s| run("m", 0.1, s, 0.4)).collect();
        let r = &sweep_report(&runs).unwrap().rows[0];
        assert_eq!(r.std, 0.0);
        assert_eq!(r.mean, 0.4);
    }

    #[test]
    fn sweep_ordering_and_mixed_ids() {
        let runs = vec![
            run("cpic", 0.1, 0, 0.9),
            run("pca", 0.001, 0, 0.2),
            run("cpic", 0.001, 1, 0.3),
            run("pca", 0.1, 0, 0.5),
        ];
        let rep = sweep_report(&runs).unwrap();
        let order: Vec<_> = rep
            .rows
            .iter()
            .map(|r| (r.snr, r.method.as_str()))
            .collect();
        assert_eq!(
            order,
            vec![(0.001, "cpic"), (0.001, "pca"), (0.1, "cpic"), (0.1, "pca")]
        );
        assert!(rep.to_table().lines().nth(1).unwrap().starts_with("0.001"));
        let mut bad = runs.clone();
        bad[1].benchmark = "other".into();
        assert!(sweep_report(&bad).is_err());
    }

    #[test]
    fn snr_labels() {
        let labels: Vec<String> = crate::lorenz::snr_grid(10)
            .unwrap()
            .into_iter()
            .map(format_snr)
            .collect();
        assert_eq!(labels[0], "0.001");
        assert_eq!(labels[4], "0.00774");
        assert_eq!(labels[9], "0.1");
    }

    #[test]
    fn error_csv_format() {
        assert_eq!(pointwise_error_csv(&[0.5, 1.0]), "t,error\n0,0.5\n1,1\n");
    }
}
