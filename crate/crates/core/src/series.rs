//! Multivariate time series: CSV ingestion, centering, window pairs and
//! lagged covariances.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{CpicError, Result};

/// `L × N` real series stored row-major (one row per time step).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    len: usize,
    dim: usize,
    data: Vec<f64>,
    pub channel_names: Option<Vec<String>>,
    pub step_label: Option<String>,
}

impl Series {
    pub fn from_rows(len: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != len * dim {
            return Err(CpicError::shape("series data", len * dim, data.len()));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(CpicError::Degenerate(format!(
                "non-finite value at time {} channel {}",
                pos / dim.max(1),
                pos % dim.max(1)
            )));
        }
        Ok(Self {
            len,
            dim,
            data,
            channel_names: None,
            step_label: None,
        })
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        Self::from_rows(m.nrows(), m.ncols(), crate::ndmath::to_row_major(m))
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.dim {
            return Err(CpicError::shape("channel names", self.dim, names.len()));
        }
        self.channel_names = Some(names);
        Ok(self)
    }

    /// Number of time steps `L`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of channels `N`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// Consecutive rows `start..end`, flattened time-major.
    pub fn rows(&self, start: usize, end: usize) -> &[f64] {
        &self.data[start * self.dim..end * self.dim]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.len).map(|t| self.data[t * self.dim + c]).collect()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len, self.dim, &self.data)
    }

    pub fn slice(&self, start: usize, end: usize) -> Result<Series> {
        if start >= end || end > self.len {
            return Err(CpicError::Config(format!(
                "invalid slice {start}..{end} of series with {} steps",
                self.len
            )));
        }
        let mut s = Series::from_rows(end - start, self.dim, self.rows(start, end).to_vec())?;
        s.channel_names = self.channel_names.clone();
        s.step_label = self.step_label.clone();
        Ok(s)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim];
        for t in 0..self.len {
            for (m, v) in mean.iter_mut().zip(self.row(t)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= self.len as f64);
        mean
    }

    /// Reads a comma-separated file, one row per time step.
    pub fn load_csv(path: impl AsRef<Path>, has_header: bool) -> Result<Series> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CpicError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut names = None;
        let mut dim = None;
        let mut data = Vec::new();
        let mut len = 0;
        for (line_no, line) in text.lines().enumerate() {
            let row = line_no + 1;
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if has_header && names.is_none() && len == 0 {
                names = Some(cells.iter().map(|c| c.to_string()).collect::<Vec<_>>());
                dim = Some(cells.len());
                continue;
            }
            let expected = *dim.get_or_insert(cells.len());
            if cells.len() != expected {
                return Err(CpicError::RaggedRow {
                    path: path.to_path_buf(),
                    row,
                    expected,
                    found: cells.len(),
                });
            }
            for (c, cell) in cells.iter().enumerate() {
                let v: f64 = cell
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| CpicError::Parse {
                        path: path.to_path_buf(),
                        row,
                        col: c + 1,
                        cell: cell.to_string(),
                    })?;
                data.push(v);
            }
            len += 1;
        }
        if len < 2 {
            return Err(CpicError::TooShort {
                required: 2,
                available: len,
            });
        }
        let mut series = Series::from_rows(len, dim.unwrap_or(0), data)?;
        if let Some(names) = names {
            series = series.with_names(names)?;
        }
        Ok(series)
    }

    /// Like [`Series::load_csv`], treating the first non-empty row as a header
    /// when any of its cells is not a number.
    pub fn load_csv_sniff(path: impl AsRef<Path>) -> Result<Series> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CpicError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let header = text
            .lines()
            .find(|l| !l.trim().is_empty())
            .is_some_and(|l| l.split(',').any(|c| c.trim().parse::<f64>().is_err()));
        Self::load_csv(path, header)
    }

    /// Serializes as CSV, with a header row when channel names are present.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        if let Some(names) = &self.channel_names {
            out.push_str(&names.join(","));
            out.push('\n');
        }
        for t in 0..self.len {
            for (c, v) in self.row(t).iter().enumerate() {
                if c > 0 {
                    out.push(',');
                }
                write!(out, "{v}").expect("writing to String");
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|source| CpicError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Subtracts the per-channel mean.
    pub fn center(&self) -> Preprocessed {
        self.preprocess(false)
    }

    /// Centers and divides all channels by the root mean channel variance,
    /// so the average channel has unit variance.
    pub fn center_scale(&self) -> Preprocessed {
        let mut p = self.center();
        let n = self.dim as f64;
        let mean_var = p.series.data.iter().map(|v| v * v).sum::<f64>() / (self.len as f64 * n);
        if mean_var > 0.0 {
            let s = mean_var.sqrt();
            p.series.data.iter_mut().for_each(|v| *v /= s);
            p.scale = Some(vec![s; self.dim]);
        }
        p
    }

    /// Centers and scales each channel to unit population variance.
    /// Constant channels are only centered.
    pub fn standardize(&self) -> Preprocessed {
        self.preprocess(true)
    }

    fn preprocess(&self, scale: bool) -> Preprocessed {
        let mean = self.mean();
        let mut var = vec![0.0; self.dim];
        for t in 0..self.len {
            for (c, v) in self.row(t).iter().enumerate() {
                let d = v - mean[c];
                var[c] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= self.len as f64);
        let constant_channels: Vec<usize> = (0..self.dim)
            .filter(|&c| var[c] <= f64::EPSILON * mean[c].abs().max(1.0))
            .collect();
        for &c in &constant_channels {
            log::warn!("channel {c} has zero variance; left centered");
        }
        let scales: Vec<f64> = (0..self.dim)
            .map(|c| {
                if scale && !constant_channels.contains(&c) {
                    var[c].sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let data = (0..self.len * self.dim)
            .map(|k| {
                let c = k % self.dim;
                if constant_channels.contains(&c) {
                    0.0
                } else {
                    (self.data[k] - mean[c]) / scales[c]
                }
            })
            .collect();
        let mut series = Series::from_rows(self.len, self.dim, data).expect("same shape");
        series.channel_names = self.channel_names.clone();
        series.step_label = self.step_label.clone();
        Preprocessed {
            series,
            mean,
            scale: if scale { Some(scales) } else { None },
            constant_channels,
        }
    }

    /// Valid anchors for windows of length `window`: `T-1 ..= L-T-1`.
    pub fn anchor_range(&self, window: usize) -> Result<(usize, usize)> {
        let required = 2 * window + 1;
        if window == 0 || self.len < required {
            return Err(CpicError::TooShort {
                required: required.max(3),
                available: self.len,
            });
        }
        Ok((window - 1, self.len - window - 1))
    }

    /// Past/future window pairs around each anchor.
    pub fn window_pairs(&self, window: usize, anchors: &[usize]) -> Result<WindowPairBatch> {
        let (min, max) = self.anchor_range(window)?;
        let width = window * self.dim;
        let mut past = Vec::with_capacity(anchors.len() * width);
        let mut future = Vec::with_capacity(anchors.len() * width);
        for &a in anchors {
            if a < min || a > max {
                return Err(CpicError::AnchorOutOfRange {
                    anchor: a,
                    min,
                    max,
                });
            }
            past.extend_from_slice(self.rows(a + 1 - window, a + 1));
            future.extend_from_slice(self.rows(a + 1, a + 1 + window));
        }
        Ok(WindowPairBatch {
            window,
            dim: self.dim,
            past,
            future,
            anchors: anchors.to_vec(),
        })
    }

    /// Lagged covariances `C_0..=C_K` about the full-series mean, each
    /// normalized by the series length so every block-Toeplitz assembly is PSD.
    pub fn lagged_covariance(&self, max_lag: usize) -> Result<LaggedCovariance> {
        if max_lag + 1 >= self.len {
            return Err(CpicError::TooShort {
                required: max_lag + 2,
                available: self.len,
            });
        }
        let n = self.dim;
        let mean = self.mean();
        let centered: Vec<f64> = (0..self.len * n)
            .map(|k| self.data[k] - mean[k % n])
            .collect();
        let mut lags = Vec::with_capacity(max_lag + 1);
        for lag in 0..=max_lag {
            let count = self.len - lag;
            let mut c = DMatrix::<f64>::zeros(n, n);
            for t in 0..count {
                let a = &centered[t * n..(t + 1) * n];
                let b = &centered[(t + lag) * n..(t + lag + 1) * n];
                for i in 0..n {
                    for j in 0..n {
                        c[(i, j)] += a[i] * b[j];
                    }
                }
            }
            c /= self.len as f64;
            if lag == 0 {
                c = (&c + c.transpose()) * 0.5;
            }
            lags.push(c);
        }
        Ok(LaggedCovariance {
            lags,
            samples: self.len,
            mean,
        })
    }
}

/// Output of [`Series::center`] / [`Series::standardize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub series: Series,
    pub mean: Vec<f64>,
    pub scale: Option<Vec<f64>>,
    pub constant_channels: Vec<usize>,
}

/// `S` aligned past/future windows, each flattened time-major to `T·N` values.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPairBatch {
    pub window: usize,
    pub dim: usize,
    pub past: Vec<f64>,
    pub future: Vec<f64>,
    pub anchors: Vec<usize>,
}

impl WindowPairBatch {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn width(&self) -> usize {
        self.window * self.dim
    }

    pub fn past(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.past[i * w..(i + 1) * w]
    }

    pub fn future(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.future[i * w..(i + 1) * w]
    }
}

/// `C_Δ = E[(x_t − μ)(x_{t+Δ} − μ)ᵀ]` for `Δ = 0..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedCovariance {
    pub lags: Vec<DMatrix<f64>>,
    pub samples: usize,
    pub mean: Vec<f64>,
}

impl LaggedCovariance {
    pub fn max_lag(&self) -> usize {
        self.lags.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.lags[0].nrows()
    }

    /// Lagged covariances of the projection `Uᵀ x`.
    pub fn project(&self, u: &DMatrix<f64>) -> Result<LaggedCovariance> {
        if u.nrows() != self.dim() {
            return Err(CpicError::shape("projection rows", self.dim(), u.nrows()));
        }
        Ok(LaggedCovariance {
            lags: self.lags.iter().map(|c| u.transpose() * c * u).collect(),
            samples: self.samples,
            mean: (u.transpose() * nalgebra::DVector::from_column_slice(&self.mean))
                .iter()
                .copied()
                .collect(),
        })
    }

    /// `W·N` square block-Toeplitz matrix with block `(i, j) = C_{j−i}`
    /// (transposed below the diagonal).
    pub fn block_toeplitz(&self, blocks: usize) -> Result<DMatrix<f64>> {
        if blocks == 0 || blocks > self.lags.len() {
            return Err(CpicError::Config(format!(
                "block_toeplitz needs 1..={} blocks, got {blocks}",
                self.lags.len()
            )));
        }
        let n = self.dim();
        let mut m = DMatrix::zeros(blocks * n, blocks * n);
        for i in 0..blocks {
            for j in i..blocks {
                let c = &self.lags[j - i];
                for a in 0..n {
                    for b in 0..n {
                        m[(i * n + a, j * n + b)] = c[(a, b)];
                        m[(j * n + b, i * n + a)] = c[(a, b)];
                    }
                }
            }
        }
        Ok(m)
    }
}
