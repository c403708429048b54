use serde::{Deserialize, Serialize};

use crate::error::{CpicError, Result};
use crate::ndmath::{Activation, Mlp, MlpSpec, MlpTrace, OutputTransform, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticKind {
    /// `f(a, b) = h(a) · g(b)`.
    Separable,
    /// `f(a, b) = net([a, b])`.
    Joint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticSpec {
    pub kind: CriticKind,
    pub past_dim: usize,
    pub future_dim: usize,
    /// Hidden widths of each network; empty means a single affine layer.
    pub hidden: Vec<usize>,
    /// Embedding width `E` of the separable form.
    pub embed_dim: usize,
}

impl CriticSpec {
    pub fn new(kind: CriticKind, past_dim: usize, future_dim: usize) -> Self {
        Self {
            kind,
            past_dim,
            future_dim,
            hidden: vec![64],
            embed_dim: 32,
        }
    }
}

/// Square matrix of critic scores; entry `(i, j)` scores past `i` against future `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    size: usize,
    values: Vec<f64>,
}

impl ScoreMatrix {
    pub fn from_vec(size: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != size * size {
            return Err(CpicError::shape("score matrix", size * size, values.len()));
        }
        Ok(Self { size, values })
    }

    pub fn from_fn(size: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let values = (0..size * size).map(|k| f(k / size, k % size)).collect();
        Self { size, values }
    }

    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            values: vec![0.0; size * size],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.size + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.size..(i + 1) * self.size]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            size: self.size,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    spec: CriticSpec,
    first: Mlp,
    second: Option<Mlp>,
}

#[derive(Debug)]
pub enum CriticTrace {
    Separable {
        past: Vec<MlpTrace>,
        future: Vec<MlpTrace>,
    },
    Joint {
        size: usize,
        pairs: Vec<MlpTrace>,
    },
}

impl Critic {
    pub fn new(store: &mut ParamStore, prefix: &str, spec: CriticSpec) -> Result<Self> {
        let widths = |input: usize, output: usize| {
            let mut w = vec![input];
            w.extend_from_slice(&spec.hidden);
            w.push(output);
            MlpSpec::new(w, Activation::Tanh, OutputTransform::Identity)
        };
        let (first, second) = match spec.kind {
            CriticKind::Separable => (
                Mlp::new(
                    store,
                    &format!("{prefix}.h"),
                    widths(spec.past_dim, spec.embed_dim),
                )?,
                Some(Mlp::new(
                    store,
                    &format!("{prefix}.g"),
                    widths(spec.future_dim, spec.embed_dim),
                )?),
            ),
            CriticKind::Joint => (
                Mlp::new(
                    store,
                    &format!("{prefix}.f"),
                    widths(spec.past_dim + spec.future_dim, 1),
                )?,
                None,
            ),
        };
        Ok(Self {
            spec,
            first,
            second,
        })
    }

    pub fn spec(&self) -> &CriticSpec {
        &self.spec
    }

    /// `(h, g)` for a separable critic, `(f, None)` for a joint one.
    pub fn networks(&self) -> (&Mlp, Option<&Mlp>) {
        (&self.first, self.second.as_ref())
    }

    /// All `S²` scores. A separable critic embeds each side once; a joint
    /// critic evaluates its network on every pair.
    pub fn score_matrix(
        &self,
        store: &ParamStore,
        past: &[Vec<f64>],
        future: &[Vec<f64>],
    ) -> Result<(ScoreMatrix, CriticTrace)> {
        if past.len() != future.len() {
            return Err(CpicError::shape("critic batch", past.len(), future.len()));
        }
        let s = past.len();
        if s < 2 {
            return Err(CpicError::InsufficientData {
                required: 2,
                available: s,
            });
        }
        match &self.second {
            Some(g) => {
                let hp = past
                    .iter()
                    .map(|a| self.first.forward(store, a))
                    .collect::<Result<Vec<_>>>()?;
                let gf = future
                    .iter()
                    .map(|b| g.forward(store, b))
                    .collect::<Result<Vec<_>>>()?;
                let scores = ScoreMatrix::from_fn(s, |i, j| {
                    hp[i]
                        .output
                        .iter()
                        .zip(&gf[j].output)
                        .map(|(x, y)| x * y)
                        .sum()
                });
                Ok((
                    scores,
                    CriticTrace::Separable {
                        past: hp,
                        future: gf,
                    },
                ))
            }
            None => {
                let mut pairs = Vec::with_capacity(s * s);
                let mut values = Vec::with_capacity(s * s);
                let mut joined = Vec::with_capacity(self.spec.past_dim + self.spec.future_dim);
                for a in past {
                    for b in future {
                        joined.clear();
                        joined.extend_from_slice(a);
                        joined.extend_from_slice(b);
                        let tr = self.first.forward(store, &joined)?;
                        values.push(tr.output[0]);
                        pairs.push(tr);
                    }
                }
                Ok((
                    ScoreMatrix { size: s, values },
                    CriticTrace::Joint { size: s, pairs },
                ))
            }
        }
    }

    /// Reverse pass from score cotangents; returns cotangents on the past and
    /// future codes.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        trace: &CriticTrace,
        d_scores: &ScoreMatrix,
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        match trace {
            CriticTrace::Separable { past, future } => {
                let s = past.len();
                let e = self.spec.embed_dim;
                let g = self
                    .second
                    .as_ref()
                    .expect("separable critic has two networks");
                let mut d_past = Vec::with_capacity(s);
                for i in 0..s {
                    let mut dh = vec![0.0; e];
                    for j in 0..s {
                        let w = d_scores.get(i, j);
                        if w != 0.0 {
                            dh.iter_mut()
                                .zip(&future[j].output)
                                .for_each(|(a, b)| *a += w * b);
                        }
                    }
                    d_past.push(self.first.backward(store, &past[i], &dh));
                }
                let mut d_future = Vec::with_capacity(s);
                for j in 0..s {
                    let mut dg = vec![0.0; e];
                    for i in 0..s {
                        let w = d_scores.get(i, j);
                        if w != 0.0 {
                            dg.iter_mut()
                                .zip(&past[i].output)
                                .for_each(|(a, b)| *a += w * b);
                        }
                    }
                    d_future.push(g.backward(store, &future[j], &dg));
                }
                (d_past, d_future)
            }
            CriticTrace::Joint { size, pairs } => {
                let s = *size;
                let (da, db) = (self.spec.past_dim, self.spec.future_dim);
                let mut d_past = vec![vec![0.0; da]; s];
                let mut d_future = vec![vec![0.0; db]; s];
                for i in 0..s {
                    for j in 0..s {
                        let w = d_scores.get(i, j);
                        if w == 0.0 {
                            continue;
                        }
                        let d_in = self.first.backward(store, &pairs[i * s + j], &[w]);
                        d_past[i]
                            .iter_mut()
                            .zip(&d_in[..da])
                            .for_each(|(a, b)| *a += b);
                        d_future[j]
                            .iter_mut()
                            .zip(&d_in[da..])
                            .for_each(|(a, b)| *a += b);
                    }
                }
                (d_past, d_future)
            }
        }
    }
}
