use serde::{Deserialize, Serialize};

use super::params::{Init, ParamId, ParamStore};
use super::reduce::{sigmoid, softplus};
use crate::error::{CpicError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation.
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputTransform {
    Identity,
    Softplus,
}

/// Layer widths `[input, hidden.., output]`, one activation per hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub output: OutputTransform,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation, output: OutputTransform) -> Self {
        let hidden = widths.len().saturating_sub(2);
        Self {
            widths,
            activations: vec![activation; hidden],
            output,
        }
    }

    /// Single affine layer.
    pub fn linear(input: usize, output: usize) -> Self {
        Self::new(
            vec![input, output],
            Activation::Tanh,
            OutputTransform::Identity,
        )
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated spec has widths")
    }

    fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(CpicError::Config(
                "MLP needs at least input and output widths".into(),
            ));
        }
        if self.widths.contains(&0) {
            return Err(CpicError::Config(format!(
                "MLP widths must be positive: {:?}",
                self.widths
            )));
        }
        if self.activations.len() != self.widths.len() - 2 {
            return Err(CpicError::Config(format!(
                "MLP with {} hidden layers given {} activations",
                self.widths.len() - 2,
                self.activations.len()
            )));
        }
        Ok(())
    }
}

/// A feed-forward network whose weights live in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    spec: MlpSpec,
    weights: Vec<ParamId>,
    biases: Vec<ParamId>,
}

/// Activations cached by a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct MlpTrace {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl Mlp {
    /// Registers layer parameters `{prefix}.w{k}` (out × in) and `{prefix}.b{k}`.
    pub fn new(store: &mut ParamStore, prefix: &str, spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (k, pair) in spec.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            weights.push(store.add(&format!("{prefix}.w{k}"), fan_out, fan_in, Init::FanIn)?);
            biases.push(store.add(&format!("{prefix}.b{k}"), fan_out, 1, Init::Zeros)?);
        }
        Ok(Self {
            spec,
            weights,
            biases,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn layer_params(&self) -> impl Iterator<Item = (ParamId, ParamId)> + '_ {
        self.weights
            .iter()
            .copied()
            .zip(self.biases.iter().copied())
    }

    pub fn output_bias(&self) -> ParamId {
        *self.biases.last().expect("at least one layer")
    }

    fn check_input(&self, store: &ParamStore, input: &[f64]) -> Result<()> {
        if input.len() != self.spec.input_dim() {
            let name = &store.param(self.weights[0]).name;
            return Err(CpicError::shape(
                format!("input to {name}"),
                self.spec.input_dim(),
                input.len(),
            ));
        }
        for (w, b) in self.layer_params() {
            let (wp, bp) = (store.param(w), store.param(b));
            if wp.value.len() != wp.rows * wp.cols {
                return Err(CpicError::shape(
                    wp.name.clone(),
                    wp.rows * wp.cols,
                    wp.value.len(),
                ));
            }
            if bp.value.len() != wp.rows {
                return Err(CpicError::shape(bp.name.clone(), wp.rows, bp.value.len()));
            }
        }
        Ok(())
    }

    /// Forward pass keeping the activations needed for the reverse pass.
    pub fn forward(&self, store: &ParamStore, input: &[f64]) -> Result<MlpTrace> {
        self.check_input(store, input)?;
        let n_layers = self.weights.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers);
        let mut x = input.to_vec();
        for (k, (w, b)) in self.layer_params().enumerate() {
            let wp = store.param(w);
            let bias = store.value(b);
            let z: Vec<f64> = (0..wp.rows)
                .map(|r| {
                    let row = &wp.value[r * wp.cols..(r + 1) * wp.cols];
                    bias[r] + row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            let next = if k + 1 < n_layers {
                let act = self.spec.activations[k];
                z.iter().map(|&v| act.apply(v)).collect()
            } else {
                match self.spec.output {
                    OutputTransform::Identity => z.clone(),
                    OutputTransform::Softplus => z.iter().map(|&v| softplus(v)).collect(),
                }
            };
            inputs.push(std::mem::replace(&mut x, next));
            pre.push(z);
        }
        Ok(MlpTrace {
            inputs,
            pre,
            output: x,
        })
    }

    pub fn apply(&self, store: &ParamStore, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(store, input)?.output)
    }

    /// Reverse pass from an output cotangent. Parameter gradients are added
    /// into the store; the input cotangent is returned.
    pub fn backward(&self, store: &mut ParamStore, trace: &MlpTrace, d_output: &[f64]) -> Vec<f64> {
        let n_layers = self.weights.len();
        let last_pre = &trace.pre[n_layers - 1];
        let mut delta: Vec<f64> = match self.spec.output {
            OutputTransform::Identity => d_output.to_vec(),
            OutputTransform::Softplus => d_output
                .iter()
                .zip(last_pre)
                .map(|(g, &z)| g * sigmoid(z))
                .collect(),
        };
        for k in (0..n_layers).rev() {
            let (w, b) = (self.weights[k], self.biases[k]);
            let x = &trace.inputs[k];
            let (rows, cols) = {
                let p = store.param(w);
                (p.rows, p.cols)
            };
            {
                let gw = store.grad_mut(w);
                for r in 0..rows {
                    let d = delta[r];
                    if d != 0.0 {
                        for (g, xi) in gw[r * cols..(r + 1) * cols].iter_mut().zip(x) {
                            *g += d * xi;
                        }
                    }
                }
            }
            store.accumulate(b, &delta);
            let wv = store.value(w);
            let mut d_in = vec![0.0; cols];
            for r in 0..rows {
                let d = delta[r];
                if d != 0.0 {
                    for (acc, wi) in d_in.iter_mut().zip(&wv[r * cols..(r + 1) * cols]) {
                        *acc += d * wi;
                    }
                }
            }
            if k > 0 {
                let act = self.spec.activations[k - 1];
                for (g, &z) in d_in.iter_mut().zip(&trace.pre[k - 1]) {
                    *g *= act.derivative(z);
                }
            }
            delta = d_in;
        }
        delta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndmath::grad_check;

    #[test]
    fn zero_weights_softplus_gives_ln2() {
        let mut store = ParamStore::new(0);
        let mlp = Mlp::new(
            &mut store,
            "m",
            MlpSpec::new(vec![4, 6, 3], Activation::Tanh, OutputTransform::Softplus),
        )
        .unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            store.value_mut(id).iter_mut().for_each(|v| *v = 0.0);
        }
        let out = mlp.apply(&store, &[1.0, -2.0, 3.0, 0.5]).unwrap();
        for v in out {
            assert!((v - 2f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut store = ParamStore::new(0);
        let mlp = Mlp::new(&mut store, "lin", MlpSpec::linear(3, 3)).unwrap();
        let (w, _) = mlp.layer_params().next().unwrap();
        store
            .set_value(w, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])
            .unwrap();
        let x = [0.25, -4.0, 9.5];
        assert_eq!(mlp.apply(&store, &x).unwrap(), x.to_vec());
    }

    #[test]
    fn shape_mismatch_names_parameter() {
        let mut store = ParamStore::new(0);
        let mlp = Mlp::new(&mut store, "critic.h", MlpSpec::linear(3, 2)).unwrap();
        let err = mlp.apply(&store, &[1.0, 2.0]).unwrap_err().to_string();
        assert!(err.contains("critic.h.w0"), "{err}");
    }

    #[test]
    fn finite_difference_gradients_5_8_3_tanh() {
        let mut store = ParamStore::new(42);
        let mlp = Mlp::new(
            &mut store,
            "net",
            MlpSpec::new(vec![5, 8, 3], Activation::Tanh, OutputTransform::Identity),
        )
        .unwrap();
        let x = [0.3, -0.7, 1.1, 0.05, -0.45];
        let cot = [0.9, -1.3, 0.4];
        let report = grad_check(
            &mut store,
            |s| {
                let tr = mlp.forward(s, &x)?;
                let v = tr.output.iter().zip(&cot).map(|(a, b)| a * b).sum();
                mlp.backward(s, &tr, &cot);
                Ok(v)
            },
            1e-5,
            usize::MAX,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut store = ParamStore::new(3);
        let mlp = Mlp::new(
            &mut store,
            "net",
            MlpSpec::new(vec![4, 7, 2], Activation::Tanh, OutputTransform::Softplus),
        )
        .unwrap();
        let x = [0.2, -0.1, 0.8, -1.5];
        let tr = mlp.forward(&store, &x).unwrap();
        let d_in = mlp.backward(&mut store, &tr, &[1.0, 0.5]);
        let f = |x: &[f64]| {
            let o = mlp.apply(&store, x).unwrap();
            o[0] + 0.5 * o[1]
        };
        for k in 0..4 {
            let mut p = x;
            p[k] += 1e-5;
            let mut m = x;
            m[k] -= 1e-5;
            let fd = (f(&p) - f(&m)) / 2e-5;
            assert!((fd - d_in[k]).abs() < 1e-8 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn backward_accumulates() {
        let mut store = ParamStore::new(5);
        let mlp = Mlp::new(&mut store, "n", MlpSpec::linear(2, 1)).unwrap();
        let tr = mlp.forward(&store, &[1.0, 2.0]).unwrap();
        mlp.backward(&mut store, &tr, &[1.0]);
        mlp.backward(&mut store, &tr, &[1.0]);
        let (w, b) = mlp.layer_params().next().unwrap();
        assert_eq!(store.grad(w), &[2.0, 4.0]);
        assert_eq!(store.grad(b), &[2.0]);
    }
}
