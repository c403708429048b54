use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ndmath::{
    Activation, Init, Mlp, MlpSpec, MlpTrace, OutputTransform, ParamId, ParamStore,
};

/// Baseline `a(y) > 0` of the unnormalized Barber–Agakov bound. Learned forms
/// are parameterized through `ln a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    /// `a = 1` (MINE-style).
    ConstantOne,
    /// `a = e` (NWJ).
    ConstantE,
    /// `a = exp(c)` with a learned scalar `c`.
    LearnedScalar,
    /// `a(y) = exp(net(y))`.
    LearnedNetwork,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    kind: BaselineKind,
    scalar: Option<ParamId>,
    net: Option<Mlp>,
}

#[derive(Debug)]
pub struct BaselineTrace(Vec<MlpTrace>);

impl Baseline {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        kind: BaselineKind,
        input_dim: usize,
        hidden: usize,
    ) -> Result<Self> {
        let (scalar, net) = match kind {
            BaselineKind::ConstantOne | BaselineKind::ConstantE => (None, None),
            BaselineKind::LearnedScalar => (
                Some(store.add(&format!("{prefix}.log_a"), 1, 1, Init::Zeros)?),
                None,
            ),
            BaselineKind::LearnedNetwork => (
                None,
                Some(Mlp::new(
                    store,
                    &format!("{prefix}.net"),
                    MlpSpec::new(
                        vec![input_dim, hidden, 1],
                        Activation::Tanh,
                        OutputTransform::Identity,
                    ),
                )?),
            ),
        };
        Ok(Self { kind, scalar, net })
    }

    /// A baseline with no parameters.
    pub fn constant(kind: BaselineKind) -> Self {
        assert!(matches!(
            kind,
            BaselineKind::ConstantOne | BaselineKind::ConstantE
        ));
        Self {
            kind,
            scalar: None,
            net: None,
        }
    }

    pub fn kind(&self) -> BaselineKind {
        self.kind
    }

    pub fn scalar_id(&self) -> Option<ParamId> {
        self.scalar
    }

    /// `ln a(y_j)` for each future code.
    pub fn log_values(
        &self,
        store: &ParamStore,
        future: &[Vec<f64>],
    ) -> Result<(Vec<f64>, BaselineTrace)> {
        let s = future.len();
        Ok(match self.kind {
            BaselineKind::ConstantOne => (vec![0.0; s], BaselineTrace(Vec::new())),
            BaselineKind::ConstantE => (vec![1.0; s], BaselineTrace(Vec::new())),
            BaselineKind::LearnedScalar => (
                vec![store.value(self.scalar.expect("scalar baseline"))[0]; s],
                BaselineTrace(Vec::new()),
            ),
            BaselineKind::LearnedNetwork => {
                let net = self.net.as_ref().expect("network baseline");
                let traces = future
                    .iter()
                    .map(|y| net.forward(store, y))
                    .collect::<Result<Vec<_>>>()?;
                (
                    traces.iter().map(|t| t.output[0]).collect(),
                    BaselineTrace(traces),
                )
            }
        })
    }

    /// Accumulates parameter gradients from cotangents on `ln a(y_j)` and
    /// returns cotangents on the future codes (zero for code-independent forms).
    pub fn backward(
        &self,
        store: &mut ParamStore,
        trace: &BaselineTrace,
        d_log: &[f64],
        code_dim: usize,
    ) -> Vec<Vec<f64>> {
        match self.kind {
            BaselineKind::ConstantOne | BaselineKind::ConstantE => {
                vec![vec![0.0; code_dim]; d_log.len()]
            }
            BaselineKind::LearnedScalar => {
                store.accumulate(self.scalar.expect("scalar baseline"), &[d_log.iter().sum()]);
                vec![vec![0.0; code_dim]; d_log.len()]
            }
            BaselineKind::LearnedNetwork => {
                let net = self.net.as_ref().expect("network baseline");
                trace
                    .0
                    .iter()
                    .zip(d_log)
                    .map(|(tr, &g)| net.backward(store, tr, &[g]))
                    .collect()
            }
        }
    }
}
