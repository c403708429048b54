use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{CpicError, Result};
use crate::rng::{domain, stable_hash, substream};

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a freshly registered parameter is filled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Uniform on `±1/sqrt(fan_in)`, with `fan_in` the column count.
    FanIn,
    Uniform(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub trainable: bool,
    pub value: Vec<f64>,
    #[serde(skip)]
    pub grad: Vec<f64>,
}

impl Param {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Named, row-major parameter arrays, each paired with a gradient buffer.
///
/// Insertion order is the iteration order, so two stores built by the same
/// sequence of `add` calls line up entry by entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    seed: u64,
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            params: Vec::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Registers a `rows × cols` parameter. Random initializations draw from a
    /// stream keyed by the run seed and the parameter name.
    pub fn add(&mut self, name: &str, rows: usize, cols: usize, init: Init) -> Result<ParamId> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(CpicError::Config(format!(
                "duplicate parameter name `{name}`"
            )));
        }
        let len = rows * cols;
        let value = match init {
            Init::Zeros => vec![0.0; len],
            Init::Constant(c) => vec![c; len],
            Init::FanIn | Init::Uniform(_) => {
                let bound = match init {
                    Init::FanIn => 1.0 / (cols.max(1) as f64).sqrt(),
                    Init::Uniform(b) => b,
                    _ => unreachable!(),
                };
                let mut rng = substream(self.seed, domain::PARAM_INIT, stable_hash(name));
                (0..len).map(|_| rng.random_range(-bound..=bound)).collect()
            }
        };
        self.params.push(Param {
            name: name.to_string(),
            rows,
            cols,
            trainable: true,
            value,
            grad: vec![0.0; len],
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].grad
    }

    pub fn set_value(&mut self, id: ParamId, values: &[f64]) -> Result<()> {
        let p = &mut self.params[id.0];
        if values.len() != p.value.len() {
            return Err(CpicError::shape(
                p.name.clone(),
                p.value.len(),
                values.len(),
            ));
        }
        p.value.copy_from_slice(values);
        Ok(())
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    /// Adds `delta` into the gradient buffer of `id`.
    pub fn accumulate(&mut self, id: ParamId, delta: &[f64]) {
        let g = &mut self.params[id.0].grad;
        debug_assert_eq!(
            g.len(),
            delta.len(),
            "gradient shape for {}",
            self.params[id.0].name
        );
        for (a, b) in g.iter_mut().zip(delta) {
            *a += b;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    /// Copies values from `other`, matching by name and shape.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .params
                .iter()
                .find(|q| q.name == p.name)
                .ok_or_else(|| {
                    CpicError::Config(format!("parameter `{}` missing from saved store", p.name))
                })?;
            if (src.rows, src.cols) != (p.rows, p.cols) {
                return Err(CpicError::shape(
                    p.name.clone(),
                    format!("{}x{}", p.rows, p.cols),
                    format!("{}x{}", src.rows, src.cols),
                ));
            }
            p.value.copy_from_slice(&src.value);
            p.trainable = src.trainable;
        }
        Ok(())
    }

    /// Restores gradient buffers after deserialization.
    pub fn ensure_grad_buffers(&mut self) {
        for p in &mut self.params {
            if p.grad.len() != p.value.len() {
                p.grad = vec![0.0; p.value.len()];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_reproducible_and_bounded() {
        let mut a = ParamStore::new(11);
        let mut b = ParamStore::new(11);
        let ia = a.add("w", 8, 5, Init::FanIn).unwrap();
        let ib = b.add("w", 8, 5, Init::FanIn).unwrap();
        assert_eq!(a.value(ia), b.value(ib));
        let bound = 1.0 / 5f64.sqrt();
        assert!(a.value(ia).iter().all(|v| v.abs() <= bound));
        assert_eq!(a.grad(ia).len(), 40);
    }

    #[test]
    fn accumulate_adds() {
        let mut s = ParamStore::new(0);
        let id = s.add("b", 1, 2, Init::Zeros).unwrap();
        s.accumulate(id, &[1.0, 2.0]);
        s.accumulate(id, &[1.0, 2.0]);
        assert_eq!(s.grad(id), &[2.0, 4.0]);
        s.zero_grads();
        assert_eq!(s.grad(id), &[0.0, 0.0]);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new(0);
        s.add("x", 1, 1, Init::Zeros).unwrap();
        assert!(s.add("x", 1, 1, Init::Zeros).is_err());
    }
}
