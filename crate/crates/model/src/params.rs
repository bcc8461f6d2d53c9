//! Named parameter tensors with gradient slots and a freeze mask.
//!
//! Values are kept exactly representable as `f32` (rounded at init, load and
//! every optimizer update) so checkpoints round-trip bit-exactly, while all
//! arithmetic runs in `f64`.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{ModelError, Result};

/// Standard deviation of the truncated-normal weight initialiser.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    pub frozen: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: Vec<Param>,
    by_name: HashMap<String, usize>,
}

pub enum Init {
    Zeros,
    Ones,
    /// Normal with [`INIT_STD`], resampled outside two standard deviations.
    TruncNormal,
}

pub(crate) fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<R: Rng>(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut R) -> ParamId {
        assert!(!self.by_name.contains_key(name), "duplicate parameter {name}");
        let n: usize = shape.iter().product();
        let value = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::TruncNormal => {
                let normal = Normal::new(0.0, INIT_STD).unwrap();
                (0..n)
                    .map(|_| loop {
                        let v: f64 = normal.sample(rng);
                        if v.abs() <= 2.0 * INIT_STD {
                            break round_f32(v);
                        }
                    })
                    .collect()
            }
        };
        let id = self.params.len();
        self.by_name.insert(name.to_string(), id);
        self.params.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            grad: vec![0.0; n],
            value,
            frozen: false,
        });
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.id(name).map(|id| self.get(id))
    }

    /// Gradient slot of a trainable parameter; `None` when frozen so callers
    /// can skip the accumulation.
    pub fn grad_slot(&mut self, id: ParamId) -> Option<&mut [f64]> {
        let p = &mut self.params[id.0];
        (!p.frozen).then_some(p.grad.as_mut_slice())
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn scale_grad(&mut self, s: f64) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g *= s);
        }
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        let id = self
            .id(name)
            .ok_or_else(|| ModelError::config(format!("no parameter named {name}")))?;
        self.params[id.0].frozen = frozen;
        Ok(())
    }

    /// Freezes every parameter whose name does not start with one of `keep`.
    pub fn freeze_all_except(&mut self, keep: &[&str]) {
        for p in &mut self.params {
            p.frozen = !keep.iter().any(|k| p.name.starts_with(k));
        }
    }

    pub fn unfreeze_all(&mut self) {
        self.params.iter_mut().for_each(|p| p.frozen = false);
    }

    /// Copies values for every parameter present in `other` with the same
    /// name and shape. Returns the names that were copied.
    pub fn load_matching(&mut self, other: &ParameterStore) -> Vec<String> {
        let mut copied = Vec::new();
        for p in &mut self.params {
            if let Some(q) = other.by_name(&p.name) {
                if q.shape == p.shape {
                    p.value.copy_from_slice(&q.value);
                    copied.push(p.name.clone());
                }
            }
        }
        copied
    }
}
