//! Named parameter tensors.

use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{ModelError, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Parameters in registration order, addressable by id or by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<F> {
    names: Vec<String>,
    values: Vec<Array2<F>>,
    index: HashMap<String, usize>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new(), index: HashMap::new() }
    }

    /// Register a tensor; names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Array2<F>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "parameter {name} registered twice");
        self.index.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Array2<F> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<F> {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<F>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Replace a tensor by name, keeping its shape.
    pub fn set(&mut self, name: &str, value: Array2<F>) -> Result<(), ModelError> {
        let id = self.id(name).ok_or_else(|| ModelError::Checkpoint(format!("unexpected tensor {name}")))?;
        let want = self.values[id.0].dim();
        if value.dim() != want {
            return Err(ModelError::Checkpoint(format!(
                "tensor {name} has shape {:?}, model expects {want:?}",
                value.dim()
            )));
        }
        self.values[id.0] = value;
        Ok(())
    }
}

/// Uniform Glorot initialization for a `(fan_in, fan_out)` weight.
pub fn xavier<F: Real>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Array2<F> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || F::lit(rng.random_range(-limit..limit)))
}

/// Uniform He initialization, suited to ReLU layers.
pub fn he<F: Real>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Array2<F> {
    let limit = (6.0 / fan_in as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || F::lit(rng.random_range(-limit..limit)))
}

pub fn normal<F: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<F> {
    Array2::from_shape_simple_fn((rows, cols), || F::lit(rng.sample(StandardNormal)))
}
