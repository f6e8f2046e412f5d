//! Named parameter storage shared by all model components.

use rand::Rng;

use crate::error::{Error, Result};
use crate::io::Bundle;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Weight drawn uniformly from ±√(1/fan_in).
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        self.add(name, Tensor::uniform(shape, bound, rng))
    }

    /// Weight drawn uniformly from ±√(6/fan_in), which keeps activation
    /// variance roughly constant through rectifier-like nonlinearities.
    pub fn add_he_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        self.add(name, Tensor::uniform(shape, bound, rng))
    }

    /// Weight drawn uniformly from ±√(6/(fan_in + fan_out)).
    pub fn add_xavier_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let bound = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
        self.add(name, Tensor::uniform(shape, bound, rng))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::Dimension(format!(
                "parameter {} has shape {:?}, replacement has {:?}",
                self.names[id.0],
                self.values[id.0].shape(),
                value.shape()
            )));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Sets every parameter whose name satisfies `pred` to zero.
    pub fn zero_where(&mut self, pred: impl Fn(&str) -> bool) {
        for (n, v) in self.names.iter().zip(self.values.iter_mut()) {
            if pred(n) {
                v.data_mut().iter_mut().for_each(|x| *x = T::zero());
            }
        }
    }

    pub fn to_bundle(&self, meta: String) -> Bundle<T> {
        Bundle { meta, tensors: self.names.iter().cloned().zip(self.values.iter().cloned()).collect() }
    }

    /// Overwrites parameters from a bundle; names and shapes must match exactly.
    pub fn load_bundle(&mut self, bundle: &Bundle<T>) -> Result<()> {
        if bundle.tensors.len() != self.values.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, model expects {}",
                bundle.tensors.len(),
                self.values.len()
            )));
        }
        for (i, (name, t)) in bundle.tensors.iter().enumerate() {
            if name != &self.names[i] {
                return Err(Error::Format(format!("checkpoint entry {i} is {name}, expected {}", self.names[i])));
            }
            self.set(ParamId(i), t.clone()).map_err(|e| Error::Format(e.to_string()))?;
        }
        Ok(())
    }
}
