use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A named parameter block: a shape and its row-major values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::config(format!(
                "tensor of shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Ordered collection of parameter tensors keyed by layer name.
///
/// Iteration follows insertion order, so flattening and serialization are
/// stable across runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IndexMap<String, Tensor>", into = "IndexMap<String, Tensor>")]
pub struct ParamStore {
    entries: IndexMap<String, Tensor>,
}

impl TryFrom<IndexMap<String, Tensor>> for ParamStore {
    type Error = Error;

    fn try_from(entries: IndexMap<String, Tensor>) -> Result<Self> {
        let mut store = ParamStore::default();
        for (name, tensor) in entries {
            store.insert(name, tensor)?;
        }
        Ok(store)
    }
}

impl From<ParamStore> for IndexMap<String, Tensor> {
    fn from(store: ParamStore) -> Self {
        store.entries
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a tensor, replacing any previous entry of the same name in place.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        let expected: usize = tensor.shape.iter().product();
        if expected != tensor.data.len() {
            return Err(Error::config(format!(
                "parameter `{name}` of shape {:?} has {} values",
                tensor.shape,
                tensor.data.len()
            )));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// A store with identical names and shapes, filled with zeros.
    pub fn zeros_like(&self) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape.clone())))
            .collect();
        Self { entries }
    }

    /// Checks that `other` has the same names, order and shapes.
    pub fn check_same_layout(&self, other: &ParamStore) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(Error::config(format!(
                "parameter stores differ in size: {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for ((a, ta), (b, tb)) in self.entries.iter().zip(&other.entries) {
            if a != b || ta.shape != tb.shape {
                return Err(Error::config(format!(
                    "parameter layout mismatch: `{a}` {:?} vs `{b}` {:?}",
                    ta.shape, tb.shape
                )));
            }
        }
        Ok(())
    }

    /// Adds `scale * other` into `self`; layouts must match.
    pub fn add_scaled(&mut self, other: &ParamStore, scale: f64) -> Result<()> {
        self.check_same_layout(other)?;
        for (dst, src) in self.entries.values_mut().zip(other.entries.values()) {
            for (d, s) in dst.data.iter_mut().zip(&src.data) {
                *d += scale * s;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.entries.values_mut() {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// All values concatenated in iteration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.entries.values().flat_map(|t| t.data.iter().copied()).collect()
    }

    /// Overwrites all values from a flat slice produced by [`flatten`](Self::flatten).
    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_scalars() {
            return Err(Error::config(format!(
                "expected {} flat values, got {}",
                self.num_scalars(),
                values.len()
            )));
        }
        let mut offset = 0;
        for t in self.entries.values_mut() {
            let n = t.data.len();
            t.data.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Name of the first entry holding a NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.entries
            .iter()
            .find(|(_, t)| t.data.iter().any(|v| !v.is_finite()))
            .map(|(k, _)| k.as_str())
    }
}
