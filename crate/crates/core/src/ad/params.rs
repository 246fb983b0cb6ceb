use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::array::Array;
use super::graph::{Graph, NodeId};
use super::rng::RandomSource;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Named learnable weights of one or more networks.
///
/// Names are globally unique (`"gen.dec.w"`, `"disc.fwd.b"`, ...) so that
/// several stores can be bound into the same graph.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore<S> {
    entries: BTreeMap<String, Array<S>>,
}

impl<S: Scalar> ParameterStore<S> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array<S>) {
        self.entries.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Array<S>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Array<S>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array<S>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.entries.values().map(Array::len).sum()
    }

    /// Adds every entry of `other`, replacing same-named entries.
    pub fn extend(&mut self, other: &ParameterStore<S>) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    /// Sub-store of entries whose name starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParameterStore<S> {
        ParameterStore {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Binds `name` as a parameter leaf of `graph`.
    pub fn bind(&self, graph: &mut Graph<S>, name: &str) -> Result<NodeId> {
        if let Some(id) = graph.param_id(name) {
            return Ok(id);
        }
        Ok(graph.param(name, self.get(name)?))
    }

    /// Uniform `[-s, s]` initialisation with `s = sqrt(1 / fan_in)`.
    pub fn init_uniform(
        &mut self,
        name: &str,
        dims: Vec<usize>,
        fan_in: usize,
        rng: &mut RandomSource,
    ) -> Result<()> {
        let s = (1.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = dims.iter().product();
        let values = (0..n).map(|_| S::of(rng.uniform_in(-s, s))).collect();
        self.insert(name, Array::new(dims, values)?);
        Ok(())
    }

    pub fn init_filled(&mut self, name: &str, dims: Vec<usize>, value: f64) -> Result<()> {
        self.insert(name, Array::filled(dims, S::of(value))?);
        Ok(())
    }

    /// Content hash over names, dims and exact bit patterns, restricted to
    /// names starting with `prefix` (empty prefix = everything).
    pub fn checksum(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries.iter().filter(|(k, _)| k.starts_with(prefix)) {
            h.update(k.as_bytes());
            for d in v.dims() {
                h.update((*d as u64).to_le_bytes());
            }
            for x in v.values() {
                h.update(x.as_f64().to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(Array::all_finite)
    }

    pub fn into_map(self) -> BTreeMap<String, Array<S>> {
        self.entries
    }
}

impl<S: Scalar> FromIterator<(String, Array<S>)> for ParameterStore<S> {
    fn from_iter<I: IntoIterator<Item = (String, Array<S>)>>(iter: I) -> Self {
        Self {
            entries: iter.into_iter().collect(),
        }
    }
}
