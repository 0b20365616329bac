//! Named parameter storage with per-slot gradient accumulators.

use crate::error::{CoreError, Result};
use crate::tensor::Tensor3;
use std::collections::HashMap;

/// Index of a slot in a [`ParamStore`]; stable for the store's lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlotId(pub(crate) usize);

impl SlotId {
    pub(crate) fn index(&self) -> usize {
        self.0
    }
}

/// Insertion-ordered map of named parameter tensors. Iteration order is the
/// registration order, which makes flattening and checkpointing deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor3>,
    grads: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor3) -> Result<SlotId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(CoreError::InvalidArgument(format!(
                "duplicate parameter slot '{name}'"
            )));
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.grads.push(vec![0.0; value.len()]);
        self.values.push(value);
        self.names.push(name);
        Ok(SlotId(id))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor3::len).sum()
    }

    pub fn id_of(&self, name: &str) -> Option<SlotId> {
        self.index.get(name).copied().map(SlotId)
    }

    pub fn name(&self, id: SlotId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: SlotId) -> &Tensor3 {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: SlotId) -> &mut Tensor3 {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: SlotId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn add_to_grad(&mut self, id: SlotId, delta: &[f64]) {
        for (g, d) in self.grads[id.0].iter_mut().zip(delta) {
            *g += d;
        }
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (SlotId, &str, &Tensor3)> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| (SlotId(i), n.as_str(), &self.values[i]))
    }

    pub fn slot_ids(&self) -> impl Iterator<Item = SlotId> {
        (0..self.values.len()).map(SlotId)
    }

    /// L2 norm over all gradient accumulators.
    pub fn grad_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Largest absolute elementwise difference across all slots.
    pub fn max_abs_diff(&self, other: &ParamStore) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }
}
