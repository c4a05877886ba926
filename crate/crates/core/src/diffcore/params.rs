use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{Array, DiffError, Gradients};

static NEXT_STORE_TAG: AtomicU64 = AtomicU64::new(1);

fn fresh_tag() -> u64 {
    NEXT_STORE_TAG.fetch_add(1, Ordering::Relaxed)
}

/// Handle to a parameter inside one [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Globally unique parameter identity: the owning store's tag plus the index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamKey {
    pub(crate) store: u64,
    pub(crate) index: usize,
}

/// Named trainable parameters with gradient and adaptive-moment buffers.
#[derive(Debug)]
pub struct ParamStore {
    tag: u64,
    names: Vec<String>,
    lookup: HashMap<String, usize>,
    pub(crate) values: Vec<Array>,
    pub(crate) grads: Vec<Array>,
    pub(crate) first_moment: Vec<Array>,
    pub(crate) second_moment: Vec<Array>,
    pub(crate) step: u64,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

// A clone is a separate store: it gets its own tag so gradients computed
// against one never land in the other.
impl Clone for ParamStore {
    fn clone(&self) -> Self {
        Self {
            tag: fresh_tag(),
            names: self.names.clone(),
            lookup: self.lookup.clone(),
            values: self.values.clone(),
            grads: self.grads.clone(),
            first_moment: self.first_moment.clone(),
            second_moment: self.second_moment.clone(),
            step: self.step,
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            tag: fresh_tag(),
            names: Vec::new(),
            lookup: HashMap::new(),
            values: Vec::new(),
            grads: Vec::new(),
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            step: 0,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array) -> Result<ParamId, DiffError> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(DiffError::DuplicateName(name));
        }
        let idx = self.values.len();
        self.lookup.insert(name.clone(), idx);
        self.names.push(name);
        self.grads.push(Array::zeros(value.shape()));
        self.first_moment.push(Array::zeros(value.shape()));
        self.second_moment.push(Array::zeros(value.shape()));
        self.values.push(value);
        Ok(ParamId(idx))
    }

    pub fn id(&self, name: &str) -> Result<ParamId, DiffError> {
        self.lookup
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| DiffError::UnknownParam(name.to_string()))
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

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Array {
        &self.grads[id.0]
    }

    pub(crate) fn grads_mut(&mut self) -> &mut [Array] {
        &mut self.grads
    }

    pub fn key(&self, id: ParamId) -> ParamKey {
        ParamKey {
            store: self.tag,
            index: id.0,
        }
    }

    /// Number of optimizer steps taken on this store.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Array::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(0.0);
        }
    }

    /// Adds every gradient in `grads` that belongs to this store.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (key, g) in grads.iter() {
            if key.store == self.tag {
                self.grads[key.index].add_assign(g);
            }
        }
    }

    /// Copies values (not moments) from a store with the same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<(), DiffError> {
        if self.names != other.names {
            return Err(DiffError::Checkpoint("parameter layouts differ".into()));
        }
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            if dst.shape() != src.shape() {
                return Err(DiffError::Shape {
                    op: "copy_values_from",
                    left: dst.shape().to_vec(),
                    right: src.shape().to_vec(),
                });
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    pub(crate) fn restore_moments(
        &mut self,
        id: ParamId,
        first: Array,
        second: Array,
    ) -> Result<(), DiffError> {
        let shape = self.values[id.0].shape();
        if first.shape() != shape || second.shape() != shape {
            return Err(DiffError::Shape {
                op: "restore_moments",
                left: shape.to_vec(),
                right: first.shape().to_vec(),
            });
        }
        self.first_moment[id.0] = first;
        self.second_moment[id.0] = second;
        Ok(())
    }

    /// True if names, shapes and values agree exactly.
    pub fn values_equal(&self, other: &ParamStore) -> bool {
        self.names == other.names && self.values == other.values
    }
}
