use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Tensor;

/// Named parameter tensors, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    /// Copy every tensor of `other` in, renaming `src_prefix` to `dst_prefix`.
    pub fn import_prefixed(&mut self, other: &ParamStore, src_prefix: &str, dst_prefix: &str) -> usize {
        let mut n = 0;
        for (name, t) in other.iter() {
            if let Some(rest) = name.strip_prefix(src_prefix) {
                self.insert(format!("{dst_prefix}{rest}"), t.clone());
                n += 1;
            }
        }
        n
    }

    /// Merge, overwriting on name collisions.
    pub fn extend(&mut self, other: ParamStore) {
        self.tensors.extend(other.tensors);
    }

    pub fn total_values(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }
}

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`, shaped `[fan_in, fan_out]`.
pub fn glorot_uniform<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-limit..=limit))
        .collect();
    Tensor::matrix(fan_in, fan_out, data).expect("sized by construction")
}
