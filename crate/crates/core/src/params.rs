//! Named, ordered parameter trees and the per-layer comparisons built on them.

use std::collections::BTreeSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Ordered map of `"<layer>.<slot>"` keys to tensors. Insertion order follows
/// network layer order and survives checkpoint round-trips.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamTree {
    entries: IndexMap<String, Tensor>,
}

/// Layer that owns a parameter key: everything before the final `.`.
pub fn layer_of(key: &str) -> &str {
    key.rsplit_once('.').map_or(key, |(layer, _)| layer)
}

impl ParamTree {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a tensor; rejects duplicate keys and non-finite values.
    pub fn insert(&mut self, key: impl Into<String>, tensor: Tensor) -> Result<()> {
        let key = key.into();
        if !tensor.is_finite() {
            return Err(Error::Tensor(format!("non-finite values in `{key}`")));
        }
        if self.entries.contains_key(&key) {
            return Err(Error::Tensor(format!("duplicate key `{key}`")));
        }
        self.entries.insert(key, tensor);
        Ok(())
    }

    /// Replaces an existing entry, keeping its position.
    pub fn set(&mut self, key: &str, tensor: Tensor) {
        match self.entries.get_mut(key) {
            Some(slot) => *slot = tensor,
            None => {
                self.entries.insert(key.to_owned(), tensor);
            }
        }
    }

    pub fn get(&self, key: &str) -> Option<&Tensor> {
        self.entries.get(key)
    }

    pub fn get_mut(&mut self, key: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(key)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Zero tree with the same keys and shapes.
    pub fn zeros_like(&self) -> ParamTree {
        ParamTree {
            entries: self
                .entries
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    /// Layer names in first-appearance order.
    pub fn layers(&self) -> Vec<String> {
        let mut seen = Vec::<String>::new();
        for key in self.entries.keys() {
            let layer = layer_of(key);
            if seen.last().map(String::as_str) != Some(layer) && !seen.iter().any(|l| l == layer) {
                seen.push(layer.to_owned());
            }
        }
        seen
    }

    /// Errors unless both trees hold the same keys with the same shapes.
    pub fn check_same_layout(&self, other: &ParamTree) -> Result<()> {
        let left: BTreeSet<&str> = self.keys().collect();
        let right: BTreeSet<&str> = other.keys().collect();
        if left != right {
            return Err(Error::KeyMismatch {
                only_left: left.difference(&right).map(|s| s.to_string()).collect(),
                only_right: right.difference(&left).map(|s| s.to_string()).collect(),
            });
        }
        for (key, a) in self.iter() {
            let b = &other.entries[key];
            if a.shape() != b.shape() {
                return Err(Error::ParamShape {
                    key: key.to_owned(),
                    left: a.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
        }
        Ok(())
    }
}

impl FromIterator<(String, Tensor)> for ParamTree {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        ParamTree {
            entries: iter.into_iter().collect(),
        }
    }
}

/// Mean absolute parameter change per layer, keyed by layer name in layer
/// order. Both trees must share keys and shapes.
pub fn shift_per_layer(prev: &ParamTree, curr: &ParamTree) -> Result<IndexMap<String, f64>> {
    prev.check_same_layout(curr)?;
    let mut sums: IndexMap<String, (f64, usize)> = IndexMap::new();
    for (key, a) in prev.iter() {
        let b = curr.get(key).expect("layout checked");
        let l1: f64 = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (y - x).abs())
            .sum();
        let slot = sums.entry(layer_of(key).to_owned()).or_insert((0.0, 0));
        slot.0 += l1;
        slot.1 += a.len();
    }
    Ok(sums
        .into_iter()
        .map(|(layer, (sum, n))| (layer, sum / n as f64))
        .collect())
}

/// How the keys of two trees line up.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Partition {
    /// Same key, same shape.
    pub matched: Vec<String>,
    /// Same key, different shape (e.g. a grown classifier head).
    pub shape_changed: Vec<String>,
    /// Keys present only in `curr`.
    pub curr_only: Vec<String>,
    /// Keys present only in `prev`.
    pub prev_only: Vec<String>,
}

/// Splits the union of keys of `prev` and `curr` into disjoint groups.
/// `curr` ordering is kept for the first three groups.
pub fn partition_matched(prev: &ParamTree, curr: &ParamTree) -> Partition {
    let mut out = Partition::default();
    for (key, c) in curr.iter() {
        match prev.get(key) {
            Some(p) if p.shape() == c.shape() => out.matched.push(key.to_owned()),
            Some(_) => out.shape_changed.push(key.to_owned()),
            None => out.curr_only.push(key.to_owned()),
        }
    }
    out.prev_only = prev
        .keys()
        .filter(|k| !curr.contains(k))
        .map(str::to_owned)
        .collect();
    out
}
