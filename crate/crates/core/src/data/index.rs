use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{DataError, InteractionEvent};
use crate::numerics::SparseRow;

/// Sorted, deduplicated string keys with dense `u32` indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    keys: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(keys: Vec<String>) -> Self {
        let index = keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i as u32))
            .collect();
        Self { keys, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.keys
    }
}

impl Vocab {
    pub fn from_keys<'a>(keys: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<&str> = keys.into_iter().collect();
        set.into_iter()
            .map(str::to_string)
            .collect::<Vec<_>>()
            .into()
    }

    pub fn get(&self, key: &str) -> Option<u32> {
        self.index.get(key).copied()
    }

    pub fn key(&self, idx: u32) -> &str {
        &self.keys[idx as usize]
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// An event with user and item replaced by vocabulary indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub user: u32,
    pub item: u32,
    pub label: u8,
    pub timestamp: i64,
}

/// User and item vocabularies for a whole dataset.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexedDataset {
    pub users: Vocab,
    pub items: Vocab,
}

impl IndexedDataset {
    pub fn from_events(events: &[InteractionEvent]) -> Self {
        Self {
            users: Vocab::from_keys(events.iter().map(|e| e.user_id.as_str())),
            items: Vocab::from_keys(events.iter().map(|e| e.item_id.as_str())),
        }
    }

    pub fn index(&self, events: &[InteractionEvent]) -> Result<Vec<Interaction>, DataError> {
        events
            .iter()
            .map(|e| {
                let user = self.users.get(&e.user_id).ok_or_else(|| {
                    DataError::Schema(format!("user `{}` is not in the vocabulary", e.user_id))
                })?;
                let item = self.items.get(&e.item_id).ok_or_else(|| {
                    DataError::Schema(format!("item `{}` is not in the vocabulary", e.item_id))
                })?;
                Ok(Interaction {
                    user,
                    item,
                    label: e.label,
                    timestamp: e.timestamp,
                })
            })
            .collect()
    }
}

/// A real feature vector of fixed dimension, stored sparsely.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub owner: String,
    pub dim: usize,
    pub entries: SparseRow,
}

impl FeatureVector {
    pub fn dense(owner: impl Into<String>, values: &[f64]) -> Self {
        Self {
            owner: owner.into(),
            dim: values.len(),
            entries: values
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i, *v))
                .collect(),
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }
}

/// Feature rows for every entity of one class, indexed like its [`Vocab`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub dim: usize,
    pub rows: Vec<SparseRow>,
}

impl FeatureTable {
    /// One-hot identity features: entity `i` has a single 1 at column `i`.
    pub fn one_hot(n: usize) -> Self {
        Self {
            dim: n,
            rows: (0..n).map(|i| vec![(i, 1.0)]).collect(),
        }
    }

    /// Optional one-hot identity block followed by standardized numeric
    /// columns. Entities without numeric values get zeros there.
    pub fn build(vocab: &Vocab, numeric: &BTreeMap<String, Vec<f64>>, include_id: bool) -> Self {
        let width = numeric.values().map(Vec::len).max().unwrap_or(0);
        let mut mean = vec![0.0; width];
        let mut sq = vec![0.0; width];
        let count = numeric.len().max(1) as f64;
        for v in numeric.values() {
            for (j, x) in v.iter().enumerate() {
                mean[j] += x / count;
            }
        }
        for v in numeric.values() {
            for (j, x) in v.iter().enumerate() {
                sq[j] += (x - mean[j]).powi(2) / count;
            }
        }
        let std: Vec<f64> = sq
            .iter()
            .map(|s| if *s > 0.0 { s.sqrt() } else { 1.0 })
            .collect();
        let offset = if include_id { vocab.len() } else { 0 };
        let rows = vocab
            .keys()
            .iter()
            .enumerate()
            .map(|(i, key)| {
                let mut row = SparseRow::new();
                if include_id {
                    row.push((i, 1.0));
                }
                if let Some(values) = numeric.get(key) {
                    for (j, x) in values.iter().enumerate() {
                        let z = (x - mean[j]) / std[j];
                        if z != 0.0 {
                            row.push((offset + j, z));
                        }
                    }
                }
                row
            })
            .collect();
        Self {
            dim: offset + width,
            rows,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn vector(&self, idx: usize, owner: &str) -> FeatureVector {
        FeatureVector {
            owner: owner.to_string(),
            dim: self.dim,
            entries: self.rows[idx].clone(),
        }
    }
}
