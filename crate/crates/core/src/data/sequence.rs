use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::InteractionEvent;

/// A user's clicked items in time order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BehaviorSequence {
    pub user_id: String,
    pub items: Vec<String>,
    pub timestamps: Vec<i64>,
}

impl BehaviorSequence {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Number of consumptions strictly before `at`.
    pub fn count_before(&self, at: i64) -> usize {
        self.timestamps.partition_point(|&t| t < at)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SessionConfig {
    pub window_k: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self { window_k: 10 }
    }
}

/// Groups clicks by user, ordered by timestamp with ties kept in input
/// order. Users whose events are all non-clicks get an empty sequence.
pub fn build_sequences(events: &[InteractionEvent]) -> BTreeMap<String, BehaviorSequence> {
    let mut out: BTreeMap<String, Vec<(i64, usize, &str)>> = BTreeMap::new();
    for (pos, e) in events.iter().enumerate() {
        let entry = out.entry(e.user_id.clone()).or_default();
        if e.is_click() {
            entry.push((e.timestamp, pos, &e.item_id));
        }
    }
    out.into_iter()
        .map(|(user, mut clicks)| {
            clicks.sort_by_key(|&(t, pos, _)| (t, pos));
            let seq = BehaviorSequence {
                user_id: user.clone(),
                items: clicks.iter().map(|c| c.2.to_string()).collect(),
                timestamps: clicks.iter().map(|c| c.0).collect(),
            };
            (user, seq)
        })
        .collect()
}

/// The `window_k` most recent consumptions strictly before `at`, oldest
/// first.
pub fn session_window(seq: &BehaviorSequence, at: i64, cfg: &SessionConfig) -> Vec<String> {
    let end = seq.count_before(at);
    let start = end.saturating_sub(cfg.window_k);
    seq.items[start..end].to_vec()
}
