use std::collections::{BTreeMap, HashSet};

use super::{
    split_time_stratified, DataError, FeatureTable, IndexedDataset, Interaction, InteractionEvent,
    SplitConfig,
};

/// A dataset split and indexed for training.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub dataset: IndexedDataset,
    pub train: Vec<Interaction>,
    pub test: Vec<Interaction>,
    pub user_features: FeatureTable,
    pub item_features: FeatureTable,
}

/// The events of the first users, in key order, whose events together
/// reach `min_events`; every event when the log is smaller.
pub fn subset_by_users(events: &[InteractionEvent], min_events: usize) -> Vec<InteractionEvent> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for e in events {
        *counts.entry(&e.user_id).or_default() += 1;
    }
    let mut kept = HashSet::new();
    let mut total = 0;
    for (user, n) in counts {
        if total >= min_events {
            break;
        }
        kept.insert(user);
        total += n;
    }
    events
        .iter()
        .filter(|e| kept.contains(e.user_id.as_str()))
        .cloned()
        .collect()
}

/// Splits with the first fold of `split`, builds vocabularies over all
/// events and feature tables of one-hot identities followed by any numeric
/// side features.
pub fn prepare(
    events: &[InteractionEvent],
    split: &SplitConfig,
    user_numeric: &BTreeMap<String, Vec<f64>>,
    item_numeric: &BTreeMap<String, Vec<f64>>,
) -> Result<PreparedData, DataError> {
    if events.is_empty() {
        return Err(DataError::Insufficient("no events to prepare".into()));
    }
    let fold = split_time_stratified(events, split)?.swap_remove(0);
    let dataset = IndexedDataset::from_events(events);
    Ok(PreparedData {
        train: dataset.index(&fold.train)?,
        test: dataset.index(&fold.test)?,
        user_features: FeatureTable::build(&dataset.users, user_numeric, true),
        item_features: FeatureTable::build(&dataset.items, item_numeric, true),
        dataset,
    })
}
