use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DataError, InteractionEvent};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// One cut over the global timeline.
    Global,
    /// A cut per user over that user's own timeline, so every user with
    /// enough history appears in both train and test.
    #[default]
    PerUser,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub folds: usize,
    pub test_fraction: f64,
    pub mode: SplitMode,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            folds: 1,
            test_fraction: 0.2,
            mode: SplitMode::PerUser,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fold {
    pub train: Vec<InteractionEvent>,
    pub test: Vec<InteractionEvent>,
}

/// Test windows of `n_test` positions tiling the tail of a timeline of
/// length `n`, earliest window first. `None` when the timeline is too short.
fn windows(n: usize, folds: usize, fraction: f64) -> Option<Vec<(usize, usize)>> {
    let n_test = (fraction * n as f64).round() as usize;
    if n_test == 0 || folds * n_test >= n {
        return None;
    }
    Some(
        (0..folds)
            .map(|j| {
                let start = n - (folds - j) * n_test;
                (start, start + n_test)
            })
            .collect(),
    )
}

fn chronological(events: &[InteractionEvent], idx: &mut [usize]) {
    idx.sort_by_key(|&i| (events[i].timestamp, i));
}

/// Rolling-origin chronological split. Fold `j` tests on the `j`-th of
/// `folds` consecutive test windows at the end of the timeline and trains on
/// everything before that window. Ties in time keep file order.
pub fn split_time_stratified(
    events: &[InteractionEvent],
    cfg: &SplitConfig,
) -> Result<Vec<Fold>, DataError> {
    if cfg.folds == 0 {
        return Err(DataError::Insufficient("folds must be at least 1".into()));
    }
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
        return Err(DataError::Insufficient(format!(
            "test_fraction must lie in (0, 1), got {}",
            cfg.test_fraction
        )));
    }
    let mut folds: Vec<(Vec<usize>, Vec<usize>)> = vec![(Vec::new(), Vec::new()); cfg.folds];
    match cfg.mode {
        SplitMode::Global => {
            let mut order: Vec<usize> = (0..events.len()).collect();
            chronological(events, &mut order);
            let wins = windows(order.len(), cfg.folds, cfg.test_fraction).ok_or_else(|| {
                DataError::Insufficient(format!(
                    "{} events cannot form {} test windows of fraction {}",
                    events.len(),
                    cfg.folds,
                    cfg.test_fraction
                ))
            })?;
            for (fold, (start, end)) in folds.iter_mut().zip(wins) {
                fold.0 = order[..start].to_vec();
                fold.1 = order[start..end].to_vec();
            }
        }
        SplitMode::PerUser => {
            let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, e) in events.iter().enumerate() {
                by_user.entry(&e.user_id).or_default().push(i);
            }
            for idx in by_user.values_mut() {
                chronological(events, idx);
                match windows(idx.len(), cfg.folds, cfg.test_fraction) {
                    Some(wins) => {
                        for (fold, (start, end)) in folds.iter_mut().zip(wins) {
                            fold.0.extend_from_slice(&idx[..start]);
                            fold.1.extend_from_slice(&idx[start..end]);
                        }
                    }
                    None => {
                        for fold in folds.iter_mut() {
                            fold.0.extend_from_slice(idx);
                        }
                    }
                }
            }
        }
    }
    folds
        .into_iter()
        .enumerate()
        .map(|(j, (mut train, mut test))| {
            if train.is_empty() || test.is_empty() {
                return Err(DataError::Insufficient(format!(
                    "fold {j} has {} train and {} test events",
                    train.len(),
                    test.len()
                )));
            }
            chronological(events, &mut train);
            chronological(events, &mut test);
            Ok(Fold {
                train: train.into_iter().map(|i| events[i].clone()).collect(),
                test: test.into_iter().map(|i| events[i].clone()).collect(),
            })
        })
        .collect()
}
