use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Interaction;
use crate::numerics::NumericsError;
use crate::unexpectedness::{mean_shift, single_closure, InterestCluster, MeanShiftConfig};

/// Each user's clicked items in time order, ties kept in input order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Histories {
    timestamps: Vec<Vec<i64>>,
    items: Vec<Vec<usize>>,
}

impl Histories {
    pub fn from_interactions(n_users: usize, interactions: &[Interaction]) -> Self {
        let mut per_user: Vec<Vec<(i64, usize, usize)>> = vec![Vec::new(); n_users];
        for (pos, e) in interactions.iter().enumerate() {
            if e.label == 1 {
                per_user[e.user as usize].push((e.timestamp, pos, e.item as usize));
            }
        }
        let mut timestamps = Vec::with_capacity(n_users);
        let mut items = Vec::with_capacity(n_users);
        for mut clicks in per_user {
            clicks.sort_unstable_by_key(|&(t, pos, _)| (t, pos));
            timestamps.push(clicks.iter().map(|c| c.0).collect());
            items.push(clicks.iter().map(|c| c.2).collect());
        }
        Self { timestamps, items }
    }

    pub fn n_users(&self) -> usize {
        self.items.len()
    }

    /// Clicks of `user` strictly before `at`.
    pub fn count_before(&self, user: usize, at: i64) -> usize {
        self.timestamps[user].partition_point(|&t| t < at)
    }

    pub fn len(&self, user: usize) -> usize {
        self.items[user].len()
    }

    pub fn items(&self, user: usize) -> &[usize] {
        &self.items[user]
    }

    /// The last `cap` of the first `n` clicks.
    pub fn recent(&self, user: usize, n: usize, cap: usize) -> &[usize] {
        &self.items[user][n.saturating_sub(cap)..n]
    }
}

/// Which expectation set unexpectedness is measured against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClusterMode {
    MeanShift,
    SingleClosure,
}

/// Clusters over a history snapshot, with the items they were built from so
/// member indices can be resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterSet {
    pub clusters: Vec<InterestCluster>,
    pub items: Vec<usize>,
}

pub(crate) fn cluster_points(
    items: &[usize],
    embeddings: &[Vec<f64>],
    mode: ClusterMode,
    cfg: &MeanShiftConfig,
) -> Result<ClusterSet, NumericsError> {
    if items.is_empty() {
        return Ok(ClusterSet {
            clusters: Vec::new(),
            items: Vec::new(),
        });
    }
    let points: Vec<Vec<f64>> = items.iter().map(|&i| embeddings[i].clone()).collect();
    let clusters = match mode {
        ClusterMode::MeanShift => mean_shift(&points, cfg)?,
        ClusterMode::SingleClosure => vec![single_closure(&points)?],
    };
    Ok(ClusterSet {
        clusters,
        items: items.to_vec(),
    })
}

/// Clusters for every `(user, clicks_before)` key, each over the most
/// recent `cap` of those clicks.
pub(crate) fn cluster_snapshots(
    hist: &Histories,
    keys: &[(usize, usize)],
    embeddings: &[Vec<f64>],
    cap: usize,
    mode: ClusterMode,
    cfg: &MeanShiftConfig,
) -> Result<HashMap<(usize, usize), ClusterSet>, NumericsError> {
    keys.par_iter()
        .map(|&(u, n)| {
            cluster_points(hist.recent(u, n, cap), embeddings, mode, cfg).map(|c| ((u, n), c))
        })
        .collect()
}
