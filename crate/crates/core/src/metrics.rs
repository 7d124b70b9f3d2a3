//! AUC, hit rate, catalog coverage, mean unexpectedness and report tables.

use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::unexpectedness::{unexpectedness, InterestCluster};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("metric error: {0}")]
    Undefined(String),
}

fn check_labels(scores: &[f64], labels: &[u8]) -> Result<(usize, usize), MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::Undefined(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MetricsError::Undefined("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::Undefined(format!(
            "AUC needs both classes, got {pos} positives and {neg} negatives"
        )));
    }
    Ok((pos, neg))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed by rank sums with averaged tied ranks.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    let (pos, neg) = check_labels(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let mean_rank = (i + j + 2) as f64 / 2.0;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum += mean_rank * tied_pos as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Same quantity by counting every positive-negative pair.
pub fn auc_pairwise(scores: &[f64], labels: &[u8]) -> Result<f64, MetricsError> {
    let (pos, neg) = check_labels(scores, labels)?;
    let mut wins = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] == 1 {
                continue;
            }
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// 1-based rank of `target` among `target` and `others`; other candidates
/// scoring equal to the target are placed ahead of it.
pub fn rank_among(target: f64, others: &[f64]) -> usize {
    1 + others.iter().filter(|&&s| s >= target).count()
}

/// Fraction of cases whose held-out item appears in the first `k` entries
/// of its ranked list.
pub fn hit_rate<T: PartialEq>(
    ranked: &[Vec<T>],
    held_out: &[T],
    k: usize,
) -> Result<f64, MetricsError> {
    if ranked.len() != held_out.len() {
        return Err(MetricsError::Undefined(format!(
            "{} ranked lists for {} held-out items",
            ranked.len(),
            held_out.len()
        )));
    }
    if ranked.is_empty() {
        return Err(MetricsError::Undefined("hit rate of zero cases".into()));
    }
    let hits = ranked
        .iter()
        .zip(held_out)
        .filter(|(list, item)| list.iter().take(k).any(|x| x == *item))
        .count();
    Ok(hits as f64 / ranked.len() as f64)
}

/// Hit rate from the 1-based ranks of held-out items.
pub fn hit_rate_from_ranks(ranks: &[usize], k: usize) -> Result<f64, MetricsError> {
    if ranks.is_empty() {
        return Err(MetricsError::Undefined("hit rate of zero cases".into()));
    }
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

/// Distinct recommended items over catalog size.
pub fn coverage<T: std::hash::Hash + Eq>(
    recommended: &[Vec<T>],
    catalog_size: usize,
) -> Result<f64, MetricsError> {
    if catalog_size == 0 {
        return Err(MetricsError::Undefined("empty catalog".into()));
    }
    let distinct: HashSet<&T> = recommended.iter().flatten().collect();
    Ok(distinct.len() as f64 / catalog_size as f64)
}

/// Mean unexpectedness over every recommended `(user, item)` pair.
/// `clusters[u]` belongs to `recommended[u]`; users without clusters
/// contribute zeros. Returns 0 when nothing was recommended.
pub fn mean_unexpectedness(
    recommended: &[Vec<usize>],
    clusters: &[Vec<InterestCluster>],
    item_embeddings: &[Vec<f64>],
) -> Result<f64, MetricsError> {
    if recommended.len() != clusters.len() {
        return Err(MetricsError::Undefined(format!(
            "{} recommendation lists for {} cluster sets",
            recommended.len(),
            clusters.len()
        )));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for (items, cl) in recommended.iter().zip(clusters) {
        for &i in items {
            let e = item_embeddings.get(i).ok_or_else(|| {
                MetricsError::Undefined(format!("item index {i} has no embedding"))
            })?;
            if !cl.is_empty() {
                total +=
                    unexpectedness(e, cl).map_err(|e| MetricsError::Undefined(e.to_string()))?;
            }
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub hr_at_10: f64,
    pub mean_unexpectedness: f64,
    pub coverage: f64,
    pub n_users: usize,
    pub n_events: usize,
    /// Held-out positives ranked for the hit rate.
    pub hr_cases: usize,
    /// Test positives whose user had no sampled negatives or history.
    pub hr_skipped: usize,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let rows = [
            ("AUC", format!("{:.4}", self.auc)),
            ("HR@10", format!("{:.4}", self.hr_at_10)),
            ("Unexpectedness", format!("{:.4}", self.mean_unexpectedness)),
            ("Coverage", format!("{:.4}", self.coverage)),
            ("users", self.n_users.to_string()),
            ("events", self.n_events.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<16}{v:>12}");
        }
        out
    }
}

/// One labelled row per report, columns AUC, HR@10, Unexpectedness and
/// Coverage.
pub fn comparison_table(rows: &[(String, MetricsReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(7);
    let mut out = format!(
        "{:<width$}  {:>8}  {:>8}  {:>14}  {:>8}\n",
        "variant", "AUC", "HR@10", "Unexpectedness", "Coverage"
    );
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{name:<width$}  {:>8.4}  {:>8.4}  {:>14.4}  {:>8.4}",
            r.auc, r.hr_at_10, r.mean_unexpectedness, r.coverage
        );
    }
    out
}
