//! Interest clusters by Gaussian mean shift, cluster-weighted
//! unexpectedness of a candidate, and the unexpected activation function.

use serde::{Deserialize, Serialize};

use crate::numerics::NumericsError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeanShiftConfig {
    /// Kernel coefficient `c` in `exp(-c * |x_i - x|^2)`. `None` selects it
    /// per point set with [`median_bandwidth`].
    pub bandwidth_c: Option<f64>,
    pub convergence_tol: f64,
    pub max_iters: usize,
    /// Converged modes closer than this form one cluster. Defaults to ten
    /// times `convergence_tol`.
    pub mode_merge_tol: Option<f64>,
}

impl Default for MeanShiftConfig {
    fn default() -> Self {
        Self {
            bandwidth_c: None,
            convergence_tol: 1e-4,
            max_iters: 300,
            mode_merge_tol: None,
        }
    }
}

impl MeanShiftConfig {
    pub fn with_bandwidth(c: f64) -> Self {
        Self {
            bandwidth_c: Some(c),
            ..Self::default()
        }
    }

    pub fn merge_tol(&self) -> f64 {
        self.mode_merge_tol.unwrap_or(self.convergence_tol * 10.0)
    }

    pub fn validate(&self) -> Result<(), NumericsError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.bandwidth_c.is_some_and(|c| !positive(c))
            || !positive(self.convergence_tol)
            || !positive(self.merge_tol())
            || self.max_iters == 0
        {
            return Err(NumericsError::Contract(format!(
                "mean shift settings must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// How the distance from a point to a cluster is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterDistance {
    #[default]
    Centroid,
    NearestMember,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterestCluster {
    pub centroid: Vec<f64>,
    pub size: usize,
    pub member_indices: Vec<usize>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_points(points: &[Vec<f64>]) -> Result<usize, NumericsError> {
    let dim = points
        .first()
        .ok_or(NumericsError::Empty { op: "mean_shift" })?
        .len();
    if let Some(p) = points.iter().find(|p| p.len() != dim) {
        return Err(NumericsError::Shape {
            op: "mean_shift",
            left: vec![dim],
            right: vec![p.len()],
        });
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite { op: "mean_shift" });
    }
    Ok(dim)
}

/// `1 / (2 * median^2)` over all pairwise distances; 1 when the median is 0
/// or there are fewer than two points.
pub fn median_bandwidth(points: &[Vec<f64>]) -> f64 {
    let mut d: Vec<f64> = Vec::with_capacity(points.len() * points.len().saturating_sub(1) / 2);
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            d.push(sq_dist(a, b));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    let med_sq = *m;
    if med_sq > 0.0 {
        1.0 / (2.0 * med_sq)
    } else {
        1.0
    }
}

/// Kernel-weighted mean of `points` around `x`, with the weights shifted by
/// their largest exponent so distant windows do not underflow to zero.
fn weighted_mean(points: &[Vec<f64>], x: &[f64], c: f64, expo: &mut [f64], out: &mut [f64]) {
    let mut top = f64::NEG_INFINITY;
    for (e, p) in expo.iter_mut().zip(points) {
        *e = -c * sq_dist(p, x);
        top = top.max(*e);
    }
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut total = 0.0;
    for (e, p) in expo.iter().zip(points) {
        let w = (e - top).exp();
        total += w;
        for (o, v) in out.iter_mut().zip(p) {
            *o += w * v;
        }
    }
    out.iter_mut().for_each(|v| *v /= total);
}

/// Moves `x` to the mode it converges to.
pub fn shift_to_mode(
    points: &[Vec<f64>],
    start: &[f64],
    c: f64,
    tol: f64,
    max_iters: usize,
) -> Vec<f64> {
    let mut x = start.to_vec();
    let mut next = vec![0.0; x.len()];
    let mut expo = vec![0.0; points.len()];
    for _ in 0..max_iters {
        weighted_mean(points, &x, c, &mut expo, &mut next);
        let step = sq_dist(&next, &x).sqrt();
        std::mem::swap(&mut x, &mut next);
        if step < tol {
            break;
        }
    }
    x
}

/// Clusters points by the modes their mean-shift trajectories reach. Every
/// point belongs to exactly one cluster; the centroid is the mean of the
/// members' modes. Clusters are ordered by their first member.
pub fn mean_shift(
    points: &[Vec<f64>],
    cfg: &MeanShiftConfig,
) -> Result<Vec<InterestCluster>, NumericsError> {
    let dim = check_points(points)?;
    cfg.validate()?;
    let c = cfg.bandwidth_c.unwrap_or_else(|| median_bandwidth(points));
    let merge = cfg.merge_tol();

    let modes: Vec<Vec<f64>> = points
        .iter()
        .map(|p| shift_to_mode(points, p, c, cfg.convergence_tol, cfg.max_iters))
        .collect();

    // Each group keeps the mode of its first member as its anchor.
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for (i, m) in modes.iter().enumerate() {
        match groups
            .iter_mut()
            .find(|(anchor, _)| sq_dist(&modes[*anchor], m).sqrt() < merge)
        {
            Some((_, members)) => members.push(i),
            None => groups.push((i, vec![i])),
        }
    }
    Ok(groups
        .into_iter()
        .map(|(_, members)| {
            let mut centroid = vec![0.0; dim];
            for &i in &members {
                for (s, v) in centroid.iter_mut().zip(&modes[i]) {
                    *s += v;
                }
            }
            let n = members.len() as f64;
            centroid.iter_mut().for_each(|v| *v /= n);
            InterestCluster {
                centroid,
                size: members.len(),
                member_indices: members,
            }
        })
        .collect())
}

/// One cluster holding every point, centred on their mean.
pub fn single_closure(points: &[Vec<f64>]) -> Result<InterestCluster, NumericsError> {
    let dim = check_points(points)?;
    let mut centroid = vec![0.0; dim];
    for p in points {
        for (s, v) in centroid.iter_mut().zip(p) {
            *s += v;
        }
    }
    centroid.iter_mut().for_each(|v| *v /= points.len() as f64);
    Ok(InterestCluster {
        centroid,
        size: points.len(),
        member_indices: (0..points.len()).collect(),
    })
}

/// Normalized cluster weights `|C_k| / sum |C|`.
pub fn cluster_weights(clusters: &[InterestCluster]) -> Vec<f64> {
    let total: usize = clusters.iter().map(|c| c.size).sum();
    clusters
        .iter()
        .map(|c| c.size as f64 / total as f64)
        .collect()
}

/// Size-weighted mean Euclidean distance from `w` to the cluster centroids.
pub fn unexpectedness(w: &[f64], clusters: &[InterestCluster]) -> Result<f64, NumericsError> {
    if clusters.is_empty() {
        return Err(NumericsError::Empty {
            op: "unexpectedness",
        });
    }
    let mut total = 0.0;
    let mut weight = 0usize;
    for c in clusters {
        if c.centroid.len() != w.len() {
            return Err(NumericsError::Shape {
                op: "unexpectedness",
                left: vec![w.len()],
                right: vec![c.centroid.len()],
            });
        }
        if c.size == 0 {
            return Err(NumericsError::Contract("cluster with no members".into()));
        }
        total += sq_dist(w, &c.centroid).sqrt() * c.size as f64;
        weight += c.size;
    }
    Ok(total / weight as f64)
}

/// Like [`unexpectedness`] but measuring each cluster by its closest member
/// in `points`.
pub fn unexpectedness_nearest_member(
    w: &[f64],
    clusters: &[InterestCluster],
    points: &[Vec<f64>],
) -> Result<f64, NumericsError> {
    if clusters.is_empty() {
        return Err(NumericsError::Empty {
            op: "unexpectedness",
        });
    }
    let mut total = 0.0;
    let mut weight = 0usize;
    for c in clusters {
        let d = c
            .member_indices
            .iter()
            .map(|&i| {
                points.get(i).map(|p| sq_dist(w, p).sqrt()).ok_or_else(|| {
                    NumericsError::Contract(format!("member index {i} out of range"))
                })
            })
            .try_fold(f64::INFINITY, |acc, d| d.map(|d| acc.min(d)))?;
        total += d * c.size as f64;
        weight += c.size;
    }
    Ok(total / weight as f64)
}

/// `x * exp(-x)` for `x >= 0`.
pub fn unexp_activation(x: f64) -> Result<f64, NumericsError> {
    if x.is_nan() || x < 0.0 {
        return Err(NumericsError::Contract(format!(
            "activation input must be a nonnegative distance, got {x}"
        )));
    }
    Ok(x * (-x).exp())
}

/// Standardized fourth central moment `m4 / m2^2` (3 for a normal).
pub fn kurtosis(samples: &[f64]) -> Result<f64, NumericsError> {
    if samples.len() < 4 {
        return Err(NumericsError::Contract(format!(
            "kurtosis needs at least 4 samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let (m2, m4) = samples.iter().fold((0.0, 0.0), |(m2, m4), &x| {
        let d = (x - mean) * (x - mean);
        (m2 + d, m4 + d * d)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    if m2 == 0.0 {
        return Err(NumericsError::Contract(
            "kurtosis of a zero-variance sample".into(),
        ));
    }
    Ok(m4 / (m2 * m2))
}
