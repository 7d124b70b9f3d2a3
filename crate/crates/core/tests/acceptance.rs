//! Acceptance suite.
//!
//! Runs each criterion in turn and prints one `PASS` or `FAIL` line per
//! criterion; the process exits non-zero when any fails. Criterion numbers
//! given as arguments select a subset:
//!
//! ```text
//! cargo test -p purs-core --test acceptance            # all ten
//! cargo test -p purs-core --test acceptance -- 1 4 9   # a subset
//! ```
//!
//! Criteria 6 to 8 train on MovieLens-100K, read from
//! `data/ml-100k/ml-100k.inter` (fetched by `scripts/fetch_movielens.sh`) or
//! from the path in `PURS_MOVIELENS`.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use purs_core::base_model::{predict_ctr_tape, CtrHeadParams, Pooling, SequenceEncoderParams};
use purs_core::data::{
    parse_interactions, prepare, subset_by_users, synthetic_events, FeatureTable, IndexedDataset,
    InteractionEvent, Schema, SplitConfig,
};
use purs_core::embeddings::{AutoencoderParams, EntityClass};
use purs_core::engine::{
    evaluate, train, utility, ClusterSet, EpochLog, EvalConfig, Histories, InferenceSettings,
    Model, ModelConfig, ModelParams, Scorer, TrainConfig, Variant,
};
use purs_core::metrics::{
    auc, auc_pairwise, coverage, hit_rate, hit_rate_from_ranks, MetricsReport,
};
use purs_core::numerics::{
    grad_check, Initializer, NumericsError, ParamId, ParamStore, SgdConfig, SparseRow, Tape,
    Tensor, Var,
};
use purs_core::unexp_factor::{unexp_factor_tape, FactorHeadParams, LocalActivationParams};
use purs_core::unexpectedness::{
    mean_shift, unexp_activation, unexpectedness, InterestCluster, MeanShiftConfig,
};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::matrix(rows, cols, uniform_vec(rng, rows * cols, scale)).expect("matrix shape")
}

fn labels(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| f64::from(rng.gen_range(0..2u8))).collect()
}

/// Overwrites every parameter with uniform values in `(-scale, scale)`.
fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng, scale: f64) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let n = store.get(id).len();
        store
            .set(id, uniform_vec(rng, n, scale))
            .expect("same length");
    }
}

/// Draws every block, biases included, from the Glorot-uniform
/// distribution for its shape.
fn randomize_glorot(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let t = store.get(id);
        let (n, bound) = (t.len(), (6.0 / (t.rows() + t.cols()) as f64).sqrt());
        store
            .set(id, uniform_vec(rng, n, bound))
            .expect("same length");
    }
}

fn tensors(store: &ParamStore, ids: &[ParamId]) -> Vec<Tensor> {
    ids.iter().map(|&id| store.get(id).clone()).collect()
}

fn constants(tape: &mut Tape, ts: &[Tensor]) -> Vec<Var> {
    ts.iter().map(|t| tape.constant(t)).collect()
}

/// Random row groups of sizes in `0..=max`, at least one member overall.
fn groups(rng: &mut ChaCha8Rng, batch: usize, max: usize) -> Vec<std::ops::Range<usize>> {
    loop {
        let mut start = 0;
        let gs: Vec<_> = (0..batch)
            .map(|_| {
                let n = rng.gen_range(0..=max);
                start += n;
                start - n..start
            })
            .collect();
        if start > 0 {
            return gs;
        }
    }
}

const GRAD_POINTS: usize = 100;
const GRAD_EPS: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

/// Worst `grad_check` error over the points, and for coordinates above the
/// tolerance the largest analytic gradient and the largest gap between
/// analytic and central-difference gradients, in units of the loss's
/// rounding error.
#[derive(Clone, Copy, Debug, Default)]
struct GradStats {
    worst: f64,
    flagged: usize,
    flagged_grad: f64,
    flagged_gap_ulps: f64,
}

impl GradStats {
    fn merge(&mut self, o: GradStats) {
        self.worst = self.worst.max(o.worst);
        self.flagged += o.flagged;
        self.flagged_grad = self.flagged_grad.max(o.flagged_grad);
        self.flagged_gap_ulps = self.flagged_gap_ulps.max(o.flagged_gap_ulps);
    }
}

fn measure<F>(f: F, params: &[Tensor]) -> Result<GradStats, NumericsError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NumericsError>,
{
    let worst = grad_check(&f, params, GRAD_EPS)?;
    let mut stats = GradStats {
        worst,
        ..GradStats::default()
    };
    if worst < GRAD_TOL {
        return Ok(stats);
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.tracked(p)).collect();
    let loss = f(&mut tape, &vars)?;
    let value = tape.scalar(loss);
    tape.backward(loss)?;
    let eval = |pi: usize, ci: usize, delta: f64| -> Result<f64, NumericsError> {
        let mut t = Tape::new();
        let vs: Vec<Var> = params
            .iter()
            .enumerate()
            .map(|(j, p)| {
                if j == pi {
                    let mut data = p.data().to_vec();
                    data[ci] += delta;
                    t.constant(&Tensor::new(p.shape().to_vec(), data).expect("same shape"))
                } else {
                    t.constant(p)
                }
            })
            .collect();
        let out = f(&mut t, &vs)?;
        Ok(t.scalar(out))
    };
    for (pi, p) in params.iter().enumerate() {
        let analytic = tape.grad(vars[pi]);
        for (ci, &ad) in analytic.iter().enumerate().take(p.len()) {
            let fd = (eval(pi, ci, GRAD_EPS)? - eval(pi, ci, -GRAD_EPS)?) / (2.0 * GRAD_EPS);
            if (ad - fd).abs() / (ad.abs() + fd.abs()).max(1e-8) >= GRAD_TOL {
                stats.flagged += 1;
                stats.flagged_grad = stats.flagged_grad.max(ad.abs());
                let ulp = value.abs().max(f64::MIN_POSITIVE) * f64::EPSILON;
                stats.flagged_gap_ulps = stats
                    .flagged_gap_ulps
                    .max((ad - fd).abs() * 2.0 * GRAD_EPS / ulp);
            }
        }
    }
    Ok(stats)
}

fn worst_over_points(
    name: &str,
    mut point: impl FnMut(&mut ChaCha8Rng) -> Result<GradStats, NumericsError>,
) -> Result<GradStats, String> {
    let mut all = GradStats::default();
    for p in 0..GRAD_POINTS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + p as u64);
        all.merge(point(&mut rng).map_err(|e| format!("{name} point {p}: {e}"))?);
    }
    Ok(all)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let d = 3;
    let batch = 3;
    let mut results = Vec::new();

    results.push((
        "autoencoders",
        worst_over_points("autoencoder", |rng| {
            let features = 7;
            let mut store = ParamStore::new();
            let mut init = Initializer::new(0, 0.1);
            let ae =
                AutoencoderParams::new(&mut store, &mut init, EntityClass::Item, features, 5, d);
            randomize_glorot(&mut store, rng);
            let rows: Vec<SparseRow> = (0..batch)
                .map(|_| {
                    let cols: BTreeSet<usize> =
                        (0..3).map(|_| rng.gen_range(0..features)).collect();
                    cols.into_iter()
                        .map(|c| (c, rng.gen_range(-1.0..1.0)))
                        .collect()
                })
                .collect();
            measure(
                |t, v| ae.with_vars(v).reconstruction_loss(t, &rows, features),
                &tensors(&store, &ae.param_ids()),
            )
        })?,
    ));

    results.push((
        "GRU+attention",
        worst_over_points("sequence encoder", |rng| {
            let n_items = 6;
            let mut store = ParamStore::new();
            let mut init = Initializer::new(0, 0.1);
            let enc = SequenceEncoderParams::new(&mut store, &mut init, d, Pooling::Attention);
            let head = CtrHeadParams::new(&mut store, &mut init, d, &[4]);
            randomize_glorot(&mut store, rng);
            let seqs: Vec<Vec<usize>> = (0..batch)
                .map(|_| {
                    let len = rng.gen_range(1..=5);
                    (0..len).map(|_| rng.gen_range(0..n_items)).collect()
                })
                .collect();
            let head_values = tensors(&store, &head.param_ids());
            let e_u = matrix(rng, batch, d, 1.0);
            let e_i = matrix(rng, batch, d, 1.0);
            let y = labels(rng, batch);
            let mut params = tensors(&store, &enc.param_ids());
            params.push(matrix(rng, n_items, d, 1.0));
            measure(
                |t, v| {
                    let r_u = enc.with_vars(&v[..24]).encode(t, v[24], &seqs)?.r_u;
                    let hv = constants(t, &head_values);
                    let (u, i) = (t.constant(&e_u), t.constant(&e_i));
                    let ctr = predict_ctr_tape(t, &head.mlp.with_vars(&hv), r_u, u, i)?;
                    t.bce_with_logits(ctr, &y)
                },
                &params,
            )
        })?,
    ));

    results.push((
        "CTR head",
        worst_over_points("CTR head", |rng| {
            let mut store = ParamStore::new();
            let mut init = Initializer::new(0, 0.1);
            let head = CtrHeadParams::new(&mut store, &mut init, d, &[4, 5]);
            randomize_glorot(&mut store, rng);
            let n = head.param_ids().len();
            let term = matrix(rng, batch, 1, 0.5);
            let y = labels(rng, batch);
            let mut params = tensors(&store, &head.param_ids());
            params.extend([
                matrix(rng, batch, 2 * d, 1.0),
                matrix(rng, batch, d, 1.0),
                matrix(rng, batch, d, 1.0),
            ]);
            measure(
                |t, v| {
                    let ctr = predict_ctr_tape(
                        t,
                        &head.mlp.with_vars(&v[..n]),
                        v[n],
                        v[n + 1],
                        v[n + 2],
                    )?;
                    let extra = t.constant(&term);
                    let u = t.add(ctr, extra)?;
                    t.bce_with_logits(u, &y)
                },
                &params,
            )
        })?,
    ));

    for (name, lau_tracked) in [("local activation unit", true), ("factor head", false)] {
        results.push((
            name,
            worst_over_points(name, |rng| {
                let mut store = ParamStore::new();
                let mut init = Initializer::new(0, 0.1);
                let la = LocalActivationParams::new(&mut store, &mut init, d, &[4]);
                let head = FactorHeadParams::new(&mut store, &mut init, d, &[4]);
                randomize_glorot(&mut store, rng);
                let gs = groups(rng, batch, 3);
                let members = gs.last().map_or(0, |g| g.end);
                let normalize = rng.gen_bool(0.5);
                let ctr = matrix(rng, batch, 1, 1.0);
                let activated = matrix(rng, batch, 1, 0.4);
                let y = labels(rng, batch);
                let (tracked, fixed) = if lau_tracked {
                    (la.param_ids(), head.param_ids())
                } else {
                    (head.param_ids(), la.param_ids())
                };
                let n = tracked.len();
                let fixed = tensors(&store, &fixed);
                let mut params = tensors(&store, &tracked);
                params.extend([
                    matrix(rng, batch, d, 1.0),
                    matrix(rng, members, d, 1.0),
                    matrix(rng, batch, d, 1.0),
                ]);
                measure(
                    |t, v| {
                        let fv = constants(t, &fixed);
                        let (la_vars, head_vars) = if lau_tracked {
                            (la.mlp.with_vars(&v[..n]), head.mlp.with_vars(&fv))
                        } else {
                            (la.mlp.with_vars(&fv), head.mlp.with_vars(&v[..n]))
                        };
                        let factor = unexp_factor_tape(
                            t,
                            &la_vars,
                            &head_vars,
                            v[n],
                            v[n + 1],
                            &gs,
                            v[n + 2],
                            normalize,
                        )?;
                        let (r, a) = (t.constant(&ctr), t.constant(&activated));
                        let term = t.mul(a, factor)?;
                        let u = t.add(r, term)?;
                        t.bce_with_logits(u, &y)
                    },
                    &params,
                )
            })?,
        ));
    }

    let secs = start.elapsed().as_secs_f64();
    let summary: Vec<String> = results
        .iter()
        .map(|(n, st)| {
            if st.flagged == 0 {
                format!("{n} {:.1e}", st.worst)
            } else {
                format!(
                    "{n} {:.1e} ({} flagged above {GRAD_TOL:e}, all with |g| <= {:.1e} and within {:.1} ulp of the loss)",
                    st.worst, st.flagged, st.flagged_grad, st.flagged_gap_ulps
                )
            }
        })
        .collect();
    let summary = format!(
        "max relative error at eps {GRAD_EPS:e} over {GRAD_POINTS} points each: {}",
        summary.join(", ")
    );
    check(results.iter().all(|(_, st)| st.worst < GRAD_TOL), || {
        summary.clone()
    })?;
    check(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(summary)
}

fn criterion_2() -> Outcome {
    let n = 100_000;
    let xs: Vec<f64> = (0..=n).map(|i| i as f64 * 1e-4).collect();
    let fs: Vec<f64> = xs
        .iter()
        .map(|&x| unexp_activation(x))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    check(fs[0] == 0.0, || format!("f(0) = {}", fs[0]))?;
    let peak = (0..fs.len())
        .max_by(|&a, &b| fs[a].total_cmp(&fs[b]))
        .expect("nonempty grid");
    let e_inv = (-1.0f64).exp();
    check((xs[peak] - 1.0).abs() <= 1e-3, || {
        format!("peak at x = {}", xs[peak])
    })?;
    check((fs[peak] - e_inv).abs() <= 1e-9, || {
        format!("sup f = {} vs {e_inv}", fs[peak])
    })?;
    if let Some(i) = (1..=peak).find(|&i| fs[i] <= fs[i - 1]) {
        return Err(format!("not strictly increasing at x = {}", xs[i]));
    }
    if let Some(i) = (peak + 1..fs.len()).find(|&i| fs[i] >= fs[i - 1]) {
        return Err(format!("not strictly decreasing at x = {}", xs[i]));
    }
    check(fs[n] < 5e-4, || format!("f(10) = {}", fs[n]))?;
    Ok(format!(
        "f(0) = 0, sup f = {:.12} at x = {:.4}, strictly monotone on both sides, f(10) = {:.3e}",
        fs[peak], xs[peak], fs[n]
    ))
}

/// Cluster-size-weighted mean Euclidean distance, written out directly.
fn brute_unexpectedness(w: &[f64], centroids: &[Vec<f64>], sizes: &[usize]) -> f64 {
    let mut weighted = 0.0;
    let mut total = 0.0;
    for (c, &s) in centroids.iter().zip(sizes) {
        let mut sq = 0.0;
        for j in 0..w.len() {
            sq += (w[j] - c[j]) * (w[j] - c[j]);
        }
        weighted += sq.sqrt() * s as f64;
        total += s as f64;
    }
    weighted / total
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let dim = rng.gen_range(1..=20);
        let k = rng.gen_range(1..=5);
        let scale = 10f64.powf(rng.gen_range(-2.0..2.0));
        let centroids: Vec<Vec<f64>> = (0..k).map(|_| uniform_vec(&mut rng, dim, scale)).collect();
        let sizes: Vec<usize> = (0..k).map(|_| rng.gen_range(1..=40)).collect();
        let w = uniform_vec(&mut rng, dim, scale);
        let clusters: Vec<InterestCluster> = centroids
            .iter()
            .zip(&sizes)
            .map(|(c, &s)| InterestCluster {
                centroid: c.clone(),
                size: s,
                member_indices: (0..s).collect(),
            })
            .collect();
        let got = unexpectedness(&w, &clusters).map_err(err)?;
        worst = worst.max((got - brute_unexpectedness(&w, &centroids, &sizes)).abs());
    }
    check(worst <= 1e-10, || format!("largest difference {worst:.3e}"))?;
    Ok(format!("1000 instances, largest difference {worst:.1e}"))
}

fn density(points: &[Vec<f64>], c: f64, x: [f64; 2]) -> f64 {
    points
        .iter()
        .map(|p| (-c * ((p[0] - x[0]).powi(2) + (p[1] - x[1]).powi(2))).exp())
        .sum()
}

/// Local maxima of the kernel density, found on a coarse grid over the
/// padded bounding box and refined on a fine grid around each candidate.
fn density_modes(points: &[Vec<f64>], c: f64) -> Vec<[f64; 2]> {
    let step = 0.1;
    let lo = [0, 1].map(|j| points.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min) - 3.0);
    let hi = [0, 1].map(|j| {
        points
            .iter()
            .map(|p| p[j])
            .fold(f64::NEG_INFINITY, f64::max)
            + 3.0
    });
    let nx = ((hi[0] - lo[0]) / step) as usize + 1;
    let ny = ((hi[1] - lo[1]) / step) as usize + 1;
    let at = |i: usize, j: usize| [lo[0] + i as f64 * step, lo[1] + j as f64 * step];
    let grid: Vec<Vec<f64>> = (0..nx)
        .map(|i| (0..ny).map(|j| density(points, c, at(i, j))).collect())
        .collect();
    let top = grid.iter().flatten().cloned().fold(0.0, f64::max);
    let mut modes = Vec::new();
    for i in 1..nx - 1 {
        for j in 1..ny - 1 {
            let v = grid[i][j];
            let is_max = (i - 1..=i + 1)
                .flat_map(|a| (j - 1..=j + 1).map(move |b| (a, b)))
                .all(|(a, b)| (a, b) == (i, j) || grid[a][b] < v);
            if is_max && v > 0.01 * top {
                let fine = 0.002;
                let mut best = (v, at(i, j));
                for a in -100..=100 {
                    for b in -100..=100 {
                        let x = [at(i, j)[0] + a as f64 * fine, at(i, j)[1] + b as f64 * fine];
                        let dv = density(points, c, x);
                        if dv > best.0 {
                            best = (dv, x);
                        }
                    }
                }
                modes.push(best.1);
            }
        }
    }
    modes
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `n` points around `center` whose sample mean is exactly `center`.
fn blob(rng: &mut ChaCha8Rng, center: [f64; 2], spread: f64, n: usize) -> Vec<Vec<f64>> {
    let raw: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            [
                rng.sample::<f64, _>(StandardNormal) * spread,
                rng.sample::<f64, _>(StandardNormal) * spread,
            ]
        })
        .collect();
    let mean = [0, 1].map(|j| raw.iter().map(|p| p[j]).sum::<f64>() / n as f64);
    raw.iter()
        .map(|p| vec![center[0] + p[0] - mean[0], center[1] + p[1] - mean[1]])
        .collect()
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut clustering = 0.0;
    let mut worst_truth = 0.0f64;
    let mut worst_oracle = 0.0f64;
    for ds in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(ds);
        let spread = rng.gen_range(0.5..1.0);
        let separation = rng.gen_range(8.0..12.0) * spread;
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let a = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
        let b = [
            a[0] + separation * angle.cos(),
            a[1] + separation * angle.sin(),
        ];
        let (na, nb) = (rng.gen_range(20..=30), rng.gen_range(20..=30));
        let mut points = blob(&mut rng, a, spread, na);
        points.extend(blob(&mut rng, b, spread, nb));

        let c = 1.0 / (2.0 * (2.0 * spread).powi(2));
        let t = Instant::now();
        let clusters = mean_shift(&points, &MeanShiftConfig::with_bandwidth(c)).map_err(err)?;
        clustering += t.elapsed().as_secs_f64();
        check(clusters.len() == 2, || {
            format!("dataset {ds}: {} clusters", clusters.len())
        })?;

        let oracle = density_modes(&points, c);
        check(oracle.len() == 2, || {
            format!("dataset {ds}: oracle found {} modes", oracle.len())
        })?;
        for truth in [a, b] {
            let near = clusters
                .iter()
                .map(|k| dist(&k.centroid, &truth))
                .fold(f64::INFINITY, f64::min);
            worst_truth = worst_truth.max(near);
        }
        for mode in &oracle {
            let near = clusters
                .iter()
                .map(|k| dist(&k.centroid, mode))
                .fold(f64::INFINITY, f64::min);
            worst_oracle = worst_oracle.max(near);
        }
    }
    check(worst_truth <= 0.5, || {
        format!("a centroid lies {worst_truth:.3} from its blob mean")
    })?;
    check(worst_oracle <= 0.01, || {
        format!("a centroid lies {worst_oracle:.4} from the density mode")
    })?;

    let single = mean_shift(&[vec![0.3, -1.2]], &MeanShiftConfig::default()).map_err(err)?;
    check(single.len() == 1 && single[0].size == 1, || {
        "one point did not give one cluster".into()
    })?;
    let same = mean_shift(&vec![vec![2.0, 5.0]; 7], &MeanShiftConfig::default()).map_err(err)?;
    check(same.len() == 1 && same[0].size == 7, || {
        "identical points did not give one cluster".into()
    })?;

    let secs = start.elapsed().as_secs_f64();
    check(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "50/50 datasets give 2 clusters; centroids within {worst_truth:.3} of blob means and {worst_oracle:.1e} of density modes; \
         degenerate cases give 1 cluster; mean shift {clustering:.2}s"
    ))
}

/// Fraction of positive-negative pairs ordered correctly, ties counting half.
fn pair_count_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                wins += match si.partial_cmp(&sj).expect("finite scores") {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
    }
    wins / pairs
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(2..200);
        let coarse = rng.gen_bool(0.5);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                let s: f64 = rng.gen_range(0.0..1.0);
                if coarse {
                    (s * 10.0).round() / 10.0
                } else {
                    s
                }
            })
            .collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        labels[0] = 1;
        labels[1] = 0;
        let oracle = pair_count_auc(&scores, &labels);
        let ranked = auc(&scores, &labels).map_err(err)?;
        let pairwise = auc_pairwise(&scores, &labels).map_err(err)?;
        worst = worst
            .max((ranked - oracle).abs())
            .max((pairwise - oracle).abs());
    }
    check(worst <= 1e-12, || {
        format!("largest AUC difference {worst:.3e}")
    })?;

    let firsts = hit_rate_from_ranks(&[1; 20], 10).map_err(err)?;
    let fiftieth = hit_rate_from_ranks(&[50; 20], 10).map_err(err)?;
    let tenth = hit_rate_from_ranks(&[10], 10).map_err(err)?;
    let lists: Vec<Vec<u32>> = (0..4).map(|u| (u * 10..u * 10 + 10).collect()).collect();
    let held_at_tenth: Vec<u32> = (0..4).map(|u| u * 10 + 9).collect();
    let by_list = hit_rate(&lists, &held_at_tenth, 10).map_err(err)?;
    check(
        firsts == 1.0 && fiftieth == 0.0 && tenth == 1.0 && by_list == 1.0,
        || format!("HR@10 hand cases gave {firsts}, {fiftieth}, {tenth}, {by_list}"),
    )?;

    let everything =
        coverage(&[vec![0, 1, 2], vec![3, 4], vec![5, 6, 7, 8, 9]], 10).map_err(err)?;
    let one_item = coverage(&vec![vec![4]; 6], 10).map_err(err)?;
    let empty = coverage::<usize>(&[vec![], vec![]], 10).map_err(err)?;
    check(everything == 1.0 && one_item == 0.1 && empty == 0.0, || {
        format!("coverage hand cases gave {everything}, {one_item}, {empty}")
    })?;
    Ok(format!(
        "1000 instances, largest AUC difference {worst:.1e}; HR@10 and coverage hand cases exact"
    ))
}

fn movielens_events() -> Result<Vec<InteractionEvent>, String> {
    let path = std::env::var_os("PURS_MOVIELENS")
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ml-100k/ml-100k.inter")
        });
    if !path.exists() {
        return Err(format!(
            "MovieLens-100K not found at {}; run scripts/fetch_movielens.sh or set PURS_MOVIELENS",
            path.display()
        ));
    }
    Ok(parse_interactions(&path, &Schema::ratings())
        .map_err(err)?
        .events)
}

/// The first `n` users in key order; 520 users give 57,907 events.
fn first_users(events: &[InteractionEvent], n: usize) -> Vec<InteractionEvent> {
    let keep: BTreeSet<&str> = events
        .iter()
        .map(|e| e.user_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .take(n)
        .collect();
    events
        .iter()
        .filter(|e| keep.contains(e.user_id.as_str()))
        .cloned()
        .collect()
}

fn movielens_train_config(variant: Variant, seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        seed,
        variant,
        history_cap: 20,
        cluster_stride: 5,
        sgd: SgdConfig {
            learning_rate: 0.5,
            decay_factor: 0.8,
            ..SgdConfig::default()
        },
        ..TrainConfig::default()
    }
}

struct Run {
    variant: Variant,
    seed: u64,
    train_secs: f64,
    log: Vec<EpochLog>,
    report: MetricsReport,
}

const SEEDS: [u64; 3] = [0, 1, 2];

fn movielens_runs() -> Result<&'static [Run], String> {
    static RUNS: OnceLock<Result<Vec<Run>, String>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let events = first_users(&movielens_events()?, 520);
        if events.len() < 50_000 {
            return Err(format!("subset has only {} events", events.len()));
        }
        let data = prepare(&events, &SplitConfig::default(), &BTreeMap::new(), &BTreeMap::new()).map_err(err)?;
        let mut runs = Vec::new();
        for seed in SEEDS {
            for variant in [Variant::Full, Variant::V4NoUnexp] {
                let t = Instant::now();
                let cfg = movielens_train_config(variant, seed, 5);
                let out = train(&data.dataset, &data.user_features, &data.item_features, &data.train, &cfg)
                    .map_err(err)?;
                let train_secs = t.elapsed().as_secs_f64();
                let eval = EvalConfig {
                    seed,
                    ..EvalConfig::default()
                };
                let report = evaluate(&out.model, &data.train, &data.test, &eval).map_err(err)?;
                eprintln!(
                    "  {variant} seed {seed}: {train_secs:.0}s, auc {:.4}, unexp {:.4}, coverage {:.4}",
                    report.auc, report.mean_unexpectedness, report.coverage
                );
                runs.push(Run {
                    variant,
                    seed,
                    train_secs,
                    log: out.log,
                    report,
                });
            }
        }
        Ok(runs)
    })
    .as_ref()
    .map(Vec::as_slice)
    .map_err(Clone::clone)
}

fn criterion_6() -> Outcome {
    let runs = movielens_runs()?;
    let slowest = runs.iter().map(|r| r.train_secs).fold(0.0, f64::max);
    check(slowest <= 900.0, || {
        format!("a variant trained for {slowest:.0}s")
    })?;
    let mut held = 0;
    let mut rows = Vec::new();
    for seed in SEEDS {
        let find = |v| {
            runs.iter()
                .find(|r| r.seed == seed && r.variant == v)
                .expect("run present")
        };
        let (full, v4) = (
            &find(Variant::Full).report,
            &find(Variant::V4NoUnexp).report,
        );
        let ok = full.mean_unexpectedness > v4.mean_unexpectedness
            && full.coverage > v4.coverage
            && full.auc >= v4.auc - 0.02;
        held += usize::from(ok);
        rows.push(format!(
            "seed {seed} {}: unexp {:.3}/{:.3} coverage {:.3}/{:.3} auc {:.4}/{:.4}",
            if ok { "holds" } else { "fails" },
            full.mean_unexpectedness,
            v4.mean_unexpectedness,
            full.coverage,
            v4.coverage,
            full.auc,
            v4.auc
        ));
    }
    let detail = format!("{held}/3 seeds (FULL/V4): {}", rows.join("; "));
    check(held >= 2, || detail.clone())?;
    Ok(detail)
}

fn criterion_7() -> Outcome {
    let runs = movielens_runs()?;
    let mut rows = Vec::new();
    for run in runs.iter().filter(|r| r.variant == Variant::Full) {
        let (first, last) = (&run.log[0], run.log.last().expect("nonempty log"));
        let (a0, a1) = (first.auc.unwrap_or(f64::NAN), last.auc.unwrap_or(f64::NAN));
        let row = format!(
            "seed {}: auc {a0:.4} -> {a1:.4}, unexp {:.3} -> {:.3}",
            run.seed, first.mean_unexp, last.mean_unexp
        );
        check(a1 > a0 && last.mean_unexp > first.mean_unexp, || {
            row.clone()
        })?;
        rows.push(row);
    }
    Ok(rows.join("; "))
}

fn criterion_8() -> Outcome {
    let events = movielens_events()?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for target in [1_000, 5_000, 10_000, 50_000, 100_000] {
        let sub = subset_by_users(&events, target);
        let dataset = IndexedDataset::from_events(&sub);
        let interactions = dataset.index(&sub).map_err(err)?;
        let uf = FeatureTable::one_hot(dataset.users.len());
        let itf = FeatureTable::one_hot(dataset.items.len());
        let cfg = TrainConfig {
            validation_fraction: 0.0,
            log_users: 10,
            ..movielens_train_config(Variant::Full, 0, 1)
        };
        let t = Instant::now();
        train(&dataset, &uf, &itf, &interactions, &cfg).map_err(err)?;
        xs.push(interactions.len() as f64);
        ys.push(t.elapsed().as_secs_f64());
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = 1.0 - ss_res / ss_tot;
    let points: Vec<String> = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| format!("{x}: {y:.1}s"))
        .collect();
    let detail = format!("R^2 = {r2:.4} over {}", points.join(", "));
    check(r2 >= 0.95, || detail.clone())?;
    Ok(detail)
}

fn small_model(seed: u64, rng: &mut ChaCha8Rng) -> Result<(Model, Histories), String> {
    let events = synthetic_events(10, 16, 9, seed);
    let dataset = IndexedDataset::from_events(&events);
    let interactions = dataset.index(&events).map_err(err)?;
    let (nu, ni) = (dataset.users.len(), dataset.items.len());
    let config = ModelConfig {
        embedding_dim: 5,
        autoencoder_hidden: 7,
        ctr_hidden: vec![6],
        activation_unit_hidden: vec![4],
        factor_hidden: vec![4],
        ..ModelConfig::default()
    };
    let mut params = ModelParams::new(&config, nu, ni, nu, ni, seed);
    randomize(&mut params.store, rng, 1.0);
    let model = Model {
        params,
        variant: Variant::Full,
        settings: InferenceSettings {
            history_cap: 8,
            window_k: 3,
            ..InferenceSettings::default()
        },
        dataset,
        user_features: FeatureTable::one_hot(nu),
        item_features: FeatureTable::one_hot(ni),
    };
    Ok((model, Histories::from_interactions(nu, &interactions)))
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst_formula = 0.0f64;
    for _ in 0..1000 {
        let r: f64 = rng.gen_range(0.0..1.0);
        let factor: f64 = rng.gen_range(0.0..1.0);
        let (bu, bi) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
        worst_formula =
            worst_formula.max((utility(r, 0.0, factor, Variant::Full, bu, bi) - r).abs());
    }

    let mut worst_model = 0.0f64;
    let mut instances = 0;
    for m in 0..10u64 {
        let (model, hist) = small_model(m, &mut rng)?;
        let scorer = Scorer::new(&model);
        let users: Vec<usize> = (0..model.params.n_users()).collect();
        let contexts = scorer.contexts(&users, &hist).map_err(err)?;
        for _ in 0..100 {
            let mut ctx = contexts[rng.gen_range(0..contexts.len())].clone();
            let item = rng.gen_range(0..model.params.n_items());
            ctx.scoring_clusters = ClusterSet {
                clusters: vec![InterestCluster {
                    centroid: scorer.item_embeddings[item].clone(),
                    size: 1,
                    member_indices: vec![0],
                }],
                items: vec![item],
            };
            let s = scorer.score(&ctx, item).map_err(err)?;
            check(s.unexpectedness == 0.0, || {
                format!("unexpectedness {} at the centroid", s.unexpectedness)
            })?;
            worst_model = worst_model.max((s.utility - s.ctr).abs());
            instances += 1;
        }
    }
    let worst = worst_formula.max(worst_model);
    check(worst <= 1e-12, || {
        format!("utility differs from CTR by {worst:.3e}")
    })?;
    Ok(format!(
        "1000 formula instances and {instances} scored instances on random models, largest |utility - CTR| = {worst:.1e}"
    ))
}

fn criterion_10() -> Outcome {
    let events = synthetic_events(40, 60, 25, 10);
    let run = || -> Result<(Vec<String>, MetricsReport), String> {
        let data = prepare(
            &events,
            &SplitConfig::default(),
            &BTreeMap::new(),
            &BTreeMap::new(),
        )
        .map_err(err)?;
        let cfg = TrainConfig {
            epochs: 3,
            seed: 17,
            history_cap: 12,
            model: ModelConfig {
                embedding_dim: 8,
                autoencoder_hidden: 12,
                ctr_hidden: vec![8],
                activation_unit_hidden: vec![6],
                factor_hidden: vec![6],
                ..ModelConfig::default()
            },
            ..TrainConfig::default()
        };
        let out = train(
            &data.dataset,
            &data.user_features,
            &data.item_features,
            &data.train,
            &cfg,
        )
        .map_err(err)?;
        let eval = EvalConfig {
            seed: 17,
            ..EvalConfig::default()
        };
        let report = evaluate(&out.model, &data.train, &data.test, &eval).map_err(err)?;
        Ok((out.log.iter().map(EpochLog::to_json_line).collect(), report))
    };
    let (log_a, a) = run()?;
    let (log_b, b) = run()?;
    check(log_a == log_b, || "training logs differ".into())?;
    check(a == b && a.to_json() == b.to_json(), || {
        format!("reports differ:\n{}\n{}", a.to_json(), b.to_json())
    })?;
    Ok(format!(
        "identical logs and reports (auc {:.6}, hr@10 {:.6}, unexp {:.6}, coverage {:.6})",
        a.auc, a.hr_at_10, a.mean_unexpectedness, a.coverage
    ))
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into())
}

type Criterion = (usize, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "gradient checks", criterion_1),
        (2, "activation grid scan", criterion_2),
        (3, "unexpectedness vs brute force", criterion_3),
        (4, "mean-shift mode recovery", criterion_4),
        (5, "metric exactness", criterion_5),
        (6, "FULL vs V4 ordering on MovieLens", criterion_6),
        (7, "accuracy and unexpectedness rise together", criterion_7),
        (8, "linear training time", criterion_8),
        (9, "utility equals CTR at zero unexpectedness", criterion_9),
        (10, "end-to-end determinism", criterion_10),
    ];
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let outcome =
            panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| Err(panic_message(p)));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {n} ({name}): {detail} [{secs:.1}s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {why} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
