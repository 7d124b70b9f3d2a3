//! Plain-array scoring of many items for one user.
//!
//! The first layer of each head is split into per-user and per-item parts
//! that are computed once, so scoring a `(user, item)` pair costs only the
//! remaining layers and the session-window products.

use std::collections::HashMap;

use rayon::prelude::*;

use super::history::{cluster_points, ClusterMode, ClusterSet, Histories};
use super::{utility, EngineError, Model, Variant};
use crate::nn::vec_mat_acc;
use crate::numerics::{ops::Unary, NumericsError, SparseRow, Tape};
use crate::unexpectedness::{unexpectedness, unexpectedness_nearest_member, ClusterDistance};

/// Components of one score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scored {
    pub ctr: f64,
    pub unexpectedness: f64,
    pub factor: f64,
    pub utility: f64,
}

/// Everything about one user that does not depend on the candidate.
#[derive(Clone, Debug)]
pub struct UserContext {
    pub user: usize,
    pub e_u: Vec<f64>,
    pub r_u: Vec<f64>,
    pub window: Vec<usize>,
    /// Mean-shift clusters of the capped history.
    pub clusters: ClusterSet,
    /// The set the variant scores against; the single closure for V5.
    pub scoring_clusters: ClusterSet,
    ctr_user: Vec<f64>,
    lau_window: Vec<Vec<f64>>,
    factor_user: Vec<f64>,
    bias: f64,
}

fn rows(w: &[f64], cols: usize, start: usize, end: usize) -> &[f64] {
    &w[start * cols..end * cols]
}

pub struct Scorer<'a> {
    pub model: &'a Model,
    pub item_embeddings: Vec<Vec<f64>>,
    ctr_item: Vec<Vec<f64>>,
    lau_item: Vec<Vec<f64>>,
    factor_item: Vec<Vec<f64>>,
}

impl<'a> Scorer<'a> {
    pub fn new(model: &'a Model) -> Self {
        let p = &model.params;
        let s = &p.store;
        let d = p.config.embedding_dim;
        let item_embeddings = model.item_embeddings();
        let part = |layer: &crate::nn::Dense, start: usize, end: usize, e: &[f64]| {
            let mut out = vec![0.0; layer.outputs];
            vec_mat_acc(
                e,
                rows(s.get(layer.weight).data(), layer.outputs, start, end),
                layer.outputs,
                &mut out,
            );
            out
        };
        let ctr0 = &p.ctr.mlp.layers[0];
        let ctr_item = item_embeddings
            .iter()
            .map(|e| part(ctr0, 3 * d, 4 * d, e))
            .collect();
        let (lau_item, factor_item) = if model.variant.uses_factor() {
            let la0 = &p.activation_unit.mlp.layers[0];
            let w = s.get(la0.weight).data();
            let h = la0.outputs;
            // E_i (W_i - W_diff)
            let combined: Vec<f64> = rows(w, h, 2 * d, 3 * d)
                .iter()
                .zip(rows(w, h, 4 * d, 5 * d))
                .map(|(a, b)| a - b)
                .collect();
            let lau = item_embeddings
                .iter()
                .map(|e| {
                    let mut out = vec![0.0; h];
                    vec_mat_acc(e, &combined, h, &mut out);
                    out
                })
                .collect();
            let f0 = &p.factor.mlp.layers[0];
            let fac = item_embeddings
                .iter()
                .map(|e| part(f0, 2 * d, 3 * d, e))
                .collect();
            (lau, fac)
        } else {
            (Vec::new(), Vec::new())
        };
        Self {
            model,
            item_embeddings,
            ctr_item,
            lau_item,
            factor_item,
        }
    }

    /// Contexts for `users`, each built from that user's most recent
    /// consumptions in `hist`.
    pub fn contexts(
        &self,
        users: &[usize],
        hist: &Histories,
    ) -> Result<Vec<UserContext>, EngineError> {
        let model = self.model;
        let p = &model.params;
        let s = &p.store;
        let d = p.config.embedding_dim;
        let cap = model.settings.history_cap;
        let k = model.settings.window_k;
        let mut out = Vec::with_capacity(users.len());
        for chunk in users.chunks(64) {
            let histories: Vec<&[usize]> = chunk
                .iter()
                .map(|&u| hist.recent(u, hist.len(u), cap))
                .collect();
            let mut local: HashMap<usize, usize> = HashMap::new();
            let mut flat = Vec::new();
            let seqs: Vec<Vec<usize>> = histories
                .iter()
                .map(|h| {
                    h.iter()
                        .map(|&i| {
                            *local.entry(i).or_insert_with(|| {
                                flat.extend_from_slice(&self.item_embeddings[i]);
                                flat.len() / d - 1
                            })
                        })
                        .collect()
                })
                .collect();
            let mut tape = Tape::new();
            let seq_vars = p.sequence.bind(&mut tape, s);
            let n = flat.len() / d;
            let items =
                tape.constant_matrix(n.max(1), d, if n == 0 { vec![0.0; d] } else { flat })?;
            let enc = seq_vars.encode(&mut tape, items, &seqs)?;
            let r_all = tape.value(enc.r_u).to_vec();
            let user_rows: Vec<SparseRow> = chunk
                .iter()
                .map(|&u| model.user_features.rows[u].clone())
                .collect();
            let ae = p.user_ae.encoder.bind(&mut tape, s);
            let eu = ae.forward_sparse(&mut tape, user_rows)?;
            let eu_all = tape.value(eu).to_vec();

            let built: Vec<Result<UserContext, NumericsError>> = chunk
                .par_iter()
                .enumerate()
                .map(|(j, &u)| {
                    let r_u = r_all[j * 2 * d..(j + 1) * 2 * d].to_vec();
                    let e_u = eu_all[j * d..(j + 1) * d].to_vec();
                    let window = hist.recent(u, hist.len(u), k).to_vec();
                    self.context(u, e_u, r_u, histories[j], window)
                })
                .collect();
            for c in built {
                out.push(c?);
            }
        }
        Ok(out)
    }

    fn context(
        &self,
        user: usize,
        e_u: Vec<f64>,
        r_u: Vec<f64>,
        history: &[usize],
        window: Vec<usize>,
    ) -> Result<UserContext, NumericsError> {
        let model = self.model;
        let p = &model.params;
        let s = &p.store;
        let d = p.config.embedding_dim;
        let ms = &model.settings.mean_shift;
        let clusters = cluster_points(history, &self.item_embeddings, ClusterMode::MeanShift, ms)?;
        let scoring_clusters = if model.variant == Variant::V5SingleClosure {
            cluster_points(
                history,
                &self.item_embeddings,
                ClusterMode::SingleClosure,
                ms,
            )?
        } else {
            clusters.clone()
        };

        let ctr0 = &p.ctr.mlp.layers[0];
        let mut ctr_user = s.get(ctr0.bias).data().to_vec();
        let w = s.get(ctr0.weight).data();
        vec_mat_acc(
            &r_u,
            rows(w, ctr0.outputs, 0, 2 * d),
            ctr0.outputs,
            &mut ctr_user,
        );
        vec_mat_acc(
            &e_u,
            rows(w, ctr0.outputs, 2 * d, 3 * d),
            ctr0.outputs,
            &mut ctr_user,
        );

        let (lau_window, factor_user) = if model.variant.uses_factor() {
            let la0 = &p.activation_unit.mlp.layers[0];
            let w = s.get(la0.weight).data();
            let h = la0.outputs;
            let mut user_part = s.get(la0.bias).data().to_vec();
            vec_mat_acc(&e_u, rows(w, h, 0, d), h, &mut user_part);
            // E_h (W_h + W_diff)
            let hist_w: Vec<f64> = rows(w, h, d, 2 * d)
                .iter()
                .zip(rows(w, h, 4 * d, 5 * d))
                .map(|(a, b)| a + b)
                .collect();
            let lau_window = window
                .iter()
                .map(|&i| {
                    let mut v = user_part.clone();
                    vec_mat_acc(&self.item_embeddings[i], &hist_w, h, &mut v);
                    v
                })
                .collect();
            let f0 = &p.factor.mlp.layers[0];
            let mut fu = s.get(f0.bias).data().to_vec();
            vec_mat_acc(
                &e_u,
                rows(s.get(f0.weight).data(), f0.outputs, 0, d),
                f0.outputs,
                &mut fu,
            );
            (lau_window, fu)
        } else {
            (Vec::new(), Vec::new())
        };
        let bias = if model.variant.uses_bias() {
            s.get(p.user_bias).data()[user]
        } else {
            0.0
        };
        Ok(UserContext {
            user,
            e_u,
            r_u,
            window,
            clusters,
            scoring_clusters,
            ctr_user,
            lau_window,
            factor_user,
            bias,
        })
    }

    fn distance(&self, set: &ClusterSet, e: &[f64]) -> Result<f64, NumericsError> {
        if set.clusters.is_empty() {
            return Ok(0.0);
        }
        match self.model.settings.cluster_distance {
            ClusterDistance::Centroid => unexpectedness(e, &set.clusters),
            ClusterDistance::NearestMember => {
                let points: Vec<Vec<f64>> = set
                    .items
                    .iter()
                    .map(|&i| self.item_embeddings[i].clone())
                    .collect();
                unexpectedness_nearest_member(e, &set.clusters, &points)
            }
        }
    }

    /// Unexpectedness of `item` against the user's mean-shift clusters, as
    /// reported by the metrics.
    pub fn unexpectedness(&self, ctx: &UserContext, item: usize) -> Result<f64, NumericsError> {
        self.distance(&ctx.clusters, &self.item_embeddings[item])
    }

    pub fn score(&self, ctx: &UserContext, item: usize) -> Result<Scored, NumericsError> {
        let model = self.model;
        let p = &model.params;
        let s = &p.store;
        let variant = model.variant;
        let e_i = &self.item_embeddings[item];

        let pre: Vec<f64> = ctx
            .ctr_user
            .iter()
            .zip(&self.ctr_item[item])
            .map(|(a, b)| a + b)
            .collect();
        let ctr = Unary::Sigmoid.apply(p.ctr.mlp.eval_tail(s, pre)[0]);

        let unexp = if variant.uses_unexpectedness() {
            self.distance(&ctx.scoring_clusters, e_i)?
        } else {
            0.0
        };

        let factor = if variant.uses_factor() {
            let la = &p.activation_unit.mlp;
            let d = p.config.embedding_dim;
            let h = la.layers[0].outputs;
            let wp = rows(s.get(la.layers[0].weight).data(), h, 3 * d, 4 * d);
            let normalize = p.config.normalize_window;
            let mut weights = Vec::with_capacity(ctx.window.len());
            for (j, &hi) in ctx.window.iter().enumerate() {
                let e_h = &self.item_embeddings[hi];
                let mut pre: Vec<f64> = ctx.lau_window[j]
                    .iter()
                    .zip(&self.lau_item[item])
                    .map(|(a, b)| a + b)
                    .collect();
                let prod: Vec<f64> = e_h.iter().zip(e_i).map(|(a, b)| a * b).collect();
                vec_mat_acc(&prod, wp, h, &mut pre);
                weights.push(la.eval_tail(s, pre)[0]);
            }
            if normalize && !weights.is_empty() {
                weights = crate::numerics::softmax_slice(&weights);
            }
            let mut pooled = vec![0.0; d];
            for (w, &hi) in weights.iter().zip(&ctx.window) {
                for (o, x) in pooled.iter_mut().zip(&self.item_embeddings[hi]) {
                    *o += w * x;
                }
            }
            let f0 = &p.factor.mlp.layers[0];
            let mut pre: Vec<f64> = ctx
                .factor_user
                .iter()
                .zip(&self.factor_item[item])
                .map(|(a, b)| a + b)
                .collect();
            vec_mat_acc(
                &pooled,
                rows(s.get(f0.weight).data(), f0.outputs, d, 2 * d),
                f0.outputs,
                &mut pre,
            );
            p.factor.mlp.eval_tail(s, pre)[0]
        } else {
            0.0
        };

        let b_i = if variant.uses_bias() {
            s.get(p.item_bias).data()[item]
        } else {
            0.0
        };
        Ok(Scored {
            ctr,
            unexpectedness: unexp,
            factor,
            utility: utility(ctr, unexp, factor, variant, ctx.bias, b_i),
        })
    }

    /// Utilities of `items`, in order.
    pub fn utilities(&self, ctx: &UserContext, items: &[usize]) -> Result<Vec<f64>, NumericsError> {
        items
            .iter()
            .map(|&i| self.score(ctx, i).map(|s| s.utility))
            .collect()
    }
}

/// The `k` candidates of highest utility, best first; equal utilities are
/// ordered by item key.
pub fn recommend_topk(
    scorer: &Scorer,
    ctx: &UserContext,
    candidates: &[usize],
    k: usize,
) -> Result<Vec<(usize, f64)>, EngineError> {
    if candidates.is_empty() {
        return Err(EngineError::Training("no candidates to rank".into()));
    }
    if k > candidates.len() {
        return Err(EngineError::Training(format!(
            "k = {k} exceeds the {} candidates",
            candidates.len()
        )));
    }
    let utilities = scorer.utilities(ctx, candidates)?;
    let mut ranked: Vec<(usize, f64)> = candidates.iter().copied().zip(utilities).collect();
    let key = |i: usize| scorer.model.item_key(i);
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| key(a.0).cmp(key(b.0))));
    ranked.truncate(k);
    Ok(ranked)
}

/// Largest absolute utility difference between the plain and tape paths
/// over every context and item.
#[cfg(test)]
fn max_path_difference(
    scorer: &Scorer,
    contexts: &[UserContext],
    hist: &Histories,
    items: &[usize],
) -> Result<f64, EngineError> {
    let model = scorer.model;
    let cap = model.settings.history_cap;
    let k = model.settings.window_k;
    let mut worst = 0.0f64;
    for ctx in contexts {
        let u = ctx.user;
        let n = hist.len(u);
        let inputs: Vec<super::EventInput> = items
            .iter()
            .map(|&i| super::EventInput {
                user: u,
                item: i,
                history: hist.recent(u, n, cap),
                window: hist.recent(u, n, k),
                clusters: Some(&ctx.scoring_clusters),
            })
            .collect();
        let mut tape = Tape::new();
        let vars = super::ModelVars::bind(&mut tape, &model.params);
        let out = super::forward_batch(&mut tape, model, &vars, &inputs, &scorer.item_embeddings)?;
        for (j, &i) in items.iter().enumerate() {
            let fast = scorer.score(ctx, i)?.utility;
            worst = worst.max((fast - tape.value(out.utility)[j]).abs());
        }
    }
    Ok(worst)
}
