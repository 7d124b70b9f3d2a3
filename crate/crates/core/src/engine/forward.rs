//! Batched utility computation on a tape, used for training and as the
//! reference path for the plain-array scorer.

use std::collections::HashMap;
use std::ops::Range;

use super::history::ClusterSet;
use super::{Model, ModelParams, Variant};
use crate::base_model::{predict_ctr_tape, SequenceEncoderVars};
use crate::nn::MlpVars;
use crate::numerics::{NumericsError, ParamStore, SparseRow, Tape, Var};
use crate::unexp_factor::unexp_factor_tape;
use crate::unexpectedness::{cluster_weights, ClusterDistance};

/// One `(user, item)` pair with its context.
#[derive(Clone, Copy, Debug)]
pub struct EventInput<'a> {
    pub user: usize,
    pub item: usize,
    /// Capped history, oldest first.
    pub history: &'a [usize],
    /// Session window, oldest first.
    pub window: &'a [usize],
    /// `None` for users without consumptions.
    pub clusters: Option<&'a ClusterSet>,
}

/// Bound variables of every parameter block.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub user_encoder: MlpVars,
    pub item_encoder: MlpVars,
    pub sequence: SequenceEncoderVars,
    pub ctr: MlpVars,
    pub activation_unit: MlpVars,
    pub factor: MlpVars,
    pub user_bias: Var,
    pub item_bias: Var,
}

impl ModelVars {
    pub fn bind(tape: &mut Tape, params: &ModelParams) -> Self {
        let s: &ParamStore = &params.store;
        Self {
            user_encoder: params.user_ae.encoder.bind(tape, s),
            item_encoder: params.item_ae.encoder.bind(tape, s),
            sequence: params.sequence.bind(tape, s),
            ctr: params.ctr.mlp.bind(tape, s),
            activation_unit: params.activation_unit.mlp.bind(tape, s),
            factor: params.factor.mlp.bind(tape, s),
            user_bias: tape.param(s, params.user_bias),
            item_bias: tape.param(s, params.item_bias),
        }
    }
}

/// `[batch x 1]` columns of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct BatchOutput {
    pub utility: Var,
    pub ctr: Var,
    pub unexpectedness: Var,
    pub factor: Option<Var>,
}

fn zeros(tape: &mut Tape, rows: usize, cols: usize) -> Result<Var, NumericsError> {
    tape.constant_matrix(rows, cols, vec![0.0; rows * cols])
}

fn groups_of(lens: impl Iterator<Item = usize>) -> Vec<Range<usize>> {
    let mut start = 0;
    lens.map(|n| {
        let g = start..start + n;
        start += n;
        g
    })
    .collect()
}

/// Cluster-weighted distance from each candidate row to its clusters, with
/// the cluster anchors held constant.
fn unexpectedness_column(
    tape: &mut Tape,
    e_i: Var,
    inputs: &[EventInput],
    distance: ClusterDistance,
    embeddings: &[Vec<f64>],
) -> Result<Var, NumericsError> {
    let (b, d) = tape.shape(e_i);
    let mut owner = Vec::new();
    let mut anchors = Vec::new();
    let mut weights = Vec::new();
    let mut counts = Vec::with_capacity(b);
    for (row, ev) in inputs.iter().enumerate() {
        let Some(set) = ev.clusters.filter(|s| !s.clusters.is_empty()) else {
            counts.push(0);
            continue;
        };
        let cand = &tape.value(e_i)[row * d..(row + 1) * d];
        for (c, w) in set.clusters.iter().zip(cluster_weights(&set.clusters)) {
            match distance {
                ClusterDistance::Centroid => anchors.extend_from_slice(&c.centroid),
                ClusterDistance::NearestMember => {
                    let best = c
                        .member_indices
                        .iter()
                        .map(|&m| &embeddings[set.items[m]])
                        .min_by(|a, b| {
                            let da: f64 = a.iter().zip(cand).map(|(x, y)| (x - y) * (x - y)).sum();
                            let db: f64 = b.iter().zip(cand).map(|(x, y)| (x - y) * (x - y)).sum();
                            da.total_cmp(&db)
                        })
                        .ok_or(NumericsError::Empty {
                            op: "unexpectedness",
                        })?;
                    anchors.extend_from_slice(best);
                }
            }
            owner.push(row);
            weights.push(w);
        }
        counts.push(set.clusters.len());
    }
    if owner.is_empty() {
        return zeros(tape, b, 1);
    }
    let p = owner.len();
    let cand = tape.gather_rows(e_i, owner)?;
    let anchor = tape.constant_matrix(p, d, anchors)?;
    let diff = tape.sub(cand, anchor)?;
    let dist = tape.row_norm(diff)?;
    let w = tape.constant_matrix(p, 1, weights)?;
    let weighted = tape.mul_col(dist, w)?;
    tape.group_sum(weighted, groups_of(counts.into_iter()))
}

/// Utility of every input pair under the model's variant. `embeddings`
/// resolves cluster members when distances are measured to the nearest
/// member; it may be empty otherwise.
pub fn forward_batch(
    tape: &mut Tape,
    model: &Model,
    vars: &ModelVars,
    inputs: &[EventInput],
    embeddings: &[Vec<f64>],
) -> Result<BatchOutput, NumericsError> {
    if inputs.is_empty() {
        return Err(NumericsError::Empty {
            op: "forward_batch",
        });
    }
    let variant = model.variant;
    let mut local: HashMap<usize, usize> = HashMap::new();
    let mut unique: Vec<usize> = Vec::new();
    let mut slot = |i: usize| {
        *local.entry(i).or_insert_with(|| {
            unique.push(i);
            unique.len() - 1
        })
    };
    let cand: Vec<usize> = inputs.iter().map(|e| slot(e.item)).collect();
    let seqs: Vec<Vec<usize>> = inputs
        .iter()
        .map(|e| e.history.iter().map(|&i| slot(i)).collect())
        .collect();
    let window: Vec<usize> = if variant.uses_factor() {
        inputs
            .iter()
            .flat_map(|e| e.window)
            .map(|&i| slot(i))
            .collect()
    } else {
        Vec::new()
    };

    let item_rows: Vec<SparseRow> = unique
        .iter()
        .map(|&i| model.item_features.rows[i].clone())
        .collect();
    let e_items = vars.item_encoder.forward_sparse(tape, item_rows)?;
    let user_rows: Vec<SparseRow> = inputs
        .iter()
        .map(|e| model.user_features.rows[e.user].clone())
        .collect();
    let e_u = vars.user_encoder.forward_sparse(tape, user_rows)?;
    let e_i = tape.gather_rows(e_items, cand)?;
    let enc = vars.sequence.encode(tape, e_items, &seqs)?;
    let ctr = predict_ctr_tape(tape, &vars.ctr, enc.r_u, e_u, e_i)?;

    let b = inputs.len();
    let unexp = if variant.uses_unexpectedness() {
        unexpectedness_column(
            tape,
            e_i,
            inputs,
            model.settings.cluster_distance,
            embeddings,
        )?
    } else {
        zeros(tape, b, 1)?
    };

    let factor = if variant.uses_factor() {
        let groups = groups_of(inputs.iter().map(|e| e.window.len()));
        let rows = if window.is_empty() {
            e_u
        } else {
            tape.gather_rows(e_items, window)?
        };
        Some(unexp_factor_tape(
            tape,
            &vars.activation_unit,
            &vars.factor,
            e_u,
            rows,
            &groups,
            e_i,
            model.params.config.normalize_window,
        )?)
    } else {
        None
    };

    let mut utility = ctr;
    if variant.uses_unexpectedness() {
        let act = match variant {
            Variant::V1Gaussian => {
                let sq = tape.mul(unexp, unexp)?;
                let neg = tape.scale(sq, -1.0)?;
                tape.exp(neg)?
            }
            Variant::V2NoActivation => unexp,
            _ => {
                let neg = tape.scale(unexp, -1.0)?;
                let e = tape.exp(neg)?;
                tape.mul(unexp, e)?
            }
        };
        let term = match factor {
            Some(f) => tape.mul(act, f)?,
            None => act,
        };
        utility = tape.add(utility, term)?;
    }
    if variant.uses_bias() {
        let bu = tape.gather_rows(vars.user_bias, inputs.iter().map(|e| e.user).collect())?;
        let bi = tape.gather_rows(vars.item_bias, inputs.iter().map(|e| e.item).collect())?;
        utility = tape.add(utility, bu)?;
        utility = tape.add(utility, bi)?;
    }
    Ok(BatchOutput {
        utility,
        ctr,
        unexpectedness: unexp,
        factor,
    })
}
