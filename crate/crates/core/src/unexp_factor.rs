//! Personalized, session-based unexpectedness factor.
//!
//! Each item of the session window gets a relevance weight from a small
//! feed-forward scorer over `[E_u; E_h; E_i; E_h * E_i; E_h - E_i]`; the
//! weighted sum of the window embeddings is fed with `E_u` and `E_i` to a
//! sigmoid-capped MLP.

use std::ops::Range;

use crate::nn::{Activation, Mlp, MlpVars};
use crate::numerics::{Initializer, NumericsError, ParamId, ParamStore, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct LocalActivationParams {
    pub mlp: Mlp,
}

impl LocalActivationParams {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        dim: usize,
        hidden: &[usize],
    ) -> Self {
        let mut sizes = vec![5 * dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self {
            mlp: Mlp::new(
                store,
                init,
                "lau",
                &sizes,
                Activation::Tanh,
                Activation::Identity,
            ),
        }
    }

    pub fn dim(&self) -> usize {
        self.mlp.inputs() / 5
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.mlp.param_ids()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactorHeadParams {
    pub mlp: Mlp,
}

impl FactorHeadParams {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        dim: usize,
        hidden: &[usize],
    ) -> Self {
        let mut sizes = vec![3 * dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self {
            mlp: Mlp::new(
                store,
                init,
                "factor",
                &sizes,
                Activation::Tanh,
                Activation::Sigmoid,
            ),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.mlp.param_ids()
    }
}

fn lau_input(e_u: &[f64], e_h: &[f64], e_i: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(5 * e_u.len());
    x.extend_from_slice(e_u);
    x.extend_from_slice(e_h);
    x.extend_from_slice(e_i);
    x.extend(e_h.iter().zip(e_i).map(|(h, i)| h * i));
    x.extend(e_h.iter().zip(e_i).map(|(h, i)| h - i));
    x
}

fn check_dims(op: &'static str, dim: usize, parts: &[&[f64]]) -> Result<(), NumericsError> {
    if let Some(p) = parts.iter().find(|p| p.len() != dim) {
        return Err(NumericsError::Shape {
            op,
            left: vec![p.len()],
            right: vec![dim],
        });
    }
    Ok(())
}

/// Unnormalized relevance of one history item to the candidate.
pub fn local_activation(
    e_u: &[f64],
    e_hist: &[f64],
    e_i: &[f64],
    params: &LocalActivationParams,
    store: &ParamStore,
) -> Result<f64, NumericsError> {
    check_dims("local_activation", params.dim(), &[e_u, e_hist, e_i])?;
    Ok(params.mlp.eval(store, &lau_input(e_u, e_hist, e_i))[0])
}

/// Window weights and pooled window embedding.
pub fn pool_window(
    e_u: &[f64],
    window: &[Vec<f64>],
    e_i: &[f64],
    la: &LocalActivationParams,
    store: &ParamStore,
    normalize: bool,
) -> Result<(Vec<f64>, Vec<f64>), NumericsError> {
    let mut weights = window
        .iter()
        .map(|h| local_activation(e_u, h, e_i, la, store))
        .collect::<Result<Vec<_>, _>>()?;
    if normalize && !weights.is_empty() {
        weights = crate::numerics::softmax_slice(&weights);
    }
    let mut pooled = vec![0.0; la.dim()];
    for (w, h) in weights.iter().zip(window) {
        for (p, x) in pooled.iter_mut().zip(h) {
            *p += w * x;
        }
    }
    Ok((weights, pooled))
}

/// `sigmoid(MLP([E_u; sum_j a_j E_j; E_i]))`; an empty window pools to zero.
pub fn unexp_factor(
    e_u: &[f64],
    window: &[Vec<f64>],
    e_i: &[f64],
    la: &LocalActivationParams,
    head: &FactorHeadParams,
    store: &ParamStore,
    normalize: bool,
) -> Result<f64, NumericsError> {
    let (_, pooled) = pool_window(e_u, window, e_i, la, store, normalize)?;
    let mut x = Vec::with_capacity(3 * pooled.len());
    x.extend_from_slice(e_u);
    x.extend_from_slice(&pooled);
    x.extend_from_slice(e_i);
    Ok(head.mlp.eval(store, &x)[0])
}

/// Batched factor on a tape. `window` holds the history rows of every
/// event, grouped by `groups`; `e_u` and `e_i` have one row per event.
#[allow(clippy::too_many_arguments)]
pub fn unexp_factor_tape(
    tape: &mut Tape,
    la: &MlpVars,
    head: &MlpVars,
    e_u: Var,
    window: Var,
    groups: &[Range<usize>],
    e_i: Var,
    normalize: bool,
) -> Result<Var, NumericsError> {
    let members: usize = groups.iter().map(|g| g.len()).sum();
    let pooled = if members == 0 {
        let (b, d) = tape.shape(e_u);
        tape.constant_matrix(b, d, vec![0.0; b * d])?
    } else {
        let owner: Vec<usize> = groups
            .iter()
            .enumerate()
            .flat_map(|(b, g)| std::iter::repeat_n(b, g.len()))
            .collect();
        let u = tape.gather_rows(e_u, owner.clone())?;
        let i = tape.gather_rows(e_i, owner)?;
        let prod = tape.mul(window, i)?;
        let diff = tape.sub(window, i)?;
        let x = tape.concat_cols(&[u, window, i, prod, diff])?;
        let mut a = la.forward(tape, x)?;
        if normalize {
            a = tape.group_softmax(a, groups.to_vec())?;
        }
        let weighted = tape.mul_col(window, a)?;
        tape.group_sum(weighted, groups.to_vec())?
    };
    let x = tape.concat_cols(&[e_u, pooled, e_i])?;
    head.forward(tape, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn params(
        seed: u64,
        scale: f64,
        dim: usize,
    ) -> (ParamStore, LocalActivationParams, FactorHeadParams) {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed, scale);
        let la = LocalActivationParams::new(&mut store, &mut init, dim, &[32]);
        let head = FactorHeadParams::new(&mut store, &mut init, dim, &[32, 64]);
        (store, la, head)
    }

    #[test]
    fn zero_scorer_gives_zero_weight() {
        let (store, la, _) = params(0, 0.0, 3);
        let w = local_activation(
            &[1.0, 2.0, 3.0],
            &[0.5, 0.1, 0.0],
            &[-1.0, 0.0, 2.0],
            &la,
            &store,
        )
        .unwrap();
        assert_eq!(w, 0.0);
    }

    #[test]
    fn distinct_history_items_get_distinct_weights() {
        let (store, la, _) = params(7, 0.3, 3);
        let u = [0.2, -0.1, 0.4];
        let i = [0.3, 0.3, -0.2];
        let a = local_activation(&u, &[1.0, 0.0, 0.0], &i, &la, &store).unwrap();
        let b = local_activation(&u, &[0.0, -1.0, 0.5], &i, &la, &store).unwrap();
        let again = local_activation(&u, &[1.0, 0.0, 0.0], &i, &la, &store).unwrap();
        assert_ne!(a, b);
        assert_eq!(a, again);
    }

    #[test]
    fn empty_window_with_zero_head_is_one_half() {
        let (store, la, head) = params(0, 0.0, 2);
        let f = unexp_factor(&[1.0, 1.0], &[], &[0.5, -0.5], &la, &head, &store, false).unwrap();
        assert_eq!(f, 0.5);
    }

    #[test]
    fn hand_set_weights_pool_linearly() {
        // A scorer whose output is its bias: every weight equals that bias.
        let (mut store, la, _) = params(1, 0.2, 2);
        let last = la.mlp.layers.last().unwrap().clone();
        store.set(last.weight, vec![0.0; last.inputs]).unwrap();
        let e1 = vec![1.0, -2.0];
        let e2 = vec![0.5, 4.0];
        store.set(last.bias, vec![0.5]).unwrap();
        let (_, p1) = pool_window(
            &[0.0; 2],
            std::slice::from_ref(&e1),
            &[0.0; 2],
            &la,
            &store,
            false,
        )
        .unwrap();
        store.set(last.bias, vec![2.0]).unwrap();
        let (_, p2) = pool_window(
            &[0.0; 2],
            std::slice::from_ref(&e2),
            &[0.0; 2],
            &la,
            &store,
            false,
        )
        .unwrap();
        let expected = [0.5 * e1[0] + 2.0 * e2[0], 0.5 * e1[1] + 2.0 * e2[1]];
        assert_eq!([p1[0] + p2[0], p1[1] + p2[1]], expected);
    }

    #[test]
    fn tape_and_plain_paths_agree() {
        let (store, la, head) = params(3, 0.3, 2);
        let e_u = [0.1, -0.3];
        let e_i = [0.7, 0.2];
        let window = vec![vec![0.4, 0.1], vec![-0.2, 0.9], vec![0.0, 0.3]];
        for normalize in [false, true] {
            let plain = unexp_factor(&e_u, &window, &e_i, &la, &head, &store, normalize).unwrap();
            let mut tape = Tape::new();
            let lv = la.mlp.bind(&mut tape, &store);
            let hv = head.mlp.bind(&mut tape, &store);
            let u = tape.constant(&Tensor::row(&e_u).unwrap());
            let i = tape.constant(&Tensor::row(&e_i).unwrap());
            let w = tape
                .constant_matrix(3, 2, window.iter().flatten().copied().collect())
                .unwrap();
            let f = unexp_factor_tape(
                &mut tape,
                &lv,
                &hv,
                u,
                w,
                std::slice::from_ref(&(0..3)),
                i,
                normalize,
            )
            .unwrap();
            assert!((tape.scalar(f) - plain).abs() < 1e-15);
        }
    }
}
