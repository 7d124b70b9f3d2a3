//! Click-through-rate pathway: a bidirectional GRU with self-attention over
//! the behavior sequence, followed by an MLP over `[R_u; E_u; E_i]`.
//!
//! Sequences are processed as a padded batch. Shorter sequences are padded
//! at the front and a per-step mask freezes their hidden state while
//! padded, so every direction sees exactly the real items.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::nn::{Activation, Mlp, MlpVars};
use crate::numerics::{Initializer, NumericsError, ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
    pub dim: usize,
}

impl GruParams {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, prefix: &str, dim: usize) -> Self {
        let mut w = |name: &str| store.add(format!("{prefix}.{name}"), init.uniform(dim, dim));
        let (w_z, w_r, w_h, u_z, u_r, u_h) =
            (w("w_z"), w("w_r"), w("w_h"), w("u_z"), w("u_r"), w("u_h"));
        let mut b = |name: &str| store.add(format!("{prefix}.{name}"), init.zeros(1, dim));
        let (b_z, b_r, b_h) = (b("b_z"), b("b_r"), b("b_h"));
        Self {
            w_z,
            w_r,
            w_h,
            u_z,
            u_r,
            u_h,
            b_z,
            b_r,
            b_h,
            dim,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![
            self.w_z, self.w_r, self.w_h, self.u_z, self.u_r, self.u_h, self.b_z, self.b_r,
            self.b_h,
        ]
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> GruVars {
        let vars: Vec<Var> = self
            .param_ids()
            .into_iter()
            .map(|id| tape.param(store, id))
            .collect();
        GruVars::from_vars(&vars)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_z: Var,
    pub w_r: Var,
    pub w_h: Var,
    pub u_z: Var,
    pub u_r: Var,
    pub u_h: Var,
    pub b_z: Var,
    pub b_r: Var,
    pub b_h: Var,
}

impl GruVars {
    /// Variables in [`GruParams::param_ids`] order.
    pub fn from_vars(v: &[Var]) -> Self {
        assert_eq!(v.len(), 9, "a GRU has nine parameter blocks");
        Self {
            w_z: v[0],
            w_r: v[1],
            w_h: v[2],
            u_z: v[3],
            u_r: v[4],
            u_h: v[5],
            b_z: v[6],
            b_r: v[7],
            b_h: v[8],
        }
    }
}

/// One GRU update given the precomputed input projections
/// `xz = x W_z + b_z` (likewise `xr`, `xh`). With a mask column, rows whose
/// mask is 0 keep `h`.
fn gru_update(
    tape: &mut Tape,
    g: &GruVars,
    xz: Var,
    xr: Var,
    xh: Var,
    h: Var,
    mask: Option<Var>,
) -> Result<Var, NumericsError> {
    let hz = tape.matmul(h, g.u_z)?;
    let z = tape.add(xz, hz)?;
    let z = tape.sigmoid(z)?;
    let hr = tape.matmul(h, g.u_r)?;
    let r = tape.add(xr, hr)?;
    let r = tape.sigmoid(r)?;
    let rh = tape.mul(r, h)?;
    let rhu = tape.matmul(rh, g.u_h)?;
    let cand = tape.add(xh, rhu)?;
    let cand = tape.tanh(cand)?;
    let delta = tape.sub(cand, h)?;
    let mut step = tape.mul(z, delta)?;
    if let Some(m) = mask {
        step = tape.mul_col(step, m)?;
    }
    tape.add(h, step)
}

fn project(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
    let p = tape.matmul(x, w)?;
    tape.add_row(p, b)
}

/// `h_t = (1 - z) * h_prev + z * tanh(x W_h + (r * h_prev) U_h + b_h)` with
/// the update gate `z` and reset gate `r`, row-wise over `x[m x d]`.
pub fn gru_cell_tape(
    tape: &mut Tape,
    g: &GruVars,
    x: Var,
    h_prev: Var,
) -> Result<Var, NumericsError> {
    let xz = project(tape, x, g.w_z, g.b_z)?;
    let xr = project(tape, x, g.w_r, g.b_r)?;
    let xh = project(tape, x, g.w_h, g.b_h)?;
    gru_update(tape, g, xz, xr, xh, h_prev, None)
}

pub fn gru_cell(
    x: &[f64],
    h_prev: &[f64],
    params: &GruParams,
    store: &ParamStore,
) -> Result<Vec<f64>, NumericsError> {
    let d = params.dim;
    if x.len() != d || h_prev.len() != d {
        return Err(NumericsError::Shape {
            op: "gru_cell",
            left: vec![x.len(), h_prev.len()],
            right: vec![d, d],
        });
    }
    let mut tape = Tape::new();
    let g = params.bind(&mut tape, store);
    let xv = tape.constant(&Tensor::row(x)?);
    let hv = tape.constant(&Tensor::row(h_prev)?);
    let out = gru_cell_tape(&mut tape, &g, xv, hv)?;
    Ok(tape.value(out).to_vec())
}

/// Scaled dot-product compatibility `(h_t W_q) . (h_i W_k) / sqrt(d)` and
/// the value transform `W_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_t: ParamId,
}

impl AttentionParams {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, prefix: &str, dim: usize) -> Self {
        Self {
            w_q: store.add(format!("{prefix}.w_q"), init.uniform(dim, dim)),
            w_k: store.add(format!("{prefix}.w_k"), init.uniform(dim, dim)),
            w_t: store.add(format!("{prefix}.w_t"), init.uniform(dim, dim)),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w_q, self.w_k, self.w_t]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_t: Var,
}

/// How the per-step states of each direction become one vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// Attention-weighted sum of transformed states, queried from the most
    /// recent position.
    #[default]
    Attention,
    /// The state each direction ends in.
    FinalState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceEncoderParams {
    pub forward: GruParams,
    pub backward: GruParams,
    pub attention: [AttentionParams; 2],
    pub pooling: Pooling,
}

impl SequenceEncoderParams {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        dim: usize,
        pooling: Pooling,
    ) -> Self {
        Self {
            forward: GruParams::new(store, init, "gru.fwd", dim),
            backward: GruParams::new(store, init, "gru.bwd", dim),
            attention: [
                AttentionParams::new(store, init, "attn.fwd", dim),
                AttentionParams::new(store, init, "attn.bwd", dim),
            ],
            pooling,
        }
    }

    pub fn dim(&self) -> usize {
        self.forward.dim
    }

    /// Forward GRU, backward GRU, then both attention blocks.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.forward.param_ids();
        ids.extend(self.backward.param_ids());
        ids.extend(self.attention[0].param_ids());
        ids.extend(self.attention[1].param_ids());
        ids
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> SequenceEncoderVars {
        let vars: Vec<Var> = self
            .param_ids()
            .into_iter()
            .map(|id| tape.param(store, id))
            .collect();
        self.with_vars(&vars)
    }

    pub fn with_vars(&self, v: &[Var]) -> SequenceEncoderVars {
        assert_eq!(v.len(), 24, "sequence encoder has 24 parameter blocks");
        let attn = |s: &[Var]| AttentionVars {
            w_q: s[0],
            w_k: s[1],
            w_t: s[2],
        };
        SequenceEncoderVars {
            gru: [GruVars::from_vars(&v[..9]), GruVars::from_vars(&v[9..18])],
            attention: [attn(&v[18..21]), attn(&v[21..24])],
            pooling: self.pooling,
            dim: self.dim(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SequenceEncoderVars {
    pub gru: [GruVars; 2],
    pub attention: [AttentionVars; 2],
    pub pooling: Pooling,
    pub dim: usize,
}

/// Output of [`SequenceEncoderVars::encode`].
pub struct SequenceEncoding {
    /// `[batch x 2d]`: forward then backward pooled vectors. Empty
    /// sequences give zero rows.
    pub r_u: Var,
    /// Attention weights per direction as `[members x 1]`, grouped by
    /// `groups`; `None` under final-state pooling.
    pub weights: [Option<Var>; 2],
    pub groups: Vec<Range<usize>>,
}

impl SequenceEncoderVars {
    /// Encodes each sequence of row indices into `items[n x d]`.
    pub fn encode(
        &self,
        tape: &mut Tape,
        items: Var,
        seqs: &[Vec<usize>],
    ) -> Result<SequenceEncoding, NumericsError> {
        let d = self.dim;
        let b = seqs.len();
        let t_max = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let mut groups = Vec::with_capacity(b);
        let mut start = 0;
        for s in seqs {
            groups.push(start..start + s.len());
            start += s.len();
        }
        if t_max == 0 {
            let r_u = tape.constant_matrix(b, 2 * d, vec![0.0; b * 2 * d])?;
            return Ok(SequenceEncoding {
                r_u,
                weights: [None, None],
                groups,
            });
        }

        // Position p of sequence s sits in row p * b + s.
        let offset: Vec<usize> = seqs.iter().map(|s| t_max - s.len()).collect();
        let mut index = Vec::with_capacity(t_max * b);
        for p in 0..t_max {
            for (s, seq) in seqs.iter().enumerate() {
                index.push(if p >= offset[s] {
                    seq[p - offset[s]]
                } else {
                    0
                });
            }
        }
        let x_all = tape.gather_rows(items, index)?;
        let masks: Vec<Option<Var>> = (0..t_max)
            .map(|p| {
                if offset.iter().all(|&o| p >= o) {
                    Ok(None)
                } else {
                    let m = offset
                        .iter()
                        .map(|&o| f64::from(u8::from(p >= o)))
                        .collect();
                    tape.constant_matrix(b, 1, m).map(Some)
                }
            })
            .collect::<Result<_, _>>()?;

        let mut members = Vec::with_capacity(start);
        for (s, &o) in offset.iter().enumerate() {
            members.extend((o..t_max).map(|p| p * b + s));
        }
        let member_seq: Vec<usize> = groups
            .iter()
            .enumerate()
            .flat_map(|(s, g)| std::iter::repeat_n(s, g.len()))
            .collect();

        let mut pooled = Vec::with_capacity(2);
        let mut weights = [None, None];
        for (dir, g) in self.gru.iter().enumerate() {
            let xz = project(tape, x_all, g.w_z, g.b_z)?;
            let xr = project(tape, x_all, g.w_r, g.b_r)?;
            let xh = project(tape, x_all, g.w_h, g.b_h)?;
            let mut h = tape.constant_matrix(b, d, vec![0.0; b * d])?;
            let mut states: Vec<Option<Var>> = vec![None; t_max];
            let order: Vec<usize> = if dir == 0 {
                (0..t_max).collect()
            } else {
                (0..t_max).rev().collect()
            };
            for p in order {
                let rows: Vec<usize> = (p * b..(p + 1) * b).collect();
                let xzp = tape.gather_rows(xz, rows.clone())?;
                let xrp = tape.gather_rows(xr, rows.clone())?;
                let xhp = tape.gather_rows(xh, rows)?;
                h = gru_update(tape, g, xzp, xrp, xhp, h, masks[p])?;
                states[p] = Some(h);
            }
            let states: Vec<Var> = states
                .into_iter()
                .map(|s| s.expect("every step visited"))
                .collect();
            match self.pooling {
                Pooling::FinalState => pooled.push(h),
                Pooling::Attention => {
                    let a = &self.attention[dir];
                    let stacked = tape.concat_rows(&states)?;
                    let hs = tape.gather_rows(stacked, members.clone())?;
                    let last = states[t_max - 1];
                    let q = tape.matmul(last, a.w_q)?;
                    let q = tape.gather_rows(q, member_seq.clone())?;
                    let k = tape.matmul(hs, a.w_k)?;
                    let e = tape.row_dot(q, k)?;
                    let e = tape.scale(e, 1.0 / (d as f64).sqrt())?;
                    let alpha = tape.group_softmax(e, groups.clone())?;
                    let v = tape.matmul(hs, a.w_t)?;
                    let weighted = tape.mul_col(v, alpha)?;
                    pooled.push(tape.group_sum(weighted, groups.clone())?);
                    weights[dir] = Some(alpha);
                }
            }
        }
        let r_u = tape.concat_cols(&pooled)?;
        Ok(SequenceEncoding {
            r_u,
            weights,
            groups,
        })
    }
}

/// Interest vector and per-direction attention weights of one sequence of
/// item embeddings.
pub fn encode_sequence(
    items: &[Vec<f64>],
    params: &SequenceEncoderParams,
    store: &ParamStore,
) -> Result<(Vec<f64>, [Vec<f64>; 2]), NumericsError> {
    let d = params.dim();
    if let Some(e) = items.iter().find(|e| e.len() != d) {
        return Err(NumericsError::Shape {
            op: "encode_sequence",
            left: vec![e.len()],
            right: vec![d],
        });
    }
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape, store);
    let flat: Vec<f64> = items.iter().flatten().copied().collect();
    let n = items.len();
    let emb = tape.constant_matrix(n.max(1), d, if n == 0 { vec![0.0; d] } else { flat })?;
    let enc = vars.encode(&mut tape, emb, &[(0..n).collect()])?;
    let w = |v: Option<Var>| v.map(|v| tape.value(v).to_vec()).unwrap_or_default();
    Ok((
        tape.value(enc.r_u).to_vec(),
        [w(enc.weights[0]), w(enc.weights[1])],
    ))
}

/// MLP over `[R_u; E_u; E_i]` giving a click logit.
#[derive(Clone, Debug, PartialEq)]
pub struct CtrHeadParams {
    pub mlp: Mlp,
}

impl CtrHeadParams {
    /// `hidden` lists the hidden layer widths; the output is one logit.
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        dim: usize,
        hidden: &[usize],
    ) -> Self {
        let mut sizes = vec![4 * dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self {
            mlp: Mlp::new(
                store,
                init,
                "ctr",
                &sizes,
                Activation::Tanh,
                Activation::Identity,
            ),
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.mlp.param_ids()
    }
}

/// `sigmoid(MLP([R_u; E_u; E_i]))` row-wise, `[batch x 1]`.
pub fn predict_ctr_tape(
    tape: &mut Tape,
    head: &MlpVars,
    r_u: Var,
    e_u: Var,
    e_i: Var,
) -> Result<Var, NumericsError> {
    let x = tape.concat_cols(&[r_u, e_u, e_i])?;
    let logit = head.forward(tape, x)?;
    tape.sigmoid(logit)
}

pub fn predict_ctr(
    e_u: &[f64],
    e_i: &[f64],
    r_u: &[f64],
    head: &CtrHeadParams,
    store: &ParamStore,
) -> Result<f64, NumericsError> {
    let mut x = Vec::with_capacity(r_u.len() + e_u.len() + e_i.len());
    x.extend_from_slice(r_u);
    x.extend_from_slice(e_u);
    x.extend_from_slice(e_i);
    if x.len() != head.mlp.inputs() {
        return Err(NumericsError::Shape {
            op: "predict_ctr",
            left: vec![x.len()],
            right: vec![head.mlp.inputs()],
        });
    }
    let logit = head.mlp.eval(store, &x)[0];
    Ok(crate::numerics::ops::Unary::Sigmoid.apply(logit))
}
