//! Dense layers shared by the network modules.
//!
//! Parameters live in a [`ParamStore`]; a module records their ids in a
//! fixed order (`param_ids`). Forward passes run on bound variables built
//! from that same order, so a forward pass can take either stored
//! parameters ([`Mlp::bind`]) or arbitrary tracked leaves, as the gradient
//! checks do.

use serde::{Deserialize, Serialize};

use crate::numerics::{Initializer, NumericsError, ParamId, ParamStore, SparseRow, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => crate::numerics::ops::Unary::Sigmoid.apply(x),
        }
    }

    fn on_tape(self, tape: &mut Tape, x: Var) -> Result<Var, NumericsError> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

/// Multi-layer perceptron: `hidden` after every layer but the last,
/// `output` after the last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub hidden: Activation,
    pub output: Activation,
}

impl Mlp {
    /// `sizes = [in, h1, ..., out]`. Parameters are named
    /// `{prefix}.{layer}.weight` and `{prefix}.{layer}.bias`.
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        prefix: &str,
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
    ) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| Dense {
                weight: store.add(format!("{prefix}.{l}.weight"), init.uniform(w[0], w[1])),
                bias: store.add(format!("{prefix}.{l}.bias"), init.zeros(1, w[1])),
                inputs: w[0],
                outputs: w[1],
            })
            .collect();
        Self {
            layers,
            hidden,
            output,
        }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> MlpVars {
        let vars: Vec<Var> = self
            .param_ids()
            .into_iter()
            .map(|id| tape.param(store, id))
            .collect();
        self.with_vars(&vars)
    }

    /// Builds the bound form from variables given in `param_ids` order.
    pub fn with_vars(&self, vars: &[Var]) -> MlpVars {
        assert_eq!(
            vars.len(),
            2 * self.layers.len(),
            "one weight and bias per layer"
        );
        MlpVars {
            layers: vars.chunks(2).map(|c| (c[0], c[1])).collect(),
            hidden: self.hidden,
            output: self.output,
        }
    }

    fn activation_of(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    /// Plain-array forward pass of one input row.
    pub fn eval(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let first = &self.layers[0];
        let mut pre = store.get(first.bias).data().to_vec();
        vec_mat_acc(x, store.get(first.weight).data(), first.outputs, &mut pre);
        self.eval_tail(store, pre)
    }

    /// Finishes a forward pass from the first layer's pre-activation.
    pub fn eval_tail(&self, store: &ParamStore, mut pre: Vec<f64>) -> Vec<f64> {
        let act = self.activation_of(0);
        pre.iter_mut().for_each(|v| *v = act.apply(*v));
        let mut cur = pre;
        for (l, layer) in self.layers.iter().enumerate().skip(1) {
            let mut out = store.get(layer.bias).data().to_vec();
            vec_mat_acc(
                &cur,
                store.get(layer.weight).data(),
                layer.outputs,
                &mut out,
            );
            let act = self.activation_of(l);
            out.iter_mut().for_each(|v| *v = act.apply(*v));
            cur = out;
        }
        cur
    }
}

/// `acc += x * w` for a row-major `w` with `cols` columns and `x.len()`
/// rows.
pub fn vec_mat_acc(x: &[f64], w: &[f64], cols: usize, acc: &mut [f64]) {
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (o, &wv) in acc.iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
            *o += xi * wv;
        }
    }
}

#[derive(Clone, Debug)]
pub struct MlpVars {
    pub layers: Vec<(Var, Var)>,
    pub hidden: Activation,
    pub output: Activation,
}

impl MlpVars {
    fn finish(&self, tape: &mut Tape, mut h: Var, first: usize) -> Result<Var, NumericsError> {
        let last = self.layers.len() - 1;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            if l >= first {
                h = tape.matmul(h, w)?;
            }
            h = tape.add_row(h, b)?;
            let act = if l == last { self.output } else { self.hidden };
            h = act.on_tape(tape, h)?;
        }
        Ok(h)
    }

    /// Row-wise forward pass of `x[m x in]`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var, NumericsError> {
        self.finish(tape, x, 0)
    }

    /// Forward pass whose inputs are sparse rows.
    pub fn forward_sparse(
        &self,
        tape: &mut Tape,
        rows: Vec<SparseRow>,
    ) -> Result<Var, NumericsError> {
        let h = tape.sparse_matmul(rows, self.layers[0].0)?;
        self.finish(tape, h, 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn tape_and_plain_forward_agree() {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(3, 0.5);
        let mlp = Mlp::new(
            &mut store,
            &mut init,
            "m",
            &[3, 4, 2],
            Activation::Tanh,
            Activation::Sigmoid,
        );
        let x = [0.3, -1.2, 0.0];
        let mut tape = Tape::new();
        let vars = mlp.bind(&mut tape, &store);
        let xv = tape.constant(&Tensor::row(&x).unwrap());
        let out = vars.forward(&mut tape, xv).unwrap();
        let plain = mlp.eval(&store, &x);
        for (a, b) in tape.value(out).iter().zip(&plain) {
            assert!((a - b).abs() < 1e-15);
        }
        let sparse = vars
            .forward_sparse(&mut tape, vec![vec![(0, 0.3), (1, -1.2)]])
            .unwrap();
        assert_eq!(tape.value(sparse), tape.value(out));
    }

    #[test]
    fn parameter_names_are_stable() {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(0, 0.05);
        Mlp::new(
            &mut store,
            &mut init,
            "head",
            &[2, 3, 1],
            Activation::Tanh,
            Activation::Identity,
        );
        let names: Vec<&str> = store.iter().map(|(n, _)| n).collect();
        assert_eq!(
            names,
            [
                "head.0.weight",
                "head.0.bias",
                "head.1.weight",
                "head.1.bias"
            ]
        );
    }
}
