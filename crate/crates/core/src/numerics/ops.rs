//! Eager (untracked) array kernels. The tape reuses these for its forward
//! and backward passes.

use super::{NumericsError, Tensor};

/// `out[m x n] = a[m x k] * b[k x n]`.
pub(crate) fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out[k x n] += a[m x k]^T * g[m x n]`.
pub(crate) fn gemm_at_acc(a: &[f64], g: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

/// `out[m x k] += g[m x n] * b[k x n]^T`.
pub(crate) fn gemm_bt_acc(g: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for (p, o) in orow.iter_mut().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            *o += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn check_finite(op: &'static str, data: &[f64]) -> Result<(), NumericsError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NumericsError::NonFinite { op })
    }
}

/// Numerically stable softmax of one slice, written into `out`.
pub(crate) fn softmax_into(v: &[f64], out: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(v) {
        *o = (x - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn as_matrix(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    let (m, k) = as_matrix(a);
    let (k2, n) = as_matrix(b);
    if a.shape().len() != 2 || b.shape().len() != 2 || k != k2 {
        return Err(NumericsError::Shape {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let out = gemm(a.data(), b.data(), m, k, n);
    check_finite("matmul", &out)?;
    Tensor::matrix(m, n, out)
}

/// Pointwise maps with known derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Exp,
}

impl Unary {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Sigmoid => sigmoid_scalar(x),
            Unary::Tanh => x.tanh(),
            Unary::Exp => x.exp(),
        }
    }

    /// Derivative expressed through the output value `y = f(x)`.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::Exp => y,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Unary::Sigmoid => "sigmoid",
            Unary::Tanh => "tanh",
            Unary::Exp => "exp",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

impl Binary {
    fn apply(self, x: f64, y: f64) -> f64 {
        match self {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        }
    }
}

pub fn unary(op: Unary, t: &Tensor) -> Result<Tensor, NumericsError> {
    let out: Vec<f64> = t.data().iter().map(|&x| op.apply(x)).collect();
    check_finite(op.name(), &out)?;
    Tensor::new(t.shape().to_vec(), out)
}

/// Elementwise binary op. Shapes must match exactly, or one side must be a
/// single value that is broadcast.
pub fn binary(op: Binary, a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    let (shape, out): (Vec<usize>, Vec<f64>) = if a.shape() == b.shape() {
        let out = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| op.apply(x, y))
            .collect();
        (a.shape().to_vec(), out)
    } else if b.is_scalar() {
        let y = b.item();
        (
            a.shape().to_vec(),
            a.data().iter().map(|&x| op.apply(x, y)).collect(),
        )
    } else if a.is_scalar() {
        let x = a.item();
        (
            b.shape().to_vec(),
            b.data().iter().map(|&y| op.apply(x, y)).collect(),
        )
    } else {
        return Err(NumericsError::Shape {
            op: op.name(),
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    };
    check_finite(op.name(), &out)?;
    Tensor::new(shape, out)
}

pub fn scale(t: &Tensor, factor: f64) -> Result<Tensor, NumericsError> {
    let out: Vec<f64> = t.data().iter().map(|&x| x * factor).collect();
    check_finite("scale", &out)?;
    Tensor::new(t.shape().to_vec(), out)
}

/// Softmax over all entries of `v`, computed with max subtraction.
pub fn softmax(v: &Tensor) -> Result<Tensor, NumericsError> {
    if v.is_empty() {
        return Err(NumericsError::Empty { op: "softmax" });
    }
    let mut out = vec![0.0; v.len()];
    softmax_into(v.data(), &mut out);
    check_finite("softmax", &out)?;
    Tensor::new(v.shape().to_vec(), out)
}

/// Softmax of a plain slice.
pub fn softmax_slice(v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    softmax_into(v, &mut out);
    out
}
