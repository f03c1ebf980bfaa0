//! Forward and backward passes for the fixed set of layers the models use.
//!
//! Every backward function takes the upstream gradient and returns the gradients of
//! its inputs; callers accumulate parameter gradients into a [`ParamStore`].
//!
//! [`ParamStore`]: crate::numerics::ParamStore

use crate::error::{Error, Result};
use crate::numerics::tensor::{dot, vec_matmul_into};
use crate::numerics::Tensor;

/// `log(exp(a) + exp(b))` without overflow.
#[inline]
pub fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    if a > b {
        a + (b - a).exp().ln_1p()
    } else {
        b + (a - b).exp().ln_1p()
    }
}

/// Log-sum-exp of a slice; `-inf` for an empty or all `-inf` slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `y = x W + b` where `x` is viewed as `[n, in]`.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (_, fan_in) = x.as_matrix();
    if w.shape().len() != 2 || w.shape()[0] != fan_in {
        return Err(Error::Shape {
            op: "affine",
            left: x.shape().to_vec(),
            right: w.shape().to_vec(),
        });
    }
    if b.shape() != [w.shape()[1]] {
        return Err(Error::Shape {
            op: "affine bias",
            left: w.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut y = x.matmul(w)?;
    let out = w.shape()[1];
    for row in y.data_mut().chunks_mut(out) {
        for (v, bias) in row.iter_mut().zip(b.data()) {
            *v += bias;
        }
    }
    Ok(y)
}

/// Gradients of [`affine`]: returns `(dx, dW, db)`.
pub fn affine_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let dw = x.t_matmul(dy)?;
    let db = dy.sum_rows();
    let dx = dy.matmul_t(w)?.reshape(x.shape())?;
    Ok((dx, dw, db))
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// Gradient of the sigmoid given its output `y`.
pub fn sigmoid_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, &s) in dx.data_mut().iter_mut().zip(y.data()) {
        *d *= s * (1.0 - s);
    }
    dx
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

/// Gradient of tanh given its output `y`.
pub fn tanh_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, &t) in dx.data_mut().iter_mut().zip(y.data()) {
        *d *= 1.0 - t * t;
    }
    dx
}

/// Unsqueeze-and-add of `a[T, D]` and `b[U, D]` into `[T * U, D]` (row `t * U + u`).
pub fn broadcast_add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (t_len, d) = a.as_matrix();
    let (u_len, d2) = b.as_matrix();
    if d != d2 {
        return Err(Error::Shape {
            op: "broadcast_add",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = Vec::with_capacity(t_len * u_len * d);
    for t in 0..t_len {
        let ar = a.row(t);
        for u in 0..u_len {
            out.extend(ar.iter().zip(b.row(u)).map(|(x, y)| x + y));
        }
    }
    Tensor::new(vec![t_len * u_len, d], out)
}

/// Gradients of [`broadcast_add`]: sums `dy[T * U, D]` over `u` and over `t`.
pub fn broadcast_add_backward(dy: &Tensor, t_len: usize, u_len: usize) -> (Tensor, Tensor) {
    let d = dy.cols();
    let mut da = Tensor::zeros(&[t_len, d]);
    let mut db = Tensor::zeros(&[u_len, d]);
    for t in 0..t_len {
        for u in 0..u_len {
            let row = dy.row(t * u_len + u);
            for (x, g) in da.row_mut(t).iter_mut().zip(row) {
                *x += g;
            }
            for (x, g) in db.row_mut(u).iter_mut().zip(row) {
                *x += g;
            }
        }
    }
    (da, db)
}

/// In-place log-softmax of a single row.
pub fn log_softmax_row(row: &mut [f64]) {
    let lse = logsumexp(row);
    row.iter_mut().for_each(|v| *v -= lse);
}

/// Log-softmax over the last axis (max-shifted).
pub fn log_softmax(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    let k = y.cols();
    if k > 0 {
        y.data_mut().chunks_mut(k).for_each(log_softmax_row);
    }
    y
}

/// Gradient of [`log_softmax`] given its output `y`: `dx = dy - softmax * sum(dy)`.
pub fn log_softmax_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let k = y.cols();
    let mut dx = dy.clone();
    for (drow, yrow) in dx.data_mut().chunks_mut(k).zip(y.data().chunks(k)) {
        let total: f64 = drow.iter().sum();
        for (d, &lp) in drow.iter_mut().zip(yrow) {
            *d -= lp.exp() * total;
        }
    }
    dx
}

/// Single step of a tanh recurrence: `tanh([state; input] W + b)`.
///
/// `w` has shape `[h + e, h]`, `b` has shape `[h]`.
pub fn recurrent_step(state: &[f64], input: &[f64], w: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    let h = state.len();
    if w.shape() != [h + input.len(), h] || b.shape() != [h] {
        return Err(Error::Shape {
            op: "recurrent_step",
            left: vec![h, input.len()],
            right: w.shape().to_vec(),
        });
    }
    let mut out = b.data().to_vec();
    let wd = w.data();
    vec_matmul_into(state, &wd[..h * h], &mut out);
    vec_matmul_into(input, &wd[h * h..], &mut out);
    out.iter_mut().for_each(|v| *v = v.tanh());
    Ok(out)
}

/// Gradients of [`recurrent_step`] given the step's output. Parameter gradients are
/// accumulated into `dw` and `db`; returns `(d_state, d_input)`.
pub fn recurrent_step_backward(
    state: &[f64],
    input: &[f64],
    w: &Tensor,
    out: &[f64],
    d_out: &[f64],
    dw: &mut Tensor,
    db: &mut Tensor,
) -> (Vec<f64>, Vec<f64>) {
    let h = state.len();
    let pre: Vec<f64> = d_out
        .iter()
        .zip(out)
        .map(|(d, y)| d * (1.0 - y * y))
        .collect();
    for (g, p) in db.data_mut().iter_mut().zip(&pre) {
        *g += p;
    }
    let dwd = dw.data_mut();
    for (i, &s) in state.iter().chain(input).enumerate() {
        if s == 0.0 {
            continue;
        }
        for (g, p) in dwd[i * h..(i + 1) * h].iter_mut().zip(&pre) {
            *g += s * p;
        }
    }
    let wd = w.data();
    let d_state = (0..h).map(|i| dot(&wd[i * h..(i + 1) * h], &pre)).collect();
    let d_input = (0..input.len())
        .map(|j| dot(&wd[(h + j) * h..(h + j + 1) * h], &pre))
        .collect();
    (d_state, d_input)
}
