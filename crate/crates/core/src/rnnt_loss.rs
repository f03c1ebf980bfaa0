//! Transducer alignment loss over the `T x (U+1)` lattice.
//!
//! Convention: an alignment is a sequence of `T` blanks and `U` labels in which the
//! label order matches the target and the last symbol is a blank emitted at the
//! last frame. A blank at node `(t, u)` moves to `(t+1, u)`; a label moves to
//! `(t, u+1)`. Under uniform emissions there are `C(T+U-1, U)` alignments.

use std::fmt::Write as _;

use crate::error::{invalid, Error, Result};
use crate::numerics::{logaddexp, logsumexp, Tensor};

/// Largest `T + U` accepted by [`brute_force_loss`].
pub const ENUMERATION_BOUND: usize = 14;

/// Per-node log-probabilities over `V ∪ {blank}` for one utterance.
#[derive(Debug, Clone)]
pub struct EmissionLattice {
    logp: Tensor,
    target: Vec<usize>,
    blank_id: usize,
}

impl EmissionLattice {
    /// Builds a lattice from `[T, U+1, V+1]` log-probabilities; the blank is the last class.
    ///
    /// Every cell must be normalized within `1e-8`.
    pub fn new(logp: Tensor, target: Vec<usize>) -> Result<Self> {
        let lat = Self::new_unnormalized(logp, target)?;
        let k = lat.num_classes();
        for (i, cell) in lat.logp.data().chunks(k).enumerate() {
            let total = logsumexp(cell).exp();
            if (total - 1.0).abs() > 1e-8 {
                return invalid(format!(
                    "lattice cell {} (t={}, u={}) sums to {total}",
                    i,
                    i / (lat.labels() + 1),
                    i % (lat.labels() + 1)
                ));
            }
        }
        Ok(lat)
    }

    /// Like [`EmissionLattice::new`] without the normalization check (shape and
    /// target checks still apply).
    pub fn new_unnormalized(logp: Tensor, target: Vec<usize>) -> Result<Self> {
        let shape = logp.shape().to_vec();
        if shape.len() != 3 || shape[1] != target.len() + 1 || shape[2] < 2 {
            return Err(Error::Shape {
                op: "emission lattice",
                left: shape,
                right: vec![target.len() + 1],
            });
        }
        let blank_id = shape[2] - 1;
        if let Some(&bad) = target.iter().find(|&&y| y >= blank_id) {
            return invalid(format!("target id {bad} outside [0, {blank_id})"));
        }
        Ok(EmissionLattice {
            logp,
            target,
            blank_id,
        })
    }

    pub fn frames(&self) -> usize {
        self.logp.shape()[0]
    }

    pub fn labels(&self) -> usize {
        self.target.len()
    }

    pub fn num_classes(&self) -> usize {
        self.blank_id + 1
    }

    pub fn blank_id(&self) -> usize {
        self.blank_id
    }

    pub fn target(&self) -> &[usize] {
        &self.target
    }

    pub fn logp(&self) -> &Tensor {
        &self.logp
    }

    #[inline]
    fn lp(&self, t: usize, u: usize, k: usize) -> f64 {
        self.logp.get3(t, u, k)
    }

    #[inline]
    fn blank(&self, t: usize, u: usize) -> f64 {
        self.lp(t, u, self.blank_id)
    }

    /// Log-probability of emitting the next target label from node `(t, u)`.
    #[inline]
    fn emit(&self, t: usize, u: usize) -> f64 {
        self.lp(t, u, self.target[u])
    }

    fn check_alignable(&self) -> Result<()> {
        if self.frames() == 0 {
            return Err(Error::NoAlignment {
                frames: 0,
                labels: self.labels(),
            });
        }
        Ok(())
    }
}

/// Forward and backward variables, both `[T, U+1]` in the log domain.
///
/// `beta[t,u]` includes the emission at `(t,u)`, so `alpha + beta` at any node is the
/// log-mass of all alignments passing through it.
#[derive(Debug, Clone)]
pub struct AlphaBeta {
    pub alpha: Tensor,
    pub beta: Tensor,
}

impl AlphaBeta {
    /// Text table of both variables, one row per frame, for test triage.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (label, table) in [("alpha", &self.alpha), ("beta", &self.beta)] {
            let _ = writeln!(s, "{label}:");
            for t in 0..table.shape()[0] {
                let row: Vec<String> = table.row(t).iter().map(|v| format!("{v:>10.4}")).collect();
                let _ = writeln!(s, "  t={t:<3}{}", row.join(" "));
            }
        }
        s
    }
}

/// Runs the forward and backward recursions; returns the tables and `log P(Y|x)`.
pub fn forward_backward(lat: &EmissionLattice) -> Result<(AlphaBeta, f64)> {
    lat.check_alignable()?;
    let (t_len, u_len) = (lat.frames(), lat.labels());
    let cols = u_len + 1;

    let mut alpha = vec![f64::NEG_INFINITY; t_len * cols];
    alpha[0] = 0.0;
    for t in 0..t_len {
        for u in 0..cols {
            if t == 0 && u == 0 {
                continue;
            }
            let mut a = f64::NEG_INFINITY;
            if t > 0 {
                a = alpha[(t - 1) * cols + u] + lat.blank(t - 1, u);
            }
            if u > 0 {
                a = logaddexp(a, alpha[t * cols + u - 1] + lat.emit(t, u - 1));
            }
            alpha[t * cols + u] = a;
        }
    }

    let mut beta = vec![f64::NEG_INFINITY; t_len * cols];
    beta[(t_len - 1) * cols + u_len] = lat.blank(t_len - 1, u_len);
    for t in (0..t_len).rev() {
        for u in (0..cols).rev() {
            if t == t_len - 1 && u == u_len {
                continue;
            }
            let mut b = f64::NEG_INFINITY;
            if t + 1 < t_len {
                b = beta[(t + 1) * cols + u] + lat.blank(t, u);
            }
            if u < u_len {
                b = logaddexp(b, beta[t * cols + u + 1] + lat.emit(t, u));
            }
            beta[t * cols + u] = b;
        }
    }

    let loglik = alpha[(t_len - 1) * cols + u_len] + lat.blank(t_len - 1, u_len);
    Ok((
        AlphaBeta {
            alpha: Tensor::new(vec![t_len, cols], alpha)?,
            beta: Tensor::new(vec![t_len, cols], beta)?,
        },
        loglik,
    ))
}

/// Transducer loss `-log P(Y|x)`.
pub fn loss(lat: &EmissionLattice) -> Result<f64> {
    forward_backward(lat).map(|(_, ll)| -ll)
}

/// Loss together with its gradient with respect to the lattice log-probabilities.
pub fn loss_and_grad(lat: &EmissionLattice) -> Result<(f64, Tensor)> {
    let (ab, loglik) = forward_backward(lat)?;
    let (t_len, u_len) = (lat.frames(), lat.labels());
    let mut grad = Tensor::zeros(lat.logp.shape());
    let alpha = &ab.alpha;
    let beta = &ab.beta;
    for t in 0..t_len {
        for u in 0..=u_len {
            let a = alpha.get2(t, u);
            if a == f64::NEG_INFINITY {
                continue;
            }
            // blank edge: to (t+1, u), or the terminating blank at the final node
            let after_blank = if t + 1 < t_len {
                Some(beta.get2(t + 1, u))
            } else if u == u_len {
                Some(0.0)
            } else {
                None
            };
            if let Some(b) = after_blank {
                let occ = (a + lat.blank(t, u) + b - loglik).exp();
                grad.set3(t, u, lat.blank_id, -occ);
            }
            if u < u_len {
                let occ = (a + lat.emit(t, u) + beta.get2(t, u + 1) - loglik).exp();
                grad.set3(t, u, lat.target[u], -occ);
            }
        }
    }
    Ok((-loglik, grad))
}

/// Gradient of the loss with respect to the lattice log-probabilities.
pub fn loss_grad(lat: &EmissionLattice) -> Result<Tensor> {
    loss_and_grad(lat).map(|(_, g)| g)
}

/// Enumerates every alignment explicitly and returns `-log` of their total probability.
///
/// Each of the `2^(T+U)` blank/label patterns is visited; a pattern is an alignment
/// when it has exactly `U` labels and ends in a blank. Only accepts `T + U <=`
/// [`ENUMERATION_BOUND`].
pub fn brute_force_loss(lat: &EmissionLattice) -> Result<f64> {
    lat.check_alignable()?;
    let (t_len, u_len) = (lat.frames(), lat.labels());
    let n = t_len + u_len;
    if n > ENUMERATION_BOUND {
        return invalid(format!(
            "T+U = {n} exceeds the enumeration bound {ENUMERATION_BOUND}"
        ));
    }
    let mut path_logps = Vec::new();
    for mask in 0u32..(1u32 << n) {
        // bit i set => symbol i is a label
        if mask.count_ones() as usize != u_len || mask & (1 << (n - 1)) != 0 {
            continue;
        }
        let (mut t, mut u, mut logp) = (0usize, 0usize, 0.0);
        for i in 0..n {
            if mask & (1 << i) != 0 {
                logp += lat.lp(t, u, lat.target[u]);
                u += 1;
            } else {
                logp += lat.lp(t, u, lat.blank_id);
                t += 1;
            }
        }
        debug_assert_eq!((t, u), (t_len, u_len));
        path_logps.push(logp);
    }
    Ok(-logsumexp(&path_logps))
}

/// Loss over a padded batch `[B, T_max, U_max+1, V+1]` with per-item lengths.
///
/// Returns the summed loss and a gradient of the same shape in which every padded
/// cell is exactly zero.
pub fn padded_batch_loss(
    logp: &Tensor,
    targets: &[Vec<usize>],
    frame_lens: &[usize],
) -> Result<(f64, Tensor)> {
    let shape = logp.shape();
    if shape.len() != 4 || shape[0] != targets.len() || shape[0] != frame_lens.len() {
        return Err(Error::Shape {
            op: "padded batch loss",
            left: shape.to_vec(),
            right: vec![targets.len(), frame_lens.len()],
        });
    }
    let (b_len, t_max, u_cols, k) = (shape[0], shape[1], shape[2], shape[3]);
    let mut grad = Tensor::zeros(shape);
    let mut total = 0.0;
    for b in 0..b_len {
        let (t_len, u_len) = (frame_lens[b], targets[b].len());
        if t_len > t_max || u_len + 1 > u_cols {
            return invalid(format!(
                "item {b}: lengths (T={t_len}, U={u_len}) exceed padded extents"
            ));
        }
        let mut sub = Vec::with_capacity(t_len * (u_len + 1) * k);
        for t in 0..t_len {
            for u in 0..=u_len {
                let off = ((b * t_max + t) * u_cols + u) * k;
                sub.extend_from_slice(&logp.data()[off..off + k]);
            }
        }
        let lat = EmissionLattice::new_unnormalized(
            Tensor::new(vec![t_len, u_len + 1, k], sub)?,
            targets[b].clone(),
        )?;
        let (l, g) = loss_and_grad(&lat)?;
        total += l;
        for t in 0..t_len {
            for u in 0..=u_len {
                let off = ((b * t_max + t) * u_cols + u) * k;
                let src = &g.data()[(t * (u_len + 1) + u) * k..(t * (u_len + 1) + u + 1) * k];
                grad.data_mut()[off..off + k].copy_from_slice(src);
            }
        }
    }
    Ok((total, grad))
}
