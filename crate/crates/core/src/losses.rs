//! Relational and contrastive pretraining objectives.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::numeric::{NumericError, Tape, Tensor, Var};
use crate::similarity::{check_stochastic, SimilarityError};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("batch of {got} is too small for {loss}: need at least {need}")]
    BatchTooSmall { loss: &'static str, need: usize, got: usize },
    #[error("target is not row-stochastic: {0}")]
    Target(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}

impl From<SimilarityError> for LossError {
    fn from(e: SimilarityError) -> Self {
        LossError::Target(e.to_string())
    }
}

/// A scalar loss on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LossValue {
    pub var: Var,
    pub value: f64,
    pub batch_size: usize,
}

fn finish(tape: &Tape, var: Var, batch_size: usize) -> Result<LossValue, LossError> {
    let value = tape.value(var).item()?;
    Ok(LossValue { var, value, batch_size })
}

/// Pairwise logits `normalize(z) normalize(z)^T / temperature`.
pub fn similarity_logits(tape: &mut Tape, z: Var, temperature: f64) -> Result<Var, NumericError> {
    let zn = tape.normalize_rows(z)?;
    let zt = tape.transpose(zn)?;
    let d = tape.matmul(zn, zt)?;
    if temperature == 1.0 {
        Ok(d)
    } else {
        tape.scale(d, 1.0 / temperature)
    }
}

/// `-(1/N) sum_ij t_ij log softmax(d)_ij`.
///
/// With `exclude_diagonal` the softmax runs over `j != i` and `t` must have
/// a zero diagonal.
pub fn mrl_loss(tape: &mut Tape, d: Var, t: &Tensor, exclude_diagonal: bool) -> Result<LossValue, LossError> {
    let n = tape.value(d).rows();
    if tape.value(d).dims() != t.dims() || t.rows() != t.cols() {
        return Err(NumericError::shape("mrl_loss", tape.value(d).shape(), t.shape()).into());
    }
    if n == 0 {
        return Err(LossError::BatchTooSmall { loss: "mrl", need: 1, got: 0 });
    }
    check_stochastic(t, 1e-6)?;
    if exclude_diagonal && (0..n).any(|i| t.get(i, i) != 0.0) {
        return Err(LossError::Target("diagonal must be zero when excluded".into()));
    }
    let logp = tape.row_log_softmax(d, exclude_diagonal)?;
    let tc = tape.constant(t.clone());
    let prod = tape.mul(tc, logp)?;
    let total = tape.reduce_sum(prod)?;
    let loss = tape.scale(total, -1.0 / n as f64)?;
    finish(tape, loss, n)
}

/// Plain-value loss, no tape.
pub fn mrl_loss_value(d: &Tensor, t: &Tensor) -> f64 {
    let s = d.row_softmax();
    let n = d.rows() as f64;
    -s.data()
        .iter()
        .zip(t.data())
        .map(|(&p, &q)| if q == 0.0 { 0.0 } else { q * p.ln() })
        .sum::<f64>()
        / n
}

/// Closed-form gradient `(softmax(d) - t) / N`.
pub fn mrl_gradient(d: &Tensor, t: &Tensor) -> Tensor {
    let n = d.rows() as f64;
    d.row_softmax().sub(t).expect("same shape").scale(1.0 / n)
}

/// `(1/N) sum_i H(t_i)`, the smallest value `mrl_loss` can take for `t`.
pub fn mean_row_entropy(t: &Tensor) -> f64 {
    let n = t.rows() as f64;
    -t.data().iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>() / n
}

#[derive(Debug, Clone, PartialEq)]
pub struct FreeSimilarities {
    pub d: Tensor,
    /// `max |softmax(d) - t|` at the end.
    pub max_error: f64,
    pub steps: usize,
}

/// Gradient descent on free logits `d` from zero, minimizing the summed
/// per-row cross-entropy against `t` (gradient `softmax(d) - t`).
pub fn optimize_free_similarities(t: &Tensor, lr: f64, steps: usize) -> Result<FreeSimilarities, LossError> {
    check_stochastic(t, 1e-6)?;
    if t.data().iter().any(|&v| v <= 0.0) {
        return Err(LossError::Target("entries must be strictly positive".into()));
    }
    let mut d = Tensor::zeros(&[t.rows(), t.cols()]);
    for _ in 0..steps {
        let g = d.row_softmax().sub(t)?;
        for (x, gi) in d.data_mut().iter_mut().zip(g.data()) {
            *x -= lr * gi;
        }
    }
    let max_error = d.row_softmax().max_abs_diff(t)?;
    Ok(FreeSimilarities { d, max_error, steps })
}

/// Relational loss between two views: `s1` from `z1 . z2 / tau`, targets `s2`
/// from `z2 . z2 / tau_m`, both over `k != i`. Gradient flows through `z1` only.
pub fn rl_loss_original(tape: &mut Tape, z1: Var, z2: Var, tau: f64, tau_m: f64) -> Result<LossValue, LossError> {
    let n = tape.value(z1).rows();
    if n < 2 {
        return Err(LossError::BatchTooSmall { loss: "rl", need: 2, got: n });
    }
    let z2c = tape.detach(z2);
    let z2t = tape.transpose(z2c)?;
    let cross = tape.matmul(z1, z2t)?;
    let cross = tape.scale(cross, 1.0 / tau)?;
    let logs1 = tape.row_log_softmax(cross, true)?;
    let own = tape.value(z2c).matmul(&tape.value(z2c).transpose())?.scale(1.0 / tau_m);
    let mut s2 = Tensor::zeros(&[n, n]);
    for i in 0..n {
        let off: Vec<f64> = (0..n).filter(|&k| k != i).map(|k| own.get(i, k)).collect();
        let p = crate::numeric::softmax(&off);
        for (slot, k) in (0..n).filter(|&k| k != i).enumerate() {
            s2.set(i, k, p[slot]);
        }
    }
    let s2c = tape.constant(s2);
    let prod = tape.mul(s2c, logs1)?;
    let total = tape.reduce_sum(prod)?;
    let loss = tape.scale(total, -1.0 / n as f64)?;
    finish(tape, loss, n)
}

/// Normalized-temperature cross-entropy: row `i` of `positives` is the
/// positive for anchor `i`, every other row a negative.
pub fn contrastive_loss(tape: &mut Tape, anchors: Var, positives: Var, temperature: f64) -> Result<LossValue, LossError> {
    let n = tape.value(anchors).rows();
    if n < 2 {
        return Err(LossError::BatchTooSmall { loss: "contrastive", need: 2, got: n });
    }
    let a = tape.normalize_rows(anchors)?;
    let p = tape.normalize_rows(positives)?;
    let pt = tape.transpose(p)?;
    let logits = tape.matmul(a, pt)?;
    let logits = tape.scale(logits, 1.0 / temperature)?;
    let logp = tape.row_log_softmax(logits, false)?;
    let eye = tape.constant(Tensor::identity(n));
    let diag = tape.mul(eye, logp)?;
    let total = tape.reduce_sum(diag)?;
    let loss = tape.scale(total, -1.0 / n as f64)?;
    finish(tape, loss, n)
}

/// `mean(max(0, margin + |a - p| - |a - n|))` over rows.
pub fn triplet_loss(tape: &mut Tape, anchor: Var, positive: Var, negative: Var, margin: f64) -> Result<LossValue, LossError> {
    let n = tape.value(anchor).rows();
    if n == 0 {
        return Err(LossError::BatchTooSmall { loss: "triplet", need: 1, got: 0 });
    }
    let ap = tape.sub(anchor, positive)?;
    let an = tape.sub(anchor, negative)?;
    let dap = tape.row_norm(ap)?;
    let dan = tape.row_norm(an)?;
    let gap = tape.sub(dap, dan)?;
    let m = tape.constant(Tensor::full(&[n, 1], margin));
    let pre = tape.add(gap, m)?;
    let hinge = tape.relu(pre)?;
    let loss = tape.reduce_mean(hinge)?;
    finish(tape, loss, n)
}

/// Negatives for in-batch triplets: anchor `i` is paired with a random
/// other molecule's row. Needs three molecules so the choice is not forced.
pub fn in_batch_negatives<R: Rng>(rng: &mut R, n: usize) -> Result<Arc<[usize]>, LossError> {
    if n < 3 {
        return Err(LossError::BatchTooSmall { loss: "triplet", need: 3, got: n });
    }
    let others: Vec<usize> = (0..n)
        .map(|i| {
            let pool: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            *pool.choose(rng).expect("n >= 3")
        })
        .collect();
    Ok(others.into())
}
