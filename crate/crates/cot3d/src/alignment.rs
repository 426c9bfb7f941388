//! Symmetric InfoNCE alignment objective with learnable temperature, and
//! retrieval metrics used as the desk-scale alignment quality signal.

use crate::error::{CotError, Result};
use crate::tensorkit::{ParamSet, Tape, Tensor, Var};

pub const TAU_INIT: f64 = 0.07;
pub const TAU_MIN: f64 = 1e-3;
pub const TAU_MAX: f64 = 10.0;

/// Learnable temperature stored as log(tau) so positivity is structural;
/// tau itself is clamped to (1e-3, 10) after each optimizer step.
#[derive(Debug, Clone)]
pub struct Temperature {
    idx: usize,
}

impl Temperature {
    pub fn register(params: &mut ParamSet) -> Self {
        let idx = params.add("temp.log_tau", Tensor::scalar(TAU_INIT.ln()));
        Self { idx }
    }

    pub fn block_index(&self) -> usize {
        self.idx
    }

    pub fn tau(&self, params: &ParamSet) -> f64 {
        params.get(self.idx).value.get(0, 0).exp()
    }

    /// Clamp tau back into its stable range; call after every step.
    pub fn clamp(&self, params: &mut ParamSet) {
        let block = params.get_mut(self.idx);
        let log_tau = block.value.get(0, 0);
        let clamped = log_tau.clamp(TAU_MIN.ln(), TAU_MAX.ln());
        block.value.set(0, 0, clamped);
    }
}

/// B matched rows of unit-norm embeddings; pair i aligns row i to row i.
#[derive(Debug, Clone)]
pub struct AlignBatch {
    pub z3d: Tensor,
    pub ztext: Tensor,
}

impl AlignBatch {
    pub fn new(z3d: Tensor, ztext: Tensor) -> Result<Self> {
        if z3d.rows() == 0 {
            return Err(CotError::Data("empty alignment batch".into()));
        }
        if !z3d.same_shape(&ztext) {
            return Err(CotError::ShapeMismatch {
                op: "AlignBatch",
                lhs: vec![z3d.rows(), z3d.cols()],
                rhs: vec![ztext.rows(), ztext.cols()],
            });
        }
        for t in [&z3d, &ztext] {
            for r in 0..t.rows() {
                let norm: f64 = t.row_slice(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-6 {
                    return Err(CotError::Validation(format!(
                        "batch row {r} has norm {norm}, expected 1"
                    )));
                }
            }
        }
        Ok(Self { z3d, ztext })
    }

    pub fn size(&self) -> usize {
        self.z3d.rows()
    }
}

/// Build the symmetric InfoNCE loss on a tape.
///
/// `S = Z3d Ztextᵀ / tau`; loss is the mean of row-wise and column-wise
/// cross entropy against diagonal targets, halved.
pub fn info_nce_on_tape(
    tape: &mut Tape,
    z3d: Var,
    ztext: Var,
    log_tau: Var,
) -> Result<Var> {
    let b = tape.value(z3d).rows();
    if b == 0 {
        return Err(CotError::Data("empty alignment batch".into()));
    }
    let neg_log_tau = tape.neg(log_tau);
    let inv_tau = tape.exp(neg_log_tau);
    let zt = tape.transpose(ztext);
    let sims = tape.matmul(z3d, zt)?;
    let scaled = tape.mul_scalar_var(sims, inv_tau)?;

    let row_lse = tape.logsumexp_rows(scaled);
    let diag = tape.diag(scaled)?;
    let row_ce = tape.sub(row_lse, diag)?;
    let row_loss = tape.mean_all(row_ce);

    let scaled_t = tape.transpose(scaled);
    let col_lse = tape.logsumexp_rows(scaled_t);
    let col_diag = tape.diag(scaled_t)?;
    let col_ce = tape.sub(col_lse, col_diag)?;
    let col_loss = tape.mean_all(col_ce);

    let total = tape.add(row_loss, col_loss)?;
    Ok(tape.scale(total, 0.5))
}

/// Evaluate the loss for a plain batch at a fixed temperature.
pub fn info_nce_loss(batch: &AlignBatch, tau: f64) -> Result<f64> {
    if tau <= 0.0 {
        return Err(CotError::Range(format!("tau {tau} must be positive")));
    }
    let mut tape = Tape::new();
    let z3d = tape.leaf(batch.z3d.clone());
    let ztext = tape.leaf(batch.ztext.clone());
    let log_tau = tape.leaf(Tensor::scalar(tau.ln()));
    let loss = info_nce_on_tape(&mut tape, z3d, ztext, log_tau)?;
    Ok(tape.value(loss).get(0, 0))
}

/// Loss plus gradients w.r.t. both embedding matrices and log tau.
pub fn info_nce_with_grads(
    batch: &AlignBatch,
    tau: f64,
) -> Result<(f64, Tensor, Tensor, f64)> {
    let mut tape = Tape::new();
    let z3d = tape.leaf(batch.z3d.clone());
    let ztext = tape.leaf(batch.ztext.clone());
    let log_tau = tape.leaf(Tensor::scalar(tau.ln()));
    let loss = info_nce_on_tape(&mut tape, z3d, ztext, log_tau)?;
    let value = tape.value(loss).get(0, 0);
    tape.backward(loss)?;
    Ok((
        value,
        tape.grad(z3d),
        tape.grad(ztext),
        tape.grad(log_tau).get(0, 0),
    ))
}

/// Top-1 / top-5 retrieval accuracy: for each z_3d row, rank all text rows
/// by dot product (ties by lowest index); hit iff the matching index ranks
/// within k.
pub fn retrieval_metrics(z3d: &Tensor, ztext: &Tensor) -> Result<(f64, f64)> {
    let q = z3d.rows();
    if q == 0 {
        return Err(CotError::Data("empty retrieval pool".into()));
    }
    if !z3d.same_shape(ztext) {
        return Err(CotError::ShapeMismatch {
            op: "retrieval_metrics",
            lhs: vec![z3d.rows(), z3d.cols()],
            rhs: vec![ztext.rows(), ztext.cols()],
        });
    }
    let mut top1 = 0usize;
    let mut top5 = 0usize;
    for i in 0..q {
        let scores: Vec<f64> = (0..q)
            .map(|j| {
                z3d.row_slice(i)
                    .iter()
                    .zip(ztext.row_slice(j))
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        // rank of the matching index: candidates strictly better, plus
        // equal-scored candidates with a lower index
        let rank = (0..q)
            .filter(|&j| {
                scores[j] > scores[i] || (scores[j] == scores[i] && j < i)
            })
            .count();
        if rank == 0 {
            top1 += 1;
        }
        if rank < 5 {
            top5 += 1;
        }
    }
    Ok((top1 as f64 / q as f64, top5 as f64 / q as f64))
}

/// Retrieval for one query against an arbitrary candidate pool; returns the
/// argmax index (ties by lowest index).
pub fn retrieve_best(query: &Tensor, pool: &Tensor) -> Result<usize> {
    if pool.rows() == 0 {
        return Err(CotError::Data("empty candidate pool".into()));
    }
    if query.cols() != pool.cols() {
        return Err(CotError::ShapeMismatch {
            op: "retrieve_best",
            lhs: vec![query.rows(), query.cols()],
            rhs: vec![pool.rows(), pool.cols()],
        });
    }
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for j in 0..pool.rows() {
        let score: f64 = query
            .row_slice(0)
            .iter()
            .zip(pool.row_slice(j))
            .map(|(a, b)| a * b)
            .sum();
        if score > best_score {
            best_score = score;
            best = j;
        }
    }
    Ok(best)
}
