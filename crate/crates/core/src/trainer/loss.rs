//! Candidate scoring and the training objectives.

use std::sync::Arc;

use crate::diffcore::{SparseMatrix, Tape, Tensor, Var};
use crate::hypercore::NodeId;

use super::{Result, TrainError};

/// Lower clamp for every log argument.
pub const LOG_EPS: f64 = 1e-7;

/// Mean-pools the known member rows of `p_star` (a global `N x d` table)
/// and applies the logistic predictor. Members are summed in id order, so
/// the result does not depend on the order of `candidate`.
pub fn predict_candidate(p_star: &Tensor, known: &[bool], candidate: &[NodeId], w: &[f64], b: f64) -> Result<f64> {
    if candidate.len() < 2 {
        return Err(TrainError::CandidateTooSmall(candidate.len()));
    }
    let mut members: Vec<usize> = candidate
        .iter()
        .map(|n| n.index())
        .filter(|&i| known.get(i).copied().unwrap_or(false))
        .collect();
    if members.is_empty() {
        return Err(TrainError::UnknownNode);
    }
    members.sort_unstable();
    members.dedup();
    let d = p_star.cols();
    if w.len() != d {
        return Err(TrainError::LengthMismatch {
            left: w.len(),
            right: d,
        });
    }
    let mut pooled = vec![0.0; d];
    let scale = 1.0 / members.len() as f64;
    for &i in &members {
        for (acc, x) in pooled.iter_mut().zip(p_star.row(i)) {
            *acc += scale * x;
        }
    }
    let z: f64 = pooled.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
    Ok(1.0 / (1.0 + (-z).exp()))
}

/// Sparse mean-pooling operator over known nodes. Candidates with no known
/// node get no row; the second value lists the candidates that were kept.
pub fn candidate_pooling(
    candidates: &[Vec<NodeId>],
    known: &[bool],
    node_count: usize,
) -> Result<(Arc<SparseMatrix>, Vec<usize>)> {
    let mut entries = Vec::new();
    let mut kept = Vec::new();
    for (c, cand) in candidates.iter().enumerate() {
        let mut members: Vec<usize> = cand
            .iter()
            .map(|n| n.index())
            .filter(|&i| i < node_count && known.get(i).copied().unwrap_or(false))
            .collect();
        members.sort_unstable();
        members.dedup();
        if members.is_empty() {
            continue;
        }
        let row = kept.len();
        let v = 1.0 / members.len() as f64;
        entries.extend(members.into_iter().map(|i| (row, i, v)));
        kept.push(c);
    }
    let m = SparseMatrix::new(kept.len(), node_count, entries)?;
    Ok((Arc::new(m), kept))
}

/// Probabilities `sigmoid(pool(P*) w + b)` as an `n x 1` column.
pub fn predict_scores(tape: &mut Tape, pooling: &Arc<SparseMatrix>, p_star: Var, w: Var, b: Var) -> Result<Var> {
    let pooled = tape.spmm(pooling, p_star)?;
    let z = tape.matmul(pooled, w)?;
    let rows = tape.value(z).rows();
    let bb = tape.broadcast_row(b, rows)?;
    let z = tape.add(z, bb)?;
    Ok(tape.sigmoid(z)?)
}

fn mean_column(tape: &mut Tape, col: Var) -> Result<Var> {
    let row = tape.transpose(col)?;
    Ok(tape.row_mean(row)?)
}

/// Mean binary cross-entropy with predictions clamped to `[eps, 1 - eps]`.
pub fn bce_loss(tape: &mut Tape, y_hat: Var, labels: &[u8]) -> Result<Var> {
    let n = tape.value(y_hat).numel();
    if n == 0 || labels.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    if n != labels.len() {
        return Err(TrainError::LengthMismatch {
            left: n,
            right: labels.len(),
        });
    }
    let y_hat = if tape.value(y_hat).shape() == [n, 1] {
        y_hat
    } else {
        let t = tape.value(y_hat).clone();
        let col = tape.constant(Tensor::zeros(&[n, 1]))?;
        let _ = (t, col);
        return Err(TrainError::LengthMismatch { left: n, right: 1 });
    };
    let ones = tape.constant(Tensor::filled(&[n, 1], 1.0))?;
    let lo = tape.clamp_below(y_hat, LOG_EPS)?;
    let comp = tape.sub(ones, lo)?;
    let comp = tape.clamp_below(comp, LOG_EPS)?; // 1 - clamp(y_hat)
    let clamped = tape.sub(ones, comp)?;
    let log_p = tape.ln(clamped)?;
    let log_q = tape.ln(comp)?;
    let y: Vec<f64> = labels.iter().map(|&v| f64::from(v)).collect();
    let not_y: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
    let y = tape.constant(Tensor::column_vector(y))?;
    let not_y = tape.constant(Tensor::column_vector(not_y))?;
    let a = tape.mul(y, log_p)?;
    let b = tape.mul(not_y, log_q)?;
    let ll = tape.add(a, b)?;
    let mean = mean_column(tape, ll)?;
    Ok(tape.scale(mean, -1.0)?)
}

/// `-mean(log(clamp((1 + cos(Q_S[i], Q_T[i])) / 2)))`.
pub fn contrastive_loss(tape: &mut Tape, q_structural: Var, q_temporal: Var) -> Result<Var> {
    let rows = tape.value(q_structural).rows();
    if rows == 0 {
        return Err(TrainError::EmptyBatch);
    }
    let c = tape.row_cosine(q_structural, q_temporal)?;
    let half = tape.constant(Tensor::filled(&[rows, 1], 0.5))?;
    let s = tape.scale(c, 0.5)?;
    let s = tape.add(s, half)?;
    let s = tape.clamp_below(s, LOG_EPS)?;
    let l = tape.ln(s)?;
    let mean = mean_column(tape, l)?;
    Ok(tape.scale(mean, -1.0)?)
}

/// `L_pred + beta * L_con`; a missing contrastive term counts as zero.
pub fn total_loss(tape: &mut Tape, pred: Var, con: Option<Var>, beta: f64) -> Result<Var> {
    if beta.is_nan() || beta < 0.0 {
        return Err(TrainError::InvalidConfig(format!("beta must be >= 0, got {beta}")));
    }
    match con {
        Some(c) if beta != 0.0 => {
            let scaled = tape.scale(c, beta)?;
            Ok(tape.add(pred, scaled)?)
        }
        _ => Ok(pred),
    }
}
