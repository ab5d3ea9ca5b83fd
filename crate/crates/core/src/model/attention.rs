//! Locally and globally aligned attention over frame features.
//!
//! Each frame vector is projected into text space through M (d_v×d_t); the
//! score of frame i for hypothesis row (n,t) is the dot product of the
//! projected frame with that row's text encoding. Local attention softmaxes
//! over the I frames of segment t only; global attention softmaxes over all
//! T·I frames of the clip. No score scaling — the raw dot product is used.

use crate::error::{McvqaError, Result};
use crate::graph::{Graph, NodeId};
use crate::scalar::Scalar;

fn check_scores<F: Scalar>(
    g: &Graph<F>,
    scores: NodeId,
    n: usize,
    t_base: usize,
) -> Result<()> {
    let v = g.value(scores);
    if let Some(pos) = v.data().iter().position(|x| !x.is_finite()) {
        return Err(McvqaError::Numeric(format!(
            "non-finite attention score at hypothesis {n}, segment-group start {t_base}, frame {pos}"
        )));
    }
    Ok(())
}

fn attend_group<F: Scalar>(
    g: &mut Graph<F>,
    projected: NodeId,
    h_nt: NodeId,
    n: usize,
    t_base: usize,
) -> Result<(NodeId, NodeId)> {
    let ht = g.transpose(h_nt)?;
    let scores = g.matmul(projected, ht)?;
    check_scores(g, scores, n, t_base)?;
    let alpha = g.softmax(scores, 0)?;
    let alpha_t = g.transpose(alpha)?;
    let out = g.matmul(alpha_t, projected)?;
    Ok((alpha, out))
}

/// Locally aligned attention: output (n,t) mixes only the I frames of
/// segment t, so frames of other segments contribute exactly nothing.
/// Also returns the per-group attention weights (I×1 simplex columns).
pub fn local_attend_full<F: Scalar>(
    g: &mut Graph<F>,
    frames: &[NodeId],
    h_t: &[Vec<NodeId>],
    m: NodeId,
) -> Result<Vec<Vec<(NodeId, NodeId)>>> {
    let projected: Vec<NodeId> = frames
        .iter()
        .map(|&f| g.matmul(f, m))
        .collect::<Result<_>>()?;
    h_t.iter()
        .enumerate()
        .map(|(n, row)| {
            if row.len() != frames.len() {
                return Err(McvqaError::Dimension(format!(
                    "hypothesis {n} has {} segments, expected {}",
                    row.len(),
                    frames.len()
                )));
            }
            row.iter()
                .enumerate()
                .map(|(t, &h_nt)| attend_group(g, projected[t], h_nt, n, t))
                .collect()
        })
        .collect()
}

pub fn local_attend<F: Scalar>(
    g: &mut Graph<F>,
    frames: &[NodeId],
    h_t: &[Vec<NodeId>],
    m: NodeId,
) -> Result<Vec<Vec<NodeId>>> {
    Ok(drop_weights(local_attend_full(g, frames, h_t, m)?))
}

/// Globally aligned attention: every output (n,t) softmaxes over all T·I
/// frames of the clip (the ablation baseline).
pub fn global_attend_full<F: Scalar>(
    g: &mut Graph<F>,
    frames: &[NodeId],
    h_t: &[Vec<NodeId>],
    m: NodeId,
) -> Result<Vec<Vec<(NodeId, NodeId)>>> {
    let all = g.concat(0, frames)?;
    let projected = g.matmul(all, m)?;
    h_t.iter()
        .enumerate()
        .map(|(n, row)| {
            row.iter()
                .map(|&h_nt| attend_group(g, projected, h_nt, n, 0))
                .collect()
        })
        .collect()
}

pub fn global_attend<F: Scalar>(
    g: &mut Graph<F>,
    frames: &[NodeId],
    h_t: &[Vec<NodeId>],
    m: NodeId,
) -> Result<Vec<Vec<NodeId>>> {
    Ok(drop_weights(global_attend_full(g, frames, h_t, m)?))
}

fn batched_group<F: Scalar>(
    g: &mut Graph<F>,
    projected: NodeId,
    x_t: NodeId,
    t: usize,
) -> Result<NodeId> {
    let xt = g.transpose(x_t)?;
    let scores = g.matmul(projected, xt)?; // group_size × N
    if let Some(pos) = g.value(scores).data().iter().position(|x| !x.is_finite()) {
        let n_cols = g.value(scores).cols();
        return Err(McvqaError::Numeric(format!(
            "non-finite attention score at hypothesis {}, segment {t}, frame {}",
            pos % n_cols,
            pos / n_cols
        )));
    }
    let alpha = g.softmax(scores, 0)?; // per-hypothesis column softmax
    let at = g.transpose(alpha)?;
    g.matmul(at, projected) // N × d_t
}

/// Column-batched local attention: `x_ts[t]` holds the N text rows of
/// segment t; returns per-segment N×d_t attended outputs. Equivalent to
/// [`local_attend`] up to float summation order.
pub fn local_attend_batched<F: Scalar>(
    g: &mut Graph<F>,
    frames: &[NodeId],
    x_ts: &[NodeId],
    m: NodeId,
) -> Result<Vec<NodeId>> {
    if frames.len() != x_ts.len() {
        return Err(McvqaError::Dimension(format!(
            "{} frame groups vs {} text blocks",
            frames.len(),
            x_ts.len()
        )));
    }
    frames
        .iter()
        .zip(x_ts)
        .enumerate()
        .map(|(t, (&f, &x_t))| {
            let p = g.matmul(f, m)?;
            batched_group(g, p, x_t, t)
        })
        .collect()
}

/// Column-batched global attention: every segment's output softmaxes over
/// all T·I projected frames.
pub fn global_attend_batched<F: Scalar>(
    g: &mut Graph<F>,
    frames: &[NodeId],
    x_ts: &[NodeId],
    m: NodeId,
) -> Result<Vec<NodeId>> {
    let all = g.concat(0, frames)?;
    let projected = g.matmul(all, m)?;
    x_ts.iter()
        .enumerate()
        .map(|(t, &x_t)| batched_group(g, projected, x_t, t))
        .collect()
}

fn drop_weights(full: Vec<Vec<(NodeId, NodeId)>>) -> Vec<Vec<NodeId>> {
    full.into_iter()
        .map(|row| row.into_iter().map(|(_, out)| out).collect())
        .collect()
}
