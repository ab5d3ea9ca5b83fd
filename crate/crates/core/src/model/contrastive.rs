//! Masked-anchor contrastive auxiliary loss and separation diagnostics.
//!
//! The anchor is the masked ground-truth hypothesis pushed through the same
//! encoder and text BiGRU as the QA path (weight sharing is structural: the
//! same parameter leaves are reused). Scores are plain dot products against
//! the N pooled hypothesis rows — no temperature, no normalization.

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::input::TokenSequence;
use crate::model::encoder::encode_batch;
use crate::model::gru::{bigru_sequence, pooled_hypotheses};
use crate::model::{ModelConfig, ModelVars};
use crate::scalar::Scalar;

/// Encode masked sequences (one per segment) into a 1×2d_t anchor through
/// the shared encode → text-BiGRU → max-pool pipeline.
pub fn encode_anchor<F: Scalar>(
    g: &mut Graph<F>,
    vars: &ModelVars,
    cfg: &ModelConfig,
    masked: &[TokenSequence],
) -> Result<NodeId> {
    let flat: Vec<&TokenSequence> = masked.iter().collect();
    let enc = encode_batch(g, vars, cfg, &flat)?; // T×d_t
    let per_t: Vec<NodeId> = (0..masked.len())
        .map(|t| g.slice(enc, 0, t, 1))
        .collect::<Result<_>>()?;
    let seq = bigru_sequence(g, vars, "text", &per_t, 1, cfg.d_t)?;
    pooled_hypotheses(g, &seq)
}

/// Dot-product scores of the N hypothesis rows against the anchor: N×1.
pub fn contrastive_scores<F: Scalar>(
    g: &mut Graph<F>,
    pooled_text: NodeId,
    anchor: NodeId,
) -> Result<NodeId> {
    let at = g.transpose(anchor)?;
    g.matmul(pooled_text, at)
}

/// Softmax cross-entropy over the scores with the ground-truth row positive.
pub fn contrastive_loss<F: Scalar>(
    g: &mut Graph<F>,
    scores: NodeId,
    correct_index: usize,
) -> Result<NodeId> {
    let row = g.transpose(scores)?;
    let probs = g.softmax(row, 1)?;
    g.cross_entropy(probs, correct_index)
}

/// Distance from the positive row to its nearest negative, per metric
/// independently. Cosine distance is 1 − cosine similarity; a zero-norm
/// vector makes the cosine distance 1 with a logged warning.
pub fn separation<F: Scalar>(rows: &[Vec<F>], correct_index: usize) -> (f64, f64) {
    let pos: Vec<f64> = rows[correct_index].iter().map(|x| x.to_f64_lossy()).collect();
    let mut best_euclid = f64::INFINITY;
    let mut best_cosine = f64::INFINITY;
    for (n, row) in rows.iter().enumerate() {
        if n == correct_index {
            continue;
        }
        let neg: Vec<f64> = row.iter().map(|x| x.to_f64_lossy()).collect();
        let euclid = pos
            .iter()
            .zip(&neg)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let dot: f64 = pos.iter().zip(&neg).map(|(a, b)| a * b).sum();
        let np = pos.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = neg.iter().map(|a| a * a).sum::<f64>().sqrt();
        let cosine = if np == 0.0 || nn == 0.0 {
            log::warn!("zero-norm representation in cosine distance; reporting 1");
            1.0
        } else {
            1.0 - dot / (np * nn)
        };
        best_euclid = best_euclid.min(euclid);
        best_cosine = best_cosine.min(cosine);
    }
    (best_euclid, best_cosine)
}

/// Mean nearest-negative separation over a set of examples.
pub fn separation_report<F: Scalar>(per_example: &[(Vec<Vec<F>>, usize)]) -> (f64, f64) {
    let mut se = 0.0;
    let mut sc = 0.0;
    for (rows, idx) in per_example {
        let (e, c) = separation(rows, *idx);
        se += e;
        sc += c;
    }
    let n = per_example.len() as f64;
    (se / n, sc / n)
}
