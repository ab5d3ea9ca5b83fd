//! Temporal span head: per-position start/end classifiers on the text-stream
//! BiGRU outputs, max-pooled across the N hypotheses, softmaxed over T.
//! Span loss is −½(log p_start[s] + log p_end[e]).

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::model::ModelVars;
use crate::scalar::Scalar;

/// From T nodes of shape N×2d_t, produce (start_probs, end_probs), each a
/// 1×T simplex row.
pub fn span_probs<F: Scalar>(
    g: &mut Graph<F>,
    vars: &ModelVars,
    text_seq: &[NodeId],
) -> Result<(NodeId, NodeId)> {
    let head = |g: &mut Graph<F>, which: &str| -> Result<NodeId> {
        let w = vars.get(&format!("span.{which}.w"));
        let b = vars.get(&format!("span.{which}.b"));
        let per_t: Vec<NodeId> = text_seq
            .iter()
            .map(|&seq_t| {
                let logit = g.matmul(seq_t, w)?; // N×1
                let logit = g.add(logit, b)?;
                g.max_pool(logit, 0) // scalar-per-segment, max over hypotheses
            })
            .collect::<Result<_>>()?;
        let row = g.concat(0, &per_t)?; // length-T vector
        g.softmax(row, 0)
    };
    Ok((head(g, "start")?, head(g, "end")?))
}

/// −½(log p_start[s] + log p_end[e]); probabilities clamped as in
/// cross-entropy.
pub fn span_loss<F: Scalar>(
    g: &mut Graph<F>,
    start_probs: NodeId,
    end_probs: NodeId,
    gt: (usize, usize),
) -> Result<NodeId> {
    let (s, e) = gt;
    let ls = g.cross_entropy(start_probs, s)?;
    let le = g.cross_entropy(end_probs, e)?;
    let sum = g.add(ls, le)?;
    Ok(g.scale(sum, F::from_f64_lossy(0.5)))
}
