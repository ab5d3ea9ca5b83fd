//! Hypothesis text encoder and visual feature pass-through.
//!
//! Each token sequence becomes token + type + position embeddings, an
//! optional single self-attention block, then pad-masked mean pooling to one
//! d_t vector — the toy stand-in for a CLS hidden state. The token-type
//! embedding is fractional: scale s ∈ {1/3, 2/3, 1} contributes exactly
//! s·E_type1, scale 0 contributes E_type0.

use crate::corpus::ClipExample;
use crate::error::{McvqaError, Result};
use crate::graph::{Graph, NodeId};
use crate::input::TokenSequence;
use crate::model::{ModelConfig, ModelVars};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const ATTN_MASK_BIAS: f64 = -1e9;

/// Encode one padded sequence to a pooled 1×d_t vector.
pub fn encode_sequence<F: Scalar>(
    g: &mut Graph<F>,
    vars: &ModelVars,
    cfg: &ModelConfig,
    seq: &TokenSequence,
) -> Result<NodeId> {
    let l = seq.len();
    if l != cfg.l_max {
        return Err(McvqaError::Dimension(format!(
            "sequence length {l} != l_max {}",
            cfg.l_max
        )));
    }
    if let Some(&bad) = seq.ids.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(McvqaError::Vocabulary(format!(
            "token id {bad} outside vocabulary of size {}",
            cfg.vocab_size
        )));
    }

    let tok = g.embed(vars.get("embed.token"), &seq.ids)?;

    // fractional type embedding: scale column times E_type1, plus an
    // indicator column times E_type0. With multi-token-type disabled every
    // nonzero scale collapses to 1 (single segment type).
    let mut s_col = Vec::with_capacity(l);
    let mut z_col = Vec::with_capacity(l);
    for &sc in &seq.type_scale {
        let sc = if cfg.use_multi_token_type || sc == 0.0 {
            sc
        } else {
            1.0
        };
        s_col.push(F::from_f64_lossy(sc));
        z_col.push(if sc == 0.0 { F::one() } else { F::zero() });
    }
    let s_col = g.constant(Tensor::new(vec![l, 1], s_col)?);
    let z_col = g.constant(Tensor::new(vec![l, 1], z_col)?);
    let type1 = g.matmul(s_col, vars.get("embed.type1"))?;
    let type0 = g.matmul(z_col, vars.get("embed.type0"))?;

    let mut x = g.add(tok, type1)?;
    x = g.add(x, type0)?;
    x = g.add(x, vars.get("embed.pos"))?;

    if cfg.use_self_attention {
        let q = g.matmul(x, vars.get("attn.wq"))?;
        let k = g.matmul(x, vars.get("attn.wk"))?;
        let v = g.matmul(x, vars.get("attn.wv"))?;
        let kt = g.transpose(k)?;
        let mut scores = g.matmul(q, kt)?;
        // keys at pad positions are unreachable
        let mut bias = vec![F::zero(); l * l];
        for (j, &pad) in seq.pad_mask.iter().enumerate() {
            if pad {
                for i in 0..l {
                    bias[i * l + j] = F::from_f64_lossy(ATTN_MASK_BIAS);
                }
            }
        }
        let bias = g.constant(Tensor::new(vec![l, l], bias)?);
        scores = g.add(scores, bias)?;
        let alpha = g.softmax(scores, 1)?;
        let mixed = g.matmul(alpha, v)?;
        let mixed = g.matmul(mixed, vars.get("attn.wo"))?;
        x = g.add(x, mixed)?;
    }

    // pad-masked mean pooling as a 1×L row times L×d_t
    let count = seq.pad_mask.iter().filter(|&&p| !p).count();
    let w = F::from_f64_lossy(1.0 / count as f64);
    let row: Vec<F> = seq
        .pad_mask
        .iter()
        .map(|&p| if p { F::zero() } else { w })
        .collect();
    let row = g.constant(Tensor::new(vec![1, l], row)?);
    g.matmul(row, x)
}

/// Encode many sequences in one set of batched graph ops: a single embed
/// gather, one matmul per type-embedding component, a tiled position table,
/// and one pooling matmul. Row k of the (S×d_t) output is the pooled
/// encoding of `seqs[k]`. Falls back to per-sequence encoding when the
/// self-attention block is enabled (its mixing is per-sequence).
pub fn encode_batch<F: Scalar>(
    g: &mut Graph<F>,
    vars: &ModelVars,
    cfg: &ModelConfig,
    seqs: &[&TokenSequence],
) -> Result<NodeId> {
    if cfg.use_self_attention {
        let rows: Vec<NodeId> = seqs
            .iter()
            .map(|s| encode_sequence(g, vars, cfg, s))
            .collect::<Result<_>>()?;
        return g.concat(0, &rows);
    }
    let s_count = seqs.len();
    let l = cfg.l_max;
    let mut all_ids = Vec::with_capacity(s_count * l);
    let mut s_col = Vec::with_capacity(s_count * l);
    let mut z_col = Vec::with_capacity(s_count * l);
    let mut pool = vec![F::zero(); s_count * s_count * l];
    for (k, seq) in seqs.iter().enumerate() {
        if seq.len() != l {
            return Err(McvqaError::Dimension(format!(
                "sequence length {} != l_max {l}",
                seq.len()
            )));
        }
        if let Some(&bad) = seq.ids.iter().find(|&&id| id >= cfg.vocab_size) {
            return Err(McvqaError::Vocabulary(format!(
                "token id {bad} outside vocabulary of size {}",
                cfg.vocab_size
            )));
        }
        all_ids.extend_from_slice(&seq.ids);
        let count = seq.pad_mask.iter().filter(|&&p| !p).count();
        let w = F::from_f64_lossy(1.0 / count as f64);
        for (i, (&sc, &pad)) in seq.type_scale.iter().zip(&seq.pad_mask).enumerate() {
            let sc = if cfg.use_multi_token_type || sc == 0.0 {
                sc
            } else {
                1.0
            };
            s_col.push(F::from_f64_lossy(sc));
            z_col.push(if sc == 0.0 { F::one() } else { F::zero() });
            if !pad {
                pool[k * s_count * l + k * l + i] = w;
            }
        }
    }
    let tok = g.embed(vars.get("embed.token"), &all_ids)?;
    let s_col = g.constant(Tensor::new(vec![s_count * l, 1], s_col)?);
    let z_col = g.constant(Tensor::new(vec![s_count * l, 1], z_col)?);
    let type1 = g.matmul(s_col, vars.get("embed.type1"))?;
    let type0 = g.matmul(z_col, vars.get("embed.type0"))?;
    let pos = g.concat(0, &vec![vars.get("embed.pos"); s_count])?;
    let mut x = g.add(tok, type1)?;
    x = g.add(x, type0)?;
    x = g.add(x, pos)?;
    let pool = g.constant(Tensor::new(vec![s_count, s_count * l], pool)?);
    g.matmul(pool, x)
}

/// Encode a full N×T hypothesis grid.
pub fn encode_text<F: Scalar>(
    g: &mut Graph<F>,
    vars: &ModelVars,
    cfg: &ModelConfig,
    seqs: &[Vec<TokenSequence>],
) -> Result<Vec<Vec<NodeId>>> {
    seqs.iter()
        .map(|row| {
            row.iter()
                .map(|s| encode_sequence(g, vars, cfg, s))
                .collect()
        })
        .collect()
}

/// Frame features as per-segment I×d_v constants. The same node serves all N
/// hypotheses, so the tiled slices are identical by construction.
pub fn encode_visual<F: Scalar>(
    g: &mut Graph<F>,
    cfg: &ModelConfig,
    example: &ClipExample,
) -> Result<Vec<NodeId>> {
    if example.frames.len() != cfg.t_segments {
        return Err(McvqaError::Validation(format!(
            "clip {}: {} frame groups, expected {}",
            example.clip_id,
            example.frames.len(),
            cfg.t_segments
        )));
    }
    example
        .frames
        .iter()
        .enumerate()
        .map(|(t, seg)| {
            if seg.len() != cfg.i_frames || seg.iter().any(|f| f.len() != cfg.d_v) {
                return Err(McvqaError::Validation(format!(
                    "clip {}: segment {t} is not {}x{}",
                    example.clip_id, cfg.i_frames, cfg.d_v
                )));
            }
            let data: Vec<F> = seg
                .iter()
                .flat_map(|f| f.iter().map(|&x| F::from_f64_lossy(x as f64)))
                .collect();
            Ok(g.constant(Tensor::new(vec![cfg.i_frames, cfg.d_v], data)?))
        })
        .collect()
}
