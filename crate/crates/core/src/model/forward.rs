//! Whole-example graph assembly: text encoding, aligned attention, the two
//! BiGRU streams, and the QA / span / contrastive losses combined as
//! L = λ_qa·L_qa + λ_span·L_span + λ_cont·L_cont. Disabled components build
//! no graph at all.

use crate::corpus::ClipExample;
use crate::error::{McvqaError, Result};
use crate::graph::{Graph, NodeId};
use crate::input::{self, TokenSequence};
use crate::model::attention::{global_attend_batched, local_attend_batched};
use crate::model::contrastive::{contrastive_loss, contrastive_scores, encode_anchor};
use crate::model::encoder::{encode_batch, encode_visual};
use crate::model::gru::{bigru_sequence, pooled_hypotheses};
use crate::model::heads::{qa_loss, stream_logits};
use crate::model::span::{span_loss, span_probs};
use crate::model::{AttentionMode, ModelConfig, ModelVars};
use crate::scalar::Scalar;
use rand::Rng;

/// Loss weighting and component switches for one forward build.
#[derive(Debug, Clone)]
pub struct ForwardOptions {
    pub lambda_qa: f64,
    pub lambda_span: f64,
    pub lambda_cont: f64,
    pub with_span: bool,
    pub with_cont: bool,
}

impl ForwardOptions {
    /// QA path only — what inference uses.
    pub fn inference() -> Self {
        ForwardOptions {
            lambda_qa: 1.0,
            lambda_span: 0.0,
            lambda_cont: 0.0,
            with_span: false,
            with_cont: false,
        }
    }
}

/// Everything a forward build needs besides parameters and frames.
#[derive(Debug, Clone)]
pub struct ExampleInputs {
    /// N hypotheses × T segments of padded token sequences.
    pub seqs: Vec<Vec<TokenSequence>>,
    pub correct_index: usize,
    pub span: Option<(usize, usize)>,
    /// Masked ground-truth hypothesis, one sequence per segment; required
    /// when the contrastive loss is enabled.
    pub anchor: Option<Vec<TokenSequence>>,
}

/// Hypothesis sequences for the QA stage: the clip's question paired with
/// each answer option across every segment.
pub fn qa_sequences(ex: &ClipExample, l_max: usize) -> Result<Vec<Vec<TokenSequence>>> {
    ex.answers
        .iter()
        .map(|ans| {
            ex.subtitles
                .iter()
                .zip(&ex.objects)
                .map(|(sub, obj)| input::build(&ex.question, ans, &sub.tokens, obj, l_max))
                .collect()
        })
        .collect()
}

/// QA-stage inputs; when `mask_rng` is given, the anchor is a fresh masked
/// draw of the ground-truth hypothesis.
pub fn qa_inputs<R: Rng>(
    ex: &ClipExample,
    l_max: usize,
    mask_p: f64,
    mask_rng: Option<&mut R>,
) -> Result<ExampleInputs> {
    let seqs = qa_sequences(ex, l_max)?;
    let anchor = mask_rng.map(|rng| {
        seqs[ex.correct_index]
            .iter()
            .map(|s| input::mask_for_anchor(s, mask_p, rng))
            .collect()
    });
    Ok(ExampleInputs {
        seqs,
        correct_index: ex.correct_index,
        span: ex.span,
        anchor,
    })
}

pub struct ForwardResult {
    pub total: NodeId,
    pub l_qa: NodeId,
    pub l_span: Option<NodeId>,
    pub l_cont: Option<NodeId>,
    /// ŷ over the N hypotheses.
    pub probs: Vec<f64>,
    pub start_probs: Option<Vec<f64>>,
    pub end_probs: Option<Vec<f64>>,
    /// Pooled text rows 𝓗_t (N×2d_t), for separation diagnostics.
    pub pooled_text: Vec<Vec<f64>>,
}

/// Build the full model graph for one example.
pub fn forward<F: Scalar>(
    g: &mut Graph<F>,
    vars: &ModelVars,
    cfg: &ModelConfig,
    ex: &ExampleInputs,
    frames: &[NodeId],
    opts: &ForwardOptions,
) -> Result<ForwardResult> {
    let n = ex.seqs.len();
    if n != cfg.n_answers {
        return Err(McvqaError::Dimension(format!(
            "{n} hypotheses, config expects {}",
            cfg.n_answers
        )));
    }
    // encode all N×T sequences in one batched pass, segment-major so the
    // per-segment N×d_t blocks are contiguous row ranges
    let t_len = frames.len();
    let flat: Vec<&TokenSequence> = (0..t_len)
        .flat_map(|t| ex.seqs.iter().map(move |row| &row[t]))
        .collect();
    let enc = encode_batch(g, vars, cfg, &flat)?;
    let text_in: Vec<NodeId> = (0..t_len)
        .map(|t| g.slice(enc, 0, t * n, n))
        .collect::<Result<_>>()?;
    let vis_in = match cfg.attention_mode {
        AttentionMode::Local => local_attend_batched(g, frames, &text_in, vars.get("align.m"))?,
        AttentionMode::Global => global_attend_batched(g, frames, &text_in, vars.get("align.m"))?,
    };
    let tseq = bigru_sequence(g, vars, "text", &text_in, n, cfg.d_t)?;
    let vseq = bigru_sequence(g, vars, "vis", &vis_in, n, cfg.d_t)?;
    let pooled_t = pooled_hypotheses(g, &tseq)?;
    let pooled_v = pooled_hypotheses(g, &vseq)?;

    let s_t = stream_logits(g, vars, "text", pooled_t)?;
    let s_v = stream_logits(g, vars, "vis", pooled_v)?;
    let (probs_node, l_qa) = qa_loss(g, s_v, s_t, ex.correct_index)?;

    let mut total = g.scale(l_qa, F::from_f64_lossy(opts.lambda_qa));
    let mut l_span = None;
    let mut start_probs = None;
    let mut end_probs = None;
    if opts.with_span {
        let (sp, ep) = span_probs(g, vars, &tseq)?;
        start_probs = Some(g.value(sp).data().iter().map(|x| x.to_f64_lossy()).collect());
        end_probs = Some(g.value(ep).data().iter().map(|x| x.to_f64_lossy()).collect());
        if let Some(gt) = ex.span {
            let ls = span_loss(g, sp, ep, gt)?;
            let w = g.scale(ls, F::from_f64_lossy(opts.lambda_span));
            total = g.add(total, w)?;
            l_span = Some(ls);
        }
    }

    let mut l_cont = None;
    if opts.with_cont {
        let anchor_seqs = ex.anchor.as_ref().ok_or_else(|| {
            McvqaError::Config("contrastive loss enabled but no anchor sequences".into())
        })?;
        let anchor = encode_anchor(g, vars, cfg, anchor_seqs)?;
        let scores = contrastive_scores(g, pooled_t, anchor)?;
        let lc = contrastive_loss(g, scores, ex.correct_index)?;
        let w = g.scale(lc, F::from_f64_lossy(opts.lambda_cont));
        total = g.add(total, w)?;
        l_cont = Some(lc);
    }

    let probs = g
        .value(probs_node)
        .data()
        .iter()
        .map(|x| x.to_f64_lossy())
        .collect();
    let pooled_vals = g.value(pooled_t);
    let d2 = pooled_vals.cols();
    let pooled_text = (0..n)
        .map(|r| {
            (0..d2)
                .map(|c| pooled_vals.at2(r, c).to_f64_lossy())
                .collect()
        })
        .collect();

    Ok(ForwardResult {
        total,
        l_qa,
        l_span,
        l_cont,
        probs,
        start_probs,
        end_probs,
        pooled_text,
    })
}

/// Build frame constants for an example (shared by all hypotheses).
pub fn example_frames<F: Scalar>(
    g: &mut Graph<F>,
    cfg: &ModelConfig,
    ex: &ClipExample,
) -> Result<Vec<NodeId>> {
    encode_visual(g, cfg, ex)
}
