//! Self-supervised question-prediction pre-training.
//!
//! Each training instance removes the answer from a clip ([CLS] q [SEP]
//! [MASK] [SEP] S_t [SEP] o_t [SEP]) and asks the model to pick the clip's
//! true question out of N candidates, the other N−1 drawn from different
//! clips. The span and masked-anchor contrastive losses attach exactly as in
//! the QA stage, with the anchor built from the masked true-question
//! hypothesis. Learned weights transfer one-to-one into the QA stage.

use crate::corpus::ClipExample;
use crate::error::{McvqaError, Result};
use crate::input::{self, TokenSequence};
use crate::model::forward::ExampleInputs;
use crate::model::{ModelConfig, ParamSet};
use crate::scalar::Scalar;
use rand::seq::SliceRandom;
use rand::Rng;

/// N candidate questions for one clip, exactly one of which is the clip's own.
#[derive(Debug, Clone)]
pub struct QuestionCandidateSet {
    pub questions: Vec<Vec<usize>>,
    pub correct_index: usize,
}

/// Draw N−1 distinct negative questions from other clips and place the true
/// question at a uniformly random position. Negatives are distinct from each
/// other and from the true question (token-for-token).
pub fn build_candidates<R: Rng>(
    clips: &[ClipExample],
    clip_idx: usize,
    n: usize,
    rng: &mut R,
) -> Result<QuestionCandidateSet> {
    let positive = &clips[clip_idx].question;
    let mut pool: Vec<&Vec<usize>> = Vec::new();
    for (i, clip) in clips.iter().enumerate() {
        if i == clip_idx || &clip.question == positive {
            continue;
        }
        if !pool.contains(&&clip.question) {
            pool.push(&clip.question);
        }
    }
    if pool.len() < n - 1 {
        return Err(McvqaError::Sampling(format!(
            "clip {}: only {} distinct negative questions available, need {}",
            clips[clip_idx].clip_id,
            pool.len(),
            n - 1
        )));
    }
    let negatives: Vec<&Vec<usize>> = pool.choose_multiple(rng, n - 1).copied().collect();
    let correct_index = rng.gen_range(0..n);
    let mut questions: Vec<Vec<usize>> = Vec::with_capacity(n);
    let mut neg_iter = negatives.into_iter();
    for pos in 0..n {
        if pos == correct_index {
            questions.push(positive.clone());
        } else {
            questions.push(neg_iter.next().expect("n-1 negatives drawn").clone());
        }
    }
    Ok(QuestionCandidateSet {
        questions,
        correct_index,
    })
}

/// Answer-removed sequences for one candidate question across all segments.
fn candidate_sequences(
    question: &[usize],
    clip: &ClipExample,
    l_max: usize,
) -> Result<Vec<TokenSequence>> {
    clip.subtitles
        .iter()
        .zip(&clip.objects)
        .map(|(sub, obj)| input::remove_answer(question, &sub.tokens, obj, l_max))
        .collect()
}

/// Inputs for one pre-training forward pass. Reuses the QA forward graph:
/// the "hypotheses" are the N candidate questions (answer slot masked), the
/// target is the true question's position, the span target is the clip span,
/// and the contrastive anchor is a fresh Bernoulli masking of the true
/// question's sequences. The clip's answers never enter any sequence.
pub fn pretrain_inputs<R: Rng>(
    clip: &ClipExample,
    candidates: &QuestionCandidateSet,
    l_max: usize,
    mask_p: f64,
    mask_rng: Option<&mut R>,
) -> Result<ExampleInputs> {
    let seqs: Vec<Vec<TokenSequence>> = candidates
        .questions
        .iter()
        .map(|q| candidate_sequences(q, clip, l_max))
        .collect::<Result<_>>()?;
    let anchor = mask_rng.map(|rng| {
        seqs[candidates.correct_index]
            .iter()
            .map(|s| input::mask_for_anchor(s, mask_p, rng))
            .collect()
    });
    Ok(ExampleInputs {
        seqs,
        correct_index: candidates.correct_index,
        span: clip.span,
        anchor,
    })
}

/// Copy pre-trained weights into a QA-stage parameter set. Both stages share
/// one architecture, so every parameter must exist in both with the same
/// shape; any mismatch is a compatibility error and leaves `dst` unchanged.
pub fn transfer_weights<F: Scalar>(
    dst: &mut ParamSet<F>,
    src: &ParamSet<F>,
    src_cfg: &ModelConfig,
    dst_cfg: &ModelConfig,
) -> Result<()> {
    if src.arch_hash(src_cfg) != dst.arch_hash(dst_cfg) {
        return Err(McvqaError::Compatibility(format!(
            "architecture hash mismatch: source {} vs target {}",
            src.arch_hash(src_cfg),
            dst.arch_hash(dst_cfg)
        )));
    }
    for name in src.names().to_vec() {
        if !dst.contains(&name) {
            return Err(McvqaError::Compatibility(format!(
                "parameter {name} missing from target"
            )));
        }
    }
    for (name, tensor) in src.iter() {
        *dst.get_mut(name) = tensor.clone();
    }
    Ok(())
}
