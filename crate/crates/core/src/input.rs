//! Assembly of the four-segment hypothesis input:
//! `[CLS] q [SEP] a [SEP] S [SEP] o [SEP]` padded to a fixed length,
//! with fractional token-type scales {0, 1/3, 2/3, 1} distinguishing the
//! segments, plus the masked (contrastive anchor) and answer-removed
//! (pre-training) variants.

use crate::error::{McvqaError, Result};
use crate::vocab::{CLS, MASK, PAD, SEP};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentTag {
    Q,
    A,
    S,
    O,
    Special,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    /// Token-type scale per token: 0 on Q (and CLS / its SEP), 1/3 on A,
    /// 2/3 on S, 1 on O. SEPs carry the scale of the segment they terminate;
    /// PAD carries 0.
    pub type_scale: Vec<f64>,
    pub segment_tag: Vec<SegmentTag>,
    /// true at padded positions.
    pub pad_mask: Vec<bool>,
}

const SCALES: [f64; 4] = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
const TAGS: [SegmentTag; 4] = [SegmentTag::Q, SegmentTag::A, SegmentTag::S, SegmentTag::O];

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Positions eligible for masking: real tokens that are not CLS/SEP/PAD.
    pub fn maskable_positions(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.segment_tag[i] != SegmentTag::Special && !self.pad_mask[i])
            .collect()
    }

    /// Recover the four segment token lists (post-truncation contents).
    pub fn parse_segments(&self) -> [Vec<usize>; 4] {
        let mut out: [Vec<usize>; 4] = Default::default();
        for (i, &id) in self.ids.iter().enumerate() {
            if self.pad_mask[i] {
                break;
            }
            match self.segment_tag[i] {
                SegmentTag::Special => {}
                SegmentTag::Q => out[0].push(id),
                SegmentTag::A => out[1].push(id),
                SegmentTag::S => out[2].push(id),
                SegmentTag::O => out[3].push(id),
            }
        }
        out
    }
}

/// Assemble `[CLS] q [SEP] a [SEP] S [SEP] o [SEP]` padded to `l_max`.
///
/// Truncation removes tokens from the end of `o` first, then `S`, then `a`,
/// then `q`; nonempty segments keep at least one token and CLS/SEP are never
/// removed.
pub fn build(
    q: &[usize],
    a: &[usize],
    s: &[usize],
    o: &[usize],
    l_max: usize,
) -> Result<TokenSequence> {
    let mut segs: [Vec<usize>; 4] = [q.to_vec(), a.to_vec(), s.to_vec(), o.to_vec()];
    for (name, seg) in ["question", "answer", "subtitle"].iter().zip(&segs) {
        if seg.is_empty() {
            return Err(McvqaError::Validation(format!("{name} segment is empty")));
        }
    }
    let overhead = 5; // CLS + 4 SEP
    let floor: usize = overhead + segs.iter().filter(|s| !s.is_empty()).count();
    if l_max < floor {
        return Err(McvqaError::Capacity(format!(
            "l_max {l_max} cannot hold CLS + 4 SEP + 1 token per nonempty segment ({floor})"
        )));
    }
    // truncate in priority order o -> S -> a -> q, each to at least 1 token
    let mut total = overhead + segs.iter().map(Vec::len).sum::<usize>();
    for idx in [3usize, 2, 1, 0] {
        while total > l_max && segs[idx].len() > 1 {
            segs[idx].pop();
            total -= 1;
        }
    }

    let mut ids = Vec::with_capacity(l_max);
    let mut type_scale = Vec::with_capacity(l_max);
    let mut segment_tag = Vec::with_capacity(l_max);
    ids.push(CLS);
    type_scale.push(0.0);
    segment_tag.push(SegmentTag::Special);
    for k in 0..4 {
        for &tok in &segs[k] {
            ids.push(tok);
            type_scale.push(SCALES[k]);
            segment_tag.push(TAGS[k]);
        }
        ids.push(SEP);
        type_scale.push(SCALES[k]);
        segment_tag.push(SegmentTag::Special);
    }
    let mut pad_mask = vec![false; ids.len()];
    while ids.len() < l_max {
        ids.push(PAD);
        type_scale.push(0.0);
        segment_tag.push(SegmentTag::Special);
        pad_mask.push(true);
    }
    Ok(TokenSequence {
        ids,
        type_scale,
        segment_tag,
        pad_mask,
    })
}

/// Replace the tokens at the given positions with MASK. Positions must be
/// maskable (non-special, non-pad).
pub fn apply_mask_at(seq: &TokenSequence, positions: &[usize]) -> TokenSequence {
    let mut out = seq.clone();
    for &p in positions {
        debug_assert!(
            out.segment_tag[p] != SegmentTag::Special && !out.pad_mask[p],
            "masking a special or pad position"
        );
        out.ids[p] = MASK;
    }
    out
}

/// Independent Bernoulli(p) masking of every non-special, non-pad token.
pub fn mask_for_anchor<R: Rng>(seq: &TokenSequence, p: f64, rng: &mut R) -> TokenSequence {
    let positions: Vec<usize> = seq
        .maskable_positions()
        .into_iter()
        .filter(|_| rng.gen_bool(p))
        .collect();
    apply_mask_at(seq, &positions)
}

/// Answer-removed variant: the answer segment is exactly one MASK token.
pub fn remove_answer(
    q: &[usize],
    s: &[usize],
    o: &[usize],
    l_max: usize,
) -> Result<TokenSequence> {
    build(q, &[MASK], s, o, l_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_parts() -> (Vec<usize>, Vec<usize>, Vec<usize>, Vec<usize>) {
        (vec![10], vec![11], vec![12], vec![13])
    }

    #[test]
    fn minimal_layout_and_scales() {
        let (q, a, s, o) = toy_parts();
        let seq = build(&q, &a, &s, &o, 10).unwrap();
        assert_eq!(seq.ids, vec![CLS, 10, SEP, 11, SEP, 12, SEP, 13, SEP, PAD]);
        assert_eq!(
            seq.type_scale,
            vec![0.0, 0.0, 0.0, SCALES[1], SCALES[1], SCALES[2], SCALES[2], 1.0, 1.0, 0.0]
        );
        assert_eq!(seq.pad_mask, vec![false, false, false, false, false, false, false, false, false, true]);
    }

    #[test]
    fn truncation_hits_objects_before_subtitle() {
        let q = vec![10];
        let a = vec![11];
        let s = vec![12, 13, 14];
        let o = vec![15, 16, 17, 18, 19, 20];
        // room for CLS+4SEP+q+a+S(3)+o(2) = 12
        let seq = build(&q, &a, &s, &o, 12).unwrap();
        assert_eq!(seq.len(), 12);
        let segs = seq.parse_segments();
        assert_eq!(segs[2], vec![12, 13, 14], "subtitle untouched");
        assert_eq!(segs[3], vec![15, 16], "objects truncated from the end");
    }

    #[test]
    fn truncation_order_is_o_then_s_then_a_then_q() {
        let q = vec![1, 2, 3];
        let a = vec![4, 5, 6];
        let s = vec![7, 8, 9];
        let o = vec![10, 11, 12];
        // floor is 9; at l_max 11 everything shrinks to 1 except q keeps 3
        let seq = build(&q, &a, &s, &o, 11).unwrap();
        let segs = seq.parse_segments();
        assert_eq!(segs, [vec![1, 2, 3], vec![4], vec![7], vec![10]]);
    }

    #[test]
    fn capacity_error_when_l_max_too_small() {
        let (q, a, s, o) = toy_parts();
        assert!(matches!(
            build(&q, &a, &s, &o, 8),
            Err(McvqaError::Capacity(_))
        ));
        assert!(build(&q, &a, &s, &o, 9).is_ok());
        // empty objects lower the floor by one
        assert!(build(&q, &a, &s, &[], 8).is_ok());
    }

    #[test]
    fn mask_p_zero_is_identity_and_p_one_masks_everything_nonspecial() {
        let (q, a, s, o) = toy_parts();
        let seq = build(&q, &a, &s, &o, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(mask_for_anchor(&seq, 0.0, &mut rng), seq);
        let all = mask_for_anchor(&seq, 1.0, &mut rng);
        for i in 0..seq.len() {
            if seq.segment_tag[i] == SegmentTag::Special || seq.pad_mask[i] {
                assert_eq!(all.ids[i], seq.ids[i]);
            } else {
                assert_eq!(all.ids[i], MASK);
            }
        }
    }

    #[test]
    fn empirical_mask_rate_near_p() {
        let q: Vec<usize> = (10..40).collect();
        let seq = build(&q, &[50], &[51], &[52], 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut masked = 0usize;
        let mut total = 0usize;
        while total < 100_000 {
            let m = mask_for_anchor(&seq, 0.2, &mut rng);
            for &i in &seq.maskable_positions() {
                total += 1;
                if m.ids[i] == MASK {
                    masked += 1;
                }
            }
        }
        let rate = masked as f64 / total as f64;
        assert!((0.18..=0.22).contains(&rate), "rate {rate}");
    }

    #[test]
    fn remove_answer_is_single_mask_independent_of_answer() {
        let (q, _, s, o) = toy_parts();
        let seq = remove_answer(&q, &s, &o, 12).unwrap();
        let segs = seq.parse_segments();
        assert_eq!(segs[1], vec![MASK]);
        // independent of any answer that would have been supplied
        for ans in [vec![99], vec![98, 97, 96]] {
            let built = build(&q, &ans, &s, &o, 12).unwrap();
            assert_ne!(built, seq);
            assert_eq!(remove_answer(&q, &s, &o, 12).unwrap(), seq);
        }
    }

    #[test]
    fn build_round_trips_segments() {
        let q = vec![10, 11];
        let a = vec![12];
        let s = vec![13, 14, 15];
        let o = vec![16, 17];
        let seq = build(&q, &a, &s, &o, 20).unwrap();
        assert_eq!(seq.parse_segments(), [q, a, s, o]);
    }

    #[test]
    fn scales_only_take_quarter_values() {
        let q: Vec<usize> = (10..20).collect();
        let seq = build(&q, &[30, 31], &[32], &[33, 34, 35], 32).unwrap();
        for &sc in &seq.type_scale {
            assert!(SCALES.contains(&sc), "unexpected scale {sc}");
        }
    }
}
