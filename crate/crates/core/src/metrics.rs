//! Span decoding and evaluation metrics: temporal IoU, mean IoU, and
//! answer-span joint accuracy (ASA). Spans are inclusive integer sentence
//! ranges, so |[s,e]| = e−s+1.

/// Intersection-over-union of two inclusive spans.
pub fn iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let inter_lo = a.0.max(b.0);
    let inter_hi = a.1.min(b.1);
    let inter = if inter_lo > inter_hi {
        0
    } else {
        inter_hi - inter_lo + 1
    };
    let len = |s: (usize, usize)| s.1 - s.0 + 1;
    let union = len(a) + len(b) - inter;
    inter as f64 / union as f64
}

/// Arithmetic mean of per-example IoU values, over all examples with an
/// annotated span (not only answer-correct ones).
pub fn miou(pairs: &[((usize, usize), (usize, usize))]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().map(|&(a, b)| iou(a, b)).sum::<f64>() / pairs.len() as f64
}

/// Answer-span joint accuracy predicate: answer correct AND IoU ≥ 0.5
/// (boundary inclusive).
pub fn asa(answer_correct: bool, iou_value: f64) -> bool {
    answer_correct && iou_value >= 0.5
}

/// Argmax over feasible pairs (s ≤ e) of start_probs[s]·end_probs[e]; ties
/// break toward the smaller s, then the smaller e.
pub fn decode_span(start_probs: &[f64], end_probs: &[f64]) -> (usize, usize) {
    assert_eq!(start_probs.len(), end_probs.len());
    let mut best = (0usize, 0usize);
    let mut best_p = f64::NEG_INFINITY;
    for s in 0..start_probs.len() {
        for e in s..end_probs.len() {
            let p = start_probs[s] * end_probs[e];
            if p > best_p {
                best_p = p;
                best = (s, e);
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn iou_hand_cases() {
        assert_eq!(iou((1, 3), (1, 3)), 1.0);
        assert_eq!(iou((0, 1), (4, 5)), 0.0);
        assert!((iou((0, 3), (2, 5)) - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn iou_is_symmetric_and_one_iff_identical() {
        for a in [(0usize, 2usize), (1, 4), (3, 3)] {
            for b in [(0usize, 2usize), (2, 5), (0, 0)] {
                assert_eq!(iou(a, b), iou(b, a));
                if iou(a, b) == 1.0 {
                    assert_eq!(a, b);
                }
            }
        }
    }

    #[test]
    fn asa_boundary_is_inclusive() {
        assert!(asa(true, 0.5));
        assert!(!asa(true, 0.49));
        assert!(!asa(false, 1.0));
    }

    #[test]
    fn decode_peaked_and_tied_cases() {
        let mut s = vec![0.1; 6];
        let mut e = vec![0.1; 6];
        s[2] = 0.5;
        e[4] = 0.5;
        assert_eq!(decode_span(&s, &e), (2, 4));
        // uniform: every feasible pair ties; tie-break forces (0,0)
        assert_eq!(decode_span(&[0.25; 4], &[0.25; 4]), (0, 0));
    }

    #[test]
    fn infeasible_peaks_fall_back_to_best_feasible_product() {
        let mut s = vec![0.05; 6];
        let mut e = vec![0.05; 6];
        s[4] = 0.75; // start peak after end peak
        e[2] = 0.75;
        let got = decode_span(&s, &e);
        // brute-force oracle
        let mut best = (0, 0);
        let mut best_p = -1.0;
        for i in 0..6 {
            for j in i..6 {
                if s[i] * e[j] > best_p {
                    best_p = s[i] * e[j];
                    best = (i, j);
                }
            }
        }
        assert_eq!(got, best);
    }
}
