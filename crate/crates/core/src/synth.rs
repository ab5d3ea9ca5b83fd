//! Seeded synthetic clip generator with planted answer structure.
//!
//! A latent world of (entity, action, location) facts: each clip has exactly
//! one correct fact (entity X does action a*), evidenced inside an annotated
//! span of segments. Distractor answers pair X with actions that really occur
//! in the clip, but attributed to other entities or other segments.
//!
//! Profiles:
//! - `text_only`: the fact appears verbatim in the span subtitles; frames are
//!   pure noise.
//! - `visual_local`: the fact is present ONLY as a codebook feature direction
//!   in span-segment frames, while non-span segments carry directions
//!   supporting the distractor actions. Globally pooled attention therefore
//!   ingests misleading evidence; per-segment attention does not.
//! - `mixed`: 50/50 coin flip per clip.
//!
//! Determinism: every clip derives its own RNG stream from (seed, clip index)
//! via splitmix64, so generation is pure per clip and safe to parallelize.
//! Per-clip draw order: profile coin, entity, location, correct action,
//! distractor actions, span width, span start, correct answer position,
//! then per segment: filler, off-span entity, object words, frame noise and
//! signal-frame index.

use crate::corpus::ClipExample;
use crate::corpus::SubtitleSegment;
use crate::vocab::Vocabulary;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::str::FromStr;

pub const ENTITIES: [&str; 10] = [
    "alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi", "ivan", "judy",
];
pub const ACTIONS: [&str; 12] = [
    "runs", "jumps", "sings", "reads", "cooks", "paints", "sleeps", "dances", "writes", "drives",
    "laughs", "waves",
];
pub const LOCATIONS: [&str; 8] = [
    "kitchen", "garden", "office", "garage", "park", "cafe", "library", "beach",
];
pub const OBJECT_WORDS: [&str; 10] = [
    "table", "chair", "door", "window", "lamp", "cup", "phone", "book", "plant", "clock",
];
pub const FILLERS: [&str; 6] = ["look", "there", "now", "then", "see", "well"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthProfile {
    TextOnly,
    VisualLocal,
    Mixed,
}

impl FromStr for SynthProfile {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "text_only" => Ok(SynthProfile::TextOnly),
            "visual_local" => Ok(SynthProfile::VisualLocal),
            "mixed" => Ok(SynthProfile::Mixed),
            other => Err(format!(
                "unknown profile '{other}' (expected text_only, visual_local, mixed)"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub t_segments: usize,
    pub i_frames: usize,
    pub n_answers: usize,
    pub d_v: usize,
    pub noise_sigma: f32,
    pub signal_gain: f32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            t_segments: 6,
            i_frames: 4,
            n_answers: 5,
            d_v: 48,
            noise_sigma: 0.1,
            signal_gain: 2.0,
        }
    }
}

/// Fixed action -> feature-direction codebook, a pure function of `d_v`.
pub struct Codebook {
    dirs: Vec<Vec<f32>>,
}

impl Codebook {
    pub fn standard(d_v: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0xC0DE_B00C ^ d_v as u64);
        let dirs = (0..ACTIONS.len())
            .map(|_| {
                let v: Vec<f32> = (0..d_v).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        Codebook { dirs }
    }

    pub fn direction(&self, action: usize) -> &[f32] {
        &self.dirs[action]
    }

    pub fn n_actions(&self) -> usize {
        self.dirs.len()
    }

    /// Best-matching action for a frame by absolute dot product.
    pub fn decode(&self, frame: &[f32]) -> (usize, f32) {
        let mut best = (0, f32::NEG_INFINITY);
        for (a, dir) in self.dirs.iter().enumerate() {
            let dot: f32 = frame.iter().zip(dir).map(|(x, y)| x * y).sum();
            if dot > best.1 {
                best = (a, dot);
            }
        }
        best
    }
}

/// Vocabulary covering every word the generator can emit, in a fixed order.
pub fn build_vocab() -> Vocabulary {
    let mut v = Vocabulary::new();
    for w in ENTITIES
        .iter()
        .chain(&ACTIONS)
        .chain(&LOCATIONS)
        .chain(&OBJECT_WORDS)
        .chain(&FILLERS)
        .chain(["what", "does", "do", "in", "the"].iter())
    {
        v.add(w);
    }
    v
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Deterministically generate `n_clips` planted examples.
pub fn generate_synthetic(
    seed: u64,
    n_clips: usize,
    profile: SynthProfile,
    cfg: &SynthConfig,
) -> (Vocabulary, Vec<ClipExample>) {
    let vocab = build_vocab();
    let codebook = Codebook::standard(cfg.d_v);
    let examples: Vec<ClipExample> = (0..n_clips)
        .into_par_iter()
        .map(|idx| generate_clip(seed, idx, profile, cfg, &vocab, &codebook))
        .collect();
    (vocab, examples)
}

fn generate_clip(
    seed: u64,
    idx: usize,
    profile: SynthProfile,
    cfg: &SynthConfig,
    vocab: &Vocabulary,
    codebook: &Codebook,
) -> ClipExample {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ (idx as u64).wrapping_mul(0x9e37)));
    let visual = match profile {
        SynthProfile::TextOnly => false,
        SynthProfile::VisualLocal => true,
        SynthProfile::Mixed => rng.gen_bool(0.5),
    };
    let t_seg = cfg.t_segments;
    let n_ans = cfg.n_answers;

    let entity = rng.gen_range(0..ENTITIES.len());
    let location = rng.gen_range(0..LOCATIONS.len());
    let correct_action = rng.gen_range(0..ACTIONS.len());
    let mut others: Vec<usize> = (0..ACTIONS.len()).filter(|&a| a != correct_action).collect();
    others.shuffle(&mut rng);
    let distractors: Vec<usize> = others[..n_ans - 1].to_vec();

    let width = rng.gen_range(2..=3usize).min(t_seg);
    let start = rng.gen_range(0..=t_seg - width);
    let span = (start, start + width - 1);
    let correct_index = rng.gen_range(0..n_ans);

    let id = |w: &str| vocab.id(w);
    let x_word = ENTITIES[entity];
    let loc_word = LOCATIONS[location];

    let question: Vec<usize> = ["what", "does", x_word, "do", "in", loc_word]
        .iter()
        .map(|w| id(w))
        .collect();

    let mut answers: Vec<Vec<usize>> = Vec::with_capacity(n_ans);
    let mut di = 0usize;
    for n in 0..n_ans {
        let action = if n == correct_index {
            correct_action
        } else {
            let a = distractors[di];
            di += 1;
            a
        };
        answers.push(vec![id(x_word), id(ACTIONS[action])]);
    }

    let in_span = |t: usize| t >= span.0 && t <= span.1;
    let mut subtitles = Vec::with_capacity(t_seg);
    let mut frames = Vec::with_capacity(t_seg);
    let mut objects = Vec::with_capacity(t_seg);
    for t in 0..t_seg {
        let filler = FILLERS[rng.gen_range(0..FILLERS.len())];
        // off-span segments talk about some other entity; the distractor
        // actions really occur in the clip, just in the wrong combination
        let other_entity = loop {
            let e = rng.gen_range(0..ENTITIES.len());
            if e != entity {
                break ENTITIES[e];
            }
        };
        let seg_distractor = distractors[t % distractors.len()];
        let tokens: Vec<usize> = if in_span(t) {
            if visual {
                vec![id(filler), id(x_word), id("in"), id(loc_word)]
            } else {
                vec![id(filler), id(x_word), id(ACTIONS[correct_action]), id("in"), id(loc_word)]
            }
        } else if visual {
            vec![id(filler), id(other_entity)]
        } else {
            vec![id(filler), id(other_entity), id(ACTIONS[seg_distractor])]
        };
        subtitles.push(SubtitleSegment {
            index: t,
            tokens,
            start_time: 2.0 * t as f32,
            end_time: 2.0 * t as f32 + 2.0,
        });

        objects.push(
            (0..cfg.i_frames)
                .map(|_| id(OBJECT_WORDS[rng.gen_range(0..OBJECT_WORDS.len())]))
                .collect::<Vec<usize>>(),
        );

        let signal_frame = rng.gen_range(0..cfg.i_frames);
        let mut seg_frames = Vec::with_capacity(cfg.i_frames);
        for i in 0..cfg.i_frames {
            let mut f: Vec<f32> = (0..cfg.d_v)
                .map(|_| rng.sample::<f32, _>(StandardNormal) * cfg.noise_sigma)
                .collect();
            if visual && i == signal_frame {
                let code = if in_span(t) {
                    Some(codebook.direction(correct_action))
                } else {
                    Some(codebook.direction(seg_distractor))
                };
                if let Some(code) = code {
                    for (fv, cv) in f.iter_mut().zip(code) {
                        *fv += cfg.signal_gain * cv;
                    }
                }
            }
            seg_frames.push(f);
        }
        frames.push(seg_frames);
    }

    ClipExample {
        clip_id: format!("c{seed:x}_{idx:06}"),
        subtitles,
        frames,
        objects,
        question,
        answers,
        correct_index,
        span: Some(span),
    }
}

/// Action index of an answer's action word, if it is one.
pub fn answer_action(answer: &[usize], vocab: &Vocabulary) -> Option<usize> {
    answer
        .iter()
        .find_map(|&tok| ACTIONS.iter().position(|a| vocab.id(a) == tok))
}
