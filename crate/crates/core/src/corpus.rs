//! Clip data model and JSON-lines ingestion.
//!
//! One clip per line:
//! `{clip_id, subtitles:[{t,text,start,end}], frames:[[...d_v floats ×I]×T],
//!   objects:[[words]×T], question, answers:[5], correct_index, span:[s,e]}`
//! See `docs/data-format.md` for the full schema.

use crate::error::{McvqaError, Result};
use crate::vocab::Vocabulary;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// One subtitle sentence, 0-based segment index, times in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct SubtitleSegment {
    pub index: usize,
    pub tokens: Vec<usize>,
    pub start_time: f32,
    pub end_time: f32,
}

/// Per-segment frame feature vectors: `I` vectors of dimension `d_v`.
pub type FrameFeatures = Vec<Vec<f32>>;

/// Per-segment object token ids, frame-major, detection order within frame.
pub type ObjectTokens = Vec<usize>;

#[derive(Debug, Clone, PartialEq)]
pub struct ClipExample {
    pub clip_id: String,
    pub subtitles: Vec<SubtitleSegment>,
    /// `T` entries of `I x d_v` features.
    pub frames: Vec<FrameFeatures>,
    pub objects: Vec<ObjectTokens>,
    pub question: Vec<usize>,
    pub answers: Vec<Vec<usize>>,
    pub correct_index: usize,
    /// Inclusive (start, end) segment indices; None when unannotated.
    pub span: Option<(usize, usize)>,
}

impl ClipExample {
    pub fn t_segments(&self) -> usize {
        self.subtitles.len()
    }

    pub fn n_answers(&self) -> usize {
        self.answers.len()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.subtitles.len();
        let fail = |msg: String| {
            Err(McvqaError::Validation(format!(
                "clip {}: {msg}",
                self.clip_id
            )))
        };
        if self.frames.len() != t || self.objects.len() != t {
            return fail(format!(
                "expected {t} frame/object groups, got {}/{}",
                self.frames.len(),
                self.objects.len()
            ));
        }
        let i_frames = self.frames.first().map_or(0, Vec::len);
        for (ti, seg) in self.frames.iter().enumerate() {
            if seg.len() != i_frames {
                return fail(format!("segment {ti} has {} frames, expected {i_frames}", seg.len()));
            }
            for f in seg {
                if f.iter().any(|v| !v.is_finite()) {
                    return fail(format!("non-finite frame feature in segment {ti}"));
                }
            }
        }
        let mut prev_end = f32::NEG_INFINITY;
        for (ti, s) in self.subtitles.iter().enumerate() {
            if s.index != ti {
                return fail(format!("subtitle index {} at position {ti}", s.index));
            }
            if s.start_time >= s.end_time {
                return fail(format!("segment {ti} start {} >= end {}", s.start_time, s.end_time));
            }
            if s.start_time < prev_end {
                return fail(format!("segment {ti} overlaps previous"));
            }
            prev_end = s.end_time;
        }
        if self.correct_index >= self.answers.len() {
            return fail(format!(
                "correct_index {} out of range for {} answers",
                self.correct_index,
                self.answers.len()
            ));
        }
        if let Some((s, e)) = self.span {
            if s > e || e >= t {
                return fail(format!("span [{s},{e}] invalid for T={t}"));
            }
        }
        Ok(())
    }
}

// ── JSON-lines wire format ───────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
struct SubtitleRecord {
    t: usize,
    text: String,
    start: f32,
    end: f32,
}

#[derive(Debug, Serialize, Deserialize)]
struct ClipRecord {
    clip_id: String,
    subtitles: Vec<SubtitleRecord>,
    frames: Vec<Vec<Vec<f32>>>,
    objects: Vec<Vec<String>>,
    question: String,
    answers: Vec<String>,
    correct_index: usize,
    span: Option<(usize, usize)>,
}

fn record_to_example(rec: ClipRecord, vocab: &Vocabulary) -> ClipExample {
    ClipExample {
        clip_id: rec.clip_id,
        subtitles: rec
            .subtitles
            .iter()
            .map(|s| SubtitleSegment {
                index: s.t,
                tokens: vocab.tokenize(&s.text),
                start_time: s.start,
                end_time: s.end,
            })
            .collect(),
        frames: rec.frames,
        objects: rec
            .objects
            .iter()
            .map(|words| words.iter().flat_map(|w| vocab.tokenize(w)).collect())
            .collect(),
        question: vocab.tokenize(&rec.question),
        answers: rec.answers.iter().map(|a| vocab.tokenize(a)).collect(),
        correct_index: rec.correct_index,
        span: rec.span,
    }
}

fn example_to_record(ex: &ClipExample, vocab: &Vocabulary) -> ClipRecord {
    ClipRecord {
        clip_id: ex.clip_id.clone(),
        subtitles: ex
            .subtitles
            .iter()
            .map(|s| SubtitleRecord {
                t: s.index,
                text: vocab.detokenize(&s.tokens),
                start: s.start_time,
                end: s.end_time,
            })
            .collect(),
        frames: ex.frames.clone(),
        objects: ex
            .objects
            .iter()
            .map(|toks| toks.iter().map(|&id| vocab.token(id).to_string()).collect())
            .collect(),
        question: vocab.detokenize(&ex.question),
        answers: ex.answers.iter().map(|a| vocab.detokenize(a)).collect(),
        correct_index: ex.correct_index,
        span: ex.span,
    }
}

/// Load and validate a JSON-lines dataset, mapping tokens through `vocab`.
pub fn load_jsonl(path: &Path, vocab: &Vocabulary) -> Result<Vec<ClipExample>> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ClipRecord = serde_json::from_str(&line).map_err(|e| McvqaError::Parse {
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        let ex = record_to_example(rec, vocab);
        ex.validate()?;
        out.push(ex);
    }
    Ok(out)
}

pub fn save_jsonl(path: &Path, examples: &[ClipExample], vocab: &Vocabulary) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    for ex in examples {
        let rec = example_to_record(ex, vocab);
        writeln!(f, "{}", serde_json::to_string(&rec)?)?;
    }
    Ok(())
}

/// Stable train/validation split on a clip id hash (FNV-1a), ~10% validation.
pub fn is_validation_clip(clip_id: &str) -> bool {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in clip_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h % 10 == 0
}

pub fn split_train_val(examples: Vec<ClipExample>) -> (Vec<ClipExample>, Vec<ClipExample>) {
    examples
        .into_iter()
        .partition(|ex| !is_validation_clip(&ex.clip_id))
}
