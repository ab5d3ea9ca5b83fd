//! Two-stage training orchestration: loss combination, Adam optimization,
//! per-epoch evaluation and separation diagnostics, reports, and the
//! Table-4-style ablation suite.
//!
//! Determinism contract: one ChaCha8 stream per stage seeded from
//! (config seed, stage). Draw order per epoch: index shuffle, then per
//! example in batch order — pre-training candidate draw (negatives then
//! positive position), then anchor Bernoulli masks when the contrastive loss
//! is on. Evaluation and diagnostics consume no randomness.

use crate::corpus::ClipExample;
use crate::error::{McvqaError, Result};
use crate::graph::{Graph, NodeId};
use crate::metrics;
use crate::model::contrastive::separation_report;
use crate::model::forward::{
    example_frames, forward, qa_inputs, ForwardOptions, ForwardResult,
};
use crate::model::{
    init_params, save_checkpoint, AttentionMode, ModelConfig, ModelVars, ParamSet,
};
use crate::pretrain::{build_candidates, pretrain_inputs};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vocab::Vocabulary;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use std::time::Instant;

// ── Configuration ────────────────────────────────────────────────────────

/// Full training configuration; JSON config files mirror this struct with
/// every field explicit (unknown or missing fields are rejected).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Preset name this config derives from ("toy" or "paper"); informational.
    pub preset: String,
    pub lambda_qa: f64,
    pub lambda_span: f64,
    pub lambda_cont: f64,
    /// Bernoulli token-masking probability for the contrastive anchor.
    pub mask_p: f64,
    pub n_answers: usize,
    pub t_segments: usize,
    pub i_frames: usize,
    pub d_t: usize,
    pub d_v: usize,
    pub l_max: usize,
    pub lr_pretrain: f64,
    pub lr_main: f64,
    /// Per-epoch multiplicative learning-rate factor (1.0 = constant lr).
    pub lr_decay: f64,
    pub epochs_pretrain: usize,
    pub epochs_main: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub attention_mode: AttentionMode,
    pub use_self_attention: bool,
    pub use_multi_token_type: bool,
    pub use_span_loss: bool,
    pub use_cont_loss: bool,
    pub use_pretrain: bool,
    /// Global gradient-norm clip; None disables clipping.
    pub grad_clip_norm: Option<f64>,
    /// Stop a stage once validation accuracy reaches this value.
    pub early_stop_acc: Option<f64>,
    /// Size of the fixed validation subset used for separation diagnostics.
    pub diagnostic_subset: usize,
}

impl TrainConfig {
    /// Desk-scale preset used by the test suite. The learning rate is scaled
    /// up from the paper's 5e-5 because the toy model is ~3 orders of
    /// magnitude smaller and must converge in minutes.
    pub fn toy(seed: u64) -> Self {
        TrainConfig {
            preset: "toy".into(),
            lambda_qa: 1.0,
            lambda_span: 0.2,
            lambda_cont: 0.1,
            mask_p: 0.2,
            n_answers: 5,
            t_segments: 6,
            i_frames: 4,
            d_t: 32,
            d_v: 48,
            l_max: 32,
            lr_pretrain: 1e-3,
            lr_main: 7e-3,
            lr_decay: 0.9,
            epochs_pretrain: 2,
            epochs_main: 10,
            batch_size: 8,
            seed,
            attention_mode: AttentionMode::Local,
            use_self_attention: false,
            use_multi_token_type: true,
            use_span_loss: true,
            use_cont_loss: true,
            use_pretrain: false,
            grad_clip_norm: Some(5.0),
            early_stop_acc: None,
            diagnostic_subset: 256,
        }
    }

    /// Paper-scale hyperparameters, for documentation and config validation
    /// only (BERT-sized encoders are out of scope; tests run `toy`).
    pub fn paper(seed: u64) -> Self {
        TrainConfig {
            preset: "paper".into(),
            d_t: 768,
            d_v: 2048,
            l_max: 128,
            lr_pretrain: 1e-5,
            lr_main: 5e-5,
            lr_decay: 1.0,
            epochs_pretrain: 10,
            epochs_main: 10,
            use_pretrain: true,
            grad_clip_norm: None,
            ..TrainConfig::toy(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(McvqaError::Config(msg));
        if self.lambda_qa < 0.0 || self.lambda_span < 0.0 || self.lambda_cont < 0.0 {
            return bad(format!(
                "loss weights must be >= 0, got ({}, {}, {})",
                self.lambda_qa, self.lambda_span, self.lambda_cont
            ));
        }
        if !(0.0..=1.0).contains(&self.mask_p) {
            return bad(format!("mask_p {} outside [0, 1]", self.mask_p));
        }
        for (name, v) in [
            ("n_answers", self.n_answers),
            ("t_segments", self.t_segments),
            ("i_frames", self.i_frames),
            ("d_t", self.d_t),
            ("d_v", self.d_v),
            ("l_max", self.l_max),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.n_answers < 2 {
            return bad("n_answers must be at least 2".into());
        }
        if self.lr_pretrain <= 0.0 || self.lr_main <= 0.0 {
            return bad("learning rates must be positive".into());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay {} outside (0, 1]", self.lr_decay));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<TrainConfig> {
        let text = std::fs::read_to_string(path)?;
        let cfg: TrainConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            n_answers: self.n_answers,
            t_segments: self.t_segments,
            i_frames: self.i_frames,
            d_t: self.d_t,
            d_v: self.d_v,
            l_max: self.l_max,
            use_self_attention: self.use_self_attention,
            use_multi_token_type: self.use_multi_token_type,
            attention_mode: self.attention_mode,
        }
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_string(self).expect("config serializes").as_bytes());
        format!("{:x}", h.finalize())
    }

    fn forward_options(&self) -> ForwardOptions {
        ForwardOptions {
            lambda_qa: self.lambda_qa,
            lambda_span: self.lambda_span,
            lambda_cont: self.lambda_cont,
            with_span: self.use_span_loss && self.lambda_span > 0.0,
            with_cont: self.use_cont_loss && self.lambda_cont > 0.0,
        }
    }
}

/// Eq. 10: L = λ_qa·L_qa + λ_span·L_span + λ_cont·L_cont as graph nodes.
/// Absent components contribute nothing and add no nodes.
pub fn total_loss<F: Scalar>(
    g: &mut Graph<F>,
    l_qa: NodeId,
    l_span: Option<NodeId>,
    l_cont: Option<NodeId>,
    lambda: (f64, f64, f64),
) -> Result<NodeId> {
    let mut total = g.scale(l_qa, F::from_f64_lossy(lambda.0));
    if let Some(ls) = l_span {
        let w = g.scale(ls, F::from_f64_lossy(lambda.1));
        total = g.add(total, w)?;
    }
    if let Some(lc) = l_cont {
        let w = g.scale(lc, F::from_f64_lossy(lambda.2));
        total = g.add(total, w)?;
    }
    Ok(total)
}

// ── Optimizer ────────────────────────────────────────────────────────────

/// Adam with the standard bias correction (β₁=0.9, β₂=0.999, ε=1e-8).
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, params: &ParamSet<f32>) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect(),
            v: params.tensors().iter().map(|t| vec![0.0; t.numel()]).collect(),
        }
    }

    /// One update over all parameters; `grads` is aligned with the set order.
    /// When `clip_norm` is set, gradients are rescaled so their global L2
    /// norm does not exceed it.
    pub fn step(
        &mut self,
        params: &mut ParamSet<f32>,
        grads: &[Tensor<f32>],
        clip_norm: Option<f64>,
    ) {
        let mut scale = 1.0f64;
        if let Some(max) = clip_norm {
            let sq: f64 = grads
                .iter()
                .flat_map(|g| g.data())
                .map(|&x| (x as f64) * (x as f64))
                .sum();
            let norm = sq.sqrt();
            if norm > max {
                scale = max / norm;
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((tensor, grad), (m, v)) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (i, value) in tensor.data_mut().iter_mut().enumerate() {
                let gi = grad.data()[i] as f64 * scale;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                *value -= (self.lr * mhat / (vhat.sqrt() + self.eps)) as f32;
            }
        }
    }
}

// ── Reports ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_total: f64,
    pub train_qa: f64,
    pub train_span: f64,
    pub train_cont: f64,
    pub val_qa_acc: f64,
    pub val_miou: f64,
    pub val_asa: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistanceRow {
    pub epoch: usize,
    pub lambda_cont: f64,
    pub euclid_mean: f64,
    pub cosine_mean: f64,
    pub seed: u64,
}

/// Per-stage training artifact. Bit-identical for identical (config, seed,
/// dataset); wall time is kept out of the serialized form for that reason.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub stage: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub config_hash: String,
    pub epochs: Vec<EpochMetrics>,
    pub distances: Vec<DistanceRow>,
    pub final_val_qa_acc: f64,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl RunReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn write_metrics_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from(
            "epoch,train_total,train_qa,train_span,train_cont,val_qa_acc,val_miou,val_asa\n",
        );
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                e.epoch,
                e.train_total,
                e.train_qa,
                e.train_span,
                e.train_cont,
                e.val_qa_acc,
                e.val_miou,
                e.val_asa
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn write_distances_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("epoch,lambda_cont,euclid_mean,cosine_mean,seed\n");
        for d in &self.distances {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                d.epoch, d.lambda_cont, d.euclid_mean, d.cosine_mean, d.seed
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

// ── Evaluation ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EvalMetrics {
    pub qa_acc: f64,
    pub miou: f64,
    pub asa: f64,
    pub n_examples: usize,
}

struct EvalOne {
    correct: bool,
    iou: Option<f64>,
}

fn eval_one(
    params: &ParamSet<f32>,
    mcfg: &ModelConfig,
    ex: &ClipExample,
) -> Result<EvalOne> {
    let mut g: Graph<f32> = Graph::new();
    let vars = ModelVars::bind(&mut g, params);
    let frames = example_frames(&mut g, mcfg, ex)?;
    let inputs = qa_inputs::<ChaCha8Rng>(ex, mcfg.l_max, 0.0, None)?;
    // answers come from the QA path; span heads run purely diagnostically
    // and provably do not perturb the answer distribution
    let opts = ForwardOptions {
        with_span: true,
        ..ForwardOptions::inference()
    };
    let res = forward(&mut g, &vars, mcfg, &inputs, &frames, &opts)?;
    let predicted = argmax(&res.probs);
    let iou = match (ex.span, &res.start_probs, &res.end_probs) {
        (Some(gt), Some(sp), Some(ep)) => {
            let pred = metrics::decode_span(sp, ep);
            Some(metrics::iou(pred, gt))
        }
        _ => None,
    };
    Ok(EvalOne {
        correct: predicted == ex.correct_index,
        iou,
    })
}

/// QA accuracy over all examples; mIoU and ASA over the span-annotated ones.
pub fn evaluate(
    params: &ParamSet<f32>,
    mcfg: &ModelConfig,
    examples: &[ClipExample],
) -> Result<EvalMetrics> {
    let per: Result<Vec<EvalOne>> = examples
        .par_iter()
        .map(|ex| eval_one(params, mcfg, ex))
        .collect();
    let per = per?;
    let n = per.len().max(1);
    let correct = per.iter().filter(|r| r.correct).count();
    let with_span: Vec<&EvalOne> = per.iter().filter(|r| r.iou.is_some()).collect();
    let n_span = with_span.len().max(1);
    let iou_sum: f64 = with_span.iter().map(|r| r.iou.unwrap()).sum();
    let asa = with_span
        .iter()
        .filter(|r| metrics::asa(r.correct, r.iou.unwrap()))
        .count();
    Ok(EvalMetrics {
        qa_acc: correct as f64 / n as f64,
        miou: if with_span.is_empty() { 0.0 } else { iou_sum / n_span as f64 },
        asa: if with_span.is_empty() { 0.0 } else { asa as f64 / n_span as f64 },
        n_examples: per.len(),
    })
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Mean nearest-negative separation of the pooled hypothesis rows over a
/// fixed subset, computed on the pure inference path (no masking, no
/// auxiliary graphs).
pub fn separation_over(
    params: &ParamSet<f32>,
    mcfg: &ModelConfig,
    subset: &[ClipExample],
) -> Result<(f64, f64)> {
    let rows: Result<Vec<(Vec<Vec<f32>>, usize)>> = subset
        .par_iter()
        .map(|ex| {
            let mut g: Graph<f32> = Graph::new();
            let vars = ModelVars::bind(&mut g, params);
            let frames = example_frames(&mut g, mcfg, ex)?;
            let inputs = qa_inputs::<ChaCha8Rng>(ex, mcfg.l_max, 0.0, None)?;
            let res = forward(&mut g, &vars, mcfg, &inputs, &frames, &ForwardOptions::inference())?;
            let rows_f32 = res
                .pooled_text
                .iter()
                .map(|r| r.iter().map(|&x| x as f32).collect())
                .collect();
            Ok((rows_f32, ex.correct_index))
        })
        .collect();
    Ok(separation_report(&rows?))
}

// ── Training loop ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Main,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Main => "main",
        }
    }

    fn salt(self) -> u64 {
        match self {
            Stage::Pretrain => 0x5353, // "SS"
            Stage::Main => 0x5141,     // "QA"
        }
    }
}

#[derive(Debug)]
pub struct TrainOutput {
    pub params: ParamSet<f32>,
    pub report: RunReport,
}

struct BatchStats {
    total: f64,
    qa: f64,
    span: f64,
    cont: f64,
}

fn accumulate_grads(
    g: &Graph<f32>,
    vars: &ModelVars,
    names: &[String],
    root: NodeId,
    acc: &mut [Tensor<f32>],
) -> Result<()> {
    let grads = g.backward(root)?;
    for (name, slot) in names.iter().zip(acc.iter_mut()) {
        if let Some(gt) = grads.get(vars.get(name)) {
            for (a, &b) in slot.data_mut().iter_mut().zip(gt.data()) {
                *a += b;
            }
        }
    }
    Ok(())
}

/// Run one training stage. `init` seeds the parameters (checkpoint
/// transfer); otherwise they are freshly initialized from the config seed.
/// With `out_dir` set, per-epoch checkpoints plus `report.json`,
/// `metrics.csv`, and `distances.csv` are written there.
pub fn train_stage(
    cfg: &TrainConfig,
    stage: Stage,
    vocab: &Vocabulary,
    train: &[ClipExample],
    val: &[ClipExample],
    init: Option<ParamSet<f32>>,
    out_dir: Option<&Path>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(McvqaError::Config("empty training set".into()));
    }
    let started = Instant::now();
    let mcfg = cfg.model_config(vocab.len());
    let mut params = match init {
        Some(p) => {
            let fresh: ParamSet<f32> = init_params(&mcfg, cfg.seed);
            if p.arch_hash(&mcfg) != fresh.arch_hash(&mcfg) {
                return Err(McvqaError::Compatibility(
                    "initial checkpoint does not match the configured architecture".into(),
                ));
            }
            p
        }
        None => init_params(&mcfg, cfg.seed),
    };
    let names = params.names().to_vec();
    let (lr, epochs) = match stage {
        Stage::Pretrain => (cfg.lr_pretrain, cfg.epochs_pretrain),
        Stage::Main => (cfg.lr_main, cfg.epochs_main),
    };
    let mut opt = Adam::new(lr, &params);
    let opts = cfg.forward_options();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ stage.salt());
    let diag: Vec<ClipExample> = val
        .iter()
        .take(cfg.diagnostic_subset)
        .cloned()
        .collect();

    let mut report = RunReport {
        stage: stage.name().into(),
        seed: cfg.seed,
        config: cfg.clone(),
        config_hash: cfg.hash(),
        epochs: Vec::new(),
        distances: Vec::new(),
        final_val_qa_acc: 0.0,
        wall_time_secs: 0.0,
    };
    let push_distances = |report: &mut RunReport, params: &ParamSet<f32>, epoch| -> Result<()> {
        if diag.is_empty() {
            return Ok(());
        }
        let (euclid_mean, cosine_mean) = separation_over(params, &mcfg, &diag)?;
        report.distances.push(DistanceRow {
            epoch,
            lambda_cont: if opts.with_cont { cfg.lambda_cont } else { 0.0 },
            euclid_mean,
            cosine_mean,
            seed: cfg.seed,
        });
        Ok(())
    };
    if epochs > 0 {
        push_distances(&mut report, &params, 0)?;
    }

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=epochs {
        opt.lr = lr * cfg.lr_decay.powi(epoch as i32 - 1);
        order.shuffle(&mut rng);
        let mut stats = BatchStats {
            total: 0.0,
            qa: 0.0,
            span: 0.0,
            cont: 0.0,
        };
        let mut seen = 0usize;
        for (batch_id, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut acc: Vec<Tensor<f32>> = params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape().to_vec()))
                .collect();
            for &idx in batch {
                let ex = &train[idx];
                let inputs = match stage {
                    Stage::Pretrain => {
                        let set = build_candidates(train, idx, cfg.n_answers, &mut rng)?;
                        let mask_rng = opts.with_cont.then_some(&mut rng);
                        pretrain_inputs(ex, &set, cfg.l_max, cfg.mask_p, mask_rng)?
                    }
                    Stage::Main => {
                        let mask_rng = opts.with_cont.then_some(&mut rng);
                        qa_inputs(ex, cfg.l_max, cfg.mask_p, mask_rng)?
                    }
                };
                let mut g: Graph<f32> = Graph::new();
                let vars = ModelVars::bind(&mut g, &params);
                let frames = example_frames(&mut g, &mcfg, ex)?;
                let res: ForwardResult = forward(&mut g, &vars, &mcfg, &inputs, &frames, &opts)?;
                let total = g.value(res.total).item() as f64;
                if !total.is_finite() {
                    if let Some(dir) = out_dir {
                        let _ = std::fs::write(
                            dir.join("abort.json"),
                            serde_json::to_string_pretty(&serde_json::json!({
                                "stage": stage.name(),
                                "epoch": epoch,
                                "batch": batch_id,
                                "clip_id": ex.clip_id,
                            }))?,
                        );
                    }
                    return Err(McvqaError::Numeric(format!(
                        "non-finite loss {total} at {} epoch {epoch}, batch {batch_id} (clip {})",
                        stage.name(),
                        ex.clip_id
                    )));
                }
                stats.total += total;
                stats.qa += g.value(res.l_qa).item() as f64;
                if let Some(ls) = res.l_span {
                    stats.span += g.value(ls).item() as f64;
                }
                if let Some(lc) = res.l_cont {
                    stats.cont += g.value(lc).item() as f64;
                }
                seen += 1;
                accumulate_grads(&g, &vars, &names, res.total, &mut acc)?;
            }
            let inv = 1.0 / batch.len() as f32;
            for t in &mut acc {
                for x in t.data_mut() {
                    *x *= inv;
                }
            }
            opt.step(&mut params, &acc, cfg.grad_clip_norm);
        }

        let val_metrics = if val.is_empty() {
            EvalMetrics {
                qa_acc: 0.0,
                miou: 0.0,
                asa: 0.0,
                n_examples: 0,
            }
        } else {
            evaluate(&params, &mcfg, val)?
        };
        let denom = seen.max(1) as f64;
        report.epochs.push(EpochMetrics {
            epoch,
            train_total: stats.total / denom,
            train_qa: stats.qa / denom,
            train_span: stats.span / denom,
            train_cont: stats.cont / denom,
            val_qa_acc: val_metrics.qa_acc,
            val_miou: val_metrics.miou,
            val_asa: val_metrics.asa,
        });
        push_distances(&mut report, &params, epoch)?;
        if let Some(dir) = out_dir {
            save_checkpoint(
                &dir.join(format!("{}_epoch{epoch}.ckpt", stage.name())),
                &params,
                &params.arch_hash(&mcfg),
            )?;
        }
        log::info!(
            "{} epoch {epoch}: train {:.4}, val acc {:.4}",
            stage.name(),
            stats.total / denom,
            val_metrics.qa_acc
        );
        if let Some(target) = cfg.early_stop_acc {
            if val_metrics.qa_acc >= target {
                break;
            }
        }
    }

    report.final_val_qa_acc = report.epochs.last().map_or(0.0, |e| e.val_qa_acc);
    report.wall_time_secs = started.elapsed().as_secs_f64();
    if let Some(dir) = out_dir {
        save_checkpoint(
            &dir.join(format!("{}_final.ckpt", stage.name())),
            &params,
            &params.arch_hash(&mcfg),
        )?;
        report.write_json(&dir.join("report.json"))?;
        report.write_metrics_csv(&dir.join("metrics.csv"))?;
        report.write_distances_csv(&dir.join("distances.csv"))?;
    }
    Ok(TrainOutput { params, report })
}

/// The full pipeline: optional question-prediction pre-training, then the QA
/// stage initialized from it. Returns the QA-stage output.
pub fn run_pipeline(
    cfg: &TrainConfig,
    vocab: &Vocabulary,
    train: &[ClipExample],
    val: &[ClipExample],
    out_dir: Option<&Path>,
) -> Result<TrainOutput> {
    let init = if cfg.use_pretrain {
        let pre = train_stage(cfg, Stage::Pretrain, vocab, train, val, None, out_dir)?;
        Some(pre.params)
    } else {
        None
    };
    train_stage(cfg, Stage::Main, vocab, train, val, init, out_dir)
}

// ── Ablation suite ───────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub per_seed_acc: Vec<f64>,
    pub mean: f64,
    pub stdev: f64,
}

impl AblationRow {
    /// Accuracy in percent, Table-4 style: "73.45 ± 0.31".
    pub fn cell(&self) -> String {
        format!("{:.2} ± {:.2}", 100.0 * self.mean, 100.0 * self.stdev)
    }
}

fn ablation_configs(base: &TrainConfig) -> Vec<(String, TrainConfig)> {
    let make = |label: &str, mode, tl: bool, mt: bool, cl: bool, ss: bool| {
        let mut c = base.clone();
        c.attention_mode = mode;
        c.use_span_loss = tl;
        c.use_multi_token_type = mt;
        c.use_cont_loss = cl;
        c.use_pretrain = ss;
        (label.to_string(), c)
    };
    use AttentionMode::{Global, Local};
    vec![
        make("(1) base model (GA)", Global, false, false, false, false),
        make("(2)   + TL", Global, true, false, false, false),
        make("(3)   + TL + MT", Global, true, true, false, false),
        make("(4) base model (LA)", Local, false, false, false, false),
        make("(5)   + TL", Local, true, false, false, false),
        make("(6)   + TL + MT", Local, true, true, false, false),
        make("(7)   + TL + MT + CL", Local, true, true, true, false),
        make("(8)   + TL + MT + CL + SS", Local, true, true, true, true),
    ]
}

/// Run the eight Table-4 configurations over the given seeds, reporting
/// mean ± sample standard deviation of final validation accuracy per row.
pub fn ablation_suite(
    base: &TrainConfig,
    vocab: &Vocabulary,
    train: &[ClipExample],
    val: &[ClipExample],
    seeds: &[u64],
) -> Result<Vec<AblationRow>> {
    if seeds.len() < 3 {
        return Err(McvqaError::Config(format!(
            "ablation needs at least 3 seeds, got {}",
            seeds.len()
        )));
    }
    ablation_configs(base)
        .into_iter()
        .map(|(label, cfg)| {
            let per_seed_acc: Vec<f64> = seeds
                .iter()
                .map(|&seed| {
                    let run = run_pipeline(&TrainConfig { seed, ..cfg.clone() }, vocab, train, val, None)?;
                    Ok(run.report.final_val_qa_acc)
                })
                .collect::<Result<_>>()?;
            let mean = per_seed_acc.iter().sum::<f64>() / per_seed_acc.len() as f64;
            let var = per_seed_acc
                .iter()
                .map(|a| (a - mean) * (a - mean))
                .sum::<f64>()
                / (per_seed_acc.len() - 1) as f64;
            Ok(AblationRow {
                label,
                per_seed_acc,
                mean,
                stdev: var.sqrt(),
            })
        })
        .collect()
}

// ── Parallelism cap ──────────────────────────────────────────────────────

/// Thread cap from `MCVQA_THREADS` (unset or unparsable → all cores).
pub fn thread_limit() -> Option<usize> {
    std::env::var("MCVQA_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Install the global rayon pool honoring `MCVQA_THREADS`. Call once at
/// process start; later calls are no-ops.
pub fn configure_threads() {
    if let Some(n) = thread_limit() {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}
