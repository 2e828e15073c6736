//! Seeded training loop: batching, warmup schedule, decoupled-decay
//! adaptive-moment updates, periodic state checkpoints, and structured
//! per-step logs.
//!
//! The reference path is single-threaded and fully deterministic for a
//! fixed seed: epoch shuffles derive from (seed, epoch), so any step
//! index maps to exactly one batch and a run can be resumed from a
//! state checkpoint bit-identically.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{backward, forward, EncoderParams, GradAccumulator};
use crate::error::{Error, Result};
use crate::guide::Guide;
use crate::loss::{backprop_to_embeddings, contrastive_loss, LossConfig};
use crate::mining::{batch_negatives, Triplet};
use crate::selection::{build_masks, ModelSimBlock, Strategy};
use crate::vecmath::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Linear ramp to the peak rate, then linear decay to zero.
    WarmupLinearDecay,
    /// Linear ramp, then hold the peak rate.
    WarmupConstant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub warmup_ratio: f64,
    pub total_steps: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub adam_epsilon: f64,
    pub strategy: Strategy,
    pub loss: LossConfig,
    pub seed: u64,
    pub checkpoint_every: usize,
    /// Optional global-norm gradient clip; off by default.
    pub clip_norm: Option<f64>,
    pub schedule: Schedule,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-6,
            warmup_ratio: 0.1,
            total_steps: 100_000,
            batch_size: 16,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.0,
            adam_epsilon: 1e-8,
            strategy: Strategy::Guided,
            loss: LossConfig::default(),
            seed: 0,
            checkpoint_every: 1000,
            clip_norm: None,
            schedule: Schedule::WarmupLinearDecay,
        }
    }
}

impl TrainConfig {
    /// Small-corpus settings: the same machinery at a learning rate and
    /// step count that converge on synthetic data in seconds.
    pub fn desk_preset() -> Self {
        Self {
            learning_rate: 1e-2,
            total_steps: 2000,
            checkpoint_every: 500,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) {
            return Err(Error::config("learning_rate must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.warmup_ratio) {
            return Err(Error::config("warmup_ratio must be in [0, 1]"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0 < b && b < 1.0) {
                return Err(Error::config(format!("{name} must be in (0, 1)")));
            }
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay must be >= 0"));
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::config("adam_epsilon must be > 0"));
        }
        if self.checkpoint_every < 1 {
            return Err(Error::config("checkpoint_every must be >= 1"));
        }
        self.loss.validate()
    }

    fn warmup_steps(&self) -> usize {
        (self.warmup_ratio * self.total_steps as f64).round() as usize
    }
}

/// Learning rate at `step`: linear ramp from 0 to the peak over the
/// warmup span, then (by default) linear decay to 0 at `total_steps`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> Result<f64> {
    if step >= cfg.total_steps {
        return Err(Error::contract(format!(
            "step {step} out of range for total_steps {}",
            cfg.total_steps
        )));
    }
    let warmup = cfg.warmup_steps();
    if step < warmup {
        return Ok(cfg.learning_rate * step as f64 / warmup as f64);
    }
    match cfg.schedule {
        Schedule::WarmupConstant => Ok(cfg.learning_rate),
        Schedule::WarmupLinearDecay => {
            let span = (cfg.total_steps - warmup) as f64;
            if span == 0.0 {
                return Ok(cfg.learning_rate);
            }
            Ok(cfg.learning_rate * (cfg.total_steps - step) as f64 / span)
        }
    }
}

/// First and second moment estimates for the table, plus the update
/// counter used for bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Matrix,
    pub v: Matrix,
    pub t: u64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            t: 0,
        }
    }
}

/// One decoupled-weight-decay adaptive-moment update with bias
/// correction. With `weight_decay = 0` this is the plain
/// adaptive-moment update.
pub fn adamw_step(
    params: &mut Matrix,
    grads: &Matrix,
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.m) {
        return Err(Error::contract("optimizer shapes do not agree"));
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    let p = params.values_mut();
    let g = grads.values();
    let m = state.m.values_mut();
    let v = state.v.values_mut();
    for k in 0..p.len() {
        m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
        v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
        let m_hat = m[k] / bc1;
        let v_hat = v[k] / bc2;
        p[k] -= lr * (m_hat / (v_hat.sqrt() + cfg.adam_epsilon) + cfg.weight_decay * p[k]);
    }
    Ok(())
}

/// One per-step record. Wall-clock deliberately lives outside these
/// records so emitted logs are bit-reproducible across runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub mean_active_negatives: f64,
    pub masked_fraction_qp: f64,
    pub masked_fraction_qn: Option<f64>,
    pub masked_fraction_qq: f64,
    pub masked_fraction_pp: f64,
    pub skipped_rows: usize,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
    pub wall_clock_secs: f64,
}

impl TrainLog {
    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(
                &serde_json::to_string(r)
                    .map_err(|e| Error::data(format!("log encode failed: {e}")))?,
            );
            out.push('\n');
        }
        fs::write(path.as_ref(), out).map_err(|e| Error::io(path.as_ref(), e))
    }

    /// Plot-ready loss curve table.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from(
            "step,loss,lr,mean_active_negatives,masked_fraction_qp,masked_fraction_qn,masked_fraction_qq,masked_fraction_pp,skipped_rows\n",
        );
        for r in &self.records {
            let qn = r
                .masked_fraction_qn
                .map_or(String::new(), |v| format!("{v:?}"));
            out.push_str(&format!(
                "{},{:?},{:?},{:?},{:?},{qn},{:?},{:?},{}\n",
                r.step,
                r.loss,
                r.lr,
                r.mean_active_negatives,
                r.masked_fraction_qp,
                r.masked_fraction_qq,
                r.masked_fraction_pp,
                r.skipped_rows
            ));
        }
        fs::write(path.as_ref(), out).map_err(|e| Error::io(path.as_ref(), e))
    }
}

const STATE_FORMAT_VERSION: u32 = 1;

/// Resumable snapshot of a run: parameters, optimizer moments, and the
/// step counter. Everything else (batch order, learning rate) is a
/// pure function of the config and step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainState {
    pub format_version: u32,
    pub step: usize,
    pub params: EncoderParams,
    pub opt: AdamState,
}

impl TrainState {
    pub fn fresh(params: EncoderParams) -> Self {
        let opt = AdamState::new(params.table.rows(), params.table.cols());
        Self {
            format_version: STATE_FORMAT_VERSION,
            step: 0,
            params,
            opt,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let body = serde_json::to_string(self)
            .map_err(|e| Error::data(format!("state encode failed: {e}")))?;
        fs::write(path.as_ref(), body).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let body = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        let state: TrainState = serde_json::from_str(&body).map_err(|e| {
            Error::data(format!("state {} is not valid: {e}", path.as_ref().display()))
        })?;
        if state.format_version != STATE_FORMAT_VERSION {
            return Err(Error::data(format!(
                "state {} has format version {}, expected {STATE_FORMAT_VERSION}",
                path.as_ref().display(),
                state.format_version
            )));
        }
        Ok(state)
    }
}

#[derive(Debug)]
pub struct TrainResult {
    pub params: EncoderParams,
    pub log: TrainLog,
}

fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    order.shuffle(&mut rng);
    order
}

fn validate_run(data: &[Triplet], guide: Option<&Guide>, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::config("training data is empty"));
    }
    if cfg.strategy == Strategy::Guided && guide.is_none() {
        return Err(Error::config(
            "guided strategy requires a guide (frozen:<ckpt>, precomputed:<store>, or labels:<corpus>)",
        ));
    }
    if cfg.strategy == Strategy::Assigned && data.iter().any(|t| t.negative.is_none()) {
        return Err(Error::config(
            "assigned strategy requires every triplet to carry a negative, but the data is pair-only",
        ));
    }
    Ok(())
}

/// Runs `cfg.total_steps` optimizer steps from a fresh state.
pub fn train(
    data: &[Triplet],
    params: EncoderParams,
    guide: Option<&Guide>,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainResult> {
    resume(TrainState::fresh(params), data, guide, cfg, out_dir)
}

/// Continues a run from a saved state. An interrupted run resumed this
/// way is bit-identical to an uninterrupted one.
pub fn resume(
    mut state: TrainState,
    data: &[Triplet],
    guide: Option<&Guide>,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainResult> {
    validate_run(data, guide, cfg)?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let started = Instant::now();
    let mut log = TrainLog::default();
    let batches_per_epoch = data.len().div_ceil(cfg.batch_size);
    let mut acc = GradAccumulator::new(&state.params);
    let mut cached_epoch = usize::MAX;
    let mut order: Vec<usize> = Vec::new();

    while state.step < cfg.total_steps {
        let step = state.step;
        let epoch = step / batches_per_epoch;
        let pos = step % batches_per_epoch;
        if epoch != cached_epoch {
            order = epoch_order(data.len(), cfg.seed, epoch);
            cached_epoch = epoch;
        }
        let lo = pos * cfg.batch_size;
        let hi = (lo + cfg.batch_size).min(data.len());
        // Final partial batch of an epoch is kept; masks adapt to it.
        let batch: Vec<Triplet> = order[lo..hi].iter().map(|&k| data[k].clone()).collect();

        let queries: Vec<String> = batch.iter().map(|t| t.query.clone()).collect();
        let positives: Vec<String> = batch.iter().map(|t| t.positive.clone()).collect();
        let q_batch = forward(&queries, &state.params);
        let p_batch = forward(&positives, &state.params);
        let negatives = batch_negatives(&batch);
        let n_batch = negatives
            .as_ref()
            .map(|negs| forward(negs, &state.params));

        let block = ModelSimBlock::from_embeddings(
            &q_batch.embeddings,
            &p_batch.embeddings,
            n_batch.as_ref().map(|b| &b.embeddings),
        )?;
        let guide_block = if cfg.strategy == Strategy::Guided {
            Some(guide.expect("validated").similarities(&batch)?)
        } else {
            None
        };
        let masks = build_masks(&block, guide_block.as_ref(), cfg.strategy)?;

        let skip: Vec<bool> = (0..batch.len())
            .map(|i| q_batch.degenerate[i] || p_batch.degenerate[i])
            .collect();
        let loss_out = contrastive_loss(&block, &masks, &cfg.loss, Some(&skip))?;

        let emb_grads = backprop_to_embeddings(
            &loss_out.grad,
            &q_batch.embeddings,
            &p_batch.embeddings,
            n_batch.as_ref().map(|b| &b.embeddings),
        )?;
        acc.zero();
        backward(&q_batch, &emb_grads.queries, &state.params, &mut acc)?;
        backward(&p_batch, &emb_grads.positives, &state.params, &mut acc)?;
        if let (Some(nb), Some(gn)) = (&n_batch, &emb_grads.negatives) {
            backward(nb, gn, &state.params, &mut acc)?;
        }
        if let Some(max_norm) = cfg.clip_norm {
            clip_global_norm(&mut acc.grad_table, max_norm);
        }

        let lr = lr_at(step, cfg)?;
        adamw_step(&mut state.params.table, &acc.grad_table, &mut state.opt, lr, cfg)?;
        state.step += 1;

        let active = &loss_out.active_negative_counts;
        let live: Vec<f64> = active
            .iter()
            .zip(&loss_out.skipped)
            .filter(|(_, &s)| !s)
            .map(|(&c, _)| c as f64)
            .collect();
        let mean_active = if live.is_empty() {
            0.0
        } else {
            live.iter().sum::<f64>() / live.len() as f64
        };
        log.records.push(StepRecord {
            step,
            loss: loss_out.value,
            lr,
            mean_active_negatives: mean_active,
            masked_fraction_qp: masks.qp.masked_fraction().unwrap_or(1.0),
            masked_fraction_qn: masks.qn.as_ref().and_then(|m| m.masked_fraction()),
            masked_fraction_qq: masks.qq.masked_fraction().unwrap_or(1.0),
            masked_fraction_pp: masks.pp.masked_fraction().unwrap_or(1.0),
            skipped_rows: loss_out.skipped.iter().filter(|&&s| s).count(),
        });

        if let Some(dir) = out_dir {
            if state.step % cfg.checkpoint_every == 0 && state.step < cfg.total_steps {
                state.save(dir.join(format!("state_step{:06}.json", state.step)))?;
            }
        }
    }

    log.wall_clock_secs = started.elapsed().as_secs_f64();
    if let Some(dir) = out_dir {
        state.params.save(dir.join("checkpoint_final.json"))?;
        state.save(dir.join("state_final.json"))?;
    }
    Ok(TrainResult {
        params: state.params,
        log,
    })
}

fn clip_global_norm(grads: &mut Matrix, max_norm: f64) {
    let norm = crate::vecmath::l2_norm(grads.values());
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.values_mut() {
            *g *= scale;
        }
    }
}
