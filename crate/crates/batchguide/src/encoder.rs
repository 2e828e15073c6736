//! A small trainable text encoder with exact analytic gradients.
//!
//! The pipeline is: whitespace tokens -> seeded 64-bit hash into a fixed
//! slot table -> embedding lookup -> mean pooling -> L2 normalization.
//! It is deliberately linear: every step has a hand-writable Jacobian,
//! so the whole training engine can be checked against finite
//! differences. Hash collisions are accepted noise.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecmath::{l2_normalize, Matrix};

/// Hashing tokenizer settings. `max_tokens` is the context-length analog;
/// longer texts are truncated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub vocab_slots: usize,
    pub hash_seed: u64,
    pub lowercase: bool,
    pub max_tokens: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            vocab_slots: 1024,
            hash_seed: 0x5eed,
            lowercase: true,
            max_tokens: 32,
        }
    }
}

impl TokenizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_slots < 2 {
            return Err(Error::config("vocab_slots must be >= 2"));
        }
        if self.max_tokens < 1 {
            return Err(Error::config("max_tokens must be >= 1"));
        }
        Ok(())
    }
}

/// 64-bit multiplicative string hash with an explicit seed mixed into
/// the basis, plus a final avalanche so slot indices depend on every
/// input byte.
fn hash_token(token: &str, seed: u64) -> u64 {
    let mut h = seed ^ 0xcbf2_9ce4_8422_2325;
    for &b in token.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^ (h >> 33)
}

/// Splits on whitespace, folds case if configured, hashes each token
/// into `[0, vocab_slots)`, truncates to `max_tokens`. Empty text
/// yields an empty sequence.
pub fn tokenize(text: &str, cfg: &TokenizerConfig) -> Vec<usize> {
    text.split_whitespace()
        .take(cfg.max_tokens)
        .map(|tok| {
            let h = if cfg.lowercase {
                hash_token(&tok.to_lowercase(), cfg.hash_seed)
            } else {
                hash_token(tok, cfg.hash_seed)
            };
            (h % cfg.vocab_slots as u64) as usize
        })
        .collect()
}

/// Trainable state: the slot embedding table plus its tokenizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub table: Matrix,
    pub dim: usize,
    pub tokenizer: TokenizerConfig,
}

const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    dim: usize,
    tokenizer: TokenizerConfig,
    table: Matrix,
}

impl EncoderParams {
    /// Fresh table with entries i.i.d. uniform in `[-0.5, 0.5]/sqrt(dim)`
    /// from a seeded generator.
    pub fn init(dim: usize, tokenizer: TokenizerConfig, seed: u64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::config("encoder dim must be >= 2"));
        }
        tokenizer.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (dim as f64).sqrt();
        let values = (0..tokenizer.vocab_slots * dim)
            .map(|_| (rng.gen::<f64>() - 0.5) * scale)
            .collect();
        let table = Matrix::from_values(tokenizer.vocab_slots, dim, values)?;
        Ok(Self {
            table,
            dim,
            tokenizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = CheckpointFile {
            format_version: CHECKPOINT_FORMAT_VERSION,
            dim: self.dim,
            tokenizer: self.tokenizer.clone(),
            table: self.table.clone(),
        };
        let body = serde_json::to_string(&file)
            .map_err(|e| Error::data(format!("checkpoint encode failed: {e}")))?;
        fs::write(path.as_ref(), body).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let body = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        let file: CheckpointFile = serde_json::from_str(&body).map_err(|e| {
            Error::data(format!(
                "checkpoint {} is not valid: {e}",
                path.as_ref().display()
            ))
        })?;
        if file.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::data(format!(
                "checkpoint {} has format version {}, expected {CHECKPOINT_FORMAT_VERSION}",
                path.as_ref().display(),
                file.format_version
            )));
        }
        if file.table.rows() != file.tokenizer.vocab_slots || file.table.cols() != file.dim {
            return Err(Error::data(format!(
                "checkpoint {} table shape {}x{} does not match vocab_slots={} dim={}",
                path.as_ref().display(),
                file.table.rows(),
                file.table.cols(),
                file.tokenizer.vocab_slots,
                file.dim
            )));
        }
        Ok(Self {
            table: file.table,
            dim: file.dim,
            tokenizer: file.tokenizer,
        })
    }
}

/// Forward-pass output, retaining what the backward pass needs.
#[derive(Debug, Clone)]
pub struct EncodedBatch {
    /// Unit-norm rows (or zero rows for degenerate texts).
    pub embeddings: Matrix,
    pub token_ids: Vec<Vec<usize>>,
    /// Mean-pooled vectors before normalization.
    pub pre_norm: Matrix,
    pub degenerate: Vec<bool>,
}

/// Mean-pools each text's token rows from the table and L2-normalizes.
pub fn forward(texts: &[String], params: &EncoderParams) -> EncodedBatch {
    let n = texts.len();
    let dim = params.dim;
    let mut embeddings = Matrix::zeros(n, dim);
    let mut pre_norm = Matrix::zeros(n, dim);
    let mut token_ids = Vec::with_capacity(n);
    let mut degenerate = vec![false; n];

    for (i, text) in texts.iter().enumerate() {
        let ids = tokenize(text, &params.tokenizer);
        if ids.is_empty() {
            degenerate[i] = true;
            token_ids.push(ids);
            continue;
        }
        let inv = 1.0 / ids.len() as f64;
        for &id in &ids {
            let row = params.table.row(id);
            for (d, &v) in row.iter().enumerate() {
                pre_norm.add_at(i, d, v * inv);
            }
        }
        let normed = l2_normalize(pre_norm.row(i));
        degenerate[i] = normed.degenerate;
        if !normed.degenerate {
            embeddings.row_mut(i).copy_from_slice(&normed.values);
        }
        token_ids.push(ids);
    }

    EncodedBatch {
        embeddings,
        token_ids,
        pre_norm,
        degenerate,
    }
}

/// Accumulates table gradients across a batch; zeroed at the start of
/// each optimizer step.
#[derive(Debug, Clone)]
pub struct GradAccumulator {
    pub grad_table: Matrix,
}

impl GradAccumulator {
    pub fn new(params: &EncoderParams) -> Self {
        Self {
            grad_table: Matrix::zeros(params.table.rows(), params.table.cols()),
        }
    }

    pub fn zero(&mut self) {
        self.grad_table.fill(0.0);
    }
}

/// Propagates `grad_wrt_embeddings` back to the table.
///
/// Through the normalization `u = x/||x||` the gradient becomes
/// `g_pre = (g - (g.u) u) / ||x||`; mean pooling then distributes
/// `g_pre / num_tokens` to each token occurrence's table row.
/// Degenerate rows contribute nothing.
pub fn backward(
    batch: &EncodedBatch,
    grad_wrt_embeddings: &Matrix,
    params: &EncoderParams,
    acc: &mut GradAccumulator,
) -> Result<()> {
    if !grad_wrt_embeddings.same_shape(&batch.embeddings) {
        return Err(Error::contract(format!(
            "gradient shape {}x{} does not match embeddings {}x{}",
            grad_wrt_embeddings.rows(),
            grad_wrt_embeddings.cols(),
            batch.embeddings.rows(),
            batch.embeddings.cols()
        )));
    }
    let dim = params.dim;
    for i in 0..batch.embeddings.rows() {
        if batch.degenerate[i] {
            continue;
        }
        let g = grad_wrt_embeddings.row(i);
        let u = batch.embeddings.row(i);
        let norm = crate::vecmath::l2_norm(batch.pre_norm.row(i));
        let g_dot_u = crate::vecmath::dot(g, u);
        let ids = &batch.token_ids[i];
        let inv = 1.0 / ids.len() as f64;
        for &id in ids {
            for d in 0..dim {
                let g_pre = (g[d] - g_dot_u * u[d]) / norm;
                acc.grad_table.add_at(id, d, g_pre * inv);
            }
        }
    }
    Ok(())
}

/// A source of unit-norm text embeddings. Implemented by the trainable
/// encoder and by the frozen/precomputed guides, so triplet mining can
/// run against either.
pub trait TextEmbedder {
    fn embed(&self, texts: &[String]) -> Result<EmbeddedTexts>;
}

#[derive(Debug, Clone)]
pub struct EmbeddedTexts {
    /// Unit rows; zero rows where `degenerate` is set.
    pub vectors: Matrix,
    pub degenerate: Vec<bool>,
}

impl TextEmbedder for EncoderParams {
    fn embed(&self, texts: &[String]) -> Result<EmbeddedTexts> {
        let batch = forward(texts, self);
        Ok(EmbeddedTexts {
            vectors: batch.embeddings,
            degenerate: batch.degenerate,
        })
    }
}
