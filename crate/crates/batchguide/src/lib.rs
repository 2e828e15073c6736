//! Contrastive embedding training with guide-filtered in-batch
//! negative selection, at desk scale.
//!
//! A frozen guide model scores how related the texts in a training
//! batch are; any candidate the guide rates above a row's own
//! query-positive similarity is excluded from that row's negative
//! pool. This filters out false negatives (batch texts that are
//! actually relevant) without new hyperparameters, and works on
//! pair-only data because the batch itself supplies the negatives.
//!
//! Everything is fp64 and exactly differentiable: the trainable
//! encoder is a hashed bag-of-tokens table with mean pooling, so
//! every gradient in the engine can be checked against finite
//! differences. The crate ships four selection strategies
//! (`assigned`, `bidirectional`, `fullbatch`, `guided`), a triplet
//! miner for labeled corpora, a seeded trainer with warmup +
//! decoupled-decay updates, a metric kit (Spearman, nDCG@k, kNN
//! accuracy, MAP, V-measure), and a planted-noise synthetic corpus
//! generator for controlled experiments.
//!
//! # Quick start
//!
//! ```
//! use batchguide::encoder::{EncoderParams, TokenizerConfig};
//! use batchguide::guide::Guide;
//! use batchguide::selection::Strategy;
//! use batchguide::synthetic::{generate, SynthConfig};
//! use batchguide::trainer::{train, TrainConfig};
//!
//! let corpus = generate(&SynthConfig::desk_preset(7))?;
//! let guide = Guide::LabelOracle(corpus.label_map());
//! let params = EncoderParams::init(16, TokenizerConfig::default(), 7)?;
//! let cfg = TrainConfig {
//!     total_steps: 20,
//!     strategy: Strategy::Guided,
//!     seed: 7,
//!     ..TrainConfig::desk_preset()
//! };
//! let out = train(&corpus.triplets, params, Some(&guide), &cfg, None)?;
//! assert_eq!(out.log.records.len(), 20);
//! # Ok::<(), batchguide::Error>(())
//! ```
//!
//! The `examples/` directory has one runnable program per capability;
//! the `batchguide` binary wraps the same pipeline behind `synth`,
//! `mine`, `train`, `eval`, and `compare` subcommands.

pub mod cli;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod guide;
pub mod loss;
pub mod mining;
pub mod selection;
pub mod synthetic;
pub mod trainer;
pub mod vecmath;

pub use error::{Error, Result};
