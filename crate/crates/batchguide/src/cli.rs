//! Command-line surface: `synth`, `mine`, `train`, `eval`, `compare`.
//!
//! All commands share one TOML config schema; flags override file
//! values, and the fully resolved configuration lands in a
//! `manifest.json` next to the outputs so every run is reproducible
//! from its manifest alone. Reports are machine-first (JSON/CSV);
//! plotting is left to external tools.
//!
//! Exit codes: 0 success, 2 usage/configuration, 3 data, 4 contract,
//! 5 io.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderParams, TokenizerConfig};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, EvalOptions, TaskSuite};
use crate::guide::Guide;
use crate::loss::{LossConfig, Reduction};
use crate::mining::{mine_triplets, load_triplets, save_triplets, LabeledCorpus, MiningConfig};
use crate::selection::Strategy;
use crate::synthetic::{generate, SynthConfig};
use crate::trainer::{train, Schedule, TrainConfig};

// ---------------------------------------------------------------------------
// Config file schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub mine: MineSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub compare: CompareSection,
}

impl FileConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let body = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        toml::from_str(&body)
            .map_err(|e| Error::config(format!("{}: {e}", path.as_ref().display())))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub dim: usize,
    pub vocab_slots: usize,
    pub hash_seed: u64,
    pub lowercase: bool,
    pub max_tokens: usize,
}

impl Default for EncoderSection {
    fn default() -> Self {
        Self {
            dim: 32,
            vocab_slots: 2048,
            hash_seed: 0x5eed,
            lowercase: true,
            max_tokens: 32,
        }
    }
}

impl EncoderSection {
    pub fn tokenizer(&self) -> TokenizerConfig {
        TokenizerConfig {
            vocab_slots: self.vocab_slots,
            hash_seed: self.hash_seed,
            lowercase: self.lowercase,
            max_tokens: self.max_tokens,
        }
    }

    pub fn init_params(&self, seed: u64) -> Result<EncoderParams> {
        EncoderParams::init(self.dim, self.tokenizer(), seed)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub num_clusters: usize,
    pub items_per_cluster: usize,
    pub tokens_per_text: usize,
    pub shared_token_pool: usize,
    pub noise_token_pool: usize,
    pub false_negative_rate: f64,
    pub flip_positive_rate: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let preset = SynthConfig::desk_preset(0);
        Self {
            num_clusters: preset.num_clusters,
            items_per_cluster: preset.items_per_cluster,
            tokens_per_text: preset.tokens_per_text,
            shared_token_pool: preset.shared_token_pool,
            noise_token_pool: preset.noise_token_pool,
            false_negative_rate: preset.false_negative_rate,
            flip_positive_rate: preset.flip_positive_rate,
        }
    }
}

impl SynthSection {
    pub fn to_config(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            num_clusters: self.num_clusters,
            items_per_cluster: self.items_per_cluster,
            tokens_per_text: self.tokens_per_text,
            shared_token_pool: self.shared_token_pool,
            noise_token_pool: self.noise_token_pool,
            false_negative_rate: self.false_negative_rate,
            flip_positive_rate: self.flip_positive_rate,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MineSection {
    pub k_p: usize,
    pub k_n: Option<usize>,
    pub temperature: f64,
    pub repeat: usize,
}

impl Default for MineSection {
    fn default() -> Self {
        let d = MiningConfig::default();
        Self {
            k_p: d.k_p,
            k_n: d.k_n,
            temperature: d.temperature,
            repeat: d.repeat,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub warmup_ratio: f64,
    pub total_steps: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub adam_epsilon: f64,
    pub strategy: Strategy,
    pub temperature: f64,
    pub include_pp_rows: bool,
    pub reduction: Reduction,
    pub checkpoint_every: usize,
    pub clip_norm: Option<f64>,
    pub schedule: Schedule,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::desk_preset();
        Self {
            learning_rate: d.learning_rate,
            warmup_ratio: d.warmup_ratio,
            total_steps: d.total_steps,
            batch_size: d.batch_size,
            beta1: d.beta1,
            beta2: d.beta2,
            weight_decay: d.weight_decay,
            adam_epsilon: d.adam_epsilon,
            strategy: Strategy::FullBatch,
            temperature: d.loss.temperature,
            include_pp_rows: d.loss.include_pp_rows,
            reduction: d.loss.reduction,
            checkpoint_every: d.checkpoint_every,
            clip_norm: d.clip_norm,
            schedule: d.schedule,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            warmup_ratio: self.warmup_ratio,
            total_steps: self.total_steps,
            batch_size: self.batch_size,
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            adam_epsilon: self.adam_epsilon,
            strategy: self.strategy,
            loss: LossConfig {
                temperature: self.temperature,
                include_pp_rows: self.include_pp_rows,
                reduction: self.reduction,
            },
            seed,
            checkpoint_every: self.checkpoint_every,
            clip_norm: self.clip_norm,
            schedule: self.schedule,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub strategies: Vec<Strategy>,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
        }
    }
}

// ---------------------------------------------------------------------------
// Argument parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(
    name = "batchguide",
    version,
    about = "Contrastive embedding training with guide-filtered in-batch negatives"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML config file; flags override file values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted-noise synthetic corpus, triplets, ground
    /// truth flags, and an evaluation suite.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        clusters: Option<usize>,
        #[arg(long)]
        items_per_cluster: Option<usize>,
        #[arg(long)]
        false_negative_rate: Option<f64>,
        #[arg(long)]
        flip_positive_rate: Option<f64>,
    },
    /// Mine triplets from a labeled JSONL corpus.
    Mine {
        #[command(flatten)]
        common: CommonArgs,
        /// JSONL corpus of {"id", "text", "label"} records.
        #[arg(long)]
        corpus: PathBuf,
        /// Embedder spec: frozen:<checkpoint> or precomputed:<store>.
        /// Defaults to a freshly initialized encoder from [encoder].
        #[arg(long)]
        embedder: Option<String>,
        #[arg(long)]
        k_p: Option<usize>,
        #[arg(long)]
        k_n: Option<usize>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        repeat: Option<usize>,
    },
    /// Train an encoder on triplet data under a selection strategy.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Triplet JSONL file.
        #[arg(long)]
        data: PathBuf,
        /// assigned | bidirectional | fullbatch | guided
        #[arg(long)]
        strategy: Option<String>,
        /// Guide spec: frozen:<checkpoint>, precomputed:<store>, or
        /// labels:<corpus.jsonl>. Required for the guided strategy.
        #[arg(long)]
        guide: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        /// Start from an existing checkpoint instead of a fresh init.
        #[arg(long)]
        init_checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint against a task suite manifest.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Path to a suite.json manifest.
        #[arg(long)]
        suite: PathBuf,
    },
    /// Train one model per strategy from identical initialization and
    /// seed, evaluate all on the same suite, and tabulate the metrics.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated strategy list; defaults to all four.
        #[arg(long)]
        strategies: Option<String>,
        /// Triplet JSONL file; defaults to a synthetic preset corpus.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Guide spec; defaults to the synthetic label oracle.
        #[arg(long)]
        guide: Option<String>,
        /// Suite manifest; defaults to the synthetic corpus suite.
        #[arg(long)]
        suite: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
}

/// Parses argv and dispatches. Returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            common,
            clusters,
            items_per_cluster,
            false_negative_rate,
            flip_positive_rate,
        } => cmd_synth(
            &common,
            clusters,
            items_per_cluster,
            false_negative_rate,
            flip_positive_rate,
        ),
        Command::Mine {
            common,
            corpus,
            embedder,
            k_p,
            k_n,
            temperature,
            repeat,
        } => cmd_mine(&common, &corpus, embedder.as_deref(), k_p, k_n, temperature, repeat),
        Command::Train {
            common,
            data,
            strategy,
            guide,
            steps,
            batch_size,
            learning_rate,
            init_checkpoint,
        } => cmd_train(
            &common,
            &data,
            strategy.as_deref(),
            guide.as_deref(),
            steps,
            batch_size,
            learning_rate,
            init_checkpoint.as_deref(),
        ),
        Command::Eval {
            common,
            checkpoint,
            suite,
        } => cmd_eval(&common, &checkpoint, &suite),
        Command::Compare {
            common,
            strategies,
            data,
            guide,
            suite,
            steps,
        } => cmd_compare(
            &common,
            strategies.as_deref(),
            data.as_deref(),
            guide.as_deref(),
            suite.as_deref(),
            steps,
        ),
    }
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub started_at: String,
    pub finished_at: String,
}

struct ManifestBuilder {
    command: String,
    seed: u64,
    config: serde_json::Value,
    inputs: Vec<String>,
    outputs: Vec<String>,
    started_at: String,
}

impl ManifestBuilder {
    fn new(command: &str, seed: u64, config: impl Serialize) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            seed,
            config: serde_json::to_value(config)
                .map_err(|e| Error::data(format!("config encode failed: {e}")))?,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_at: chrono::Utc::now().to_rfc3339(),
        })
    }

    fn input(&mut self, path: impl AsRef<Path>) -> &mut Self {
        self.inputs.push(path.as_ref().display().to_string());
        self
    }

    fn output(&mut self, path: impl AsRef<Path>) -> &mut Self {
        self.outputs.push(path.as_ref().display().to_string());
        self
    }

    /// Finishes the run record and writes `manifest.json` into `dir`.
    fn write(self, dir: &Path) -> Result<()> {
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            config: self.config,
            inputs: self.inputs,
            outputs: self.outputs,
            started_at: self.started_at,
            finished_at: chrono::Utc::now().to_rfc3339(),
        };
        let path = dir.join("manifest.json");
        let body = serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::data(format!("manifest encode failed: {e}")))?;
        fs::write(&path, body).map_err(|e| Error::io(&path, e))
    }
}

fn resolve(common: &CommonArgs, default_dir: &str) -> Result<(FileConfig, u64, PathBuf)> {
    let file = match &common.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let seed = common.seed.or(file.seed).unwrap_or(0);
    let out_dir = common
        .out_dir
        .clone()
        .or_else(|| file.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from(default_dir));
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    Ok((file, seed, out_dir))
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_synth(
    common: &CommonArgs,
    clusters: Option<usize>,
    items_per_cluster: Option<usize>,
    false_negative_rate: Option<f64>,
    flip_positive_rate: Option<f64>,
) -> Result<()> {
    let (file, seed, out_dir) = resolve(common, "synth-out")?;
    let mut cfg = file.synth.to_config(seed);
    if let Some(v) = clusters {
        cfg.num_clusters = v;
    }
    if let Some(v) = items_per_cluster {
        cfg.items_per_cluster = v;
    }
    if let Some(v) = false_negative_rate {
        cfg.false_negative_rate = v;
    }
    if let Some(v) = flip_positive_rate {
        cfg.flip_positive_rate = v;
    }
    cfg.validate()?;

    let corpus = generate(&cfg)?;
    let suite = corpus.to_eval_suite()?;

    let mut manifest = ManifestBuilder::new("synth", seed, &cfg)?;
    let corpus_path = out_dir.join("corpus.jsonl");
    corpus.save_items(&corpus_path)?;
    let triplets_path = out_dir.join("triplets.jsonl");
    save_triplets(&corpus.triplets, &triplets_path)?;
    let flags_path = out_dir.join("flags.jsonl");
    corpus.save_flags(&flags_path)?;
    let suite_manifest = suite.save_to_dir(out_dir.join("suite"))?;
    manifest
        .output(&corpus_path)
        .output(&triplets_path)
        .output(&flags_path)
        .output(&suite_manifest);
    manifest.write(&out_dir)?;

    let contaminated = corpus
        .flags
        .iter()
        .filter(|f| f.negative_is_contaminated)
        .count();
    println!(
        "synth: {} items in {} clusters, {} triplets ({} contaminated negatives) -> {}",
        corpus.items.len(),
        cfg.num_clusters,
        corpus.triplets.len(),
        contaminated,
        out_dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct MineStats {
    triplets: usize,
    skipped_queries: usize,
    per_label_queries: BTreeMap<String, usize>,
}

fn cmd_mine(
    common: &CommonArgs,
    corpus_path: &Path,
    embedder_spec: Option<&str>,
    k_p: Option<usize>,
    k_n: Option<usize>,
    temperature: Option<f64>,
    repeat: Option<usize>,
) -> Result<()> {
    let (file, seed, out_dir) = resolve(common, "mine-out")?;
    let corpus = LabeledCorpus::load(corpus_path)?;
    let mut cfg = MiningConfig {
        k_p: k_p.unwrap_or(file.mine.k_p),
        k_n: k_n.or(file.mine.k_n),
        temperature: temperature.unwrap_or(file.mine.temperature),
        seed,
        repeat: repeat.unwrap_or(file.mine.repeat),
    };
    if cfg.k_n == Some(0) {
        cfg.k_n = None; // 0 on the command line means "all out-of-class"
    }

    let triplets = match embedder_spec {
        Some(spec) => {
            let guide = Guide::from_spec(spec)?;
            mine_triplets(&corpus, &guide, &cfg)?
        }
        None => {
            let params = file.encoder.init_params(seed)?;
            mine_triplets(&corpus, &params, &cfg)?
        }
    };

    let triplets_path = out_dir.join("triplets.jsonl");
    save_triplets(&triplets, &triplets_path)?;

    let mut per_label: BTreeMap<String, usize> = BTreeMap::new();
    for t in &triplets {
        if let Some(item) = corpus.items.iter().find(|i| i.text == t.query) {
            *per_label.entry(item.label.clone()).or_insert(0) += 1;
        }
    }
    let stats = MineStats {
        triplets: triplets.len(),
        skipped_queries: corpus.items.len() * cfg.repeat - triplets.len(),
        per_label_queries: per_label,
    };
    let stats_path = out_dir.join("stats.json");
    fs::write(
        &stats_path,
        serde_json::to_string_pretty(&stats)
            .map_err(|e| Error::data(format!("stats encode failed: {e}")))?,
    )
    .map_err(|e| Error::io(&stats_path, e))?;

    #[derive(Serialize)]
    struct ResolvedMine<'a> {
        mining: &'a MiningConfig,
        embedder: String,
    }
    let mut manifest = ManifestBuilder::new(
        "mine",
        seed,
        ResolvedMine {
            mining: &cfg,
            embedder: embedder_spec.unwrap_or("init:encoder-section").to_string(),
        },
    )?;
    manifest
        .input(corpus_path)
        .output(&triplets_path)
        .output(&stats_path);
    manifest.write(&out_dir)?;

    println!(
        "mine: {} triplets from {} items -> {}",
        stats.triplets,
        corpus.items.len(),
        out_dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ResolvedTrain<'a> {
    train: &'a TrainConfig,
    encoder: &'a EncoderSection,
    guide: Option<String>,
    init_checkpoint: Option<String>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    common: &CommonArgs,
    data_path: &Path,
    strategy: Option<&str>,
    guide_spec: Option<&str>,
    steps: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    init_checkpoint: Option<&Path>,
) -> Result<()> {
    let (file, seed, out_dir) = resolve(common, "train-out")?;
    let data = load_triplets(data_path)?;

    let mut cfg = file.train.to_config(seed);
    if let Some(s) = strategy {
        cfg.strategy = s.parse()?;
    }
    if let Some(v) = steps {
        cfg.total_steps = v;
    }
    if let Some(v) = batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = learning_rate {
        cfg.learning_rate = v;
    }
    if cfg.strategy == Strategy::Guided && guide_spec.is_none() {
        return Err(Error::config(
            "guided strategy requires --guide (frozen:<ckpt>, precomputed:<store>, or labels:<corpus>)",
        ));
    }
    let guide = guide_spec.map(Guide::from_spec).transpose()?;

    let params = match init_checkpoint {
        Some(path) => EncoderParams::load(path)?,
        None => file.encoder.init_params(seed)?,
    };

    let result = train(&data, params, guide.as_ref(), &cfg, Some(&out_dir))?;
    let log_jsonl = out_dir.join("train_log.jsonl");
    result.log.save_jsonl(&log_jsonl)?;
    let loss_csv = out_dir.join("loss_curve.csv");
    result.log.save_csv(&loss_csv)?;

    let mut manifest = ManifestBuilder::new(
        "train",
        seed,
        ResolvedTrain {
            train: &cfg,
            encoder: &file.encoder,
            guide: guide_spec.map(str::to_string),
            init_checkpoint: init_checkpoint.map(|p| p.display().to_string()),
        },
    )?;
    manifest
        .input(data_path)
        .output(out_dir.join("checkpoint_final.json"))
        .output(&log_jsonl)
        .output(&loss_csv);
    manifest.write(&out_dir)?;

    let first = result.log.records.first().map_or(f64::NAN, |r| r.loss);
    let last = result.log.records.last().map_or(f64::NAN, |r| r.loss);
    println!(
        "train: {} steps under {} (loss {first:.4} -> {last:.4}, {:.1}s) -> {}",
        cfg.total_steps,
        cfg.strategy,
        result.log.wall_clock_secs,
        out_dir.display()
    );
    Ok(())
}

fn cmd_eval(common: &CommonArgs, checkpoint: &Path, suite_path: &Path) -> Result<()> {
    let (_, seed, out_dir) = resolve(common, "eval-out")?;
    let params = EncoderParams::load(checkpoint)?;
    let suite = TaskSuite::load(suite_path)?;
    let opts = EvalOptions {
        seed,
        checkpoint_id: checkpoint.display().to_string(),
    };
    let report = evaluate(&params, &suite, &opts)?;

    let json_path = out_dir.join("eval_report.json");
    report.save_json(&json_path)?;
    let csv_path = out_dir.join("eval_report.csv");
    report.save_csv(&csv_path)?;

    #[derive(Serialize)]
    struct ResolvedEval {
        checkpoint: String,
        suite: String,
    }
    let mut manifest = ManifestBuilder::new(
        "eval",
        seed,
        ResolvedEval {
            checkpoint: checkpoint.display().to_string(),
            suite: suite_path.display().to_string(),
        },
    )?;
    manifest
        .input(checkpoint)
        .input(suite_path)
        .output(&json_path)
        .output(&csv_path);
    manifest.write(&out_dir)?;

    for t in &report.tasks {
        let value = t
            .value
            .map_or("undefined".to_string(), |v| format!("{v:.4}"));
        println!("eval: {} [{}] {} = {value}", t.name, t.kind, t.metric);
    }
    if let Some(mean) = report.mean {
        println!("eval: mean = {mean:.4}");
    }
    Ok(())
}

#[derive(Serialize)]
struct CompareReport {
    strategies: Vec<String>,
    /// strategy -> task name -> metric value (None = undefined).
    table: BTreeMap<String, BTreeMap<String, Option<f64>>>,
    /// strategy -> overall suite mean.
    means: BTreeMap<String, Option<f64>>,
    /// guided minus other strategies, per task, when guided ran.
    deltas_vs_guided: Option<BTreeMap<String, BTreeMap<String, f64>>>,
}

fn cmd_compare(
    common: &CommonArgs,
    strategies: Option<&str>,
    data_path: Option<&Path>,
    guide_spec: Option<&str>,
    suite_path: Option<&Path>,
    steps: Option<usize>,
) -> Result<()> {
    let (file, seed, out_dir) = resolve(common, "compare-out")?;
    let strategy_list: Vec<Strategy> = match strategies {
        Some(list) => list
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<_>>()?,
        None => file.compare.strategies.clone(),
    };
    if strategy_list.is_empty() {
        return Err(Error::config("compare needs at least one strategy"));
    }

    // Data, guide, and suite either come from the user or from a
    // synthetic preset corpus generated on the spot.
    let (data, guide, suite) = match data_path {
        Some(path) => {
            let data = load_triplets(path)?;
            let guide = guide_spec.map(Guide::from_spec).transpose()?;
            let suite_path = suite_path.ok_or_else(|| {
                Error::config("compare with --data also needs --suite for evaluation")
            })?;
            (data, guide, TaskSuite::load(suite_path)?)
        }
        None => {
            let synth_cfg = file.synth.to_config(seed);
            let corpus = generate(&synth_cfg)?;
            let suite = corpus.to_eval_suite()?;
            let guide = Guide::LabelOracle(corpus.label_map());
            (corpus.triplets.clone(), Some(guide), suite)
        }
    };

    let mut train_cfg = file.train.to_config(seed);
    if let Some(v) = steps {
        train_cfg.total_steps = v;
    }
    let init = file.encoder.init_params(seed)?;

    let mut table: BTreeMap<String, BTreeMap<String, Option<f64>>> = BTreeMap::new();
    let mut means: BTreeMap<String, Option<f64>> = BTreeMap::new();
    let mut task_names: Vec<String> = Vec::new();
    for &strategy in &strategy_list {
        let mut cfg = train_cfg.clone();
        cfg.strategy = strategy;
        let result = train(&data, init.clone(), guide.as_ref(), &cfg, None)?;
        result
            .log
            .save_csv(out_dir.join(format!("loss_curve_{strategy}.csv")))?;
        result
            .params
            .save(out_dir.join(format!("checkpoint_{strategy}.json")))?;

        let opts = EvalOptions {
            seed,
            checkpoint_id: format!("compare:{strategy}"),
        };
        let report = evaluate(&result.params, &suite, &opts)?;
        let mut row = BTreeMap::new();
        for t in &report.tasks {
            row.insert(t.name.clone(), t.value);
            if !task_names.contains(&t.name) {
                task_names.push(t.name.clone());
            }
        }
        means.insert(strategy.to_string(), report.mean);
        table.insert(strategy.to_string(), row);
        println!(
            "compare: {strategy} mean = {}",
            report.mean.map_or("undefined".into(), |m| format!("{m:.4}"))
        );
    }

    let deltas = table.get("guided").map(|guided_row| {
        let mut all = BTreeMap::new();
        for (strategy, row) in &table {
            if strategy == "guided" {
                continue;
            }
            let mut per_task = BTreeMap::new();
            for name in &task_names {
                if let (Some(Some(g)), Some(Some(o))) = (guided_row.get(name), row.get(name)) {
                    per_task.insert(name.clone(), g - o);
                }
            }
            all.insert(strategy.clone(), per_task);
        }
        all
    });

    let report = CompareReport {
        strategies: strategy_list.iter().map(|s| s.to_string()).collect(),
        table,
        means,
        deltas_vs_guided: deltas,
    };

    let json_path = out_dir.join("compare.json");
    fs::write(
        &json_path,
        serde_json::to_string_pretty(&report)
            .map_err(|e| Error::data(format!("report encode failed: {e}")))?,
    )
    .map_err(|e| Error::io(&json_path, e))?;

    let csv_path = out_dir.join("compare.csv");
    let mut csv = String::from("strategy");
    for name in &task_names {
        csv.push(',');
        csv.push_str(&crate::evalkit::csv_field(name));
    }
    csv.push_str(",mean\n");
    for strategy in &report.strategies {
        csv.push_str(strategy);
        let row = &report.table[strategy];
        for name in &task_names {
            csv.push(',');
            if let Some(Some(v)) = row.get(name) {
                csv.push_str(&format!("{v:?}"));
            }
        }
        csv.push(',');
        if let Some(Some(m)) = report.means.get(strategy) {
            csv.push_str(&format!("{m:?}"));
        }
        csv.push('\n');
    }
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;

    #[derive(Serialize)]
    struct ResolvedCompare<'a> {
        strategies: Vec<String>,
        train: &'a TrainConfig,
        encoder: &'a EncoderSection,
        synth: Option<SynthConfig>,
        data: Option<String>,
        guide: Option<String>,
        suite: Option<String>,
    }
    let mut manifest = ManifestBuilder::new(
        "compare",
        seed,
        ResolvedCompare {
            strategies: report.strategies.clone(),
            train: &train_cfg,
            encoder: &file.encoder,
            synth: data_path.is_none().then(|| file.synth.to_config(seed)),
            data: data_path.map(|p| p.display().to_string()),
            guide: guide_spec.map(str::to_string),
            suite: suite_path.map(|p| p.display().to_string()),
        },
    )?;
    manifest.output(&json_path).output(&csv_path);
    manifest.write(&out_dir)?;

    println!("compare: table -> {}", csv_path.display());
    Ok(())
}
