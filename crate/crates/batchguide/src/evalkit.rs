//! Desk-scale evaluation metrics and task suites.
//!
//! Five metrics, one per task family: Spearman rank correlation for
//! semantic similarity, nDCG@k for retrieval, k-nearest-neighbor
//! accuracy for classification, mean average precision for reranking,
//! and V-measure for clustering. Each has a small, brute-force
//! verifiable contract. A [`TaskSuite`] manifest binds task files to
//! kinds; [`evaluate`] runs a checkpoint over the whole suite.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::TextEmbedder;
use crate::error::{Error, Result};
use crate::vecmath::{dot, Matrix};

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Fractional ranks (1-based) with average-rank tie handling.
pub fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j share one value; each gets the average rank.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (x, y) in a.iter().zip(b) {
        let da = x - mean_a;
        let db = y - mean_b;
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return None;
    }
    Some(cov / (var_a * var_b).sqrt())
}

/// Spearman correlation: Pearson over fractional ranks. Returns
/// `None` (undefined, flagged to the caller) when either side is
/// constant.
pub fn spearman(pred: &[f64], gold: &[f64]) -> Result<Option<f64>> {
    if pred.len() != gold.len() {
        return Err(Error::contract(format!(
            "spearman length mismatch: {} vs {}",
            pred.len(),
            gold.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::contract("spearman needs at least 2 observations"));
    }
    Ok(pearson(&fractional_ranks(pred), &fractional_ranks(gold)))
}

/// Normalized discounted cumulative gain at cutoff `k` over a ranked
/// id list, with 1-based ranks discounted by `1/log2(rank + 1)`.
/// Returns 0 when no relevant documents exist.
pub fn ndcg_at_k(ranking: &[String], gains: &BTreeMap<String, f64>, k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::contract("ndcg cutoff k must be >= 1"));
    }
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(idx, id)| {
            let gain = gains.get(id).copied().unwrap_or(0.0);
            gain / ((idx + 2) as f64).log2()
        })
        .sum();
    let mut ideal: Vec<f64> = gains.values().copied().filter(|&g| g > 0.0).collect();
    ideal.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let idcg: f64 = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(idx, gain)| gain / ((idx + 2) as f64).log2())
        .sum();
    if idcg == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg / idcg)
}

/// Fraction of test items whose majority label among the k nearest
/// cosine neighbors matches. Vote ties break toward the nearest
/// neighbor among the tied labels; distance ties break toward the
/// lower train index.
pub fn knn_accuracy(
    train: &Matrix,
    train_labels: &[String],
    test: &Matrix,
    test_labels: &[String],
    k: usize,
) -> Result<f64> {
    if train.rows() == 0 {
        return Err(Error::config("knn_accuracy requires a nonempty train set"));
    }
    if k < 1 {
        return Err(Error::contract("knn k must be >= 1"));
    }
    if train.rows() != train_labels.len() || test.rows() != test_labels.len() {
        return Err(Error::contract("label counts do not match embedding rows"));
    }
    let mut hits = 0usize;
    for i in 0..test.rows() {
        let q = test.row(i);
        let mut order: Vec<usize> = (0..train.rows()).collect();
        order.sort_by(|&a, &b| {
            dot(q, train.row(b))
                .partial_cmp(&dot(q, train.row(a)))
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let neighbors = &order[..k.min(order.len())];
        let mut votes: HashMap<&str, usize> = HashMap::new();
        for &j in neighbors {
            *votes.entry(train_labels[j].as_str()).or_insert(0) += 1;
        }
        let best_count = votes.values().copied().max().unwrap_or(0);
        let winner = neighbors
            .iter()
            .map(|&j| train_labels[j].as_str())
            .find(|lab| votes[lab] == best_count)
            .unwrap_or_default();
        if winner == test_labels[i] {
            hits += 1;
        }
    }
    if test.rows() == 0 {
        return Ok(0.0);
    }
    Ok(hits as f64 / test.rows() as f64)
}

/// Mean over queries of average precision (precision at each relevant
/// hit, averaged over the query's total relevant count). Queries with
/// no relevant documents are excluded with a log note; returns `None`
/// if nothing remains.
pub fn mean_average_precision(
    rankings: &[Vec<String>],
    relevant: &[BTreeSet<String>],
) -> Result<Option<f64>> {
    if rankings.len() != relevant.len() {
        return Err(Error::contract(
            "rankings and relevance sets must have equal length",
        ));
    }
    let mut aps = Vec::new();
    for (qi, (ranking, rel)) in rankings.iter().zip(relevant).enumerate() {
        if rel.is_empty() {
            log::info!("map: excluding query {qi} with no relevant documents");
            continue;
        }
        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        for (idx, id) in ranking.iter().enumerate() {
            if rel.contains(id) {
                hits += 1;
                precision_sum += hits as f64 / (idx + 1) as f64;
            }
        }
        aps.push(precision_sum / rel.len() as f64);
    }
    if aps.is_empty() {
        return Ok(None);
    }
    Ok(Some(aps.iter().sum::<f64>() / aps.len() as f64))
}

/// Harmonic mean of homogeneity and completeness from the
/// contingency-table entropies (natural log; the measure is
/// base-invariant). A single cluster against a single class is 1.0 by
/// convention: both conditional entropies vanish.
pub fn v_measure(predicted: &[usize], gold: &[usize]) -> Result<f64> {
    if predicted.len() != gold.len() {
        return Err(Error::contract(
            "predicted and gold assignments must cover the same items",
        ));
    }
    if predicted.is_empty() {
        return Err(Error::contract("v_measure needs at least one item"));
    }
    let n = predicted.len() as f64;
    let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
    let mut by_class: HashMap<usize, f64> = HashMap::new();
    let mut by_cluster: HashMap<usize, f64> = HashMap::new();
    for (&k, &c) in predicted.iter().zip(gold) {
        *joint.entry((c, k)).or_insert(0.0) += 1.0;
        *by_class.entry(c).or_insert(0.0) += 1.0;
        *by_cluster.entry(k).or_insert(0.0) += 1.0;
    }
    let entropy = |counts: &HashMap<usize, f64>| -> f64 {
        -counts
            .values()
            .map(|&cnt| (cnt / n) * (cnt / n).ln())
            .sum::<f64>()
    };
    let h_class = entropy(&by_class);
    let h_cluster = entropy(&by_cluster);
    // H(C|K) and H(K|C) from the joint counts.
    let mut h_class_given_cluster = 0.0;
    let mut h_cluster_given_class = 0.0;
    for (&(c, k), &cnt) in &joint {
        h_class_given_cluster -= (cnt / n) * (cnt / by_cluster[&k]).ln();
        h_cluster_given_class -= (cnt / n) * (cnt / by_class[&c]).ln();
    }
    let homogeneity = if h_class == 0.0 {
        1.0
    } else {
        1.0 - h_class_given_cluster / h_class
    };
    let completeness = if h_cluster == 0.0 {
        1.0
    } else {
        1.0 - h_cluster_given_class / h_cluster
    };
    if homogeneity + completeness == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * homogeneity * completeness / (homogeneity + completeness))
}

// ---------------------------------------------------------------------------
// Task suite
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StsPair {
    pub text_a: String,
    pub text_b: String,
    pub gold: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Doc {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalQuery {
    pub id: String,
    pub text: String,
    /// Graded gains per relevant corpus id.
    pub relevant: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledText {
    pub text: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerankCandidate {
    pub text: String,
    pub relevant: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RerankQuery {
    pub query: String,
    pub candidates: Vec<RerankCandidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TaskData {
    Sts {
        pairs: Vec<StsPair>,
    },
    Retrieval {
        #[serde(default = "default_cutoff")]
        k: usize,
        corpus: Vec<Doc>,
        queries: Vec<RetrievalQuery>,
    },
    Classification {
        #[serde(default = "default_knn_k")]
        k: usize,
        train: Vec<LabeledText>,
        test: Vec<LabeledText>,
    },
    Reranking {
        queries: Vec<RerankQuery>,
    },
    Clustering {
        items: Vec<LabeledText>,
    },
}

fn default_cutoff() -> usize {
    10
}

fn default_knn_k() -> usize {
    5
}

impl TaskData {
    pub fn kind(&self) -> &'static str {
        match self {
            TaskData::Sts { .. } => "sts",
            TaskData::Retrieval { .. } => "retrieval",
            TaskData::Classification { .. } => "classification",
            TaskData::Reranking { .. } => "reranking",
            TaskData::Clustering { .. } => "clustering",
        }
    }

    pub fn metric(&self) -> &'static str {
        match self {
            TaskData::Sts { .. } => "spearman",
            TaskData::Retrieval { k, .. } => {
                if *k == 10 {
                    "ndcg@10"
                } else {
                    "ndcg@k"
                }
            }
            TaskData::Classification { .. } => "knn-accuracy",
            TaskData::Reranking { .. } => "map",
            TaskData::Clustering { .. } => "v-measure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub name: String,
    #[serde(flatten)]
    pub data: TaskData,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TaskSuite {
    pub tasks: Vec<Task>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    kind: String,
    path: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    tasks: Vec<ManifestEntry>,
}

impl TaskSuite {
    /// Writes one JSON file per task plus a `suite.json` manifest that
    /// lists task kind and data file path. Returns the manifest path.
    pub fn save_to_dir(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::new();
        for task in &self.tasks {
            let file = format!("{}.json", task.name);
            let body = serde_json::to_string(task)
                .map_err(|e| Error::data(format!("task encode failed: {e}")))?;
            fs::write(dir.join(&file), body).map_err(|e| Error::io(dir.join(&file), e))?;
            entries.push(ManifestEntry {
                name: task.name.clone(),
                kind: task.data.kind().to_string(),
                path: file,
            });
        }
        let manifest_path = dir.join("suite.json");
        let body = serde_json::to_string_pretty(&Manifest { tasks: entries })
            .map_err(|e| Error::data(format!("manifest encode failed: {e}")))?;
        fs::write(&manifest_path, body).map_err(|e| Error::io(&manifest_path, e))?;
        Ok(manifest_path)
    }

    /// Loads a suite from its manifest; task paths resolve relative to
    /// the manifest's directory. A missing task file fails with its
    /// path.
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let body =
            fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        let manifest: Manifest = serde_json::from_str(&body).map_err(|e| {
            Error::data(format!("manifest {}: {e}", manifest_path.display()))
        })?;
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let mut tasks = Vec::new();
        for entry in manifest.tasks {
            let task_path = base.join(&entry.path);
            let body = fs::read_to_string(&task_path).map_err(|e| Error::io(&task_path, e))?;
            let task: Task = serde_json::from_str(&body)
                .map_err(|e| Error::data(format!("task {}: {e}", task_path.display())))?;
            if task.data.kind() != entry.kind {
                return Err(Error::data(format!(
                    "task {} declares kind {:?} but the manifest says {:?}",
                    task_path.display(),
                    task.data.kind(),
                    entry.kind
                )));
            }
            tasks.push(task);
        }
        Ok(Self { tasks })
    }
}

// ---------------------------------------------------------------------------
// Suite evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskResult {
    pub name: String,
    pub kind: String,
    pub metric: String,
    /// None marks a flagged-undefined result (constant STS inputs, no
    /// queries left after exclusion).
    pub value: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: String,
    pub seed: u64,
    pub tasks: Vec<TaskResult>,
    /// Mean over tasks with a defined value; None for an empty suite.
    pub mean: Option<f64>,
}

impl EvalReport {
    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let body = serde_json::to_string_pretty(self)
            .map_err(|e| Error::data(format!("report encode failed: {e}")))?;
        fs::write(path.as_ref(), body).map_err(|e| Error::io(path.as_ref(), e))
    }

    /// One flat CSV row per task, plus a trailing mean row.
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::from("task,kind,metric,value,count\n");
        for t in &self.tasks {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                csv_field(&t.name),
                t.kind,
                t.metric,
                t.value.map_or(String::new(), |v| format!("{v:?}")),
                t.count
            ));
        }
        if let Some(mean) = self.mean {
            out.push_str(&format!("mean,,,{mean:?},{}\n", self.tasks.len()));
        }
        fs::write(path.as_ref(), out).map_err(|e| Error::io(path.as_ref(), e))
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub seed: u64,
    pub checkpoint_id: String,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            checkpoint_id: String::from("in-memory"),
        }
    }
}

fn embed_all(embedder: &dyn TextEmbedder, texts: &[String]) -> Result<Matrix> {
    Ok(embedder.embed(texts)?.vectors)
}

/// Embeds every task's texts with the checkpoint and computes the
/// matching metric per task plus the overall mean.
pub fn evaluate(
    embedder: &dyn TextEmbedder,
    suite: &TaskSuite,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let mut results = Vec::new();
    for task in &suite.tasks {
        let (value, count) = match &task.data {
            TaskData::Sts { pairs } => {
                let a: Vec<String> = pairs.iter().map(|p| p.text_a.clone()).collect();
                let b: Vec<String> = pairs.iter().map(|p| p.text_b.clone()).collect();
                let ea = embed_all(embedder, &a)?;
                let eb = embed_all(embedder, &b)?;
                let pred: Vec<f64> = (0..pairs.len()).map(|i| dot(ea.row(i), eb.row(i))).collect();
                let gold: Vec<f64> = pairs.iter().map(|p| p.gold).collect();
                (spearman(&pred, &gold)?, pairs.len())
            }
            TaskData::Retrieval { k, corpus, queries } => {
                let doc_texts: Vec<String> = corpus.iter().map(|d| d.text.clone()).collect();
                let docs = embed_all(embedder, &doc_texts)?;
                let query_texts: Vec<String> = queries.iter().map(|q| q.text.clone()).collect();
                let qs = embed_all(embedder, &query_texts)?;
                let mut sum = 0.0;
                for (qi, query) in queries.iter().enumerate() {
                    let ranking = rank_ids(qs.row(qi), &docs, corpus);
                    sum += ndcg_at_k(&ranking, &query.relevant, *k)?;
                }
                let mean = if queries.is_empty() { None } else { Some(sum / queries.len() as f64) };
                (mean, queries.len())
            }
            TaskData::Classification { k, train, test } => {
                let train_texts: Vec<String> = train.iter().map(|t| t.text.clone()).collect();
                let test_texts: Vec<String> = test.iter().map(|t| t.text.clone()).collect();
                let train_emb = embed_all(embedder, &train_texts)?;
                let test_emb = embed_all(embedder, &test_texts)?;
                let train_labels: Vec<String> = train.iter().map(|t| t.label.clone()).collect();
                let test_labels: Vec<String> = test.iter().map(|t| t.label.clone()).collect();
                (
                    Some(knn_accuracy(&train_emb, &train_labels, &test_emb, &test_labels, *k)?),
                    test.len(),
                )
            }
            TaskData::Reranking { queries } => {
                let mut rankings = Vec::new();
                let mut relevant = Vec::new();
                for q in queries {
                    let texts: Vec<String> =
                        std::iter::once(q.query.clone())
                            .chain(q.candidates.iter().map(|c| c.text.clone()))
                            .collect();
                    let emb = embed_all(embedder, &texts)?;
                    let qvec = emb.row(0).to_vec();
                    let mut order: Vec<usize> = (0..q.candidates.len()).collect();
                    order.sort_by(|&a, &b| {
                        dot(&qvec, emb.row(b + 1))
                            .partial_cmp(&dot(&qvec, emb.row(a + 1)))
                            .unwrap_or(std::cmp::Ordering::Equal)
                            .then(a.cmp(&b))
                    });
                    rankings.push(order.iter().map(|i| i.to_string()).collect::<Vec<_>>());
                    relevant.push(
                        q.candidates
                            .iter()
                            .enumerate()
                            .filter(|(_, c)| c.relevant)
                            .map(|(i, _)| i.to_string())
                            .collect::<BTreeSet<_>>(),
                    );
                }
                (mean_average_precision(&rankings, &relevant)?, queries.len())
            }
            TaskData::Clustering { items } => {
                let texts: Vec<String> = items.iter().map(|t| t.text.clone()).collect();
                let emb = embed_all(embedder, &texts)?;
                let mut label_ids: HashMap<&str, usize> = HashMap::new();
                let gold: Vec<usize> = items
                    .iter()
                    .map(|t| {
                        let next = label_ids.len();
                        *label_ids.entry(t.label.as_str()).or_insert(next)
                    })
                    .collect();
                let k = label_ids.len();
                let predicted = kmeans(&emb, k, opts.seed);
                (Some(v_measure(&predicted, &gold)?), items.len())
            }
        };
        results.push(TaskResult {
            name: task.name.clone(),
            kind: task.data.kind().to_string(),
            metric: task.data.metric().to_string(),
            value,
            count,
        });
    }
    let defined: Vec<f64> = results.iter().filter_map(|r| r.value).collect();
    let mean = if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    };
    Ok(EvalReport {
        checkpoint: opts.checkpoint_id.clone(),
        seed: opts.seed,
        tasks: results,
        mean,
    })
}

/// Corpus ids ranked by descending similarity to `query`, ties broken
/// by ascending id.
fn rank_ids(query: &[f64], docs: &Matrix, corpus: &[Doc]) -> Vec<String> {
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.sort_by(|&a, &b| {
        dot(query, docs.row(b))
            .partial_cmp(&dot(query, docs.row(a)))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(corpus[a].id.cmp(&corpus[b].id))
    });
    order.into_iter().map(|i| corpus[i].id.clone()).collect()
}

/// Seeded Lloyd k-means with greedy distance-weighted seeding. Ties
/// and empty clusters resolve to the lowest index, keeping the
/// assignment deterministic for a fixed seed.
pub fn kmeans(data: &Matrix, k: usize, seed: u64) -> Vec<usize> {
    let n = data.rows();
    if n == 0 || k == 0 {
        return Vec::new();
    }
    if k >= n {
        return (0..n).collect();
    }
    let dim = data.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };

    let mut centroids: Vec<Vec<f64>> = vec![data.row(rng.gen_range(0..n)).to_vec()];
    while centroids.len() < k {
        let weights: Vec<f64> = (0..n)
            .map(|i| {
                centroids
                    .iter()
                    .map(|c| dist2(data.row(i), c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let next = if total == 0.0 {
            rng.gen_range(0..n)
        } else {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        };
        centroids.push(data.row(next).to_vec());
    }

    let mut assignment = vec![0usize; n];
    for _ in 0..100 {
        let mut changed = false;
        for i in 0..n {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, centroid) in centroids.iter().enumerate() {
                let d = dist2(data.row(i), centroid);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assignment[i]] += 1;
            for d in 0..dim {
                sums[assignment[i]][d] += data.get(i, d);
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Reseed an empty cluster at the point farthest from
                // its current centroid.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        dist2(data.row(a), &centroids[assignment[a]])
                            .partial_cmp(&dist2(data.row(b), &centroids[assignment[b]]))
                            .unwrap_or(std::cmp::Ordering::Equal)
                    })
                    .unwrap_or(0);
                centroids[c] = data.row(far).to_vec();
                changed = true;
            } else {
                for d in 0..dim {
                    centroids[c][d] = sums[c][d] / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    assignment
}
