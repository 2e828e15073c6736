//! Seeded planted-structure corpora with controllable contamination.
//!
//! Texts are synthetic token strings grouped into clusters: every text
//! opens with one of its cluster's signature tokens and fills the rest
//! with a seeded mix of signature and shared noise tokens. The
//! mechanism under test is geometric, so exact ground truth beats
//! natural language here.
//!
//! Triplet noise is planted explicitly: with probability
//! `false_negative_rate` a triplet's negative is drawn from the
//! query's own cluster (a contaminated negative), and with probability
//! `flip_positive_rate` the positive comes from a wrong cluster. Both
//! events are recorded per triplet, so a guide's filtering behavior is
//! measurable against truth.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{
    Doc, LabeledText, RetrievalQuery, StsPair, Task, TaskData, TaskSuite,
};
use crate::guide::LabelMap;
use crate::mining::{CorpusItem, LabeledCorpus, Triplet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_clusters: usize,
    pub items_per_cluster: usize,
    pub tokens_per_text: usize,
    /// Signature tokens available per cluster.
    pub shared_token_pool: usize,
    /// Noise tokens shared across all clusters.
    pub noise_token_pool: usize,
    /// Probability a triplet's negative is drawn from the query's own
    /// cluster.
    pub false_negative_rate: f64,
    /// Probability a triplet's positive is drawn from a wrong cluster.
    pub flip_positive_rate: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// The reference small-corpus preset: 8 clusters of 32 items with
    /// 30% contaminated negatives and 5% flipped positives.
    pub fn desk_preset(seed: u64) -> Self {
        Self {
            num_clusters: 8,
            items_per_cluster: 32,
            tokens_per_text: 8,
            shared_token_pool: 8,
            noise_token_pool: 64,
            false_negative_rate: 0.3,
            flip_positive_rate: 0.05,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clusters < 2 {
            return Err(Error::config("num_clusters must be >= 2"));
        }
        if self.items_per_cluster < 2 {
            return Err(Error::config("items_per_cluster must be >= 2"));
        }
        if self.tokens_per_text < 1 {
            return Err(Error::config("tokens_per_text must be >= 1"));
        }
        if self.shared_token_pool < 1 {
            return Err(Error::config("shared_token_pool must be >= 1"));
        }
        if self.noise_token_pool < 1 {
            return Err(Error::config("noise_token_pool must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.false_negative_rate) {
            return Err(Error::config("false_negative_rate must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.flip_positive_rate) {
            return Err(Error::config("flip_positive_rate must be in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthItem {
    pub id: String,
    pub text: String,
    pub cluster: usize,
}

impl SynthItem {
    pub fn label(&self) -> String {
        format!("c{}", self.cluster)
    }
}

/// Ground-truth annotation for one generated triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletFlags {
    pub negative_is_contaminated: bool,
    pub positive_is_flipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub cfg: SynthConfig,
    pub items: Vec<SynthItem>,
    pub triplets: Vec<Triplet>,
    pub flags: Vec<TripletFlags>,
}

fn sig_token(cluster: usize, k: usize) -> String {
    format!("sig{cluster}x{k}")
}

fn noise_token(k: usize) -> String {
    format!("noise{k}")
}

/// Generates the corpus: items first, then one triplet per item in
/// generation order. Deterministic per seed.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut items = Vec::with_capacity(cfg.num_clusters * cfg.items_per_cluster);
    for cluster in 0..cfg.num_clusters {
        for k in 0..cfg.items_per_cluster {
            // Leading signature token guarantees no text can belong to
            // two clusters; the rest is a seeded signature/noise mix.
            let mut tokens = vec![sig_token(cluster, rng.gen_range(0..cfg.shared_token_pool))];
            for _ in 1..cfg.tokens_per_text {
                if rng.gen::<f64>() < 0.5 {
                    tokens.push(sig_token(cluster, rng.gen_range(0..cfg.shared_token_pool)));
                } else {
                    tokens.push(noise_token(rng.gen_range(0..cfg.noise_token_pool)));
                }
            }
            items.push(SynthItem {
                id: format!("c{cluster}i{k:03}"),
                text: tokens.join(" "),
                cluster,
            });
        }
    }

    let index_of = |cluster: usize, k: usize| cluster * cfg.items_per_cluster + k;
    let mut triplets = Vec::with_capacity(items.len());
    let mut flags = Vec::with_capacity(items.len());
    for qi in 0..items.len() {
        let q_cluster = items[qi].cluster;

        let positive_is_flipped = rng.gen::<f64>() < cfg.flip_positive_rate;
        let pos_cluster = if positive_is_flipped {
            other_cluster(&mut rng, q_cluster, cfg.num_clusters)
        } else {
            q_cluster
        };
        let pos = loop {
            let k = rng.gen_range(0..cfg.items_per_cluster);
            let idx = index_of(pos_cluster, k);
            if idx != qi {
                break idx;
            }
        };

        let negative_is_contaminated = rng.gen::<f64>() < cfg.false_negative_rate;
        let neg_cluster = if negative_is_contaminated {
            q_cluster
        } else {
            other_cluster(&mut rng, q_cluster, cfg.num_clusters)
        };
        let neg = loop {
            let k = rng.gen_range(0..cfg.items_per_cluster);
            let idx = index_of(neg_cluster, k);
            if idx != qi {
                break idx;
            }
        };

        triplets.push(Triplet::full(
            items[qi].text.clone(),
            items[pos].text.clone(),
            items[neg].text.clone(),
        ));
        flags.push(TripletFlags {
            negative_is_contaminated: items[neg].cluster == q_cluster,
            positive_is_flipped: items[pos].cluster != q_cluster,
        });
    }

    Ok(SynthCorpus {
        cfg: cfg.clone(),
        items,
        triplets,
        flags,
    })
}

fn other_cluster(rng: &mut ChaCha8Rng, own: usize, num_clusters: usize) -> usize {
    let pick = rng.gen_range(0..num_clusters - 1);
    if pick >= own {
        pick + 1
    } else {
        pick
    }
}

impl SynthCorpus {
    /// Text -> cluster label lookup for the label-oracle guide.
    pub fn label_map(&self) -> LabelMap {
        LabelMap::new(self.items.iter().map(|i| (i.text.clone(), i.label())))
    }

    pub fn to_labeled_corpus(&self) -> LabeledCorpus {
        LabeledCorpus {
            items: self
                .items
                .iter()
                .map(|i| CorpusItem {
                    id: i.id.clone(),
                    text: i.text.clone(),
                    label: i.label(),
                })
                .collect(),
        }
    }

    pub fn save_items(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_labeled_corpus().save(path)
    }

    /// Sidecar ground-truth flags, one JSONL record per triplet.
    pub fn save_flags(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for f in &self.flags {
            out.push_str(
                &serde_json::to_string(f)
                    .map_err(|e| Error::data(format!("flag encode failed: {e}")))?,
            );
            out.push('\n');
        }
        fs::write(path.as_ref(), out).map_err(|e| Error::io(path.as_ref(), e))
    }

    fn holdout_per_cluster(&self) -> usize {
        (self.cfg.items_per_cluster / 4).max(1)
    }

    /// True for items in the held-out split: the last
    /// `max(1, items_per_cluster/4)` items of each cluster.
    pub fn is_held_out(&self, item: &SynthItem) -> bool {
        let cutoff = self.cfg.items_per_cluster - self.holdout_per_cluster();
        let within: usize = item.id[item.id.find('i').unwrap() + 1..]
            .parse()
            .expect("generated id");
        within >= cutoff
    }

    /// Builds the evaluation suite over a per-cluster held-out split:
    /// a retrieval task (held-out queries judge same-cluster retained
    /// items relevant, gain 1), a classification task, and an STS task
    /// over a seeded sample of held-out pairs (gold 1 within a
    /// cluster, 0 across).
    pub fn to_eval_suite(&self) -> Result<TaskSuite> {
        let retained: Vec<&SynthItem> =
            self.items.iter().filter(|i| !self.is_held_out(i)).collect();
        let held_out: Vec<&SynthItem> =
            self.items.iter().filter(|i| self.is_held_out(i)).collect();
        if held_out.is_empty() || retained.is_empty() {
            return Err(Error::contract("corpus too small to split"));
        }

        let corpus: Vec<Doc> = retained
            .iter()
            .map(|i| Doc {
                id: i.id.clone(),
                text: i.text.clone(),
            })
            .collect();
        let mut queries = Vec::new();
        for q in &held_out {
            let relevant: std::collections::BTreeMap<String, f64> = retained
                .iter()
                .filter(|d| d.cluster == q.cluster)
                .map(|d| (d.id.clone(), 1.0))
                .collect();
            if relevant.len() < 2 {
                log::info!(
                    "retrieval: excluding query {} (cluster {} has {} retained items)",
                    q.id,
                    q.cluster,
                    relevant.len()
                );
                continue;
            }
            queries.push(RetrievalQuery {
                id: q.id.clone(),
                text: q.text.clone(),
                relevant,
            });
        }

        let train: Vec<LabeledText> = retained
            .iter()
            .map(|i| LabeledText {
                text: i.text.clone(),
                label: i.label(),
            })
            .collect();
        let test: Vec<LabeledText> = held_out
            .iter()
            .map(|i| LabeledText {
                text: i.text.clone(),
                label: i.label(),
            })
            .collect();

        // Seeded pair sample over the held-out items.
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x5753_7053);
        let mut pairs = Vec::new();
        let mut all_pairs: Vec<(usize, usize)> = Vec::new();
        for i in 0..held_out.len() {
            for j in (i + 1)..held_out.len() {
                all_pairs.push((i, j));
            }
        }
        let sample = all_pairs.len().min(200);
        for _ in 0..sample {
            let (i, j) = all_pairs[rng.gen_range(0..all_pairs.len())];
            pairs.push(StsPair {
                text_a: held_out[i].text.clone(),
                text_b: held_out[j].text.clone(),
                gold: if held_out[i].cluster == held_out[j].cluster {
                    1.0
                } else {
                    0.0
                },
            });
        }

        Ok(TaskSuite {
            tasks: vec![
                Task {
                    name: "synthetic-retrieval".into(),
                    data: TaskData::Retrieval {
                        k: 10,
                        corpus,
                        queries,
                    },
                },
                Task {
                    name: "synthetic-classification".into(),
                    data: TaskData::Classification { k: 5, train, test },
                },
                Task {
                    name: "synthetic-sts".into(),
                    data: TaskData::Sts { pairs },
                },
            ],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(seed: u64) -> SynthConfig {
        SynthConfig {
            num_clusters: 2,
            items_per_cluster: 4,
            tokens_per_text: 6,
            shared_token_pool: 4,
            noise_token_pool: 16,
            false_negative_rate: 0.0,
            flip_positive_rate: 0.0,
            seed,
        }
    }

    #[test]
    fn zero_rates_give_zero_flags() {
        let corpus = generate(&small_cfg(1)).unwrap();
        assert!(corpus
            .flags
            .iter()
            .all(|f| !f.negative_is_contaminated && !f.positive_is_flipped));
    }

    #[test]
    fn full_contamination_puts_every_negative_in_query_cluster() {
        let cfg = SynthConfig {
            false_negative_rate: 1.0,
            ..small_cfg(2)
        };
        let corpus = generate(&cfg).unwrap();
        assert!(corpus.flags.iter().all(|f| f.negative_is_contaminated));
        let label_of = |text: &str| {
            corpus
                .items
                .iter()
                .find(|i| i.text == text)
                .unwrap()
                .cluster
        };
        for t in &corpus.triplets {
            assert_eq!(label_of(&t.query), label_of(t.negative.as_ref().unwrap()));
        }
    }

    #[test]
    fn contamination_count_within_three_sigma_of_binomial() {
        let cfg = SynthConfig {
            num_clusters: 4,
            items_per_cluster: 250,
            false_negative_rate: 0.3,
            ..small_cfg(3)
        };
        let corpus = generate(&cfg).unwrap();
        let n = corpus.triplets.len() as f64;
        assert_eq!(n, 1000.0);
        let count = corpus
            .flags
            .iter()
            .filter(|f| f.negative_is_contaminated)
            .count() as f64;
        let expected = n * 0.3;
        let sigma = (n * 0.3 * 0.7).sqrt();
        assert!(
            (count - expected).abs() <= 3.0 * sigma,
            "count {count} outside 3 sigma of {expected}"
        );
    }

    #[test]
    fn generation_is_reproducible() {
        let a = generate(&small_cfg(9)).unwrap();
        let b = generate(&small_cfg(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn suite_combinatorics_two_by_four() {
        // 4 items per cluster: 1 held out, 3 retained -> every held-out
        // query judges exactly 3 docs relevant.
        let corpus = generate(&small_cfg(4)).unwrap();
        let suite = corpus.to_eval_suite().unwrap();
        match &suite.tasks[0].data {
            TaskData::Retrieval { queries, .. } => {
                assert_eq!(queries.len(), 2);
                for q in queries {
                    assert_eq!(q.relevant.len(), 3);
                }
            }
            other => panic!("expected retrieval task, got {}", other.kind()),
        }
    }

    #[test]
    fn split_is_disjoint() {
        let corpus = generate(&small_cfg(5)).unwrap();
        let suite = corpus.to_eval_suite().unwrap();
        let (corpus_ids, query_ids) = match &suite.tasks[0].data {
            TaskData::Retrieval { corpus, queries, .. } => (
                corpus.iter().map(|d| d.id.clone()).collect::<Vec<_>>(),
                queries.iter().map(|q| q.id.clone()).collect::<Vec<_>>(),
            ),
            _ => unreachable!(),
        };
        for q in &query_ids {
            assert!(!corpus_ids.contains(q));
        }
    }

    #[test]
    fn same_seed_gives_identical_suite_files() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        generate(&small_cfg(6))
            .unwrap()
            .to_eval_suite()
            .unwrap()
            .save_to_dir(dir_a.path())
            .unwrap();
        generate(&small_cfg(6))
            .unwrap()
            .to_eval_suite()
            .unwrap()
            .save_to_dir(dir_b.path())
            .unwrap();
        for name in ["suite.json", "synthetic-retrieval.json", "synthetic-sts.json"] {
            assert_eq!(
                std::fs::read(dir_a.path().join(name)).unwrap(),
                std::fs::read(dir_b.path().join(name)).unwrap(),
                "{name} differs between identically seeded runs"
            );
        }
    }

    #[test]
    fn label_oracle_guided_masks_exclude_all_contaminated_negatives() {
        use crate::selection::{build_masks, ModelSimBlock, Strategy};
        let cfg = SynthConfig {
            false_negative_rate: 0.5,
            items_per_cluster: 8,
            ..small_cfg(7)
        };
        let corpus = generate(&cfg).unwrap();
        let guide = crate::guide::Guide::LabelOracle(corpus.label_map());
        let params = crate::encoder::EncoderParams::init(
            8,
            crate::encoder::TokenizerConfig::default(),
            1,
        )
        .unwrap();

        for chunk in corpus.triplets.chunks(4) {
            let batch: Vec<Triplet> = chunk.to_vec();
            let queries: Vec<String> = batch.iter().map(|t| t.query.clone()).collect();
            let positives: Vec<String> = batch.iter().map(|t| t.positive.clone()).collect();
            let negatives: Vec<String> =
                batch.iter().map(|t| t.negative.clone().unwrap()).collect();
            let q = crate::encoder::forward(&queries, &params);
            let p = crate::encoder::forward(&positives, &params);
            let n = crate::encoder::forward(&negatives, &params);
            let block = ModelSimBlock::from_embeddings(
                &q.embeddings,
                &p.embeddings,
                Some(&n.embeddings),
            )
            .unwrap();
            let gblock = guide.similarities(&batch).unwrap();
            let masks = build_masks(&block, Some(&gblock), Strategy::Guided).unwrap();

            let label_of = |text: &str| {
                corpus
                    .items
                    .iter()
                    .find(|i| i.text == text)
                    .unwrap()
                    .cluster
            };
            for (i, t) in batch.iter().enumerate() {
                let contaminated =
                    label_of(&t.query) == label_of(t.negative.as_ref().unwrap());
                if contaminated {
                    assert!(
                        masks.qn.as_ref().unwrap().get(i, i),
                        "contaminated negative {i} not excluded"
                    );
                }
            }
        }
    }
}
