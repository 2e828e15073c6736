//! Triplet mining over labeled corpora.
//!
//! For each item used as a query: the positive is sampled from the
//! top-K_p most similar same-class items through a temperature softmax
//! over their similarity scores, and the negative is sampled uniformly
//! from the top-K_n most similar out-of-class items. Uniform negatives
//! avoid inheriting the reference model's biases about dissimilarity
//! and keep easy-negative lock-in out of the data.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::TextEmbedder;
use crate::error::{Error, Result};
use crate::vecmath::dot;

/// One training sample. `negative` is optional: pair-only data is
/// valid for every strategy except `assigned`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub query: String,
    #[serde(rename = "pos")]
    pub positive: String,
    #[serde(rename = "neg", skip_serializing_if = "Option::is_none", default)]
    pub negative: Option<String>,
    /// Optional provenance tag carried through the JSONL format.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub task: Option<String>,
}

impl Triplet {
    pub fn pair(query: impl Into<String>, positive: impl Into<String>) -> Self {
        Self {
            query: query.into(),
            positive: positive.into(),
            negative: None,
            task: None,
        }
    }

    pub fn full(
        query: impl Into<String>,
        positive: impl Into<String>,
        negative: impl Into<String>,
    ) -> Self {
        Self {
            query: query.into(),
            positive: positive.into(),
            negative: Some(negative.into()),
            task: None,
        }
    }
}

/// The assigned negatives of a batch, or None unless every triplet in
/// the batch carries one (similarity matrices need a full column set).
pub fn batch_negatives(batch: &[Triplet]) -> Option<Vec<String>> {
    batch
        .iter()
        .map(|t| t.negative.clone())
        .collect::<Option<Vec<_>>>()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub id: String,
    pub text: String,
    pub label: String,
}

/// A classification corpus: unique ids, at least two distinct labels.
#[derive(Debug, Clone, Default)]
pub struct LabeledCorpus {
    pub items: Vec<CorpusItem>,
}

impl LabeledCorpus {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashMap::new();
        for item in &self.items {
            if seen.insert(item.id.as_str(), ()).is_some() {
                return Err(Error::data(format!("duplicate corpus id {:?}", item.id)));
            }
        }
        let mut labels: Vec<&str> = self.items.iter().map(|i| i.label.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() < 2 {
            return Err(Error::data(format!(
                "corpus has {} distinct label(s); mining needs at least 2",
                labels.len()
            )));
        }
        Ok(())
    }

    /// Reads a JSONL file of `{"id", "text", "label"}` records.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let body = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        let mut items = Vec::new();
        for (lineno, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let item: CorpusItem = serde_json::from_str(line).map_err(|e| {
                Error::data(format!(
                    "{} line {}: {e}",
                    path.as_ref().display(),
                    lineno + 1
                ))
            })?;
            items.push(item);
        }
        Ok(Self { items })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for item in &self.items {
            out.push_str(
                &serde_json::to_string(item)
                    .map_err(|e| Error::data(format!("corpus encode failed: {e}")))?,
            );
            out.push('\n');
        }
        fs::write(path.as_ref(), out).map_err(|e| Error::io(path.as_ref(), e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    /// Positive candidates: the k_p highest-similarity in-class items.
    pub k_p: usize,
    /// Negative candidates: the k_n highest-similarity out-of-class
    /// items; None means all out-of-class samples.
    pub k_n: Option<usize>,
    /// Softmax temperature for positive sampling weights.
    pub temperature: f64,
    pub seed: u64,
    /// Triplets mined per query item. Kept at 1 unless augmenting.
    pub repeat: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            k_p: 100,
            k_n: None,
            temperature: 0.05,
            seed: 0,
            repeat: 1,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_p < 1 {
            return Err(Error::config("k_p must be >= 1"));
        }
        if self.k_n == Some(0) {
            return Err(Error::config("k_n must be >= 1 when set"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::config("mining temperature must be > 0"));
        }
        if self.repeat < 1 {
            return Err(Error::config("repeat must be >= 1"));
        }
        Ok(())
    }
}

/// Softmax sampling weights over the top-K_p similarity scores.
/// Exposed so the weight vector itself is testable; sums to 1.
pub fn positive_weights(similarities: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = similarities.iter().map(|s| s / temperature).collect();
    let mask = vec![false; scaled.len()];
    crate::vecmath::masked_softmax(&scaled, &mask).expect("nonempty candidate list")
}

/// Candidates ranked by descending similarity, ties broken by
/// ascending item id so the ranking is total and stable.
fn ranked(indices: &[usize], sims: &[f64], items: &[CorpusItem]) -> Vec<usize> {
    let mut order: Vec<usize> = indices.to_vec();
    order.sort_by(|&a, &b| {
        sims[b]
            .partial_cmp(&sims[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| items[a].id.cmp(&items[b].id))
    });
    order
}

fn sample_weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for (k, w) in weights.iter().enumerate() {
        cum += w;
        if u < cum {
            return k;
        }
    }
    weights.len() - 1
}

/// Mines one triplet per query item (times `cfg.repeat`), in ascending
/// item-id order. Deterministic for a fixed `(corpus, embedder, cfg)`.
/// Items whose class has no other member are skipped and logged.
pub fn mine_triplets(
    corpus: &LabeledCorpus,
    embedder: &dyn TextEmbedder,
    cfg: &MiningConfig,
) -> Result<Vec<Triplet>> {
    cfg.validate()?;
    corpus.validate()?;

    let mut order: Vec<usize> = (0..corpus.items.len()).collect();
    order.sort_by(|&a, &b| corpus.items[a].id.cmp(&corpus.items[b].id));

    let texts: Vec<String> = corpus.items.iter().map(|i| i.text.clone()).collect();
    let embedded = embedder.embed(&texts)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut triplets = Vec::new();

    for _ in 0..cfg.repeat {
        for &qi in &order {
            let query = &corpus.items[qi];
            let qvec = embedded.vectors.row(qi);

            let in_class: Vec<usize> = order
                .iter()
                .copied()
                .filter(|&j| j != qi && corpus.items[j].label == query.label)
                .collect();
            if in_class.is_empty() {
                log::warn!(
                    "skipping query {:?}: class {:?} has no other member",
                    query.id,
                    query.label
                );
                continue;
            }
            let out_class: Vec<usize> = order
                .iter()
                .copied()
                .filter(|&j| corpus.items[j].label != query.label)
                .collect();

            let sims: Vec<f64> = (0..corpus.items.len())
                .map(|j| dot(qvec, embedded.vectors.row(j)))
                .collect();

            let pos_ranked = ranked(&in_class, &sims, &corpus.items);
            let top_p = &pos_ranked[..pos_ranked.len().min(cfg.k_p)];
            let top_sims: Vec<f64> = top_p.iter().map(|&j| sims[j]).collect();
            let weights = positive_weights(&top_sims, cfg.temperature);
            let positive = &corpus.items[top_p[sample_weighted(&mut rng, &weights)]];

            let neg_ranked = ranked(&out_class, &sims, &corpus.items);
            let take_n = cfg.k_n.unwrap_or(neg_ranked.len()).min(neg_ranked.len());
            let top_n = &neg_ranked[..take_n];
            let negative = &corpus.items[top_n[rng.gen_range(0..top_n.len())]];

            triplets.push(Triplet::full(
                query.text.clone(),
                positive.text.clone(),
                negative.text.clone(),
            ));
        }
    }
    Ok(triplets)
}

/// Writes triplets as JSONL, one record per line, LF endings.
pub fn save_triplets(triplets: &[Triplet], path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    for t in triplets {
        serde_json::to_writer(&mut buf, t)
            .map_err(|e| Error::data(format!("triplet encode failed: {e}")))?;
        buf.write_all(b"\n").expect("vec write");
    }
    fs::write(path.as_ref(), buf).map_err(|e| Error::io(path.as_ref(), e))
}

/// Reads a triplet JSONL file; a malformed line fails with its line
/// number. An empty file is an empty list.
pub fn load_triplets(path: impl AsRef<Path>) -> Result<Vec<Triplet>> {
    let body = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    let mut triplets = Vec::new();
    for (lineno, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let t: Triplet = serde_json::from_str(line).map_err(|e| {
            Error::data(format!(
                "{} line {}: {e}",
                path.as_ref().display(),
                lineno + 1
            ))
        })?;
        triplets.push(t);
    }
    Ok(triplets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{EncoderParams, TokenizerConfig};

    fn toy_embedder() -> EncoderParams {
        let tok = TokenizerConfig {
            vocab_slots: 256,
            hash_seed: 3,
            lowercase: true,
            max_tokens: 8,
        };
        EncoderParams::init(8, tok, 11).unwrap()
    }

    fn four_item_corpus() -> LabeledCorpus {
        LabeledCorpus {
            items: vec![
                CorpusItem {
                    id: "a0".into(),
                    text: "apple fruit".into(),
                    label: "fruit".into(),
                },
                CorpusItem {
                    id: "a1".into(),
                    text: "banana fruit".into(),
                    label: "fruit".into(),
                },
                CorpusItem {
                    id: "b0".into(),
                    text: "hammer tool".into(),
                    label: "tool".into(),
                },
                CorpusItem {
                    id: "b1".into(),
                    text: "wrench tool".into(),
                    label: "tool".into(),
                },
            ],
        }
    }

    #[test]
    fn mined_triplets_respect_label_constraints() {
        let corpus = four_item_corpus();
        let embedder = toy_embedder();
        let cfg = MiningConfig {
            seed: 5,
            ..MiningConfig::default()
        };
        let triplets = mine_triplets(&corpus, &embedder, &cfg).unwrap();
        assert_eq!(triplets.len(), 4);
        let label_of = |text: &str| {
            corpus
                .items
                .iter()
                .find(|i| i.text == text)
                .unwrap()
                .label
                .clone()
        };
        for t in &triplets {
            assert_eq!(label_of(&t.query), label_of(&t.positive));
            assert_ne!(label_of(&t.query), label_of(t.negative.as_ref().unwrap()));
        }
    }

    #[test]
    fn positive_weights_match_hand_softmax() {
        // softmax((0.9, 0.8)/0.05) = softmax(18, 16) = (e^2, 1)/(e^2 + 1)
        let w = positive_weights(&[0.9, 0.8], 0.05);
        let e2 = 2.0f64.exp();
        assert!((w[0] - e2 / (e2 + 1.0)).abs() < 1e-12);
        assert!((w[1] - 1.0 / (e2 + 1.0)).abs() < 1e-12);
        assert!((w[0] - 0.8808).abs() < 1e-4);
        assert!((w[1] - 0.1192).abs() < 1e-4);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn near_zero_temperature_selects_argmax() {
        let w = positive_weights(&[0.3, 0.9, 0.5], 1e-9);
        assert_eq!(w[1], 1.0);
        assert_eq!(w[0], 0.0);
        assert_eq!(w[2], 0.0);
    }

    #[test]
    fn mining_is_deterministic_for_fixed_seed() {
        let corpus = four_item_corpus();
        let embedder = toy_embedder();
        let cfg = MiningConfig {
            seed: 123,
            ..MiningConfig::default()
        };
        let a = mine_triplets(&corpus, &embedder, &cfg).unwrap();
        let b = mine_triplets(&corpus, &embedder, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_member_class_is_skipped_as_query() {
        let mut corpus = four_item_corpus();
        corpus.items.push(CorpusItem {
            id: "c0".into(),
            text: "lonely text".into(),
            label: "solo".into(),
        });
        let embedder = toy_embedder();
        let cfg = MiningConfig::default();
        let triplets = mine_triplets(&corpus, &embedder, &cfg).unwrap();
        assert_eq!(triplets.len(), 4);
        assert!(triplets.iter().all(|t| t.query != "lonely text"));
    }

    #[test]
    fn single_class_corpus_is_rejected() {
        let corpus = LabeledCorpus {
            items: vec![
                CorpusItem {
                    id: "a".into(),
                    text: "x".into(),
                    label: "only".into(),
                },
                CorpusItem {
                    id: "b".into(),
                    text: "y".into(),
                    label: "only".into(),
                },
            ],
        };
        let embedder = toy_embedder();
        assert!(matches!(
            mine_triplets(&corpus, &embedder, &MiningConfig::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn k_p_larger_than_class_is_clamped() {
        let corpus = four_item_corpus();
        let embedder = toy_embedder();
        let cfg = MiningConfig {
            k_p: 10_000,
            seed: 1,
            ..MiningConfig::default()
        };
        assert_eq!(mine_triplets(&corpus, &embedder, &cfg).unwrap().len(), 4);
    }

    #[test]
    fn triplet_jsonl_round_trip_is_identity() {
        let triplets = vec![
            Triplet::full("q1", "p1", "n1"),
            Triplet::pair("q2", "p2"),
            Triplet {
                task: Some("demo".into()),
                ..Triplet::full("q3", "p3", "n3")
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        save_triplets(&triplets, &path).unwrap();
        assert_eq!(load_triplets(&path).unwrap(), triplets);
    }

    #[test]
    fn record_without_neg_loads_as_pair() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(&path, "{\"query\":\"q\",\"pos\":\"p\"}\n").unwrap();
        let loaded = load_triplets(&path).unwrap();
        assert_eq!(loaded.len(), 1);
        assert!(loaded[0].negative.is_none());
    }

    #[test]
    fn empty_file_loads_as_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load_triplets(&path).unwrap().is_empty());
    }

    #[test]
    fn malformed_line_error_names_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(&path, "{\"query\":\"q\",\"pos\":\"p\"}\nnot json\n").unwrap();
        match load_triplets(&path) {
            Err(Error::Data(msg)) => assert!(msg.contains("line 2"), "message was {msg:?}"),
            other => panic!("expected data error, got {other:?}"),
        }
    }
}
