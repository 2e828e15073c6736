//! The frozen guide and its similarity judgments.
//!
//! A guide scores the relatedness of batch texts so the selection
//! module can exclude likely-relevant candidates from the negative
//! pool. Three implementations: a frozen encoder checkpoint, a
//! precomputed-embedding store exported from any external model, and a
//! label oracle for synthetic corpora where ground truth is known.
//! Guides never receive gradients.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use crate::encoder::{EmbeddedTexts, EncoderParams, TextEmbedder};
use crate::error::{Error, Result};
use crate::mining::{batch_negatives, Triplet};
use crate::vecmath::{cosine_matrix, l2_norm, Matrix};

/// Guide-side pairwise similarity matrices for one batch. `qn` is
/// present only when every triplet in the batch has an assigned
/// negative.
#[derive(Debug, Clone)]
pub struct GuideSimBlock {
    pub qp: Matrix,
    pub qn: Option<Matrix>,
    pub qq: Matrix,
    pub pp: Matrix,
}

impl GuideSimBlock {
    pub fn batch_size(&self) -> usize {
        self.qp.rows()
    }
}

/// The label oracle reports same-cluster similarity 1.0, but its
/// query-positive threshold is backed off by this offset so the strict
/// `>` masking rule excludes every same-cluster candidate instead of
/// keeping them on exact ties.
pub const LABEL_ORACLE_THRESHOLD_OFFSET: f64 = 1e-6;

/// Text -> cluster label lookup backing the label oracle.
#[derive(Debug, Clone, Default)]
pub struct LabelMap {
    labels: HashMap<String, String>,
}

impl LabelMap {
    pub fn new(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        Self {
            labels: pairs.into_iter().collect(),
        }
    }

    /// Reads a JSONL corpus of `{"id", "text", "label"}` records.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let corpus = crate::mining::LabeledCorpus::load(path)?;
        Ok(Self::new(
            corpus.items.into_iter().map(|i| (i.text, i.label)),
        ))
    }

    pub fn get(&self, text: &str) -> Result<&str> {
        self.labels
            .get(text)
            .map(String::as_str)
            .ok_or_else(|| Error::data(format!("label oracle has no label for text {text:?}")))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// On-disk embedding store keyed by a content hash of the exact text
/// bytes; no whitespace normalization is applied, so exporters must
/// emit exactly the training texts.
#[derive(Debug, Default)]
pub struct PrecomputedStore {
    dim: usize,
    entries: HashMap<String, Vec<f64>>,
}

impl PrecomputedStore {
    pub fn content_hash(text: &str) -> String {
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Embeds every text with `embedder` and stores the unit vectors.
    pub fn build(texts: &[String], embedder: &dyn TextEmbedder) -> Result<Self> {
        let embedded = embedder.embed(texts)?;
        let dim = embedded.vectors.cols();
        let mut entries = HashMap::new();
        for (i, text) in texts.iter().enumerate() {
            entries.insert(
                Self::content_hash(text),
                embedded.vectors.row(i).to_vec(),
            );
        }
        Ok(Self { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, text: &str) -> Result<&[f64]> {
        self.entries
            .get(&Self::content_hash(text))
            .map(Vec::as_slice)
            .ok_or_else(|| {
                Error::data(format!("precomputed store has no embedding for text {text:?}"))
            })
    }

    /// Line-delimited format: a header carrying the dimension and hash
    /// algorithm id, then one `<hex-hash>\t<v0> <v1> ...` record per
    /// text, sorted by hash for reproducible bytes.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut keys: Vec<&String> = self.entries.keys().collect();
        keys.sort();
        let mut out = format!("dim={} hash=sha256\n", self.dim);
        for key in keys {
            out.push_str(key);
            out.push('\t');
            let values = &self.entries[key];
            for (k, v) in values.iter().enumerate() {
                if k > 0 {
                    out.push(' ');
                }
                out.push_str(&format!("{v:?}"));
            }
            out.push('\n');
        }
        fs::write(path.as_ref(), out).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let body = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        let mut lines = body.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::data(format!("{}: empty store", path.as_ref().display())))?;
        let mut dim = None;
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("dim", v)) => {
                    dim = Some(v.parse::<usize>().map_err(|_| {
                        Error::data(format!("{}: bad dim in header", path.as_ref().display()))
                    })?);
                }
                Some(("hash", "sha256")) => {}
                Some(("hash", other)) => {
                    return Err(Error::data(format!(
                        "{}: unsupported hash algorithm {other:?}",
                        path.as_ref().display()
                    )));
                }
                _ => {
                    return Err(Error::data(format!(
                        "{}: malformed header field {field:?}",
                        path.as_ref().display()
                    )));
                }
            }
        }
        let dim = dim.ok_or_else(|| {
            Error::data(format!("{}: header missing dim", path.as_ref().display()))
        })?;
        let mut entries = HashMap::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (key, rest) = line.split_once('\t').ok_or_else(|| {
                Error::data(format!(
                    "{} line {}: missing tab separator",
                    path.as_ref().display(),
                    lineno + 2
                ))
            })?;
            let values = rest
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| {
                    Error::data(format!(
                        "{} line {}: {e}",
                        path.as_ref().display(),
                        lineno + 2
                    ))
                })?;
            if values.len() != dim {
                return Err(Error::data(format!(
                    "{} line {}: expected {dim} values, found {}",
                    path.as_ref().display(),
                    lineno + 2,
                    values.len()
                )));
            }
            entries.insert(key.to_string(), values);
        }
        Ok(Self { dim, entries })
    }
}

/// A frozen guide model. Construction fixes the variant; afterwards it
/// is read-only and safe for concurrent queries.
pub enum Guide {
    FrozenEncoder(FrozenGuide),
    Precomputed(PrecomputedStore),
    LabelOracle(LabelMap),
}

/// Frozen encoder checkpoint with a per-text embedding cache. The
/// guide never changes during a run, so caching by exact text is safe.
pub struct FrozenGuide {
    params: EncoderParams,
    cache: Mutex<HashMap<String, (Vec<f64>, bool)>>,
}

impl FrozenGuide {
    pub fn new(params: EncoderParams) -> Self {
        Self {
            params,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl Guide {
    pub fn frozen(params: EncoderParams) -> Self {
        Guide::FrozenEncoder(FrozenGuide::new(params))
    }

    /// Parses a CLI guide spec: `frozen:<checkpoint>`,
    /// `precomputed:<store>`, or `labels:<corpus.jsonl>`.
    pub fn from_spec(spec: &str) -> Result<Self> {
        match spec.split_once(':') {
            Some(("frozen", path)) => Ok(Guide::frozen(EncoderParams::load(path)?)),
            Some(("precomputed", path)) => Ok(Guide::Precomputed(PrecomputedStore::load(path)?)),
            Some(("labels", path)) => Ok(Guide::LabelOracle(LabelMap::load(path)?)),
            _ => Err(Error::config(format!(
                "guide spec {spec:?} must be frozen:<checkpoint>, precomputed:<store>, or labels:<corpus.jsonl>"
            ))),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Guide::FrozenEncoder(_) => "frozen-encoder",
            Guide::Precomputed(_) => "precomputed",
            Guide::LabelOracle(_) => "label-oracle",
        }
    }

    fn embed_one(&self, text: &str) -> Result<(Vec<f64>, bool)> {
        match self {
            Guide::FrozenEncoder(frozen) => {
                let mut cache = cache_lock(&frozen.cache);
                if let Some(hit) = cache.get(text) {
                    return Ok(hit.clone());
                }
                let batch = crate::encoder::forward(&[text.to_string()], &frozen.params);
                let entry = (batch.embeddings.row(0).to_vec(), batch.degenerate[0]);
                cache.insert(text.to_string(), entry.clone());
                Ok(entry)
            }
            Guide::Precomputed(store) => {
                let values = store.lookup(text)?.to_vec();
                let degenerate = l2_norm(&values) == 0.0;
                Ok((values, degenerate))
            }
            Guide::LabelOracle(_) => Err(Error::data(
                "label oracle provides similarities from labels, not embeddings",
            )),
        }
    }

    fn embed_matrix(&self, texts: &[&str]) -> Result<Matrix> {
        let mut rows = Vec::with_capacity(texts.len());
        for text in texts {
            rows.push(self.embed_one(text)?.0);
        }
        Matrix::from_rows(&rows)
    }

    /// Computes the guide's four pairwise similarity matrices for a
    /// batch. For the label oracle an entry is 1 when the two texts
    /// share a cluster label and 0 otherwise, with the query-positive
    /// diagonal backed off by [`LABEL_ORACLE_THRESHOLD_OFFSET`].
    pub fn similarities(&self, batch: &[Triplet]) -> Result<GuideSimBlock> {
        if batch.is_empty() {
            return Err(Error::contract("guide similarities need a nonempty batch"));
        }
        match self {
            Guide::LabelOracle(labels) => self.label_similarities(batch, labels),
            _ => {
                let queries: Vec<&str> = batch.iter().map(|t| t.query.as_str()).collect();
                let positives: Vec<&str> = batch.iter().map(|t| t.positive.as_str()).collect();
                let q = self.embed_matrix(&queries)?;
                let p = self.embed_matrix(&positives)?;
                let qn = match batch_negatives(batch) {
                    Some(negs) => {
                        let refs: Vec<&str> = negs.iter().map(String::as_str).collect();
                        let n = self.embed_matrix(&refs)?;
                        Some(cosine_matrix(&q, &n)?)
                    }
                    None => None,
                };
                Ok(GuideSimBlock {
                    qp: cosine_matrix(&q, &p)?,
                    qn,
                    qq: cosine_matrix(&q, &q)?,
                    pp: cosine_matrix(&p, &p)?,
                })
            }
        }
    }

    fn label_similarities(&self, batch: &[Triplet], labels: &LabelMap) -> Result<GuideSimBlock> {
        let n = batch.len();
        let q_labels: Vec<&str> = batch
            .iter()
            .map(|t| labels.get(&t.query))
            .collect::<Result<_>>()?;
        let p_labels: Vec<&str> = batch
            .iter()
            .map(|t| labels.get(&t.positive))
            .collect::<Result<_>>()?;
        let negatives = batch_negatives(batch);
        let n_labels: Option<Vec<&str>> = match &negatives {
            Some(negs) => Some(negs.iter().map(|t| labels.get(t)).collect::<Result<_>>()?),
            None => None,
        };
        let fill = |a: &[&str], b: &[&str]| {
            let mut m = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    m.set(i, j, if a[i] == b[j] { 1.0 } else { 0.0 });
                }
            }
            m
        };
        let mut qp = fill(&q_labels, &p_labels);
        for i in 0..n {
            // The masking threshold sits just below the oracle's own
            // relevance report; see LABEL_ORACLE_THRESHOLD_OFFSET.
            qp.set(i, i, qp.get(i, i) - LABEL_ORACLE_THRESHOLD_OFFSET);
        }
        Ok(GuideSimBlock {
            qp,
            qn: n_labels.as_ref().map(|nl| fill(&q_labels, nl)),
            qq: fill(&q_labels, &q_labels),
            pp: fill(&p_labels, &p_labels),
        })
    }
}

fn cache_lock(
    cache: &Mutex<HashMap<String, (Vec<f64>, bool)>>,
) -> std::sync::MutexGuard<'_, HashMap<String, (Vec<f64>, bool)>> {
    cache.lock().unwrap_or_else(std::sync::PoisonError::into_inner)
}

impl TextEmbedder for Guide {
    fn embed(&self, texts: &[String]) -> Result<EmbeddedTexts> {
        let mut rows = Vec::with_capacity(texts.len());
        let mut degenerate = Vec::with_capacity(texts.len());
        for text in texts {
            let (values, degen) = self.embed_one(text)?;
            rows.push(values);
            degenerate.push(degen);
        }
        Ok(EmbeddedTexts {
            vectors: Matrix::from_rows(&rows)?,
            degenerate,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{forward, TokenizerConfig};

    fn toy_params(seed: u64) -> EncoderParams {
        let tok = TokenizerConfig {
            vocab_slots: 128,
            hash_seed: 9,
            lowercase: true,
            max_tokens: 8,
        };
        EncoderParams::init(6, tok, seed).unwrap()
    }

    #[test]
    fn batch_of_one_has_unit_self_similarities() {
        let guide = Guide::frozen(toy_params(1));
        let batch = vec![Triplet::full("some query", "some positive", "some negative")];
        let block = guide.similarities(&batch).unwrap();
        assert_eq!(block.batch_size(), 1);
        assert!((block.qq.get(0, 0) - 1.0).abs() < 1e-9);
        assert!((block.pp.get(0, 0) - 1.0).abs() < 1e-9);
        assert!(block.qn.is_some());
    }

    #[test]
    fn label_oracle_different_clusters_give_identity_qq() {
        let labels = LabelMap::new([
            ("q one".to_string(), "a".to_string()),
            ("p one".to_string(), "a".to_string()),
            ("q two".to_string(), "b".to_string()),
            ("p two".to_string(), "b".to_string()),
        ]);
        let guide = Guide::LabelOracle(labels);
        let batch = vec![Triplet::pair("q one", "p one"), Triplet::pair("q two", "p two")];
        let block = guide.similarities(&batch).unwrap();
        assert_eq!(block.qq.get(0, 0), 1.0);
        assert_eq!(block.qq.get(0, 1), 0.0);
        assert_eq!(block.qq.get(1, 0), 0.0);
        assert_eq!(block.qq.get(1, 1), 1.0);
        assert!(block.qn.is_none());
        // Thresholds sit just under the oracle's same-cluster report.
        assert!((block.qp.get(0, 0) - (1.0 - LABEL_ORACLE_THRESHOLD_OFFSET)).abs() < 1e-15);
    }

    #[test]
    fn label_oracle_missing_label_is_data_error() {
        let guide = Guide::LabelOracle(LabelMap::new([("known".to_string(), "a".to_string())]));
        let batch = vec![Triplet::pair("known", "unknown text")];
        match guide.similarities(&batch) {
            Err(Error::Data(msg)) => assert!(msg.contains("unknown text")),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn frozen_guide_matches_forward_plus_cosine() {
        let params = toy_params(3);
        let guide = Guide::frozen(params.clone());
        let batch = vec![
            Triplet::full("alpha beta", "gamma", "delta"),
            Triplet::full("epsilon", "zeta eta", "theta"),
        ];
        let block = guide.similarities(&batch).unwrap();

        let q = forward(
            &batch.iter().map(|t| t.query.clone()).collect::<Vec<_>>(),
            &params,
        );
        let p = forward(
            &batch.iter().map(|t| t.positive.clone()).collect::<Vec<_>>(),
            &params,
        );
        let expected = cosine_matrix(&q.embeddings, &p.embeddings).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((block.qp.get(i, j) - expected.get(i, j)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn guide_similarities_are_deterministic() {
        let guide = Guide::frozen(toy_params(8));
        let batch = vec![Triplet::full("q a", "p a", "n a"), Triplet::full("q b", "p b", "n b")];
        let one = guide.similarities(&batch).unwrap();
        let two = guide.similarities(&batch).unwrap();
        assert_eq!(one.qp.values(), two.qp.values());
        assert_eq!(one.qq.values(), two.qq.values());
    }

    #[test]
    fn precomputed_store_round_trip_and_missing_text() {
        let params = toy_params(4);
        let texts = vec!["first text".to_string(), "second text".to_string()];
        let store = PrecomputedStore::build(&texts, &params).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.tsv");
        store.save(&path).unwrap();
        let loaded = PrecomputedStore::load(&path).unwrap();
        assert_eq!(loaded.dim(), store.dim());
        for t in &texts {
            let a = store.lookup(t).unwrap();
            let b = loaded.lookup(t).unwrap();
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        match loaded.lookup("never stored") {
            Err(Error::Data(msg)) => assert!(msg.contains("never stored")),
            other => panic!("expected data error, got {other:?}"),
        }
    }

    #[test]
    fn precomputed_guide_agrees_with_frozen_guide() {
        let params = toy_params(5);
        let batch = vec![Triplet::full("one two", "three", "four five")];
        let mut texts = Vec::new();
        for t in &batch {
            texts.push(t.query.clone());
            texts.push(t.positive.clone());
            texts.push(t.negative.clone().unwrap());
        }
        let store = PrecomputedStore::build(&texts, &params).unwrap();
        let frozen = Guide::frozen(params);
        let precomputed = Guide::Precomputed(store);
        let a = frozen.similarities(&batch).unwrap();
        let b = precomputed.similarities(&batch).unwrap();
        assert!((a.qp.get(0, 0) - b.qp.get(0, 0)).abs() < 1e-15);
    }

    #[test]
    fn from_spec_rejects_unknown_scheme() {
        assert!(matches!(
            Guide::from_spec("mystery:path"),
            Err(Error::Config(_))
        ));
    }
}
