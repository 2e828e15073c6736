//! Temperature-scaled contrastive loss over masked candidates, with
//! analytic gradients with respect to the similarity entries and the
//! embeddings behind them.
//!
//! Per anchor row the candidate logits are the row's positive
//! similarity plus every unmasked entry of the qp/qn/qq blocks (and pp
//! when `include_pp_rows` is set), each divided by the temperature.
//! The per-row loss is the negative log-probability of the positive
//! under a softmax over those candidates. Masked cells receive exactly
//! zero gradient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::selection::{MaskSet, ModelSimBlock};
use crate::vecmath::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Softmax temperature; similarities are divided by this.
    pub temperature: f64,
    /// Whether positive-positive rows contribute candidate logits.
    /// Row i of the pp block is anchored at p_i rather than q_i, but
    /// masking it only has an effect if it feeds the loss.
    pub include_pp_rows: bool,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.01,
            include_pp_rows: true,
            reduction: Reduction::Mean,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::config(format!(
                "loss temperature must be > 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Gradients with respect to the similarity entries, aligned with
/// [`ModelSimBlock`]. Masked cells are bitwise zero.
#[derive(Debug, Clone)]
pub struct SimGradients {
    pub qp: Matrix,
    pub qn: Option<Matrix>,
    pub qq: Matrix,
    pub pp: Matrix,
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    /// Reduced loss over non-skipped rows.
    pub value: f64,
    /// Per-row losses; zero for skipped rows.
    pub per_sample: Vec<f64>,
    pub grad: SimGradients,
    /// Candidates that actually entered each row's softmax.
    pub active_negative_counts: Vec<usize>,
    /// Rows excluded from the reduction (degenerate embeddings).
    pub skipped: Vec<bool>,
}

#[derive(Clone, Copy)]
enum Block {
    Qp,
    Qn,
    Qq,
    Pp,
}

/// Computes the contrastive loss and its gradient with respect to each
/// similarity entry. Rows flagged in `skip_rows` (degenerate
/// embeddings) are excluded from the reduction denominator and get a
/// zero row everywhere.
pub fn contrastive_loss(
    block: &ModelSimBlock,
    masks: &MaskSet,
    cfg: &LossConfig,
    skip_rows: Option<&[bool]>,
) -> Result<LossOutput> {
    cfg.validate()?;
    let n = block.batch_size();
    if masks.batch_size() != n {
        return Err(Error::contract(format!(
            "mask batch size {} does not match similarity batch size {n}",
            masks.batch_size()
        )));
    }
    if let Some(skip) = skip_rows {
        if skip.len() != n {
            return Err(Error::contract(format!(
                "skip_rows length {} does not match batch size {n}",
                skip.len()
            )));
        }
    }

    let skipped: Vec<bool> = (0..n)
        .map(|i| skip_rows.map_or(false, |s| s[i]))
        .collect();
    let n_eff = skipped.iter().filter(|&&s| !s).count();
    for (i, &s) in skipped.iter().enumerate() {
        if s {
            log::debug!("loss: skipping row {i} with degenerate embedding");
        }
    }

    let scale = match cfg.reduction {
        Reduction::Mean if n_eff > 0 => 1.0 / n_eff as f64,
        _ => 1.0,
    };
    let inv_tau = 1.0 / cfg.temperature;

    let mut grad = SimGradients {
        qp: Matrix::zeros(n, n),
        qn: block.qn.as_ref().map(|_| Matrix::zeros(n, n)),
        qq: Matrix::zeros(n, n),
        pp: Matrix::zeros(n, n),
    };
    let mut per_sample = vec![0.0; n];
    let mut active_counts = vec![0usize; n];

    for i in 0..n {
        if skipped[i] {
            continue;
        }
        // Candidate list: the positive first, then unmasked row cells.
        let mut cells: Vec<(Block, usize)> = Vec::new();
        let mut logits: Vec<f64> = Vec::new();
        logits.push(block.qp.get(i, i) * inv_tau);
        for j in 0..n {
            if !masks.qp.get(i, j) {
                cells.push((Block::Qp, j));
                logits.push(block.qp.get(i, j) * inv_tau);
            }
        }
        if let (Some(sqn), Some(mqn)) = (&block.qn, &masks.qn) {
            for j in 0..n {
                if !mqn.get(i, j) {
                    cells.push((Block::Qn, j));
                    logits.push(sqn.get(i, j) * inv_tau);
                }
            }
        }
        for j in 0..n {
            if !masks.qq.get(i, j) {
                cells.push((Block::Qq, j));
                logits.push(block.qq.get(i, j) * inv_tau);
            }
        }
        if cfg.include_pp_rows {
            for j in 0..n {
                if !masks.pp.get(i, j) {
                    cells.push((Block::Pp, j));
                    logits.push(block.pp.get(i, j) * inv_tau);
                }
            }
        }
        active_counts[i] = cells.len();

        let mask = vec![false; logits.len()];
        per_sample[i] = crate::vecmath::masked_log_softmax(&logits, &mask, 0)?;
        let probs = crate::vecmath::masked_softmax(&logits, &mask)?;

        // d loss / d sim = (p_k - 1{k = positive}) / tau, scaled by the
        // reduction factor. The positive logit is the qp diagonal.
        let g_pos = (probs[0] - 1.0) * inv_tau * scale;
        grad.qp.add_at(i, i, g_pos);
        for (k, (kind, j)) in cells.iter().enumerate() {
            let g = probs[k + 1] * inv_tau * scale;
            match kind {
                Block::Qp => grad.qp.add_at(i, *j, g),
                Block::Qn => grad.qn.as_mut().expect("qn grad").add_at(i, *j, g),
                Block::Qq => grad.qq.add_at(i, *j, g),
                Block::Pp => grad.pp.add_at(i, *j, g),
            }
        }
    }

    let sum: f64 = per_sample.iter().sum();
    let value = match cfg.reduction {
        Reduction::Mean if n_eff > 0 => sum / n_eff as f64,
        _ => sum,
    };

    Ok(LossOutput {
        value,
        per_sample,
        grad,
        active_negative_counts: active_counts,
        skipped,
    })
}

/// Gradients with respect to the (unit) embedding rows behind the
/// similarity blocks. Guide-side embeddings receive nothing.
#[derive(Debug, Clone)]
pub struct EmbeddingGrads {
    pub queries: Matrix,
    pub positives: Matrix,
    pub negatives: Option<Matrix>,
}

/// Chain rule through the bilinear similarity cells: a cell (a, b)
/// with upstream gradient g adds `g * b` to a's gradient and `g * a`
/// to b's.
pub fn backprop_to_embeddings(
    grad: &SimGradients,
    queries: &Matrix,
    positives: &Matrix,
    negatives: Option<&Matrix>,
) -> Result<EmbeddingGrads> {
    let n = grad.qp.rows();
    let dim = queries.cols();
    if queries.rows() != n || positives.rows() != n || positives.cols() != dim {
        return Err(Error::contract(
            "embedding blocks do not match the gradient batch size",
        ));
    }
    if grad.qn.is_some() != negatives.is_some() {
        return Err(Error::contract(
            "qn gradient and negative embeddings must be present together",
        ));
    }

    let mut gq = Matrix::zeros(n, dim);
    let mut gp = Matrix::zeros(n, dim);
    let mut gn = negatives.map(|_| Matrix::zeros(n, dim));

    let scatter =
        |g_block: &Matrix, a_emb: &Matrix, b_emb: &Matrix, ga: &mut Matrix, gb: &mut Matrix| {
            for i in 0..n {
                for j in 0..n {
                    let g = g_block.get(i, j);
                    if g == 0.0 {
                        continue;
                    }
                    for d in 0..dim {
                        ga.add_at(i, d, g * b_emb.get(j, d));
                        gb.add_at(j, d, g * a_emb.get(i, d));
                    }
                }
            }
        };

    scatter(&grad.qp, queries, positives, &mut gq, &mut gp);
    if let (Some(gqn), Some(nemb), Some(gn)) = (&grad.qn, negatives, gn.as_mut()) {
        scatter(gqn, queries, nemb, &mut gq, gn);
    }
    // qq and pp are self-pairings: both sides land in the same block.
    {
        let mut gq_extra = Matrix::zeros(n, dim);
        scatter(&grad.qq, queries, queries, &mut gq, &mut gq_extra);
        for (dst, src) in gq.values_mut().iter_mut().zip(gq_extra.values()) {
            *dst += src;
        }
        let mut gp_extra = Matrix::zeros(n, dim);
        scatter(&grad.pp, positives, positives, &mut gp, &mut gp_extra);
        for (dst, src) in gp.values_mut().iter_mut().zip(gp_extra.values()) {
            *dst += src;
        }
    }

    Ok(EmbeddingGrads {
        queries: gq,
        positives: gp,
        negatives: gn,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::{build_masks, Strategy};
    use crate::vecmath::Matrix;

    fn unit_rows(rows: &[Vec<f64>]) -> Matrix {
        let normed: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| crate::vecmath::l2_normalize(r).values)
            .collect();
        Matrix::from_rows(&normed).unwrap()
    }

    /// Independent oracle: enumerate a row's candidates straight from
    /// the masks and evaluate the softmax directly.
    fn brute_force_per_sample(
        block: &ModelSimBlock,
        masks: &MaskSet,
        cfg: &LossConfig,
        row: usize,
    ) -> f64 {
        let n = block.batch_size();
        let mut sims = vec![block.qp.get(row, row)];
        for j in 0..n {
            if !masks.qp.get(row, j) {
                sims.push(block.qp.get(row, j));
            }
        }
        if let (Some(sqn), Some(mqn)) = (&block.qn, &masks.qn) {
            for j in 0..n {
                if !mqn.get(row, j) {
                    sims.push(sqn.get(row, j));
                }
            }
        }
        for j in 0..n {
            if !masks.qq.get(row, j) {
                sims.push(block.qq.get(row, j));
            }
        }
        if cfg.include_pp_rows {
            for j in 0..n {
                if !masks.pp.get(row, j) {
                    sims.push(block.pp.get(row, j));
                }
            }
        }
        let denom: f64 = sims.iter().map(|s| (s / cfg.temperature).exp()).sum();
        -((sims[0] / cfg.temperature).exp() / denom).ln()
    }

    #[test]
    fn lone_positive_gives_zero_loss_and_gradients() {
        let q = unit_rows(&[vec![1.0, 0.0]]);
        let p = unit_rows(&[vec![0.0, 1.0]]);
        let block = ModelSimBlock::from_embeddings(&q, &p, None).unwrap();
        let masks = build_masks(&block, None, Strategy::FullBatch).unwrap();
        let out = contrastive_loss(&block, &masks, &LossConfig::default(), None).unwrap();
        assert_eq!(out.per_sample, vec![0.0]);
        assert_eq!(out.value, 0.0);
        assert!(out.grad.qp.values().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn all_negatives_masked_gives_zero_loss_any_temperature() {
        let q = unit_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let p = unit_rows(&[vec![0.7, 0.3], vec![0.2, 0.8]]);
        let block = ModelSimBlock::from_embeddings(&q, &p, None).unwrap();
        let masks = build_masks(&block, None, Strategy::Assigned);
        // Assigned is rejected on pair-only data; emulate "everything
        // masked" through a guide that outranks every candidate.
        assert!(masks.is_err());
        let guide = crate::guide::GuideSimBlock {
            qp: Matrix::from_values(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap(),
            qn: None,
            qq: Matrix::from_values(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap(),
            pp: Matrix::from_values(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap(),
        };
        for tau in [0.1, 0.01, 1.0] {
            let cfg = LossConfig {
                temperature: tau,
                ..LossConfig::default()
            };
            let masks = build_masks(&block, Some(&guide), Strategy::Guided).unwrap();
            let out = contrastive_loss(&block, &masks, &cfg, None).unwrap();
            assert_eq!(out.value, 0.0);
        }
    }

    #[test]
    fn worked_two_row_example_matches_oracle() {
        // q1 = p1 = (1,0); q2 = p2 = n1 = (0,1); n2 = (1,0).
        let q = unit_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let p = unit_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let n = unit_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let block = ModelSimBlock::from_embeddings(&q, &p, Some(&n)).unwrap();
        let masks = build_masks(&block, None, Strategy::FullBatch).unwrap();
        let cfg = LossConfig {
            temperature: 1.0,
            include_pp_rows: false,
            reduction: Reduction::Mean,
        };
        let out = contrastive_loss(&block, &masks, &cfg, None).unwrap();
        let oracle = brute_force_per_sample(&block, &masks, &cfg, 0);
        assert!((out.per_sample[0] - oracle).abs() < 1e-12);
        // Row 1 logits: pos 1; candidates {0 (p2), 0 (n1), 1 (n2), 0 (q2)}.
        let e = std::f64::consts::E;
        let expected = -(e / (3.0 + 2.0 * e)).ln();
        assert!((out.per_sample[0] - expected).abs() < 1e-12);
        assert!((expected - 1.1326).abs() < 1e-4);
    }

    #[test]
    fn value_is_reduction_of_per_sample() {
        let q = unit_rows(&[vec![0.9, 0.1], vec![-0.4, 0.6], vec![0.2, -0.7]]);
        let p = unit_rows(&[vec![0.8, 0.3], vec![-0.5, 0.5], vec![0.1, -0.9]]);
        let block = ModelSimBlock::from_embeddings(&q, &p, None).unwrap();
        let masks = build_masks(&block, None, Strategy::FullBatch).unwrap();
        for reduction in [Reduction::Mean, Reduction::Sum] {
            let cfg = LossConfig {
                temperature: 0.5,
                reduction,
                ..LossConfig::default()
            };
            let out = contrastive_loss(&block, &masks, &cfg, None).unwrap();
            let sum: f64 = out.per_sample.iter().sum();
            let want = match reduction {
                Reduction::Mean => sum / 3.0,
                Reduction::Sum => sum,
            };
            assert!((out.value - want).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_signs_and_probability_sum() {
        let q = unit_rows(&[vec![0.9, 0.1], vec![-0.4, 0.6]]);
        let p = unit_rows(&[vec![0.8, 0.3], vec![-0.5, 0.5]]);
        let n = unit_rows(&[vec![0.3, -0.8], vec![0.6, 0.6]]);
        let block = ModelSimBlock::from_embeddings(&q, &p, Some(&n)).unwrap();
        let masks = build_masks(&block, None, Strategy::FullBatch).unwrap();
        let cfg = LossConfig {
            temperature: 0.1,
            reduction: Reduction::Sum,
            ..LossConfig::default()
        };
        let out = contrastive_loss(&block, &masks, &cfg, None).unwrap();
        for i in 0..2 {
            // Positive-logit gradient <= 0; negative logits >= 0.
            assert!(out.grad.qp.get(i, i) <= 0.0);
            for j in 0..2 {
                if i != j {
                    assert!(out.grad.qp.get(i, j) >= 0.0);
                    assert!(out.grad.qq.get(i, j) >= 0.0);
                    assert!(out.grad.pp.get(i, j) >= 0.0);
                }
                assert!(out.grad.qn.as_ref().unwrap().get(i, j) >= 0.0);
            }
            // Softmax gradient identity: entries of a row sum to zero,
            // which is the "probabilities sum to one" statement after
            // differentiating.
            let mut row_sum = out.grad.qp.get(i, i);
            for j in 0..2 {
                if i != j {
                    row_sum += out.grad.qp.get(i, j);
                    row_sum += out.grad.qq.get(i, j);
                    row_sum += out.grad.pp.get(i, j);
                }
                row_sum += out.grad.qn.as_ref().unwrap().get(i, j);
            }
            assert!(row_sum.abs() < 1e-12 / cfg.temperature);
        }
    }

    #[test]
    fn masked_cells_have_bitwise_zero_gradient() {
        let q = unit_rows(&[vec![0.9, 0.1], vec![-0.4, 0.6]]);
        let p = unit_rows(&[vec![0.8, 0.3], vec![-0.5, 0.5]]);
        let n = unit_rows(&[vec![0.3, -0.8], vec![0.6, 0.6]]);
        let block = ModelSimBlock::from_embeddings(&q, &p, Some(&n)).unwrap();
        let masks = build_masks(&block, None, Strategy::Assigned).unwrap();
        let out = contrastive_loss(&block, &masks, &LossConfig::default(), None).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                if i != j {
                    assert_eq!(out.grad.qp.get(i, j).to_bits(), 0.0f64.to_bits());
                }
                assert_eq!(out.grad.qq.get(i, j).to_bits(), 0.0f64.to_bits());
                assert_eq!(out.grad.pp.get(i, j).to_bits(), 0.0f64.to_bits());
            }
        }
    }

    #[test]
    fn loss_grows_as_temperature_shrinks_when_positive_is_not_max() {
        let q = unit_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        // Positive similarity 0.6; a competing query at 0.9.
        let p = unit_rows(&[vec![0.6, 0.8], vec![0.0, 1.0]]);
        let mut block = ModelSimBlock::from_embeddings(&q, &p, None).unwrap();
        block.qq.set(0, 1, 0.9);
        let masks = build_masks(&block, None, Strategy::FullBatch).unwrap();
        let mut last = 0.0;
        for tau in [0.1, 0.01, 0.001] {
            let cfg = LossConfig {
                temperature: tau,
                reduction: Reduction::Sum,
                ..LossConfig::default()
            };
            let out = contrastive_loss(&block, &masks, &cfg, None).unwrap();
            assert!(out.per_sample[0] > last);
            last = out.per_sample[0];
        }
        // And toward zero when the positive is the strict max.
        let easy_p = unit_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let easy = ModelSimBlock::from_embeddings(&q, &easy_p, None).unwrap();
        let masks = build_masks(&easy, None, Strategy::FullBatch).unwrap();
        let mut last = f64::INFINITY;
        for tau in [0.1, 0.01, 0.001] {
            let cfg = LossConfig {
                temperature: tau,
                reduction: Reduction::Sum,
                ..LossConfig::default()
            };
            let out = contrastive_loss(&easy, &masks, &cfg, None).unwrap();
            // Non-strict: the loss saturates to exactly 0 once the
            // competing exponentials underflow.
            assert!(out.per_sample[0] <= last);
            last = out.per_sample[0];
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn skipped_rows_leave_reduction_denominator() {
        let q = unit_rows(&[vec![0.9, 0.1], vec![-0.4, 0.6]]);
        let p = unit_rows(&[vec![0.8, 0.3], vec![-0.5, 0.5]]);
        let block = ModelSimBlock::from_embeddings(&q, &p, None).unwrap();
        let masks = build_masks(&block, None, Strategy::FullBatch).unwrap();
        let cfg = LossConfig {
            temperature: 0.5,
            ..LossConfig::default()
        };
        let out = contrastive_loss(&block, &masks, &cfg, Some(&[false, true])).unwrap();
        assert!(out.skipped[1]);
        assert_eq!(out.per_sample[1], 0.0);
        assert!((out.value - out.per_sample[0]).abs() < 1e-15);
    }

    #[test]
    fn nonpositive_temperature_is_config_error() {
        let q = unit_rows(&[vec![1.0, 0.0]]);
        let block = ModelSimBlock::from_embeddings(&q, &q, None).unwrap();
        let masks = build_masks(&block, None, Strategy::FullBatch).unwrap();
        let cfg = LossConfig {
            temperature: 0.0,
            ..LossConfig::default()
        };
        assert!(matches!(
            contrastive_loss(&block, &masks, &cfg, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn backprop_zero_upstream_gives_zero_output() {
        let q = unit_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let grad = SimGradients {
            qp: Matrix::zeros(2, 2),
            qn: None,
            qq: Matrix::zeros(2, 2),
            pp: Matrix::zeros(2, 2),
        };
        let out = backprop_to_embeddings(&grad, &q, &q, None).unwrap();
        assert!(out.queries.values().iter().all(|&v| v == 0.0));
        assert!(out.positives.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backprop_single_cell_is_bilinear() {
        let q = unit_rows(&[vec![1.0, 0.0]]);
        let p = unit_rows(&[vec![0.6, 0.8]]);
        let mut grad = SimGradients {
            qp: Matrix::zeros(1, 1),
            qn: None,
            qq: Matrix::zeros(1, 1),
            pp: Matrix::zeros(1, 1),
        };
        let g = 2.5;
        grad.qp.set(0, 0, g);
        let out = backprop_to_embeddings(&grad, &q, &p, None).unwrap();
        assert!((out.queries.get(0, 0) - g * 0.6).abs() < 1e-15);
        assert!((out.queries.get(0, 1) - g * 0.8).abs() < 1e-15);
        assert!((out.positives.get(0, 0) - g * 1.0).abs() < 1e-15);
        assert!((out.positives.get(0, 1) - g * 0.0).abs() < 1e-15);
    }
}
