//! Dense fp64 vector/matrix primitives shared by the numeric modules.
//!
//! Three things live here: row-major matrices, L2 normalization with
//! explicit handling of zero-norm inputs, and a numerically stable
//! masked softmax / log-softmax. Masking is implemented as exclusion
//! from the log-sum-exp reduction rather than substituting literal
//! `-inf` logits, which has the same semantics without NaN hazards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major fp64 matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_values(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::contract(format!(
                "matrix value count {} does not match {rows}x{cols}",
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    /// Builds a matrix from row slices; all rows must share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::contract(format!(
                    "row {i} has length {}, expected {cols}",
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.cols + j] = v;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        self.values[i * self.cols + j] += v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn fill(&mut self, v: f64) {
        self.values.iter_mut().for_each(|x| *x = v);
    }
}

/// Outcome of an L2 normalization. A zero-norm input is passed through
/// unchanged and flagged rather than treated as an error: degenerate
/// rows can arise from an all-unknown-token text and the trainer must
/// skip them, not crash.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub values: Vec<f64>,
    pub degenerate: bool,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scales `v` to unit Euclidean norm, preserving direction.
pub fn l2_normalize(v: &[f64]) -> Normalized {
    let norm = l2_norm(v);
    if norm == 0.0 {
        return Normalized {
            values: v.to_vec(),
            degenerate: true,
        };
    }
    Normalized {
        values: v.iter().map(|x| x / norm).collect(),
        degenerate: false,
    }
}

/// Pairwise dot products of unit rows: `out[i][j] = dot(a_i, b_j)`.
///
/// Rows are expected pre-normalized so the result is cosine similarity.
pub fn cosine_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::config(format!(
            "cosine_matrix dimension mismatch: {} vs {}",
            a.cols(),
            b.cols()
        )));
    }
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        let ai = a.row(i);
        for j in 0..b.rows() {
            out.set(i, j, dot(ai, b.row(j)));
        }
    }
    Ok(out)
}

fn check_mask(logits: &[f64], mask: &[bool]) -> Result<()> {
    if logits.len() != mask.len() {
        return Err(Error::contract(format!(
            "logits length {} does not match mask length {}",
            logits.len(),
            mask.len()
        )));
    }
    if mask.iter().all(|&m| m) {
        return Err(Error::contract(
            "masked softmax requires at least one unmasked entry",
        ));
    }
    Ok(())
}

/// Max-shifted log-sum-exp over unmasked entries only.
fn masked_log_sum_exp(logits: &[f64], mask: &[bool]) -> f64 {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| !m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| !m)
        .map(|(&l, _)| (l - max).exp())
        .sum();
    max + sum.ln()
}

/// Negative log-probability of `logits[target]` under a softmax taken
/// over the unmasked entries only. `mask[target]` must be false.
///
/// Finite for all finite inputs and nonnegative by construction.
pub fn masked_log_softmax(logits: &[f64], mask: &[bool], target: usize) -> Result<f64> {
    check_mask(logits, mask)?;
    if target >= logits.len() {
        return Err(Error::contract(format!(
            "target index {target} out of range for {} logits",
            logits.len()
        )));
    }
    if mask[target] {
        return Err(Error::contract(format!(
            "softmax target index {target} is masked"
        )));
    }
    let lse = masked_log_sum_exp(logits, mask);
    // lse >= logits[target] up to rounding; clamp the residue.
    Ok((lse - logits[target]).max(0.0))
}

/// Softmax probabilities over unmasked entries; masked positions get
/// exactly 0.0. Probabilities over the unmasked set sum to 1.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    check_mask(logits, mask)?;
    let lse = masked_log_sum_exp(logits, mask);
    Ok(logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { 0.0 } else { (l - lse).exp() })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force reference: direct exp-ratio softmax, no shifting.
    /// Only valid for moderate logits, which is all the tests feed it.
    fn naive_masked_log_softmax(logits: &[f64], mask: &[bool], target: usize) -> f64 {
        let denom: f64 = logits
            .iter()
            .zip(mask)
            .filter(|(_, &m)| !m)
            .map(|(&l, _)| l.exp())
            .sum();
        -(logits[target].exp() / denom).ln()
    }

    #[test]
    fn l2_normalize_three_four_five() {
        let n = l2_normalize(&[3.0, 4.0]);
        assert!(!n.degenerate);
        assert!((n.values[0] - 0.6).abs() < 1e-15);
        assert!((n.values[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn l2_normalize_already_unit() {
        let n = l2_normalize(&[1.0, 0.0]);
        assert_eq!(n.values, vec![1.0, 0.0]);
        assert!(!n.degenerate);
    }

    #[test]
    fn l2_normalize_zero_vector_flags_degenerate() {
        let n = l2_normalize(&[0.0, 0.0]);
        assert_eq!(n.values, vec![0.0, 0.0]);
        assert!(n.degenerate);
    }

    #[test]
    fn cosine_matrix_orthonormal_basis() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let m = cosine_matrix(&a, &b).unwrap();
        assert_eq!(m.get(0, 0), 1.0);
        assert_eq!(m.get(0, 1), 0.0);
    }

    #[test]
    fn cosine_matrix_self_is_identity_for_orthonormal_rows() {
        let a = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let m = cosine_matrix(&a, &a).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_eq!(m.get(i, j), want);
            }
        }
    }

    #[test]
    fn cosine_matrix_hand_dot_product() {
        let a = Matrix::from_rows(&[vec![0.6, 0.8]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let m = cosine_matrix(&a, &b).unwrap();
        assert!((m.get(0, 0) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn cosine_matrix_rejects_dimension_mismatch() {
        let a = Matrix::zeros(1, 2);
        let b = Matrix::zeros(1, 3);
        assert!(matches!(
            cosine_matrix(&a, &b),
            Err(crate::error::Error::Config(_))
        ));
    }

    #[test]
    fn masked_log_softmax_lone_candidate_is_zero() {
        let v = masked_log_softmax(&[5.0], &[false], 0).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn masked_log_softmax_all_negatives_masked_is_zero() {
        let v = masked_log_softmax(&[1.0, 0.0, 0.0], &[false, true, true], 0).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn masked_log_softmax_two_candidates_matches_oracle() {
        // ln(1 + e^{-1}), frozen from the naive oracle.
        let logits = [1.0, 0.0];
        let mask = [false, false];
        let got = masked_log_softmax(&logits, &mask, 0).unwrap();
        let want = naive_masked_log_softmax(&logits, &mask, 0);
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.313_261_687_518_222_8).abs() < 1e-12);
    }

    #[test]
    fn masked_log_softmax_rejects_masked_target() {
        let err = masked_log_softmax(&[1.0, 0.0], &[true, false], 0).unwrap_err();
        assert!(matches!(err, crate::error::Error::Contract(_)));
    }

    #[test]
    fn masked_softmax_masked_positions_are_exactly_zero() {
        let p = masked_softmax(&[3.0, 1.0, 2.0], &[false, true, false]).unwrap();
        assert_eq!(p[1], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn unit_rows_have_unit_self_diagonal(
            raw in proptest::collection::vec(
                proptest::collection::vec(-10.0f64..10.0, 4), 1..6)
        ) {
            let rows: Vec<Vec<f64>> = raw
                .iter()
                .map(|r| l2_normalize(r))
                .filter(|n| !n.degenerate)
                .map(|n| n.values)
                .collect();
            prop_assume!(!rows.is_empty());
            let a = Matrix::from_rows(&rows).unwrap();
            let m = cosine_matrix(&a, &a).unwrap();
            for i in 0..a.rows() {
                prop_assert!((m.get(i, i) - 1.0).abs() < 1e-9);
                for j in 0..a.rows() {
                    prop_assert!(m.get(i, j).abs() <= 1.0 + 1e-9);
                }
            }
        }

        #[test]
        fn log_softmax_invariant_to_constant_shift(
            logits in proptest::collection::vec(-10.0f64..10.0, 2..8),
            shift in -5.0f64..5.0,
        ) {
            let mask = vec![false; logits.len()];
            let base = masked_log_softmax(&logits, &mask, 0).unwrap();
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let moved = masked_log_softmax(&shifted, &mask, 0).unwrap();
            prop_assert!((base - moved).abs() < 1e-10);
        }

        #[test]
        fn log_softmax_nonnegative_and_zero_iff_lone_target(
            logits in proptest::collection::vec(-10.0f64..10.0, 1..8),
        ) {
            let n = logits.len();
            let all_unmasked = vec![false; n];
            let v = masked_log_softmax(&logits, &all_unmasked, 0).unwrap();
            prop_assert!(v >= 0.0);
            if n == 1 {
                prop_assert_eq!(v, 0.0);
            } else {
                prop_assert!(v > 0.0);
            }
            // Masking everything but the target collapses to zero.
            let mut lone = vec![true; n];
            lone[0] = false;
            prop_assert_eq!(masked_log_softmax(&logits, &lone, 0).unwrap(), 0.0);
        }

        #[test]
        fn log_softmax_matches_naive_oracle(
            logits in proptest::collection::vec(-10.0f64..10.0, 1..8),
        ) {
            let mask = vec![false; logits.len()];
            let got = masked_log_softmax(&logits, &mask, 0).unwrap();
            let want = naive_masked_log_softmax(&logits, &mask, 0);
            prop_assert!((got - want).abs() < 1e-10);
        }
    }
}
