//! In-batch negative selection strategies.
//!
//! For each anchor row the four similarity blocks (query-positive,
//! query-negative, query-query, positive-positive) hold every possible
//! in-batch candidate; a strategy decides which entries are excluded.
//! `true` in a mask means EXCLUDED from the negative pool.
//!
//! * `assigned`       - only the assigned negatives count (full qn block).
//! * `bidirectional`  - assigned negatives plus the other queries.
//! * `fullbatch`      - every other batch text is a candidate.
//! * `guided`         - fullbatch, then any candidate the guide scores
//!   strictly above the guide's own query-positive similarity for that
//!   row is excluded. Ties keep the candidate. This also drops an
//!   assigned negative the guide considers relevant, so selection is
//!   independent of the original negative assignment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guide::GuideSimBlock;
use crate::vecmath::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Assigned,
    Bidirectional,
    FullBatch,
    Guided,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Assigned,
        Strategy::Bidirectional,
        Strategy::FullBatch,
        Strategy::Guided,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Assigned => "assigned",
            Strategy::Bidirectional => "bidirectional",
            Strategy::FullBatch => "fullbatch",
            Strategy::Guided => "guided",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "assigned" => Ok(Strategy::Assigned),
            "bidirectional" => Ok(Strategy::Bidirectional),
            "fullbatch" => Ok(Strategy::FullBatch),
            "guided" => Ok(Strategy::Guided),
            _ => Err(Error::config(format!(
                "unknown strategy {s:?}; expected assigned|bidirectional|fullbatch|guided"
            ))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Trainee-side pairwise cosine matrices for one batch. `qn` is absent
/// for pair-only batches.
#[derive(Debug, Clone)]
pub struct ModelSimBlock {
    pub qp: Matrix,
    pub qn: Option<Matrix>,
    pub qq: Matrix,
    pub pp: Matrix,
}

impl ModelSimBlock {
    pub fn from_embeddings(
        queries: &Matrix,
        positives: &Matrix,
        negatives: Option<&Matrix>,
    ) -> Result<Self> {
        let qp = crate::vecmath::cosine_matrix(queries, positives)?;
        let qn = negatives
            .map(|n| crate::vecmath::cosine_matrix(queries, n))
            .transpose()?;
        Ok(Self {
            qp,
            qn,
            qq: crate::vecmath::cosine_matrix(queries, queries)?,
            pp: crate::vecmath::cosine_matrix(positives, positives)?,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.qp.rows()
    }
}

/// Boolean matrix; `true` marks an excluded cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoolMatrix {
    rows: usize,
    cols: usize,
    values: Vec<bool>,
}

impl BoolMatrix {
    pub fn filled(rows: usize, cols: usize, value: bool) -> Self {
        Self {
            rows,
            cols,
            values: vec![value; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.values[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.values[i * self.cols + j] = v;
    }

    pub fn set_diagonal(&mut self, v: bool) {
        for i in 0..self.rows.min(self.cols) {
            self.set(i, i, v);
        }
    }

    pub fn count_true(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Fraction of excluded cells; None for an empty matrix.
    pub fn masked_fraction(&self) -> Option<f64> {
        if self.values.is_empty() {
            None
        } else {
            Some(self.count_true() as f64 / self.values.len() as f64)
        }
    }
}

/// Per-strategy exclusion masks aligned with the similarity blocks.
///
/// Diagonals of qp, qq, and pp are always excluded: the positive term
/// is never its own negative, and self-similarities carry no contrast.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub qp: BoolMatrix,
    pub qn: Option<BoolMatrix>,
    pub qq: BoolMatrix,
    pub pp: BoolMatrix,
    /// Per-row guide thresholds (guide query-positive self-similarity)
    /// under `guided`; `-inf` placeholders otherwise.
    pub thresholds: Vec<f64>,
}

impl MaskSet {
    pub fn batch_size(&self) -> usize {
        self.qp.rows()
    }
}

fn check_square(name: &str, m: &Matrix, n: usize) -> Result<()> {
    if m.rows() != n || m.cols() != n {
        return Err(Error::contract(format!(
            "{name} block is {}x{}, expected {n}x{n}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(())
}

/// Builds the exclusion masks for `strategy`. `guided` requires a
/// guide block; the other strategies ignore it.
pub fn build_masks(
    model: &ModelSimBlock,
    guide: Option<&GuideSimBlock>,
    strategy: Strategy,
) -> Result<MaskSet> {
    let n = model.batch_size();
    check_square("model qp", &model.qp, n)?;
    check_square("model qq", &model.qq, n)?;
    check_square("model pp", &model.pp, n)?;
    if let Some(qn) = &model.qn {
        check_square("model qn", qn, n)?;
    }

    let has_negatives = model.qn.is_some();
    if strategy == Strategy::Assigned && !has_negatives {
        return Err(Error::config(
            "assigned strategy requires assigned negatives, but the data is pair-only",
        ));
    }

    // Start from everything excluded, then open per strategy.
    let mut qp = BoolMatrix::filled(n, n, true);
    let mut qq = BoolMatrix::filled(n, n, true);
    let mut pp = BoolMatrix::filled(n, n, true);
    let mut qn = has_negatives.then(|| BoolMatrix::filled(n, n, true));

    let open_off_diagonal = |m: &mut BoolMatrix| {
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, i == j);
            }
        }
    };

    match strategy {
        Strategy::Assigned => {
            if let Some(qn) = qn.as_mut() {
                *qn = BoolMatrix::filled(n, n, false);
            }
        }
        Strategy::Bidirectional => {
            if let Some(qn) = qn.as_mut() {
                *qn = BoolMatrix::filled(n, n, false);
            }
            open_off_diagonal(&mut qq);
        }
        Strategy::FullBatch | Strategy::Guided => {
            if let Some(qn) = qn.as_mut() {
                *qn = BoolMatrix::filled(n, n, false);
            }
            open_off_diagonal(&mut qp);
            open_off_diagonal(&mut qq);
            open_off_diagonal(&mut pp);
        }
    }

    let mut thresholds = vec![f64::NEG_INFINITY; n];
    if strategy == Strategy::Guided {
        let guide = guide.ok_or_else(|| {
            Error::config("guided strategy requires a guide, but none was provided")
        })?;
        check_square("guide qp", &guide.qp, n)?;
        check_square("guide qq", &guide.qq, n)?;
        check_square("guide pp", &guide.pp, n)?;
        match (&model.qn, &guide.qn) {
            (Some(_), Some(gqn)) => check_square("guide qn", gqn, n)?,
            (Some(_), None) => {
                return Err(Error::contract(
                    "model block has assigned negatives but the guide block does not",
                ));
            }
            _ => {}
        }
        for i in 0..n {
            thresholds[i] = guide.qp.get(i, i);
        }
        // Strict >: a candidate the guide scores above the row's own
        // query-positive similarity is excluded; ties stay in.
        let apply = |sigma: &Matrix, mask: &mut BoolMatrix| {
            for i in 0..n {
                for j in 0..n {
                    if sigma.get(i, j) > thresholds[i] {
                        mask.set(i, j, true);
                    }
                }
            }
        };
        apply(&guide.qp, &mut qp);
        apply(&guide.qq, &mut qq);
        apply(&guide.pp, &mut pp);
        if let (Some(gqn), Some(mqn)) = (&guide.qn, qn.as_mut()) {
            apply(gqn, mqn);
        }
    }

    Ok(MaskSet {
        qp,
        qn,
        qq,
        pp,
        thresholds,
    })
}

/// Per-row count of unmasked candidate cells across all four blocks.
/// Reported into training logs.
pub fn count_active_negatives(masks: &MaskSet) -> Vec<usize> {
    let n = masks.batch_size();
    (0..n)
        .map(|i| {
            let mut count = 0;
            for j in 0..n {
                count += usize::from(!masks.qp.get(i, j));
                count += usize::from(!masks.qq.get(i, j));
                count += usize::from(!masks.pp.get(i, j));
                if let Some(qn) = &masks.qn {
                    count += usize::from(!qn.get(i, j));
                }
            }
            count
        })
        .collect()
}
