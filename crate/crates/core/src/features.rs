//! Behavioral features, chi-square feature scoring, correlation and matrix assembly.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, ReviewRecord};
use crate::error::{Error, Result};
use crate::num::Scalar;
use crate::sparse::SparseVector;
use crate::textproc::tokenize;

/// Names of the behavioral columns, in the order they follow the text columns.
pub const BEHAVIORAL_COLUMNS: [&str; 4] = [
    "review_length",
    "summary_length",
    "helpfulness_ratio",
    "reviewer_frequency",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehavioralFeatures<T> {
    /// Token count of the review body, before stop-word removal.
    pub review_length: usize,
    pub summary_length: usize,
    /// helpful / total votes, 0 when no votes were cast.
    pub helpfulness_ratio: T,
    /// Reviews by the same reviewer in the training corpus.
    pub reviewer_frequency: u64,
}

impl<T: Scalar> BehavioralFeatures<T> {
    pub fn from_lengths(
        record: &ReviewRecord,
        review_length: usize,
        summary_length: usize,
        reviewer_counts: &ReviewerCounts,
    ) -> Self {
        BehavioralFeatures {
            review_length,
            summary_length,
            helpfulness_ratio: helpfulness_ratio(record.helpful_votes, record.total_votes),
            reviewer_frequency: reviewer_counts.get(&record.reviewer_id),
        }
    }

    pub fn values(&self) -> [T; 4] {
        [
            T::count(self.review_length),
            T::count(self.summary_length),
            self.helpfulness_ratio,
            T::of(self.reviewer_frequency as f64),
        ]
    }
}

pub fn helpfulness_ratio<T: Scalar>(helpful: u64, total: u64) -> T {
    if total == 0 {
        T::zero()
    } else {
        T::of(helpful as f64) / T::of(total as f64)
    }
}

/// Per-reviewer review counts over a reference (training) corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "BTreeMap<String, u64>", into = "BTreeMap<String, u64>")]
pub struct ReviewerCounts(HashMap<String, u64>);

impl ReviewerCounts {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a ReviewRecord>) -> Self {
        let mut counts = HashMap::new();
        for r in records {
            *counts.entry(r.reviewer_id.clone()).or_insert(0) += 1;
        }
        ReviewerCounts(counts)
    }

    /// Unseen reviewers count as 0.
    pub fn get(&self, reviewer_id: &str) -> u64 {
        self.0.get(reviewer_id).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<BTreeMap<String, u64>> for ReviewerCounts {
    fn from(m: BTreeMap<String, u64>) -> Self {
        ReviewerCounts(m.into_iter().collect())
    }
}

impl From<ReviewerCounts> for BTreeMap<String, u64> {
    fn from(c: ReviewerCounts) -> Self {
        c.0.into_iter().collect()
    }
}

pub fn behavioral_features<T: Scalar>(
    record: &ReviewRecord,
    reviewer_counts: &ReviewerCounts,
) -> BehavioralFeatures<T> {
    BehavioralFeatures::from_lengths(
        record,
        tokenize(&record.review_text).len(),
        tokenize(&record.summary).len(),
        reviewer_counts,
    )
}

/// Min-max scaling of the behavioral block, fitted on the training set.
///
/// Values outside the training range map outside `[0, 1]` and are not clipped.
/// A column that is constant in training maps to 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehavioralScaler<T> {
    pub min: [T; 4],
    pub max: [T; 4],
}

impl<T: Scalar> BehavioralScaler<T> {
    pub fn fit(training: &[BehavioralFeatures<T>]) -> Result<Self> {
        let first = training
            .first()
            .ok_or(Error::EmptyInput("scaler needs at least one training row"))?
            .values();
        let (min, max) = training.iter().skip(1).fold((first, first), |(mut lo, mut hi), f| {
            for (k, v) in f.values().into_iter().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
            (lo, hi)
        });
        Ok(BehavioralScaler { min, max })
    }

    pub fn apply(&self, features: &BehavioralFeatures<T>) -> [T; 4] {
        let mut out = features.values();
        for (k, v) in out.iter_mut().enumerate() {
            let span = self.max[k] - self.min[k];
            *v = if span > T::zero() {
                (*v - self.min[k]) / span
            } else {
                T::zero()
            };
        }
        out
    }
}

/// Labeled sparse rows with named columns.
///
/// `labels[i]` is `true` when row `i` is spam, the positive class.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix<T> {
    pub rows: Vec<SparseVector<T>>,
    pub labels: Vec<bool>,
    pub column_names: Vec<String>,
}

impl<T: Scalar> FeatureMatrix<T> {
    /// Validates shape invariants.
    pub fn new(rows: Vec<SparseVector<T>>, labels: Vec<bool>, column_names: Vec<String>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::LengthMismatch {
                what: "rows vs labels",
                left: rows.len(),
                right: labels.len(),
            });
        }
        if let Some(bad) = rows.iter().find(|r| r.dimension() != column_names.len()) {
            return Err(Error::DimensionMismatch {
                expected: column_names.len(),
                found: bad.dimension(),
            });
        }
        Ok(FeatureMatrix {
            rows,
            labels,
            column_names,
        })
    }

    /// Matrix from dense rows with generated column names `x0, x1, ...`.
    pub fn from_dense(rows: &[Vec<T>], labels: Vec<bool>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let names = (0..dim).map(|j| format!("x{j}")).collect();
        Self::new(
            rows.iter().map(|r| SparseVector::from_dense(r)).collect(),
            labels,
            names,
        )
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn dimension(&self) -> usize {
        self.column_names.len()
    }

    pub fn n_positive(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    /// Restricts to the given columns (sorted ascending, no duplicates).
    pub fn select_columns(&self, columns: &[usize]) -> Result<Self> {
        let dim = self.dimension();
        let mut remap = vec![None; dim];
        for (new, &old) in columns.iter().enumerate() {
            if old >= dim {
                return Err(Error::IndexOutOfRange { index: old, bound: dim });
            }
            remap[old] = Some(new);
        }
        Ok(FeatureMatrix {
            rows: self.rows.par_iter().map(|r| r.project(&remap, columns.len())).collect(),
            labels: self.labels.clone(),
            column_names: columns.iter().map(|&c| self.column_names[c].clone()).collect(),
        })
    }
}

/// Builds the feature matrix: text columns, then the four scaled behavioral columns.
///
/// This is where source labels are oriented for detection: a review labeled
/// [`Label::Spam`] (code 0 in the data) becomes the positive class.
pub fn assemble_matrix<T: Scalar>(
    text_vectors: &[SparseVector<T>],
    behavioral: &[BehavioralFeatures<T>],
    labels: &[Label],
    scaler: &BehavioralScaler<T>,
    term_names: Option<&[String]>,
    selected: Option<&[usize]>,
) -> Result<FeatureMatrix<T>> {
    if text_vectors.len() != behavioral.len() {
        return Err(Error::LengthMismatch {
            what: "text vectors vs behavioral features",
            left: text_vectors.len(),
            right: behavioral.len(),
        });
    }
    if text_vectors.len() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "text vectors vs labels",
            left: text_vectors.len(),
            right: labels.len(),
        });
    }
    let text_dim = match (text_vectors.first(), term_names) {
        (_, Some(names)) => names.len(),
        (Some(v), None) => v.dimension(),
        (None, None) => 0,
    };
    if let Some(bad) = text_vectors.iter().find(|v| v.dimension() != text_dim) {
        return Err(Error::DimensionMismatch {
            expected: text_dim,
            found: bad.dimension(),
        });
    }
    let mut column_names: Vec<String> = match term_names {
        Some(names) => names.to_vec(),
        None => (0..text_dim).map(|j| format!("term_{j}")).collect(),
    };
    column_names.extend(BEHAVIORAL_COLUMNS.iter().map(|s| s.to_string()));

    let rows: Vec<SparseVector<T>> = text_vectors
        .par_iter()
        .zip(behavioral.par_iter())
        .map(|(text, b)| text.concat(&scaler.apply(b)))
        .collect();
    let matrix = FeatureMatrix {
        rows,
        labels: labels.iter().map(|l| l.is_spam()).collect(),
        column_names,
    };
    match selected {
        Some(columns) => {
            let mut sorted = columns.to_vec();
            sorted.sort_unstable();
            sorted.dedup();
            matrix.select_columns(&sorted)
        }
        None => Ok(matrix),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareScore<T> {
    pub column: usize,
    pub score: T,
}

/// 2x2 Pearson chi-square statistic `N (ad - bc)^2 / ((a+b)(c+d)(a+c)(b+d))`.
///
/// `a`, `b` are positive and negative rows with the feature, `c`, `d` those
/// without. A zero margin means no association and scores 0.
pub fn chi_square_2x2<T: Scalar>(a: T, b: T, c: T, d: T) -> T {
    let n = a + b + c + d;
    let denom = (a + b) * (c + d) * (a + c) * (b + d);
    if denom <= T::zero() {
        return T::zero();
    }
    let cross = a * d - b * c;
    (n * cross * cross / denom).max(T::zero())
}

const CHI_CHUNK: usize = 4096;

/// Chi-square association between each column and the label.
///
/// Each row contributes `x / max` of a column to the "feature present" cell
/// of its class and `1 - x / max` to the "absent" cell, where `max` is the
/// column maximum. Binary features therefore reduce to the classic 2x2
/// contingency table, and continuous weights keep their magnitude.
pub fn chi_square_scores<T: Scalar>(matrix: &FeatureMatrix<T>) -> Result<Vec<ChiSquareScore<T>>> {
    let n_pos = matrix.n_positive();
    let n_neg = matrix.n_rows() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let dim = matrix.dimension();

    let mut col_max = vec![T::zero(); dim];
    for row in &matrix.rows {
        for (j, v) in row.iter() {
            if v < T::zero() {
                return Err(Error::NegativeFeature {
                    column: j,
                    value: v.to_f64_lossy(),
                });
            }
            col_max[j] = col_max[j].max(v);
        }
    }

    // Fixed chunks merged in chunk order: identical sums for any worker count.
    let partials: Vec<Vec<[T; 2]>> = matrix
        .rows
        .par_chunks(CHI_CHUNK)
        .zip(matrix.labels.par_chunks(CHI_CHUNK))
        .map(|(rows, labels)| {
            let mut present = vec![[T::zero(); 2]; dim];
            for (row, &positive) in rows.iter().zip(labels) {
                let class = usize::from(!positive);
                for (j, v) in row.iter() {
                    present[j][class] += v / col_max[j];
                }
            }
            present
        })
        .collect();
    let mut present = vec![[T::zero(); 2]; dim];
    for part in partials {
        for (acc, p) in present.iter_mut().zip(part) {
            acc[0] += p[0];
            acc[1] += p[1];
        }
    }

    let (np, nn) = (T::count(n_pos), T::count(n_neg));
    Ok(present
        .into_iter()
        .enumerate()
        .map(|(column, [a, b])| ChiSquareScore {
            column,
            score: chi_square_2x2(a, b, (np - a).max(T::zero()), (nn - b).max(T::zero())),
        })
        .collect())
}

/// Columns of the `k` highest scores, ascending. Ties go to the lower column.
pub fn select_top_k<T: Scalar>(scores: &[ChiSquareScore<T>], k: usize) -> Vec<usize> {
    let mut ranked: Vec<&ChiSquareScore<T>> = scores.iter().collect();
    ranked.sort_by(|x, y| {
        y.score
            .partial_cmp(&x.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.column.cmp(&y.column))
    });
    let mut out: Vec<usize> = ranked.into_iter().take(k).map(|s| s.column).collect();
    out.sort_unstable();
    out
}

pub fn write_chi_square_csv<T: Scalar, W: Write>(
    out: W,
    scores: &[ChiSquareScore<T>],
    column_names: &[String],
) -> Result<()> {
    let mut ranked: Vec<&ChiSquareScore<T>> = scores.iter().collect();
    ranked.sort_by(|x, y| {
        y.score
            .partial_cmp(&x.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.column.cmp(&y.column))
    });
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "column", "name", "chi_square"])
        .map_err(csv_err)?;
    for (rank, s) in ranked.into_iter().enumerate() {
        w.write_record([
            (rank + 1).to_string(),
            s.column.to_string(),
            column_names[s.column].clone(),
            s.score.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::io("<csv>", std::io::Error::other(e))
}

/// Symmetric matrix of Pearson coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix<T> {
    pub variable_names: Vec<String>,
    pub values: Vec<Vec<T>>,
    /// Variables with zero variance; their off-diagonal entries are 0.
    pub constant: Vec<bool>,
}

/// Pearson correlation between every pair of named variables.
pub fn pearson_correlation_matrix<T: Scalar>(variables: &[(String, Vec<T>)]) -> Result<CorrelationMatrix<T>> {
    let n = variables.first().map_or(0, |(_, v)| v.len());
    for (_, v) in variables {
        if v.len() != n {
            return Err(Error::LengthMismatch {
                what: "correlation variables",
                left: n,
                right: v.len(),
            });
        }
    }
    if n < 2 {
        return Err(Error::EmptyInput("correlation needs at least 2 observations"));
    }
    let centered: Vec<Vec<T>> = variables
        .iter()
        .map(|(_, v)| {
            let mean = v.iter().copied().sum::<T>() / T::count(n);
            v.iter().map(|&x| x - mean).collect()
        })
        .collect();
    let ss: Vec<T> = centered.iter().map(|c| c.iter().map(|&x| x * x).sum()).collect();
    let constant: Vec<bool> = ss.iter().map(|&s| s <= T::zero()).collect();

    let m = variables.len();
    let mut values = vec![vec![T::zero(); m]; m];
    for i in 0..m {
        values[i][i] = T::one();
        for j in (i + 1)..m {
            let r = if constant[i] || constant[j] {
                T::zero()
            } else {
                let sxy: T = centered[i].iter().zip(&centered[j]).map(|(&x, &y)| x * y).sum();
                (sxy / (ss[i] * ss[j]).sqrt()).max(-T::one()).min(T::one())
            };
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        variable_names: variables.iter().map(|(name, _)| name.clone()).collect(),
        values,
        constant,
    })
}

impl<T: Scalar> CorrelationMatrix<T> {
    /// CSV with a header row of variable names and one named row per variable.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["variable".to_string()];
        header.extend(self.variable_names.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (name, row) in self.variable_names.iter().zip(&self.values) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }
}
