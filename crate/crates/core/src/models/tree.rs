//! CART trees with sparse-aware split search.
//!
//! Split search at a node collects the node's nonzero entries grouped by
//! column and sorted by value; rows absent from a column's list hold an
//! implicit zero, whose statistics are the node totals minus the nonzero
//! part. Candidate thresholds are midpoints between consecutive distinct
//! values and rows with `x <= threshold` go left. Ties in gain resolve to the
//! lowest column, then the smallest threshold.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{binary_targets, Estimator, ModelKind, TrainConfig, TrainedModel};
use crate::error::Result;
use crate::features::FeatureMatrix;
use crate::num::Scalar;
use crate::rng;
use crate::sparse::SparseVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeNode<T> {
    Leaf {
        score: T,
    },
    Split {
        column: usize,
        threshold: T,
        left: Box<TreeNode<T>>,
        right: Box<TreeNode<T>>,
    },
}

impl<T: Scalar> TreeNode<T> {
    pub fn predict(&self, row: &SparseVector<T>) -> T {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { score } => return *score,
                TreeNode::Split {
                    column,
                    threshold,
                    left,
                    right,
                } => {
                    node = if row.get(*column) <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }
}

/// Impurity measure. Gini for 0/1 classification targets, variance for
/// real-valued regression targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Gini,
    Variance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Stats<T> {
    n: usize,
    sum: T,
    sum_sq: T,
}

impl<T: Scalar> Stats<T> {
    fn zero() -> Self {
        Stats {
            n: 0,
            sum: T::zero(),
            sum_sq: T::zero(),
        }
    }

    fn add(&mut self, y: T) {
        self.n += 1;
        self.sum += y;
        self.sum_sq += y * y;
    }

    fn merge(&mut self, other: &Self) {
        self.n += other.n;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    fn minus(&self, other: &Self) -> Self {
        Stats {
            n: self.n - other.n,
            sum: self.sum - other.sum,
            sum_sq: self.sum_sq - other.sum_sq,
        }
    }

    fn mean(&self) -> T {
        self.sum / T::count(self.n)
    }

    /// Impurity times sample count.
    fn weighted_impurity(&self, criterion: Criterion) -> T {
        if self.n == 0 {
            return T::zero();
        }
        let n = T::count(self.n);
        match criterion {
            Criterion::Gini => T::of(2.0) * self.sum * (n - self.sum) / n,
            Criterion::Variance => (self.sum_sq - self.sum * self.sum / n).max(T::zero()),
        }
    }

    fn is_pure(&self, criterion: Criterion) -> bool {
        match criterion {
            Criterion::Gini => self.sum == T::zero() || self.sum == T::count(self.n),
            Criterion::Variance => self.weighted_impurity(criterion) <= T::epsilon() * T::count(self.n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate<T> {
    pub column: usize,
    pub threshold: T,
    /// Decrease in count-weighted impurity.
    pub gain: T,
}

fn stats_of<T: Scalar>(targets: &[T], samples: &[usize]) -> Stats<T> {
    let mut s = Stats::zero();
    for &i in samples {
        s.add(targets[i]);
    }
    s
}

fn midpoint<T: Scalar>(lo: T, hi: T) -> T {
    let mid = (lo + hi) / T::of(2.0);
    if mid >= hi {
        lo
    } else {
        mid
    }
}

/// Nonzero entry `(column, value, sample)` of one node.
pub(crate) type Entry<T> = (u32, T, u32);

/// Nonzero entries of `samples` sorted by column, then value, then sample.
/// Repeated samples contribute repeated entries.
pub(crate) fn sorted_entries<T: Scalar>(rows: &[SparseVector<T>], samples: &[usize]) -> Vec<Entry<T>> {
    gather_sorted(rows, samples, None)
}

fn gather_sorted<T: Scalar>(rows: &[SparseVector<T>], samples: &[usize], allowed: Option<&[bool]>) -> Vec<Entry<T>> {
    let mut entries: Vec<Entry<T>> = Vec::new();
    for &s in samples {
        entries.extend(
            rows[s]
                .iter()
                .filter(|&(j, _)| allowed.is_none_or(|mask| mask[j]))
                .map(|(j, v)| (j as u32, v, s as u32)),
        );
    }
    entries.sort_unstable_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.partial_cmp(&b.1).expect("feature values are not NaN"))
            .then(a.2.cmp(&b.2))
    });
    entries
}

/// Best split of `samples` over the allowed columns, or `None` when no split
/// leaves at least `min_samples_leaf` samples on both sides.
pub fn best_split<T: Scalar>(
    rows: &[SparseVector<T>],
    targets: &[T],
    samples: &[usize],
    allowed: Option<&[bool]>,
    min_samples_leaf: usize,
    criterion: Criterion,
) -> Option<SplitCandidate<T>> {
    let total = stats_of(targets, samples);
    let entries = sorted_entries(rows, samples);
    split_search(&entries, targets, &total, allowed, min_samples_leaf, criterion)
}

fn split_search<T: Scalar>(
    entries: &[Entry<T>],
    targets: &[T],
    total: &Stats<T>,
    allowed: Option<&[bool]>,
    min_samples_leaf: usize,
    criterion: Criterion,
) -> Option<SplitCandidate<T>> {
    let min_leaf = min_samples_leaf.max(1);
    if total.n < 2 * min_leaf {
        return None;
    }
    let parent = total.weighted_impurity(criterion);
    let tolerance = T::epsilon() * T::of(64.0) * parent.max(T::one());
    let mut best: Option<SplitCandidate<T>> = None;
    let mut blocks: Vec<(T, Stats<T>)> = Vec::new();

    for group in entries.chunk_by(|a, b| a.0 == b.0) {
        let column = group[0].0 as usize;
        if allowed.is_some_and(|mask| !mask[column]) {
            continue;
        }
        blocks.clear();
        let mut nonzero = Stats::zero();
        let mut zero_inserted = false;
        for run in group.chunk_by(|a, b| a.1 == b.1) {
            let value = run[0].1;
            if !zero_inserted && value > T::zero() {
                blocks.push((T::zero(), Stats::zero()));
                zero_inserted = true;
            }
            let mut s = Stats::zero();
            for e in run {
                s.add(targets[e.2 as usize]);
            }
            nonzero.merge(&s);
            blocks.push((value, s));
        }
        if !zero_inserted {
            blocks.push((T::zero(), Stats::zero()));
        }
        let zeros = total.minus(&nonzero);
        if zeros.n == 0 {
            blocks.retain(|(v, s)| *v != T::zero() || s.n > 0);
        } else if let Some(slot) = blocks.iter_mut().find(|(v, s)| *v == T::zero() && s.n == 0) {
            slot.1 = zeros;
        }

        let mut left = Stats::zero();
        for k in 0..blocks.len().saturating_sub(1) {
            left.merge(&blocks[k].1);
            if left.n < min_leaf {
                continue;
            }
            if total.n - left.n < min_leaf {
                break;
            }
            let right = total.minus(&left);
            let gain = parent - left.weighted_impurity(criterion) - right.weighted_impurity(criterion);
            let better = match &best {
                None => true,
                Some(b) => gain > b.gain + tolerance,
            };
            if better {
                best = Some(SplitCandidate {
                    column,
                    threshold: midpoint(blocks[k].0, blocks[k + 1].0),
                    gain,
                });
            }
        }
    }
    best
}

/// Growth limits and per-node column sampling for one tree.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GrowParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub criterion: Criterion,
    /// Columns drawn per node; `None` considers every column.
    pub features_per_node: Option<usize>,
    pub seed: u64,
    pub tree_index: u64,
}

const FEATURE_STREAM: u64 = 0xfea7;

struct Grower<'a, T> {
    rows: &'a [SparseVector<T>],
    targets: &'a [T],
    dimension: usize,
    params: GrowParams,
    mask: Vec<bool>,
    /// Side of each row at the node being split; indexed by row.
    goes_left: Vec<bool>,
}

impl<T: Scalar> Grower<'_, T> {
    /// With every column eligible, `entries` holds the node's sorted nonzero
    /// entries and children receive order-preserving partitions of it, so
    /// nothing is re-sorted. With per-node column sampling, `entries` is
    /// `None` and each node gathers and sorts only its sampled columns.
    fn grow(&mut self, samples: Vec<usize>, entries: Option<Vec<Entry<T>>>, depth: usize, node_id: u64) -> TreeNode<T> {
        let total = stats_of(self.targets, &samples);
        let leaf = TreeNode::Leaf { score: total.mean() };
        if depth >= self.params.max_depth || total.is_pure(self.params.criterion) {
            return leaf;
        }
        let drawn = self.draw_columns(node_id);
        let mask = drawn.as_ref().map(|_| self.mask.as_slice());
        let gathered;
        let node_entries = match &entries {
            Some(e) => e.as_slice(),
            None => {
                gathered = gather_sorted(self.rows, &samples, mask);
                gathered.as_slice()
            }
        };
        let candidate = split_search(
            node_entries,
            self.targets,
            &total,
            mask,
            self.params.min_samples_leaf,
            self.params.criterion,
        );
        if let Some(cols) = drawn {
            for c in cols {
                self.mask[c] = false;
            }
        }
        let Some(split) = candidate else {
            return leaf;
        };
        for &s in &samples {
            self.goes_left[s] = self.rows[s].get(split.column) <= split.threshold;
        }
        let (left, right): (Vec<usize>, Vec<usize>) = samples.into_iter().partition(|&s| self.goes_left[s]);
        let (left_entries, right_entries) = match entries {
            Some(e) => {
                let (l, r): (Vec<Entry<T>>, Vec<Entry<T>>) = e.into_iter().partition(|e| self.goes_left[e.2 as usize]);
                (Some(l), Some(r))
            }
            None => (None, None),
        };
        TreeNode::Split {
            column: split.column,
            threshold: split.threshold,
            left: Box::new(self.grow(left, left_entries, depth + 1, node_id * 2)),
            right: Box::new(self.grow(right, right_entries, depth + 1, node_id * 2 + 1)),
        }
    }

    /// Marks this node's sampled columns in `mask`; returns them for unmarking.
    fn draw_columns(&mut self, node_id: u64) -> Option<Vec<usize>> {
        let k = self.params.features_per_node?;
        if k >= self.dimension {
            return None;
        }
        let mut r = rng::stream(self.params.seed, &[FEATURE_STREAM, self.params.tree_index, node_id]);
        let cols = index::sample(&mut r, self.dimension, k).into_vec();
        for &c in &cols {
            self.mask[c] = true;
        }
        Some(cols)
    }
}

/// Grows one tree over `samples` (indices into `rows`, repeats allowed).
pub(crate) fn grow_tree<T: Scalar>(
    rows: &[SparseVector<T>],
    targets: &[T],
    dimension: usize,
    samples: Vec<usize>,
    params: GrowParams,
) -> TreeNode<T> {
    let sampling = params.features_per_node.is_some_and(|k| k < dimension);
    let entries = (!sampling).then(|| sorted_entries(rows, &samples));
    grow_from(rows, targets, dimension, samples, entries, params)
}

/// [`grow_tree`] with the samples' entries already sorted by [`sorted_entries`].
pub(crate) fn grow_tree_presorted<T: Scalar>(
    rows: &[SparseVector<T>],
    targets: &[T],
    dimension: usize,
    samples: Vec<usize>,
    entries: Vec<Entry<T>>,
    params: GrowParams,
) -> TreeNode<T> {
    grow_from(rows, targets, dimension, samples, Some(entries), params)
}

fn grow_from<T: Scalar>(
    rows: &[SparseVector<T>],
    targets: &[T],
    dimension: usize,
    samples: Vec<usize>,
    entries: Option<Vec<Entry<T>>>,
    params: GrowParams,
) -> TreeNode<T> {
    let mut grower = Grower {
        rows,
        targets,
        dimension,
        params,
        mask: vec![
            false;
            if params.features_per_node.is_some() {
                dimension
            } else {
                0
            }
        ],
        goes_left: vec![false; rows.len()],
    };
    grower.grow(samples, entries, 0, 1)
}

/// Single CART classification tree; leaf scores are the spam fraction.
pub fn train_decision_tree<T: Scalar>(matrix: &FeatureMatrix<T>, config: &TrainConfig<T>) -> Result<TrainedModel<T>> {
    config.validate(ModelKind::DecisionTree)?;
    let targets = binary_targets(matrix)?;
    let root = grow_tree(
        &matrix.rows,
        &targets,
        matrix.dimension(),
        (0..matrix.n_rows()).collect(),
        GrowParams {
            max_depth: config.max_depth,
            min_samples_leaf: config.min_samples_leaf,
            criterion: Criterion::Gini,
            features_per_node: None,
            seed: config.seed,
            tree_index: 0,
        },
    );
    Ok(TrainedModel::new(
        ModelKind::DecisionTree,
        config,
        matrix.dimension(),
        Estimator::Tree { root },
    ))
}
