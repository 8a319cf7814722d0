use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Scalar;

/// Sparse vector with strictly increasing indices and no stored zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector<T> {
    dimension: usize,
    indices: Vec<u32>,
    values: Vec<T>,
}

impl<T: Scalar> SparseVector<T> {
    pub fn zeros(dimension: usize) -> Self {
        SparseVector {
            dimension,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a vector from `(index, value)` pairs in any order.
    ///
    /// Duplicate indices are summed and zero results dropped.
    pub fn from_pairs(dimension: usize, mut pairs: Vec<(usize, T)>) -> Result<Self> {
        pairs.sort_by_key(|&(i, _)| i);
        let mut indices = Vec::with_capacity(pairs.len());
        let mut values: Vec<T> = Vec::with_capacity(pairs.len());
        for (i, v) in pairs {
            if i >= dimension {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    bound: dimension,
                });
            }
            if indices.last() == Some(&(i as u32)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(i as u32);
                values.push(v);
            }
        }
        let mut out = SparseVector {
            dimension,
            indices,
            values,
        };
        out.drop_zeros();
        Ok(out)
    }

    /// Builds a vector from sorted, duplicate-free entries. Zero values are dropped.
    pub(crate) fn from_sorted_unchecked(dimension: usize, entries: impl IntoIterator<Item = (usize, T)>) -> Self {
        let (indices, values) = entries
            .into_iter()
            .filter(|&(_, v)| v != T::zero())
            .map(|(i, v)| (i as u32, v))
            .unzip();
        let out = SparseVector {
            dimension,
            indices,
            values,
        };
        debug_assert!(out.is_well_formed());
        out
    }

    pub fn from_dense(values: &[T]) -> Self {
        Self::from_sorted_unchecked(values.len(), values.iter().copied().enumerate())
    }

    fn drop_zeros(&mut self) {
        let mut keep = 0;
        for k in 0..self.indices.len() {
            if self.values[k] != T::zero() {
                self.indices[keep] = self.indices[k];
                self.values[keep] = self.values[k];
                keep += 1;
            }
        }
        self.indices.truncate(keep);
        self.values.truncate(keep);
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_zero(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.indices.iter().zip(&self.values).map(|(&i, &v)| (i as usize, v))
    }

    pub fn get(&self, index: usize) -> T {
        match self.indices.binary_search(&(index as u32)) {
            Ok(k) => self.values[k],
            Err(_) => T::zero(),
        }
    }

    pub fn to_dense(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.dimension];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }

    pub fn dot(&self, dense: &[T]) -> T {
        self.iter().map(|(i, v)| v * dense[i]).sum()
    }

    pub fn norm(&self) -> T {
        self.values.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    /// Scales to unit L2 norm; the zero vector is returned unchanged.
    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > T::zero() {
            for v in &mut self.values {
                *v /= n;
            }
            self.drop_zeros();
        }
        self
    }

    /// Keeps only the listed columns, renumbered in the order given.
    ///
    /// `remap[i]` is the new index of old column `i`, or `None` to drop it.
    pub(crate) fn project(&self, remap: &[Option<usize>], new_dimension: usize) -> Self {
        Self::from_sorted_unchecked(new_dimension, self.iter().filter_map(|(i, v)| remap[i].map(|j| (j, v))))
    }

    /// Appends `tail` after the existing columns.
    pub(crate) fn concat(&self, tail: &[T]) -> Self {
        let offset = self.dimension;
        Self::from_sorted_unchecked(
            offset + tail.len(),
            self.iter()
                .chain(tail.iter().enumerate().map(|(k, &v)| (offset + k, v))),
        )
    }

    pub fn is_well_formed(&self) -> bool {
        self.indices.len() == self.values.len()
            && self.indices.windows(2).all(|w| w[0] < w[1])
            && self.indices.iter().all(|&i| (i as usize) < self.dimension)
            && self.values.iter().all(|&v| v != T::zero())
    }
}
