use std::sync::Arc;

use super::BlockIndices;
use crate::{Error, Result};

/// Block sparsity pattern: for each block row the strictly ascending list of
/// non-empty block columns, stored CSR-style. The linear index of a block is
/// its position in the flattened column list.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSparsityPattern {
    rows: Arc<BlockIndices>,
    cols: Arc<BlockIndices>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
}

impl BlockSparsityPattern {
    /// Builds a pattern from per-row column lists. Lists are sorted and
    /// deduplicated; out-of-range columns are rejected.
    pub fn from_rows(
        rows: Arc<BlockIndices>,
        cols: Arc<BlockIndices>,
        mut row_cols: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if row_cols.len() != rows.n_blocks() {
            return Err(Error::Shape(format!(
                "{} column lists for {} block rows",
                row_cols.len(),
                rows.n_blocks()
            )));
        }
        let mut row_ptr = Vec::with_capacity(row_cols.len() + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for list in row_cols.iter_mut() {
            list.sort_unstable();
            list.dedup();
            if let Some(&c) = list.last() {
                if c >= cols.n_blocks() {
                    return Err(Error::Pattern(format!(
                        "block column {c} out of range ({} column blocks)",
                        cols.n_blocks()
                    )));
                }
            }
            col_idx.extend_from_slice(list);
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
        })
    }

    pub fn dense(rows: Arc<BlockIndices>, cols: Arc<BlockIndices>) -> Self {
        let all: Vec<usize> = (0..cols.n_blocks()).collect();
        let lists = vec![all; rows.n_blocks()];
        Self::from_rows(rows, cols, lists).expect("dense pattern is valid")
    }

    pub fn empty(rows: Arc<BlockIndices>, cols: Arc<BlockIndices>) -> Self {
        let lists = vec![Vec::new(); rows.n_blocks()];
        Self::from_rows(rows, cols, lists).expect("empty pattern is valid")
    }

    pub fn rows(&self) -> &Arc<BlockIndices> {
        &self.rows
    }

    pub fn cols(&self) -> &Arc<BlockIndices> {
        &self.cols
    }

    pub fn n_block_rows(&self) -> usize {
        self.rows.n_blocks()
    }

    /// Number of stored (non-empty) blocks.
    pub fn n_nonzero_blocks(&self) -> usize {
        self.col_idx.len()
    }

    pub fn row(&self, r: usize) -> &[usize] {
        &self.col_idx[self.row_ptr[r]..self.row_ptr[r + 1]]
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    /// Linear block index of `(r, c)` if present.
    pub fn find(&self, r: usize, c: usize) -> Option<usize> {
        let row = self.row(r);
        row.binary_search(&c).ok().map(|k| self.row_ptr[r] + k)
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        self.find(r, c).is_some()
    }

    pub fn row_lists(&self) -> Vec<Vec<usize>> {
        (0..self.n_block_rows())
            .map(|r| self.row(r).to_vec())
            .collect()
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.n_block_rows() == other.n_block_rows()
            && (0..self.n_block_rows()).all(|r| self.row(r).iter().all(|&c| other.contains(r, c)))
    }

    pub fn union(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::Shape(
                "union of patterns with different blockings".into(),
            ));
        }
        let lists = (0..self.n_block_rows())
            .map(|r| {
                let mut l = self.row(r).to_vec();
                l.extend_from_slice(other.row(r));
                l
            })
            .collect();
        Self::from_rows(self.rows.clone(), self.cols.clone(), lists)
    }

    /// Number of stored scalar values (unpadded).
    pub fn n_scalar_entries(&self) -> usize {
        (0..self.n_block_rows())
            .map(|r| {
                let h = self.rows.block_size(r);
                self.row(r)
                    .iter()
                    .map(|&c| h * self.cols.block_size(c))
                    .sum::<usize>()
            })
            .sum()
    }
}
