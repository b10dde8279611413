use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Partition of the contiguous index range `[0, n)` into consecutive blocks
/// of positive size.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct BlockIndices {
    offsets: Vec<usize>,
}

impl BlockIndices {
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        if let Some(b) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Config(format!("block {b} has zero size")));
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        offsets.push(0);
        let mut acc = 0;
        for &s in sizes {
            acc += s;
            offsets.push(acc);
        }
        Ok(Self { offsets })
    }

    /// Blocks of the given sizes, silently dropping empty ones.
    pub fn from_sizes_skip_empty(sizes: impl IntoIterator<Item = usize>) -> Self {
        let mut offsets = vec![0];
        let mut acc = 0;
        for s in sizes.into_iter().filter(|&s| s > 0) {
            acc += s;
            offsets.push(acc);
        }
        Self { offsets }
    }

    pub fn n_blocks(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    /// Total number of indices.
    pub fn total(&self) -> usize {
        self.offsets.last().copied().unwrap_or(0)
    }

    pub fn block_size(&self, b: usize) -> usize {
        self.offsets[b + 1] - self.offsets[b]
    }

    pub fn block_start(&self, b: usize) -> usize {
        self.offsets[b]
    }

    pub fn block_range(&self, b: usize) -> std::ops::Range<usize> {
        self.offsets[b]..self.offsets[b + 1]
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Translates a global index into `(block, index within block)` by binary
    /// search over the block offsets.
    pub fn global_to_block(&self, i: usize) -> Option<(usize, usize)> {
        if i >= self.total() {
            return None;
        }
        let b = self.offsets.partition_point(|&o| o <= i) - 1;
        Some((b, i - self.offsets[b]))
    }
}

impl TryFrom<Vec<usize>> for BlockIndices {
    type Error = Error;

    fn try_from(sizes: Vec<usize>) -> Result<Self> {
        Self::from_sizes(&sizes)
    }
}

impl From<BlockIndices> for Vec<usize> {
    fn from(b: BlockIndices) -> Self {
        b.sizes()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lookup_and_edges() {
        let b = BlockIndices::from_sizes(&[3, 1, 4]).unwrap();
        assert_eq!(b.n_blocks(), 3);
        assert_eq!(b.total(), 8);
        assert_eq!(b.global_to_block(0), Some((0, 0)));
        assert_eq!(b.global_to_block(2), Some((0, 2)));
        assert_eq!(b.global_to_block(3), Some((1, 0)));
        assert_eq!(b.global_to_block(7), Some((2, 3)));
        assert_eq!(b.global_to_block(8), None);
        assert!(BlockIndices::from_sizes(&[2, 0]).is_err());
        assert_eq!(
            BlockIndices::from_sizes_skip_empty([0, 2, 0, 3]).sizes(),
            vec![2, 3]
        );
        assert_eq!(BlockIndices::default().global_to_block(0), None);
    }

    proptest! {
        #[test]
        fn global_to_block_matches_linear_scan(sizes in prop::collection::vec(1usize..9, 1..30)) {
            let b = BlockIndices::from_sizes(&sizes).unwrap();
            let mut expect = Vec::new();
            for (blk, &s) in sizes.iter().enumerate() {
                for k in 0..s {
                    expect.push((blk, k));
                }
            }
            for (i, e) in expect.iter().enumerate() {
                prop_assert_eq!(b.global_to_block(i), Some(*e));
            }
            let json = serde_json::to_string(&b).unwrap();
            let back: BlockIndices = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(back, b);
        }
    }
}
