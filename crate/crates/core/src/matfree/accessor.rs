//! Merged iteration over the column blocks of the block rows touched by a
//! cell.

use std::ops::Range;

use super::CellDofMap;
use crate::bcsr::BlockSparsityPattern;
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct RowCursor {
    pub block_row: usize,
    /// Linear block index of the current column block.
    pub cursor: usize,
    pub end: usize,
    pub active: bool,
    /// Range of this row's pairs in `CellDofMap::dof_indices`.
    pub group: Range<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct RowsBlockAccessor {
    rows: Vec<RowCursor>,
    current: Option<usize>,
}

impl RowsBlockAccessor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn current(&self) -> Option<usize> {
        self.current
    }

    pub fn rows(&self) -> &[RowCursor] {
        &self.rows
    }

    pub fn active_rows(&self) -> impl Iterator<Item = &RowCursor> {
        self.rows.iter().filter(|r| r.active)
    }

    fn refresh(&mut self, pattern: &BlockSparsityPattern) -> Option<usize> {
        let cols = pattern.col_idx();
        self.current = self
            .rows
            .iter()
            .filter(|r| r.cursor < r.end)
            .map(|r| cols[r.cursor])
            .min();
        for r in self.rows.iter_mut() {
            r.active = Some(r.cursor).filter(|&k| k < r.end).map(|k| cols[k]) == self.current
                && self.current.is_some();
        }
        self.current
    }

    /// Positions the cursors at the start of the block rows of cell `c`.
    pub fn reinit(
        &mut self,
        map: &CellDofMap,
        c: usize,
        pattern: &BlockSparsityPattern,
    ) -> Option<usize> {
        let ptr = pattern.row_ptr();
        self.rows.clear();
        let mut at = map.cell_offsets[c].0;
        for &(b, count) in map.cell_blocks(c) {
            self.rows.push(RowCursor {
                block_row: b,
                cursor: ptr[b],
                end: ptr[b + 1],
                active: false,
                group: at..at + count,
            });
            at += count;
        }
        self.refresh(pattern)
    }

    /// Moves past the current column block.
    pub fn advance(&mut self, pattern: &BlockSparsityPattern) -> Option<usize> {
        let c = self.current?;
        let cols = pattern.col_idx();
        for r in self.rows.iter_mut() {
            if r.cursor < r.end && cols[r.cursor] <= c {
                r.cursor += 1;
            }
        }
        self.refresh(pattern)
    }

    /// Moves every cursor to column block `c`, which all rows must store.
    pub fn advance_to(&mut self, pattern: &BlockSparsityPattern, c: usize) -> Result<()> {
        let cols = pattern.col_idx();
        for r in self.rows.iter_mut() {
            while r.cursor < r.end && cols[r.cursor] < c {
                r.cursor += 1;
            }
            r.active = r.cursor < r.end && cols[r.cursor] == c;
            if !r.active {
                return Err(Error::Pattern(format!(
                    "destination block ({}, {c}) is not in the pattern",
                    r.block_row
                )));
            }
        }
        self.current = Some(c);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bcsr::BlockIndices;
    use proptest::prelude::*;
    use std::collections::BTreeSet;
    use std::sync::Arc;

    fn pattern(lists: Vec<Vec<usize>>, n_cols: usize) -> BlockSparsityPattern {
        let rows = Arc::new(BlockIndices::from_sizes(&vec![4; lists.len()]).unwrap());
        let cols = Arc::new(BlockIndices::from_sizes(&vec![2; n_cols]).unwrap());
        BlockSparsityPattern::from_rows(rows, cols, lists).unwrap()
    }

    fn map_for(blocks: &[usize]) -> CellDofMap {
        CellDofMap::build(
            &[0],
            |_| (0..blocks.len()).collect(),
            |d| Some((blocks[d], 0)),
        )
        .unwrap()
    }

    fn sequence(
        acc: &mut RowsBlockAccessor,
        map: &CellDofMap,
        p: &BlockSparsityPattern,
    ) -> Vec<(usize, Vec<usize>)> {
        let mut out = Vec::new();
        let mut c = acc.reinit(map, 0, p);
        while let Some(cc) = c {
            out.push((cc, acc.active_rows().map(|r| r.block_row).collect()));
            c = acc.advance(p);
        }
        out
    }

    #[test]
    fn worked_example_pattern_starts_at_first_block_of_row_eight() {
        let mut lists = vec![vec![]; 9];
        lists[8] = vec![0, 2];
        lists[3] = vec![1, 2];
        let p = pattern(lists, 3);
        let map = map_for(&[8, 8, 0, 2, 0, 3, 8, 2, 3]);
        let mut acc = RowsBlockAccessor::new();
        assert_eq!(acc.reinit(&map, 0, &p), Some(0));
        assert_eq!(
            acc.active_rows().map(|r| r.block_row).collect::<Vec<_>>(),
            vec![8]
        );
        assert_eq!(
            sequence(&mut acc, &map, &p),
            vec![(0, vec![8]), (1, vec![3]), (2, vec![8, 3])]
        );
    }

    #[test]
    fn empty_single_and_dense_rows() {
        let mut acc = RowsBlockAccessor::new();
        let p = pattern(vec![vec![], vec![]], 2);
        assert_eq!(acc.reinit(&map_for(&[0, 1]), 0, &p), None);
        assert_eq!(acc.advance(&p), None);

        let p = pattern(vec![vec![1], vec![]], 2);
        assert_eq!(acc.reinit(&map_for(&[0, 1]), 0, &p), Some(1));
        assert_eq!(acc.advance(&p), None);
        assert_eq!(acc.advance(&p), None);

        let p = pattern(vec![vec![0, 1], vec![0, 1]], 2);
        assert_eq!(acc.reinit(&map_for(&[0, 1]), 0, &p), Some(0));
        assert_eq!(acc.active_rows().count(), 2);

        let p = pattern(vec![vec![1, 3], vec![2, 3]], 4);
        let seq: Vec<usize> = sequence(&mut acc, &map_for(&[0, 1]), &p)
            .into_iter()
            .map(|s| s.0)
            .collect();
        assert_eq!(seq, vec![1, 2, 3]);
    }

    #[test]
    fn advance_to_requires_stored_block() {
        let p = pattern(vec![vec![0, 2], vec![2]], 3);
        let mut acc = RowsBlockAccessor::new();
        acc.reinit(&map_for(&[0, 1]), 0, &p);
        assert!(acc.advance_to(&p, 2).is_ok());
        acc.reinit(&map_for(&[0, 1]), 0, &p);
        assert!(matches!(acc.advance_to(&p, 0), Err(Error::Pattern(_))));
    }

    proptest! {
        #[test]
        fn emitted_sequence_is_k_way_merge(
            lists in proptest::collection::vec(proptest::collection::btree_set(0usize..12, 0..6), 1..6),
            cell_rows in proptest::collection::vec(0usize..6, 1..10),
        ) {
            let n = lists.len();
            let p = pattern(lists.iter().map(|s| s.iter().copied().collect()).collect(), 12);
            let blocks: Vec<usize> = cell_rows.iter().map(|&b| b % n).collect();
            let map = map_for(&blocks);
            let touched: BTreeSet<usize> = blocks.iter().copied().collect();
            let merged: BTreeSet<usize> = touched.iter().flat_map(|&b| lists[b].iter().copied()).collect();
            let want: Vec<(usize, BTreeSet<usize>)> = merged
                .iter()
                .map(|&c| (c, touched.iter().copied().filter(|&b| lists[b].contains(&c)).collect()))
                .collect();
            let mut acc = RowsBlockAccessor::new();
            let got: Vec<(usize, BTreeSet<usize>)> =
                sequence(&mut acc, &map, &p).into_iter().map(|(c, r)| (c, r.into_iter().collect())).collect();
            prop_assert_eq!(got, want);
        }
    }
}
