//! Cell DoF to block row association, grouped by block.

use crate::{Error, Result};

/// For every cell: groups of `(row within block, DoF within cell)` pairs, one
/// group per row block, in order of first occurrence over the cell DoFs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CellDofMap {
    pub cells: Vec<usize>,
    pub dof_indices: Vec<(u32, u32)>,
    /// `(local block row, number of pairs)`
    pub block_indices: Vec<(usize, usize)>,
    /// Start of each cell in `dof_indices` and `block_indices`; one extra
    /// trailing entry.
    pub cell_offsets: Vec<(usize, usize)>,
}

/// Groups one cell's `(block, row)` locations by block.
pub fn group_cell(locations: &[(usize, usize)]) -> (Vec<(u32, u32)>, Vec<(usize, usize)>) {
    let mut order: Vec<usize> = Vec::new();
    for &(b, _) in locations {
        if !order.contains(&b) {
            order.push(b);
        }
    }
    let mut dofs = Vec::with_capacity(locations.len());
    let mut blocks = Vec::with_capacity(order.len());
    for b in order {
        let before = dofs.len();
        dofs.extend(
            locations
                .iter()
                .enumerate()
                .filter(|(_, l)| l.0 == b)
                .map(|(i, l)| (l.1 as u32, i as u32)),
        );
        blocks.push((b, dofs.len() - before));
    }
    (dofs, blocks)
}

impl CellDofMap {
    /// `cell_dofs` lists the global DoFs of a cell in local order; `locate`
    /// maps a global DoF to its local `(block row, row)`.
    pub fn build(
        cells: &[usize],
        mut cell_dofs: impl FnMut(usize) -> Vec<usize>,
        mut locate: impl FnMut(usize) -> Option<(usize, usize)>,
    ) -> Result<Self> {
        let mut map = CellDofMap {
            cells: cells.to_vec(),
            ..Default::default()
        };
        map.cell_offsets.push((0, 0));
        for &cell in cells {
            let locs = cell_dofs(cell)
                .into_iter()
                .map(|d| {
                    locate(d).ok_or_else(|| {
                        Error::Consistency(format!("cell {cell} touches unmapped DoF {d}"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let (dofs, blocks) = group_cell(&locs);
            map.dof_indices.extend(dofs);
            map.block_indices.extend(blocks);
            map.cell_offsets
                .push((map.dof_indices.len(), map.block_indices.len()));
        }
        Ok(map)
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_blocks(&self, c: usize) -> &[(usize, usize)] {
        &self.block_indices[self.cell_offsets[c].1..self.cell_offsets[c + 1].1]
    }

    pub fn cell_dofs(&self, c: usize) -> &[(u32, u32)] {
        &self.dof_indices[self.cell_offsets[c].0..self.cell_offsets[c + 1].0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example_cell_groups() {
        let locs = [
            (8, 0),
            (8, 1),
            (0, 1),
            (2, 0),
            (0, 3),
            (3, 0),
            (8, 2),
            (2, 1),
            (3, 1),
        ];
        let map = CellDofMap::build(&[0], |_| (0..9).collect(), |d| Some(locs[d])).unwrap();
        assert_eq!(
            map.dof_indices,
            vec![
                (0, 0),
                (1, 1),
                (2, 6),
                (1, 2),
                (3, 4),
                (0, 3),
                (1, 7),
                (0, 5),
                (1, 8)
            ]
        );
        assert_eq!(map.block_indices, vec![(8, 3), (0, 2), (2, 2), (3, 2)]);
        assert_eq!(map.cell_offsets, vec![(0, 0), (9, 4)]);
    }

    #[test]
    fn single_block_cell_and_unmapped_dof() {
        let map = CellDofMap::build(&[5], |_| (0..8).collect(), |d| Some((0, d))).unwrap();
        assert_eq!(map.block_indices, vec![(0, 8)]);
        assert_eq!(map.cell_dofs(0).len(), 8);
        let err =
            CellDofMap::build(&[5], |_| vec![0, 1], |d| (d == 0).then_some((0, 0))).unwrap_err();
        assert!(matches!(err, Error::Consistency(_)));
    }
}
