//! A complete distributed setup: mesh, partition, numbering, localization,
//! global block patterns and the per-rank ghost schemes derived from them.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::bcsr::{
    build_ghost_scheme, BlockCsrMatrix, BlockSparsityPattern, GhostScheme, RowPartition,
};
use crate::comm::RankContext;
use crate::localization::{
    build_support_sparsity, grow_sparsity_for_operator, LocalizationLayout, LocalizationSpec,
};
use crate::matfree::{MatrixFreeOperator, OperatorSpec};
use crate::mesh::{
    cell_nodes, enumerate_dofs, partition_and_order_cells, CellPartition, DofNumbering,
    StructuredMesh,
};
use crate::util::hashed_uniform;
use crate::{Error, Result};

/// Symmetric block pattern of `Phi^T A Phi` including the diagonal.
pub fn projected_pattern(
    phi: &BlockSparsityPattern,
    grown: &BlockSparsityPattern,
) -> Result<BlockSparsityPattern> {
    let cols = phi.cols().clone();
    let mut rows: Vec<BTreeSet<usize>> =
        (0..cols.n_blocks()).map(|k| BTreeSet::from([k])).collect();
    for r in 0..phi.n_block_rows() {
        for &k in phi.row(r) {
            for &l in grown.row(r) {
                rows[k].insert(l);
                rows[l].insert(k);
            }
        }
    }
    BlockSparsityPattern::from_rows(
        cols.clone(),
        cols,
        rows.into_iter().map(|s| s.into_iter().collect()).collect(),
    )
}

/// Ghost and import rows of every rank for a row partition: `reads[r]`
/// lists the global rows rank `r` needs.
fn exchange_sets(
    partition: &RowPartition,
    reads: &[BTreeSet<usize>],
) -> (
    Vec<BTreeMap<usize, Vec<usize>>>,
    Vec<BTreeMap<usize, Vec<usize>>>,
) {
    let n = reads.len();
    let mut ghosts = vec![BTreeMap::new(); n];
    let mut imports: Vec<BTreeMap<usize, Vec<usize>>> = vec![BTreeMap::new(); n];
    for (r, set) in reads.iter().enumerate() {
        for &row in set {
            let owner = partition.owner_of_row(row).expect("row in range");
            if owner != r {
                ghosts[r].entry(owner).or_insert_with(Vec::new).push(row);
                imports[owner].entry(r).or_default().push(row);
            }
        }
    }
    (ghosts, imports)
}

/// Per-rank structures for the multivector, its operator images and the
/// projected matrices.
#[derive(Clone, Debug)]
pub struct RankSetup {
    pub phi: Arc<GhostScheme>,
    pub grown: Arc<GhostScheme>,
    pub projected: Arc<GhostScheme>,
    pub owned_cells: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Problem {
    pub mesh: StructuredMesh,
    pub partition: CellPartition,
    pub numbering: DofNumbering,
    pub layout: LocalizationLayout,
    pub phi_pattern: BlockSparsityPattern,
    pub grown_pattern: BlockSparsityPattern,
    pub projected_pattern: BlockSparsityPattern,
    node_of_dof: Vec<usize>,
    patches: Vec<Vec<usize>>,
    dof_ghosts: Vec<BTreeMap<usize, Vec<usize>>>,
    dof_imports: Vec<BTreeMap<usize, Vec<usize>>>,
    proj_ghosts: Vec<BTreeMap<usize, Vec<usize>>>,
    proj_imports: Vec<BTreeMap<usize, Vec<usize>>>,
}

impl Problem {
    pub fn new(
        mesh: StructuredMesh,
        n_ranks: usize,
        degree: usize,
        spec: LocalizationSpec,
    ) -> Result<Self> {
        let partition = partition_and_order_cells(&mesh, n_ranks)?;
        let numbering = enumerate_dofs(&mesh, &partition, degree)?;
        let layout = LocalizationLayout::build(&mesh, &partition, spec)?;
        let phi_pattern = build_support_sparsity(&mesh, &numbering, &layout)?;
        Self::with_pattern(mesh, partition, numbering, layout, phi_pattern)
    }

    /// Uses a caller-supplied multivector pattern; its columns must follow
    /// the layout's blocking.
    pub fn with_pattern(
        mesh: StructuredMesh,
        partition: CellPartition,
        numbering: DofNumbering,
        layout: LocalizationLayout,
        phi_pattern: BlockSparsityPattern,
    ) -> Result<Self> {
        if phi_pattern.cols() != layout.column_blocks()
            || phi_pattern.rows() != &numbering.row_blocks
        {
            return Err(Error::Shape(
                "multivector pattern does not match the blockings".into(),
            ));
        }
        let grown_pattern = grow_sparsity_for_operator(&phi_pattern, &mesh, &numbering)?;
        let projected_pattern = projected_pattern(&phi_pattern, &grown_pattern)?;

        let mut node_of_dof = vec![0; numbering.n_dofs];
        for (node, &d) in numbering.new_index_of_node.iter().enumerate() {
            node_of_dof[d] = node;
        }
        let patches = layout.patches(&mesh);

        let n_ranks = partition.n_ranks;
        let dof_reads: Vec<BTreeSet<usize>> = (0..n_ranks)
            .map(|r| {
                partition
                    .owned_cells(r)
                    .iter()
                    .flat_map(|&c| cell_nodes(&mesh, &numbering, c))
                    .collect()
            })
            .collect();
        let (dof_ghosts, dof_imports) = exchange_sets(&numbering.row_partition, &dof_reads);

        let cols = layout.column_blocks();
        let proj_reads: Vec<BTreeSet<usize>> = (0..n_ranks)
            .map(|r| {
                let blocks: BTreeSet<usize> = numbering
                    .row_partition
                    .owned_blocks(r)
                    .flat_map(|b| grown_pattern.row(b).iter().copied())
                    .collect();
                blocks
                    .into_iter()
                    .flat_map(|b| cols.block_range(b))
                    .collect()
            })
            .collect();
        let (proj_ghosts, proj_imports) = exchange_sets(layout.column_partition(), &proj_reads);

        Ok(Self {
            mesh,
            partition,
            numbering,
            layout,
            phi_pattern,
            grown_pattern,
            projected_pattern,
            node_of_dof,
            patches,
            dof_ghosts,
            dof_imports,
            proj_ghosts,
            proj_imports,
        })
    }

    pub fn n_ranks(&self) -> usize {
        self.partition.n_ranks
    }

    pub fn n_dofs(&self) -> usize {
        self.numbering.n_dofs
    }

    pub fn n_columns(&self) -> usize {
        self.layout.n_columns()
    }

    pub fn degree(&self) -> usize {
        self.numbering.degree
    }

    pub fn node_of_dof(&self, dof: usize) -> usize {
        self.node_of_dof[dof]
    }

    /// Original vector id of an ordered column.
    pub fn vector_of_column(&self, column: usize) -> usize {
        self.layout.columns.permutation[column]
    }

    pub fn cell_dofs(&self, cell: usize) -> Vec<usize> {
        cell_nodes(&self.mesh, &self.numbering, cell)
    }

    /// True when the vectors of `center` are supported at `dof`.
    pub fn dof_in_support(&self, dof: usize, center: usize) -> bool {
        let p = self.numbering.degree;
        let ext = self.mesh.node_extents(p);
        let node = self.node_of_dof[dof];
        let g = [
            node % ext[0],
            (node / ext[0]) % ext[1],
            node / (ext[0] * ext[1]),
        ];
        let cells = self.mesh.extents();
        let f = self.mesh.coarse_factor();
        let candidates = |a: usize| {
            let c = g[a] / p;
            let mut v = Vec::with_capacity(2);
            if c < cells[a] {
                v.push(c);
            }
            if g[a] % p == 0 && c > 0 {
                v.push(c - 1);
            }
            v
        };
        let (cx, cy, cz) = (candidates(0), candidates(1), candidates(2));
        let patch = &self.patches[center];
        cz.iter().any(|&k| {
            cy.iter().any(|&j| {
                cx.iter().any(|&i| {
                    patch
                        .binary_search(&self.mesh.coarse_id([i / f, j / f, k / f]))
                        .is_ok()
                })
            })
        })
    }

    /// Deterministic multivector entry, independent of the rank count:
    /// uniform in `[-1, 1)` on the support of the column's center, else 0.
    pub fn phi_value(&self, seed: u64, dof: usize, column: usize) -> f64 {
        if self.dof_in_support(dof, self.layout.center_of_column(column)) {
            hashed_uniform(seed, self.node_of_dof[dof], self.vector_of_column(column))
        } else {
            0.0
        }
    }

    pub fn fill_phi(&self, phi: &mut BlockCsrMatrix, seed: u64) -> Result<()> {
        phi.fill_owned(|r, c| self.phi_value(seed, r, c))
    }

    /// Collective: builds the ghost schemes of the calling rank.
    pub fn rank_setup(&self, ctx: &RankContext) -> Result<RankSetup> {
        let rank = ctx.rank();
        if ctx.n_ranks() != self.n_ranks() {
            return Err(Error::Config(format!(
                "problem partitioned for {} ranks run on {}",
                self.n_ranks(),
                ctx.n_ranks()
            )));
        }
        let rows = &self.numbering.row_partition;
        let owned_lists =
            |p: &BlockSparsityPattern| rows.owned_blocks(rank).map(|b| p.row(b).to_vec()).collect();
        let phi = build_ghost_scheme(
            ctx,
            rows.clone(),
            self.layout.column_blocks().clone(),
            owned_lists(&self.phi_pattern),
            &self.dof_ghosts[rank],
            &self.dof_imports[rank],
        )?;
        let grown = build_ghost_scheme(
            ctx,
            rows.clone(),
            self.layout.column_blocks().clone(),
            owned_lists(&self.grown_pattern),
            &self.dof_ghosts[rank],
            &self.dof_imports[rank],
        )?;
        let cp = self.layout.column_partition();
        let projected = build_ghost_scheme(
            ctx,
            cp.clone(),
            self.layout.column_blocks().clone(),
            cp.owned_blocks(rank)
                .map(|b| self.projected_pattern.row(b).to_vec())
                .collect(),
            &self.proj_ghosts[rank],
            &self.proj_imports[rank],
        )?;
        Ok(RankSetup {
            phi: Arc::new(phi),
            grown: Arc::new(grown),
            projected: Arc::new(projected),
            owned_cells: self.partition.owned_cells(rank).to_vec(),
        })
    }

    pub fn operator(&self, setup: &RankSetup, spec: OperatorSpec) -> Result<MatrixFreeOperator> {
        MatrixFreeOperator::new(
            &self.mesh,
            self.degree(),
            spec,
            &setup.owned_cells,
            |c| self.cell_dofs(c),
            &setup.phi,
        )
    }

    /// Column blocks visited per rank by the cell loop.
    pub fn cell_column_blocks_per_rank(&self) -> Vec<u64> {
        (0..self.n_ranks())
            .map(|r| {
                self.partition
                    .owned_cells(r)
                    .iter()
                    .map(|&c| {
                        let blocks: BTreeSet<usize> = self
                            .cell_dofs(c)
                            .into_iter()
                            .map(|d| self.numbering.row_blocks.global_to_block(d).unwrap().0)
                            .collect();
                        let cols: BTreeSet<usize> = blocks
                            .iter()
                            .flat_map(|&b| self.phi_pattern.row(b).iter().copied())
                            .collect();
                        cols.len() as u64
                    })
                    .sum()
            })
            .collect()
    }
}
