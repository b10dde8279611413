//! Localization centers, column ordering and blocking, and the block
//! sparsity of sparse multivectors supported on patches around the centers.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bcsr::{BlockIndices, BlockSparsityPattern, RowPartition};
use crate::hilbert::HilbertQuantizer;
use crate::mesh::{CellPartition, DofNumbering, StructuredMesh};
use crate::{Error, Result};

fn default_block_size() -> usize {
    8
}

fn default_vectors_per_center() -> usize {
    2
}

/// Serializable description of the localization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationSpec {
    pub centers: Vec<[f64; 3]>,
    /// Patch radius in Bohr.
    pub radius: f64,
    #[serde(default = "default_block_size")]
    pub block_size: usize,
    #[serde(default = "default_vectors_per_center")]
    pub vectors_per_center: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CenterAssignment {
    pub cell: usize,
    pub owner: usize,
}

/// Maps each center to a fine cell containing it. Points on cell faces are
/// given to the candidate cell of the lowest rank, then lowest cell id.
pub fn assign_centers(
    mesh: &StructuredMesh,
    partition: &CellPartition,
    centers: &[[f64; 3]],
) -> Result<Vec<CenterAssignment>> {
    centers
        .iter()
        .map(|x| {
            mesh.cells_containing(x)
                .into_iter()
                .map(|cell| CenterAssignment {
                    cell,
                    owner: partition.rank_of_cell[cell],
                })
                .min_by_key(|a| (a.owner, a.cell))
                .ok_or_else(|| Error::Domain(format!("center {x:?} lies outside the mesh")))
        })
        .collect()
}

/// Column order and blocking.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnOrdering {
    /// Original vector index (`center * vectors_per_center + k`) of every
    /// ordered column.
    pub permutation: Vec<usize>,
    pub blocks: Arc<BlockIndices>,
    pub partition: Arc<RowPartition>,
}

/// Sorts vectors by (owner rank, Hilbert key of the center on the fine cell
/// lattice, center index) and cuts each rank's run into blocks of
/// `block_size`, merging the remainder into the rank's last block.
pub fn order_and_block_columns(
    mesh: &StructuredMesh,
    centers: &[[f64; 3]],
    owners: &[usize],
    n_ranks: usize,
    vectors_per_center: usize,
    block_size: usize,
) -> Result<ColumnOrdering> {
    if block_size == 0 || vectors_per_center == 0 {
        return Err(Error::Config(
            "block size and vectors per center must be positive".into(),
        ));
    }
    if centers.len() != owners.len() {
        return Err(Error::Shape("one owner per center is required".into()));
    }
    let quantizer = HilbertQuantizer::new(mesh.bounding_box(), mesh.extents())?;
    let mut keyed = centers
        .iter()
        .zip(owners)
        .enumerate()
        .map(|(i, (x, &o))| Ok((o, quantizer.key(x)?, i)))
        .collect::<Result<Vec<_>>>()?;
    keyed.sort();

    let mut permutation = Vec::with_capacity(centers.len() * vectors_per_center);
    let mut per_rank = vec![0usize; n_ranks];
    for &(o, _, i) in &keyed {
        if o >= n_ranks {
            return Err(Error::Config(format!("owner rank {o} out of {n_ranks}")));
        }
        per_rank[o] += vectors_per_center;
        permutation.extend((0..vectors_per_center).map(|k| i * vectors_per_center + k));
    }
    let mut sizes = Vec::new();
    let mut block_starts = vec![0];
    for &n in &per_rank {
        if n > 0 {
            let nb = (n / block_size).max(1);
            sizes.extend(std::iter::repeat(block_size).take(nb - 1));
            sizes.push(n - (nb - 1) * block_size);
        }
        block_starts.push(sizes.len());
    }
    let blocks = Arc::new(BlockIndices::from_sizes(&sizes)?);
    let partition = Arc::new(RowPartition::new(blocks.clone(), block_starts)?);
    Ok(ColumnOrdering {
        permutation,
        blocks,
        partition,
    })
}

/// Coarse cells whose center lies within `radius` of `x`, plus the coarse
/// cell containing `x`.
pub fn patch_coarse_cells(mesh: &StructuredMesh, x: &[f64; 3], radius: f64) -> Vec<usize> {
    let ce = mesh.coarse_extents();
    let f = mesh.coarse_factor() as f64;
    let (o, h) = (mesh.origin(), mesh.spacing());
    let range = |a: usize| {
        let hc = f * h[a];
        let lo = ((x[a] - radius - o[a]) / hc - 0.5).floor() - 1.0;
        let hi = ((x[a] + radius - o[a]) / hc - 0.5).ceil() + 1.0;
        let lo = lo.max(0.0) as usize;
        let hi = (hi.max(-1.0) + 1.0).min(ce[a] as f64) as usize;
        lo..hi.max(lo)
    };
    let r2 = radius * radius;
    let mut out = Vec::new();
    for k in range(2) {
        for j in range(1) {
            for i in range(0) {
                let c = mesh.coarse_id([i, j, k]);
                let cc = mesh.coarse_center(c);
                let d2: f64 = (0..3).map(|a| (cc[a] - x[a]).powi(2)).sum();
                if d2 <= r2 {
                    out.push(c);
                }
            }
        }
    }
    if let Some(&cell) = mesh.cells_containing(x).first() {
        out.push(mesh.coarse_of_cell(cell));
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Centers, their owners and the ordered, blocked columns.
#[derive(Clone, Debug)]
pub struct LocalizationLayout {
    pub spec: LocalizationSpec,
    pub assignments: Vec<CenterAssignment>,
    pub columns: ColumnOrdering,
}

impl LocalizationLayout {
    pub fn build(
        mesh: &StructuredMesh,
        partition: &CellPartition,
        spec: LocalizationSpec,
    ) -> Result<Self> {
        if !(spec.radius >= 0.0 && spec.radius.is_finite()) {
            return Err(Error::Config(format!(
                "radius must be finite and non-negative, got {}",
                spec.radius
            )));
        }
        let assignments = assign_centers(mesh, partition, &spec.centers)?;
        let owners: Vec<usize> = assignments.iter().map(|a| a.owner).collect();
        let columns = order_and_block_columns(
            mesh,
            &spec.centers,
            &owners,
            partition.n_ranks,
            spec.vectors_per_center,
            spec.block_size,
        )?;
        Ok(Self {
            spec,
            assignments,
            columns,
        })
    }

    pub fn n_columns(&self) -> usize {
        self.columns.permutation.len()
    }

    pub fn column_blocks(&self) -> &Arc<BlockIndices> {
        &self.columns.blocks
    }

    pub fn column_partition(&self) -> &Arc<RowPartition> {
        &self.columns.partition
    }

    pub fn center_of_column(&self, column: usize) -> usize {
        self.columns.permutation[column] / self.spec.vectors_per_center
    }

    pub fn owner_rank_of_center(&self) -> Vec<usize> {
        self.assignments.iter().map(|a| a.owner).collect()
    }

    /// Coarse patch of every center.
    pub fn patches(&self, mesh: &StructuredMesh) -> Vec<Vec<usize>> {
        self.spec
            .centers
            .iter()
            .map(|x| patch_coarse_cells(mesh, x, self.spec.radius))
            .collect()
    }
}

/// Sorted DoFs on which the vectors of one center are nonzero.
pub fn support_dofs(
    mesh: &StructuredMesh,
    numbering: &DofNumbering,
    center: &[f64; 3],
    radius: f64,
) -> Vec<usize> {
    let mut dofs = BTreeSet::new();
    for coarse in patch_coarse_cells(mesh, center, radius) {
        for cell in mesh.children(coarse) {
            for node in mesh.cell_node_ids(cell, numbering.degree) {
                dofs.insert(numbering.new_index_of_node[node]);
            }
        }
    }
    dofs.into_iter().collect()
}

fn cell_row_blocks(mesh: &StructuredMesh, numbering: &DofNumbering, cell: usize) -> Vec<usize> {
    let mut rb: Vec<usize> = mesh
        .cell_node_ids(cell, numbering.degree)
        .into_iter()
        .map(|n| {
            numbering
                .row_blocks
                .global_to_block(numbering.new_index_of_node[n])
                .unwrap()
                .0
        })
        .collect();
    rb.sort_unstable();
    rb.dedup();
    rb
}

/// Block pattern of the multivector: block (r, c) is present iff some
/// column of block c is nonzero on some DoF of row block r.
pub fn build_support_sparsity(
    mesh: &StructuredMesh,
    numbering: &DofNumbering,
    layout: &LocalizationLayout,
) -> Result<BlockSparsityPattern> {
    let mut coarse_blocks: Vec<Option<Vec<usize>>> = vec![None; mesh.n_coarse_cells()];
    let cols = layout.column_blocks();
    let mut rows: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); numbering.row_blocks.n_blocks()];
    let patches = layout.patches(mesh);
    for cb in 0..cols.n_blocks() {
        let mut centers: Vec<usize> = cols
            .block_range(cb)
            .map(|j| layout.center_of_column(j))
            .collect();
        centers.dedup();
        let mut touched = BTreeSet::new();
        for c in centers {
            for &coarse in &patches[c] {
                let blocks = coarse_blocks[coarse].get_or_insert_with(|| {
                    let mut b: Vec<usize> = mesh
                        .children(coarse)
                        .into_iter()
                        .flat_map(|cell| cell_row_blocks(mesh, numbering, cell))
                        .collect();
                    b.sort_unstable();
                    b.dedup();
                    b
                });
                touched.extend(blocks.iter().copied());
            }
        }
        for r in touched {
            rows[r].insert(cb);
        }
    }
    BlockSparsityPattern::from_rows(
        numbering.row_blocks.clone(),
        cols.clone(),
        rows.into_iter().map(|s| s.into_iter().collect()).collect(),
    )
}

/// Closure of a pattern under one cell coupling step: block (r, c) is added
/// when some cell touches row block r and a row block r' with (r', c)
/// present.
pub fn grow_sparsity_for_operator(
    s: &BlockSparsityPattern,
    mesh: &StructuredMesh,
    numbering: &DofNumbering,
) -> Result<BlockSparsityPattern> {
    if s.rows() != &numbering.row_blocks {
        return Err(Error::Shape(
            "pattern rows do not match the DoF blocking".into(),
        ));
    }
    let mut rows: Vec<BTreeSet<usize>> = (0..s.n_block_rows())
        .map(|r| s.row(r).iter().copied().collect())
        .collect();
    let mut seen = BTreeSet::new();
    for cell in 0..mesh.n_cells() {
        let rb = cell_row_blocks(mesh, numbering, cell);
        if !seen.insert(rb.clone()) {
            continue;
        }
        let cols: BTreeSet<usize> = rb.iter().flat_map(|&r| s.row(r).iter().copied()).collect();
        for &r in &rb {
            rows[r].extend(cols.iter().copied());
        }
    }
    BlockSparsityPattern::from_rows(
        s.rows().clone(),
        s.cols().clone(),
        rows.into_iter().map(|r| r.into_iter().collect()).collect(),
    )
}

/// Largest number of center patches covering a single cell.
pub fn max_patch_overlap(mesh: &StructuredMesh, layout: &LocalizationLayout) -> usize {
    let mut count = vec![0usize; mesh.n_coarse_cells()];
    for patch in layout.patches(mesh) {
        for c in patch {
            count[c] += 1;
        }
    }
    count.into_iter().max().unwrap_or(0)
}
