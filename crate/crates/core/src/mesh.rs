//! Structured hexahedral mesh, HSFC-ordered cell partitioning and cell-wise
//! Lagrange DoF enumeration with row blocking.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bcsr::{BlockIndices, RowPartition};
use crate::hilbert::{order_by_hilbert, BoundingBox};
use crate::{Error, Result};

/// Serializable mesh description used in benchmark configurations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshDescription {
    pub extents: [usize; 3],
    pub spacing: [f64; 3],
    pub coarse_level_offset: u32,
    #[serde(default)]
    pub origin: [f64; 3],
}

/// Axis-aligned structured mesh of `nx * ny * nz` equal hexahedra. Fine cells
/// are grouped into coarse cells `2^L` fine cells wide per axis.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuredMesh {
    extents: [usize; 3],
    spacing: [f64; 3],
    coarse_level_offset: u32,
    origin: [f64; 3],
}

pub fn build_mesh(
    extents: [usize; 3],
    spacing: [f64; 3],
    coarse_level_offset: u32,
    origin: [f64; 3],
) -> Result<StructuredMesh> {
    let factor = 1usize
        .checked_shl(coarse_level_offset)
        .ok_or_else(|| Error::Config("coarse level offset too large".into()))?;
    for a in 0..3 {
        if extents[a] == 0 {
            return Err(Error::Config(format!(
                "extent along axis {a} must be positive"
            )));
        }
        if extents[a] % factor != 0 {
            return Err(Error::Config(format!(
                "extent {} along axis {a} is not divisible by 2^{coarse_level_offset}",
                extents[a]
            )));
        }
        if !(spacing[a] > 0.0 && spacing[a].is_finite()) {
            return Err(Error::Config(format!(
                "spacing along axis {a} must be positive"
            )));
        }
    }
    Ok(StructuredMesh {
        extents,
        spacing,
        coarse_level_offset,
        origin,
    })
}

impl StructuredMesh {
    pub fn from_description(d: &MeshDescription) -> Result<Self> {
        build_mesh(d.extents, d.spacing, d.coarse_level_offset, d.origin)
    }

    pub fn description(&self) -> MeshDescription {
        MeshDescription {
            extents: self.extents,
            spacing: self.spacing,
            coarse_level_offset: self.coarse_level_offset,
            origin: self.origin,
        }
    }

    pub fn extents(&self) -> [usize; 3] {
        self.extents
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn coarse_level_offset(&self) -> u32 {
        self.coarse_level_offset
    }

    pub fn n_cells(&self) -> usize {
        self.extents.iter().product()
    }

    /// Fine cells per coarse cell and axis.
    pub fn coarse_factor(&self) -> usize {
        1 << self.coarse_level_offset
    }

    pub fn coarse_extents(&self) -> [usize; 3] {
        let f = self.coarse_factor();
        self.extents.map(|e| e / f)
    }

    pub fn n_coarse_cells(&self) -> usize {
        self.coarse_extents().iter().product()
    }

    pub fn cell_coords(&self, cell: usize) -> [usize; 3] {
        let [nx, ny, _] = self.extents;
        [cell % nx, (cell / nx) % ny, cell / (nx * ny)]
    }

    pub fn cell_id(&self, c: [usize; 3]) -> usize {
        c[0] + self.extents[0] * (c[1] + self.extents[1] * c[2])
    }

    pub fn cell_lower_corner(&self, cell: usize) -> [f64; 3] {
        let c = self.cell_coords(cell);
        std::array::from_fn(|a| self.origin[a] + c[a] as f64 * self.spacing[a])
    }

    pub fn cell_center(&self, cell: usize) -> [f64; 3] {
        let lo = self.cell_lower_corner(cell);
        std::array::from_fn(|a| lo[a] + 0.5 * self.spacing[a])
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn volume(&self) -> f64 {
        self.cell_volume() * self.n_cells() as f64
    }

    pub fn bounding_box(&self) -> BoundingBox<3> {
        let hi = std::array::from_fn(|a| self.origin[a] + self.extents[a] as f64 * self.spacing[a]);
        BoundingBox::new(self.origin, hi)
    }

    pub fn coarse_coords(&self, coarse: usize) -> [usize; 3] {
        let [cx, cy, _] = self.coarse_extents();
        [coarse % cx, (coarse / cx) % cy, coarse / (cx * cy)]
    }

    pub fn coarse_id(&self, c: [usize; 3]) -> usize {
        let [cx, cy, _] = self.coarse_extents();
        c[0] + cx * (c[1] + cy * c[2])
    }

    pub fn coarse_of_cell(&self, cell: usize) -> usize {
        let f = self.coarse_factor();
        self.coarse_id(self.cell_coords(cell).map(|c| c / f))
    }

    pub fn coarse_center(&self, coarse: usize) -> [f64; 3] {
        let c = self.coarse_coords(coarse);
        let f = self.coarse_factor() as f64;
        std::array::from_fn(|a| self.origin[a] + (c[a] as f64 + 0.5) * f * self.spacing[a])
    }

    /// Fine children of a coarse cell in lexicographic order (x fastest).
    pub fn children(&self, coarse: usize) -> Vec<usize> {
        let f = self.coarse_factor();
        let c = self.coarse_coords(coarse);
        let mut out = Vec::with_capacity(f * f * f);
        for k in 0..f {
            for j in 0..f {
                for i in 0..f {
                    out.push(self.cell_id([c[0] * f + i, c[1] * f + j, c[2] * f + k]));
                }
            }
        }
        out
    }

    /// Tensor-product node grid size `(p * n + 1)` per axis.
    pub fn node_extents(&self, degree: usize) -> [usize; 3] {
        self.extents.map(|n| degree * n + 1)
    }

    pub fn n_nodes(&self, degree: usize) -> usize {
        self.node_extents(degree).iter().product()
    }

    /// Lexicographic (x fastest) node grid ids of a cell.
    pub fn cell_node_ids(&self, cell: usize, degree: usize) -> Vec<usize> {
        let [ex, ey, _] = self.node_extents(degree);
        let c = self.cell_coords(cell);
        let n = degree + 1;
        let mut out = Vec::with_capacity(n * n * n);
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let g = [degree * c[0] + i, degree * c[1] + j, degree * c[2] + k];
                    out.push(g[0] + ex * (g[1] + ey * g[2]));
                }
            }
        }
        out
    }

    /// Fine cells whose closed box contains `x`.
    pub fn cells_containing(&self, x: &[f64; 3]) -> Vec<usize> {
        if !self.bounding_box().contains(x) {
            return Vec::new();
        }
        let mut candidates: [Vec<usize>; 3] = Default::default();
        for a in 0..3 {
            let t = (x[a] - self.origin[a]) / self.spacing[a];
            let n = self.extents[a];
            let k = (t.floor().max(0.0) as usize).min(n - 1);
            candidates[a].push(k);
            if t == k as f64 && k > 0 {
                candidates[a].push(k - 1);
            }
        }
        let mut out = Vec::new();
        for &k in &candidates[2] {
            for &j in &candidates[1] {
                for &i in &candidates[0] {
                    out.push(self.cell_id([i, j, k]));
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// HSFC-ordered fine cells and their assignment to ranks.
#[derive(Clone, Debug)]
pub struct CellPartition {
    pub n_ranks: usize,
    pub rank_of_cell: Vec<usize>,
    /// Fine cells, child group by child group in curve order of the coarse
    /// parents.
    pub ordered_cells: Vec<usize>,
    /// Coarse cells in curve order.
    pub ordered_coarse: Vec<usize>,
    /// Number of fine cells contributed by each ordered coarse cell.
    pub coarse_group_sizes: Vec<usize>,
    /// Range of ordered coarse groups owned by each rank.
    pub rank_groups: Vec<Range<usize>>,
}

impl CellPartition {
    /// Range into `ordered_cells` for each rank.
    pub fn rank_cell_range(&self, rank: usize) -> Range<usize> {
        let g = &self.rank_groups[rank];
        let start: usize = self.coarse_group_sizes[..g.start].iter().sum();
        let len: usize = self.coarse_group_sizes[g.clone()].iter().sum();
        start..start + len
    }

    pub fn owned_cells(&self, rank: usize) -> &[usize] {
        &self.ordered_cells[self.rank_cell_range(rank)]
    }

    pub fn group_rank(&self, group: usize) -> usize {
        self.rank_groups.partition_point(|r| r.end <= group)
    }
}

/// Orders coarse cells along the Hilbert curve and hands out contiguous,
/// balanced runs of coarse groups to ranks.
pub fn partition_and_order_cells(mesh: &StructuredMesh, n_ranks: usize) -> Result<CellPartition> {
    let n_coarse = mesh.n_coarse_cells();
    if n_ranks == 0 {
        return Err(Error::Config("at least one rank is required".into()));
    }
    if n_ranks > n_coarse {
        return Err(Error::Config(format!(
            "{n_ranks} ranks but only {n_coarse} coarse cells; every rank must own cells"
        )));
    }
    let centers: Vec<[f64; 3]> = (0..n_coarse).map(|c| mesh.coarse_center(c)).collect();
    let ordered_coarse = order_by_hilbert(&centers, &mesh.bounding_box(), mesh.coarse_extents())?;

    let mut ordered_cells = Vec::with_capacity(mesh.n_cells());
    let mut coarse_group_sizes = Vec::with_capacity(n_coarse);
    for &c in &ordered_coarse {
        let children = mesh.children(c);
        coarse_group_sizes.push(children.len());
        ordered_cells.extend(children);
    }

    let base = n_coarse / n_ranks;
    let rem = n_coarse % n_ranks;
    let mut rank_groups = Vec::with_capacity(n_ranks);
    let mut start = 0;
    for r in 0..n_ranks {
        let len = base + usize::from(r < rem);
        rank_groups.push(start..start + len);
        start += len;
    }

    let mut rank_of_cell = vec![0; mesh.n_cells()];
    let mut pos = 0;
    for (g, &size) in coarse_group_sizes.iter().enumerate() {
        let rank = rank_groups.partition_point(|r| r.end <= g);
        for &cell in &ordered_cells[pos..pos + size] {
            rank_of_cell[cell] = rank;
        }
        pos += size;
    }

    Ok(CellPartition {
        n_ranks,
        rank_of_cell,
        ordered_cells,
        ordered_coarse,
        coarse_group_sizes,
        rank_groups,
    })
}

/// First-touch DoF enumeration along the ordered cell list.
#[derive(Clone, Debug)]
pub struct DofNumbering {
    pub degree: usize,
    pub n_dofs: usize,
    /// New DoF index of every node of the tensor-product node grid.
    pub new_index_of_node: Vec<usize>,
    pub owned_range_per_rank: Vec<Range<usize>>,
    /// One block per coarse group with at least one newly numbered DoF.
    pub row_blocks: Arc<BlockIndices>,
    /// Row block range owned by each rank.
    pub row_partition: Arc<RowPartition>,
}

impl DofNumbering {
    pub fn owner_of_dof(&self, dof: usize) -> usize {
        self.owned_range_per_rank.partition_point(|r| r.end <= dof)
    }

    pub fn dofs_per_cell(&self) -> usize {
        (self.degree + 1).pow(3)
    }
}

pub fn enumerate_dofs(
    mesh: &StructuredMesh,
    partition: &CellPartition,
    degree: usize,
) -> Result<DofNumbering> {
    if !(1..=4).contains(&degree) {
        return Err(Error::Config(format!(
            "degree must be in 1..=4, got {degree}"
        )));
    }
    const UNSET: usize = usize::MAX;
    let n_nodes = mesh.n_nodes(degree);
    let mut new_index_of_node = vec![UNSET; n_nodes];
    let mut next = 0;
    let mut block_sizes = Vec::with_capacity(partition.coarse_group_sizes.len());
    let mut block_rank = Vec::with_capacity(partition.coarse_group_sizes.len());
    let mut owned_range_per_rank = vec![0..0; partition.n_ranks];

    let mut pos = 0;
    for (g, &size) in partition.coarse_group_sizes.iter().enumerate() {
        let rank = partition.group_rank(g);
        let before = next;
        for &cell in &partition.ordered_cells[pos..pos + size] {
            for node in mesh.cell_node_ids(cell, degree) {
                if new_index_of_node[node] == UNSET {
                    new_index_of_node[node] = next;
                    next += 1;
                }
            }
        }
        pos += size;
        if next > before {
            block_sizes.push(next - before);
            block_rank.push(rank);
        }
        owned_range_per_rank[rank].end = next;
    }
    // ranks are visited in ascending order, so ranges are contiguous
    let mut start = 0;
    for r in owned_range_per_rank.iter_mut() {
        r.start = start;
        r.end = r.end.max(start);
        start = r.end;
    }
    debug_assert_eq!(next, n_nodes);

    let row_blocks = Arc::new(BlockIndices::from_sizes(&block_sizes)?);
    let mut block_starts = vec![0; partition.n_ranks + 1];
    for r in 0..partition.n_ranks {
        block_starts[r + 1] = block_starts[r] + block_rank.iter().filter(|&&br| br == r).count();
    }
    let row_partition = Arc::new(RowPartition::new(row_blocks.clone(), block_starts)?);

    Ok(DofNumbering {
        degree,
        n_dofs: next,
        new_index_of_node,
        owned_range_per_rank,
        row_blocks,
        row_partition,
    })
}

/// Global DoF indices of a cell in local lexicographic node order.
pub fn cell_nodes(mesh: &StructuredMesh, numbering: &DofNumbering, cell: usize) -> Vec<usize> {
    mesh.cell_node_ids(cell, numbering.degree)
        .into_iter()
        .map(|n| numbering.new_index_of_node[n])
        .collect()
}
