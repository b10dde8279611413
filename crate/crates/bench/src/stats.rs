use mfsparse::localization::{max_patch_overlap, support_dofs};
use mfsparse::util::mean_std;
use serde::{Deserialize, Serialize};

use crate::generate::GeneratedProblem;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let (mean, std) = mean_std(values);
        Self { mean, std }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.3} +- {:.3}", self.mean, self.std)
    }
}

/// Structure of a generated problem, one field per line of the usual
/// statistics table plus a few linear-scaling indicators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuralStats {
    pub atoms: usize,
    pub n_ranks: usize,
    pub degree: usize,
    pub dofs_per_cell: usize,
    pub n_cells: usize,
    pub n_coarse_cells: usize,
    pub n_dofs: usize,
    pub n_columns: usize,
    pub n_row_blocks: usize,
    pub n_column_blocks: usize,
    pub row_block_size: MeanStd,
    pub column_block_size: MeanStd,
    /// Owned row blocks of the projected matrices per rank.
    pub owned_projected_row_blocks: MeanStd,
    /// Non-empty column blocks visited by the cell operator, per rank.
    pub cell_column_blocks: MeanStd,
    pub cell_column_blocks_per_rank: Vec<u64>,
    pub phi_nonzero_blocks: usize,
    pub phi_stored_values: usize,
    pub stored_values_per_column: f64,
    pub support_dofs_per_column: MeanStd,
    /// Largest number of localization patches covering one coarse cell.
    pub max_patch_overlap: usize,
}

pub fn structural_stats(g: &GeneratedProblem) -> StructuralStats {
    let p = &g.problem;
    let sizes = |v: Vec<usize>| MeanStd::of(&v.into_iter().map(|s| s as f64).collect::<Vec<_>>());
    let cp = p.layout.column_partition();
    let owned_proj: Vec<usize> = (0..p.n_ranks()).map(|r| cp.owned_blocks(r).len()).collect();
    let visits = p.cell_column_blocks_per_rank();
    let support: Vec<usize> = p
        .layout
        .spec
        .centers
        .iter()
        .map(|c| support_dofs(&p.mesh, &p.numbering, c, p.layout.spec.radius).len())
        .collect();
    let stored = p.phi_pattern.n_scalar_entries();
    StructuralStats {
        atoms: g.atoms.len(),
        n_ranks: p.n_ranks(),
        degree: p.degree(),
        dofs_per_cell: p.numbering.dofs_per_cell(),
        n_cells: p.mesh.n_cells(),
        n_coarse_cells: p.mesh.n_coarse_cells(),
        n_dofs: p.n_dofs(),
        n_columns: p.n_columns(),
        n_row_blocks: p.numbering.row_blocks.n_blocks(),
        n_column_blocks: p.layout.column_blocks().n_blocks(),
        row_block_size: sizes(p.numbering.row_blocks.sizes()),
        column_block_size: sizes(p.layout.column_blocks().sizes()),
        owned_projected_row_blocks: sizes(owned_proj),
        cell_column_blocks: MeanStd::of(&visits.iter().map(|&v| v as f64).collect::<Vec<_>>()),
        cell_column_blocks_per_rank: visits,
        phi_nonzero_blocks: p.phi_pattern.n_nonzero_blocks(),
        phi_stored_values: stored,
        stored_values_per_column: stored as f64 / p.n_columns().max(1) as f64,
        support_dofs_per_column: sizes(support),
        max_patch_overlap: max_patch_overlap(&p.mesh, &p.layout),
    }
}
