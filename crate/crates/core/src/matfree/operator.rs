//! Cell-wise application of the mass and Hamiltonian operators to BCSR
//! multivectors.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use super::kernels::{element_matrix, gemm_apply, CellCoefficients, Scratch, SumFactorization};
use super::{CellDofMap, OperatorKind, RowsBlockAccessor, ShapeInfo};
use crate::bcsr::{BlockCsrMatrix, GhostScheme, GhostState};
use crate::comm::RankContext;
use crate::mesh::StructuredMesh;
use crate::{Error, Result};

pub type PotentialFn = dyn Fn([f64; 3]) -> f64 + Send + Sync;

#[derive(Clone)]
pub enum Potential {
    Zero,
    Constant(f64),
    Field(Arc<PotentialFn>),
}

impl std::fmt::Debug for Potential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Potential::Zero => write!(f, "Zero"),
            Potential::Constant(v) => write!(f, "Constant({v})"),
            Potential::Field(_) => write!(f, "Field(..)"),
        }
    }
}

impl Potential {
    pub fn is_uniform(&self) -> bool {
        !matches!(self, Potential::Field(_))
    }

    pub fn at(&self, x: [f64; 3]) -> f64 {
        match self {
            Potential::Zero => 0.0,
            Potential::Constant(v) => *v,
            Potential::Field(f) => f(x),
        }
    }
}

#[derive(Clone, Debug)]
pub struct OperatorSpec {
    pub kind: OperatorKind,
    pub potential: Potential,
}

impl OperatorSpec {
    pub fn mass() -> Self {
        Self {
            kind: OperatorKind::Mass,
            potential: Potential::Zero,
        }
    }

    pub fn hamiltonian(potential: Potential) -> Self {
        Self {
            kind: OperatorKind::Hamiltonian,
            potential,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    SumFac,
    Gemm,
}

/// Quadrature coefficients of a cartesian cell.
pub fn cell_coefficients(
    shape: &ShapeInfo,
    mesh: &StructuredMesh,
    cell: usize,
    spec: &OperatorSpec,
) -> CellCoefficients {
    let q = shape.n_q;
    let h = mesh.spacing();
    let lo = mesh.cell_lower_corner(cell);
    let det: f64 = h.iter().product();
    let nq = q * q * q;
    let mut gradient: [Vec<f64>; 3] = Default::default();
    let mut value = Vec::with_capacity(nq);
    for p in 0..nq {
        let pc = [p % q, (p / q) % q, p / (q * q)];
        let w = shape.q_weights[pc[0]] * shape.q_weights[pc[1]] * shape.q_weights[pc[2]] * det;
        for (d, g) in gradient.iter_mut().enumerate() {
            g.push(0.5 * w / (h[d] * h[d]));
        }
        value.push(match spec.kind {
            OperatorKind::Mass => w,
            OperatorKind::Hamiltonian => {
                let x = std::array::from_fn(|a| lo[a] + h[a] * shape.q_points[pc[a]]);
                w * spec.potential.at(x)
            }
        });
    }
    CellCoefficients { gradient, value }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplyStats {
    pub flops: u64,
    /// Non-empty column blocks visited over all cells.
    pub cell_column_blocks: u64,
    pub lane_groups: u64,
    pub bytes_estimate: u64,
}

impl std::ops::AddAssign for ApplyStats {
    fn add_assign(&mut self, o: Self) {
        self.flops += o.flops;
        self.cell_column_blocks += o.cell_column_blocks;
        self.lane_groups += o.lane_groups;
        self.bytes_estimate += o.bytes_estimate;
    }
}

/// Analytic operation counts of one cell kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopReport {
    pub variant: Variant,
    pub degree: usize,
    pub flops_per_cell_lane: u64,
    /// Per DoF of an unbounded mesh, `p^3` DoFs per cell.
    pub flops_per_dof: f64,
}

pub fn flop_report(variant: Variant, degree: usize, kind: OperatorKind) -> Result<FlopReport> {
    let shape = ShapeInfo::new(degree)?;
    let per_cell = match variant {
        Variant::SumFac => SumFactorization::new(&shape).flops_per_cell(kind),
        Variant::Gemm => 2 * ((degree + 1) as u64).pow(6),
    };
    Ok(FlopReport {
        variant,
        degree,
        flops_per_cell_lane: per_cell,
        flops_per_dof: per_cell as f64 / (degree as f64).powi(3),
    })
}

enum Coefficients {
    Uniform(CellCoefficients),
    PerCell(Vec<CellCoefficients>),
}

impl Coefficients {
    fn get(&self, c: usize) -> &CellCoefficients {
        match self {
            Coefficients::Uniform(x) => x,
            Coefficients::PerCell(v) => &v[c],
        }
    }
}

/// Operator restricted to the cells owned by one rank.
pub struct MatrixFreeOperator {
    shape: ShapeInfo,
    sumfac: SumFactorization,
    spec: OperatorSpec,
    map: CellDofMap,
    coefficients: Coefficients,
    element: OnceLock<Vec<Vec<f64>>>,
}

impl MatrixFreeOperator {
    /// `cell_dofs` gives the global DoFs of a cell in lexicographic node
    /// order; every one must be owned or ghosted in `scheme`.
    pub fn new(
        mesh: &StructuredMesh,
        degree: usize,
        spec: OperatorSpec,
        cells: &[usize],
        cell_dofs: impl FnMut(usize) -> Vec<usize>,
        scheme: &GhostScheme,
    ) -> Result<Self> {
        let shape = ShapeInfo::new(degree)?;
        let map = CellDofMap::build(cells, cell_dofs, |d| scheme.locate_row(d))?;
        let coefficients = if spec.kind == OperatorKind::Mass || spec.potential.is_uniform() {
            let probe = cells.first().copied().unwrap_or(0);
            Coefficients::Uniform(cell_coefficients(&shape, mesh, probe, &spec))
        } else {
            Coefficients::PerCell(
                cells
                    .iter()
                    .map(|&c| cell_coefficients(&shape, mesh, c, &spec))
                    .collect(),
            )
        };
        Ok(Self {
            sumfac: SumFactorization::new(&shape),
            shape,
            spec,
            map,
            coefficients,
            element: OnceLock::new(),
        })
    }

    pub fn spec(&self) -> &OperatorSpec {
        &self.spec
    }

    pub fn degree(&self) -> usize {
        self.shape.degree
    }

    pub fn dof_map(&self) -> &CellDofMap {
        &self.map
    }

    fn element_matrices(&self) -> &Vec<Vec<f64>> {
        self.element.get_or_init(|| match &self.coefficients {
            Coefficients::Uniform(c) => vec![element_matrix(&self.shape, self.spec.kind, c)],
            Coefficients::PerCell(v) => v
                .iter()
                .map(|c| element_matrix(&self.shape, self.spec.kind, c))
                .collect(),
        })
    }

    /// `dst = A src` on the pattern of `dst`. Ghosts of `src` are updated
    /// and dropped again unless `src` was already ghosted.
    pub fn apply(
        &self,
        ctx: &RankContext,
        src: &mut BlockCsrMatrix,
        dst: &mut BlockCsrMatrix,
        variant: Variant,
    ) -> Result<ApplyStats> {
        let (ss, ds) = (src.scheme().clone(), dst.scheme().clone());
        if ss.partition() != ds.partition() || ss.cols() != ds.cols() || ss.ghosts() != ds.ghosts()
        {
            return Err(Error::Shape(
                "source and destination have different row layouts".into(),
            ));
        }
        if src.lane_width() != dst.lane_width() {
            return Err(Error::Shape(
                "source and destination lane widths differ".into(),
            ));
        }
        if variant == Variant::Gemm {
            self.element_matrices();
        }
        let was_ghosted = src.state() == GhostState::Ghosted;
        dst.zero_all()?;
        if !was_ghosted {
            src.update_ghost_values(ctx)?;
        }
        let stats = match src.lane_width() {
            1 => self.cell_loop::<1>(src, dst, variant),
            2 => self.cell_loop::<2>(src, dst, variant),
            4 => self.cell_loop::<4>(src, dst, variant),
            8 => self.cell_loop::<8>(src, dst, variant),
            16 => self.cell_loop::<16>(src, dst, variant),
            w => Err(Error::Config(format!(
                "lane width {w} is not supported by the cell kernels"
            ))),
        }?;
        dst.compress(ctx)?;
        if !was_ghosted {
            src.zero_out_ghosts()?;
        }
        Ok(stats)
    }

    fn cell_loop<const L: usize>(
        &self,
        src: &BlockCsrMatrix,
        dst: &mut BlockCsrMatrix,
        variant: Variant,
    ) -> Result<ApplyStats> {
        let n = self.shape.n_dofs_1d();
        let nd = n * n * n;
        let sp = src.scheme().local_pattern().clone();
        let dp = dst.scheme().local_pattern().clone();
        let cols = src.scheme().cols().clone();
        let mut read = RowsBlockAccessor::new();
        let mut write = RowsBlockAccessor::new();
        let mut scratch = Scratch::<L>::new(n, self.shape.n_q);
        let mut u = vec![[0.0; L]; nd];
        let mut v = vec![[0.0; L]; nd];
        let mut stats = ApplyStats::default();
        let dofs = &self.map.dof_indices;
        for c in 0..self.map.n_cells() {
            let coeff = self.coefficients.get(c);
            let mut current = read.reinit(&self.map, c, &sp);
            write.reinit(&self.map, c, &dp);
            while let Some(col) = current {
                write.advance_to(&dp, col)?;
                stats.cell_column_blocks += 1;
                let w = cols.block_size(col);
                let stride = src.stride(col);
                for g in 0..stride / L {
                    u.iter_mut().for_each(|x| *x = [0.0; L]);
                    let mut read_rows = 0;
                    for row in read.active_rows() {
                        let blk = src.block(row.cursor);
                        for &(r, i) in &dofs[row.group.clone()] {
                            let at = r as usize * stride + g * L;
                            u[i as usize].copy_from_slice(&blk[at..at + L]);
                        }
                        read_rows += row.group.len();
                    }
                    let flops = match variant {
                        Variant::SumFac => {
                            self.sumfac
                                .apply(self.spec.kind, coeff, &u, &mut v, &mut scratch)
                        }
                        Variant::Gemm => {
                            let mats = self.element_matrices();
                            let a = if mats.len() == 1 { &mats[0] } else { &mats[c] };
                            gemm_apply(a, &u, &mut v)
                        }
                    };
                    let lanes = L.min(w - g * L);
                    for row in write.rows() {
                        let blk = dst.block_mut_unchecked(row.cursor);
                        for &(r, i) in &dofs[row.group.clone()] {
                            let at = r as usize * stride + g * L;
                            for (d, s) in blk[at..at + lanes].iter_mut().zip(&v[i as usize]) {
                                *d += s;
                            }
                        }
                    }
                    stats.flops += flops * L as u64 + (nd * lanes) as u64;
                    stats.lane_groups += 1;
                    stats.bytes_estimate += (8 * L * (read_rows + 2 * nd) + 8 * nd) as u64;
                }
                current = read.advance(&sp);
            }
        }
        Ok(stats)
    }
}
