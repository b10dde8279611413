//! Assembled global matrices for verification.

use super::kernels::element_matrix;
use super::operator::{cell_coefficients, OperatorSpec};
use super::ShapeInfo;
use crate::mesh::{cell_nodes, DofNumbering, StructuredMesh};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let cols = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        cols.binary_search(&j)
            .map(|k| self.values[self.row_ptr[i] + k])
            .unwrap_or(0.0)
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, a)| a * x[j]).sum())
            .collect()
    }

    /// True when `A[i][j] == A[j][i]` bit for bit.
    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| {
            self.row(i)
                .all(|(j, a)| self.get(j, i).to_bits() == a.to_bits())
        })
    }
}

/// Sums element matrices of all cells into a CSR matrix. Contributions to
/// each entry are added in cell order, so the result is exactly symmetric.
pub fn assemble_reference(
    mesh: &StructuredMesh,
    numbering: &DofNumbering,
    spec: &OperatorSpec,
) -> Result<CsrMatrix> {
    let n = numbering.n_dofs;
    let nd = numbering.dofs_per_cell();
    if mesh.n_cells() * nd * nd > 60_000_000 {
        return Err(Error::Config(
            "mesh too large for the assembled reference".into(),
        ));
    }
    let shape = ShapeInfo::new(numbering.degree)?;
    let cells: Vec<Vec<usize>> = (0..mesh.n_cells())
        .map(|c| cell_nodes(mesh, numbering, c))
        .collect();
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
    for nodes in &cells {
        for &i in nodes {
            rows[i].extend_from_slice(nodes);
        }
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    row_ptr.push(0);
    for r in rows.iter_mut() {
        r.sort_unstable();
        r.dedup();
        col_idx.extend_from_slice(r);
        row_ptr.push(col_idx.len());
    }
    drop(rows);
    let mut values = vec![0.0; col_idx.len()];
    let mut uniform = None;
    for (cell, nodes) in cells.iter().enumerate() {
        let owned;
        let a = if spec.potential.is_uniform() {
            uniform.get_or_insert_with(|| {
                element_matrix(
                    &shape,
                    spec.kind,
                    &cell_coefficients(&shape, mesh, cell, spec),
                )
            })
        } else {
            owned = element_matrix(
                &shape,
                spec.kind,
                &cell_coefficients(&shape, mesh, cell, spec),
            );
            &owned
        };
        for (li, &i) in nodes.iter().enumerate() {
            let cols = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            for (lj, &j) in nodes.iter().enumerate() {
                let k = row_ptr[i] + cols.binary_search(&j).expect("coupling in structure");
                values[k] += a[li * nd + lj];
            }
        }
    }
    Ok(CsrMatrix {
        n,
        row_ptr,
        col_idx,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matfree::Potential;
    use crate::mesh::{build_mesh, enumerate_dofs, partition_and_order_cells};

    fn numbered(ext: [usize; 3], h: [f64; 3], degree: usize) -> (StructuredMesh, DofNumbering) {
        let mesh = build_mesh(ext, h, 0, [0.0; 3]).unwrap();
        let part = partition_and_order_cells(&mesh, 1).unwrap();
        let num = enumerate_dofs(&mesh, &part, degree).unwrap();
        (mesh, num)
    }

    #[test]
    fn symmetric_with_volume_sum() {
        let (mesh, num) = numbered([3, 2, 2], [0.5, 1.0, 2.0], 2);
        let m = assemble_reference(&mesh, &num, &OperatorSpec::mass()).unwrap();
        assert!(m.is_symmetric());
        let total: f64 = m.values.iter().sum();
        assert!((total - mesh.volume()).abs() < 1e-12 * mesh.volume());
        assert!((0..m.n).all(|i| m.row(i).map(|x| x.1).sum::<f64>() >= 0.0));
        let v = Potential::Field(std::sync::Arc::new(|x: [f64; 3]| x[0] * x[1] - x[2]));
        let h = assemble_reference(&mesh, &num, &OperatorSpec::hamiltonian(v)).unwrap();
        assert!(h.is_symmetric());
        let h0 =
            assemble_reference(&mesh, &num, &OperatorSpec::hamiltonian(Potential::Zero)).unwrap();
        assert!(h0.matvec(&vec![1.0; h0.n]).iter().all(|x| x.abs() < 1e-13));
    }

    #[test]
    fn linear_chain_matches_1d_stencil() {
        // n x 1 x 1 cells of size h x a x b, p = 1: the Laplace part couples a
        // node to its x-neighbours with -(1/2) (a b / h) / 4 per transverse node pair
        // pattern; check against the 1D stencil tensored with 1D transverse masses.
        let (h, a, b) = (0.5, 2.0, 3.0);
        let (mesh, num) = numbered([6, 1, 1], [h, a, b], 1);
        let lap =
            assemble_reference(&mesh, &num, &OperatorSpec::hamiltonian(Potential::Zero)).unwrap();
        let node = |i: usize, j: usize, k: usize| num.new_index_of_node[i + 7 * (j + 2 * k)];
        // 1D p=1 matrices on an interval of length L: stiffness [1,-1;-1,1]/L,
        // mass [2,1;1,2] L/6
        let k1 = |i: isize| match i {
            0 => 2.0 / h,
            1 | -1 => -1.0 / h,
            _ => 0.0,
        };
        let m1 = |i: isize, len: f64| match i {
            0 => len / 3.0,
            1 | -1 => len / 6.0,
            _ => 0.0,
        };
        let mx = |i: isize| match i {
            0 => 2.0 * h / 3.0,
            1 | -1 => h / 6.0,
            _ => 0.0,
        };
        let ky = |d: isize, len: f64| match d {
            0 => 1.0 / len,
            _ => -1.0 / len,
        };
        for dx in -1isize..=1 {
            for (j2, k2) in [(0usize, 0usize), (1, 0), (0, 1), (1, 1)] {
                let (dj, dk) = (j2 as isize, k2 as isize);
                let want = 0.5
                    * (k1(dx) * m1(dj, a) * m1(dk, b)
                        + mx(dx) * ky(dj, a) * m1(dk, b)
                        + mx(dx) * m1(dj, a) * ky(dk, b));
                let got = lap.get(node(3, 0, 0), node((3 + dx) as usize, j2, k2));
                assert!(
                    (got - want).abs() < 1e-13,
                    "dx={dx} j={j2} k={k2}: {got} vs {want}"
                );
            }
        }
    }
}
