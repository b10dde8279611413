//! Dense reference computations for verification.

use nalgebra::DMatrix;

use crate::matfree::CsrMatrix;

/// Dense matrix from `(row, col, value)` triplets; duplicates are summed.
pub fn dense_from_entries<'a>(
    n_rows: usize,
    n_cols: usize,
    entries: impl IntoIterator<Item = &'a (usize, usize, f64)>,
) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n_rows, n_cols);
    for &(r, c, v) in entries {
        m[(r, c)] += v;
    }
    m
}

pub fn csr_to_dense(a: &CsrMatrix) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.n, a.n);
    for i in 0..a.n {
        for (j, v) in a.row(i) {
            m[(i, j)] = v;
        }
    }
    m
}

/// `tr((2I - Phi^T M Phi) Phi^T H Phi)`
pub fn energy(m: &DMatrix<f64>, h: &DMatrix<f64>, phi: &DMatrix<f64>) -> f64 {
    let mb = phi.transpose() * m * phi;
    let hb = phi.transpose() * h * phi;
    let two_i = DMatrix::<f64>::identity(mb.nrows(), mb.ncols()) * 2.0;
    ((two_i - mb) * hb).trace()
}

/// `2 H Phi (2I - Mbar) - 2 M Phi Hbar`
pub fn gradient(m: &DMatrix<f64>, h: &DMatrix<f64>, phi: &DMatrix<f64>) -> DMatrix<f64> {
    let mb = phi.transpose() * m * phi;
    let hb = phi.transpose() * h * phi;
    let two_i = DMatrix::<f64>::identity(mb.nrows(), mb.ncols()) * 2.0;
    (h * phi) * (two_i - mb) * 2.0 - (m * phi) * hb * 2.0
}

/// `||a - b||_F / ||b||_F`, or the absolute norm when `b` vanishes.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let d = (a - b).norm();
    let n = b.norm();
    if n > 0.0 {
        d / n
    } else {
        d
    }
}

/// Keeps the entries of `a` where `mask` returns true.
pub fn masked(a: &DMatrix<f64>, mut mask: impl FnMut(usize, usize) -> bool) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| {
        if mask(i, j) {
            a[(i, j)]
        } else {
            0.0
        }
    })
}

/// `||a - a^T||_F / ||a||_F`
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    relative_error(&a.transpose(), a)
}
