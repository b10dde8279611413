//! Cell kernels: sum factorization with even-odd 1D contractions, dense
//! element matrices, and analytic flop counts.

use super::ShapeInfo;

/// 1D matrix `A` (`n_out x n_in`) with `A[n_out-1-a][n_in-1-i] = sigma A[a][i]`
/// split into even and odd halves.
#[derive(Clone, Debug)]
pub struct EvenOdd {
    pub n_in: usize,
    pub n_out: usize,
    sigma: f64,
    even: Vec<f64>,
    odd: Vec<f64>,
    middle: Vec<f64>,
}

impl EvenOdd {
    /// `a` is row-major `n_out x n_in`.
    pub fn new(a: &[f64], n_out: usize, n_in: usize, sigma: f64) -> Self {
        let h = n_in / 2;
        let rows = n_out.div_ceil(2);
        let mut even = Vec::with_capacity(rows * h);
        let mut odd = Vec::with_capacity(rows * h);
        let mut middle = Vec::with_capacity(rows);
        for r in 0..rows {
            for i in 0..h {
                let (x, y) = (a[r * n_in + i], a[r * n_in + n_in - 1 - i]);
                even.push(0.5 * (x + y));
                odd.push(0.5 * (x - y));
            }
            middle.push(if n_in % 2 == 1 { a[r * n_in + h] } else { 0.0 });
        }
        Self {
            n_in,
            n_out,
            sigma,
            even,
            odd,
            middle,
        }
    }

    pub fn transposed(a: &[f64], n_rows: usize, n_cols: usize, sigma: f64) -> Self {
        let t: Vec<f64> = (0..n_cols)
            .flat_map(|c| (0..n_rows).map(move |r| a[r * n_cols + c]))
            .collect();
        Self::new(&t, n_cols, n_rows, sigma)
    }

    /// Flops per lane for one line.
    pub fn line_flops(&self, accumulate: bool) -> u64 {
        let h = (self.n_in / 2) as u64;
        let mid = (self.n_in % 2) as u64;
        let rows = self.n_out.div_ceil(2) as u64;
        2 * h + rows * (4 * h + 2 * mid + 2) + if accumulate { self.n_out as u64 } else { 0 }
    }

    /// Applies the matrix along `axis` of a tensor with `dims_in` (x fastest).
    /// Returns flops per lane.
    pub fn apply<const L: usize>(
        &self,
        axis: usize,
        dims_in: [usize; 3],
        input: &[[f64; L]],
        output: &mut [[f64; L]],
        accumulate: bool,
    ) -> u64 {
        debug_assert_eq!(dims_in[axis], self.n_in);
        let mut dims_out = dims_in;
        dims_out[axis] = self.n_out;
        let stride_in = [1, dims_in[0], dims_in[0] * dims_in[1]];
        let stride_out = [1, dims_out[0], dims_out[0] * dims_out[1]];
        let (a1, a2) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        let h = self.n_in / 2;
        let odd_in = self.n_in % 2 == 1;
        let rows = self.n_out.div_ceil(2);
        let mut e = [[0.0; L]; 8];
        let mut o = [[0.0; L]; 8];
        for j2 in 0..dims_in[a2] {
            for j1 in 0..dims_in[a1] {
                let bi = j1 * stride_in[a1] + j2 * stride_in[a2];
                let bo = j1 * stride_out[a1] + j2 * stride_out[a2];
                let si = stride_in[axis];
                let so = stride_out[axis];
                for i in 0..h {
                    let (x, y) = (&input[bi + i * si], &input[bi + (self.n_in - 1 - i) * si]);
                    for l in 0..L {
                        e[i][l] = x[l] + y[l];
                        o[i][l] = x[l] - y[l];
                    }
                }
                let xm = if odd_in { input[bi + h * si] } else { [0.0; L] };
                for r in 0..rows {
                    let mut ev = [0.0; L];
                    let mut od = [0.0; L];
                    if odd_in {
                        let m = self.middle[r];
                        for l in 0..L {
                            ev[l] = m * xm[l];
                        }
                    }
                    for i in 0..h {
                        let (ce, co) = (self.even[r * h + i], self.odd[r * h + i]);
                        for l in 0..L {
                            ev[l] += ce * e[i][l];
                            od[l] += co * o[i][l];
                        }
                    }
                    let lo = bo + r * so;
                    let hi = bo + (self.n_out - 1 - r) * so;
                    if accumulate {
                        for l in 0..L {
                            output[lo][l] += ev[l] + od[l];
                        }
                        if hi != lo {
                            for l in 0..L {
                                output[hi][l] += self.sigma * (ev[l] - od[l]);
                            }
                        }
                    } else {
                        for l in 0..L {
                            output[lo][l] = ev[l] + od[l];
                        }
                        if hi != lo {
                            for l in 0..L {
                                output[hi][l] = self.sigma * (ev[l] - od[l]);
                            }
                        }
                    }
                }
            }
        }
        (dims_in[a1] * dims_in[a2]) as u64 * self.line_flops(accumulate)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    Mass,
    Hamiltonian,
}

/// Precomputed 1D operators of one degree for sum factorization.
#[derive(Clone, Debug)]
pub struct SumFactorization {
    pub n: usize,
    pub q: usize,
    interp: EvenOdd,
    interp_t: EvenOdd,
    grad: EvenOdd,
    grad_t: EvenOdd,
}

/// Quadrature point coefficients of one cell.
#[derive(Clone, Debug)]
pub struct CellCoefficients {
    /// `0.5 * w * det J / h_d^2` per point, one array per axis.
    pub gradient: [Vec<f64>; 3],
    /// `w * det J * V` (Hamiltonian) or `w * det J` (mass) per point.
    pub value: Vec<f64>,
}

/// Scratch tensors sized for one cell and lane group.
pub struct Scratch<const L: usize> {
    t1: Vec<[f64; L]>,
    t2: Vec<[f64; L]>,
    uq: Vec<[f64; L]>,
    g: [Vec<[f64; L]>; 3],
    v: Vec<[f64; L]>,
}

impl<const L: usize> Scratch<L> {
    pub fn new(n: usize, q: usize) -> Self {
        let m = q.max(n).pow(3);
        let z = || vec![[0.0; L]; m];
        Self {
            t1: z(),
            t2: z(),
            uq: z(),
            g: [z(), z(), z()],
            v: z(),
        }
    }
}

impl SumFactorization {
    pub fn new(shape: &ShapeInfo) -> Self {
        let (n, q) = (shape.n_dofs_1d(), shape.n_q);
        Self {
            n,
            q,
            interp: EvenOdd::new(&shape.values, q, n, 1.0),
            interp_t: EvenOdd::transposed(&shape.values, q, n, 1.0),
            grad: EvenOdd::new(&shape.colloc_gradients, q, q, -1.0),
            grad_t: EvenOdd::transposed(&shape.colloc_gradients, q, q, -1.0),
        }
    }

    /// `out = A_K u` for one lane group; `u` and `out` hold `n^3` entries.
    /// Returns flops per lane.
    pub fn apply<const L: usize>(
        &self,
        kind: OperatorKind,
        coeff: &CellCoefficients,
        u: &[[f64; L]],
        out: &mut [[f64; L]],
        s: &mut Scratch<L>,
    ) -> u64 {
        let (n, q) = (self.n, self.q);
        let nq = q * q * q;
        let mut flops = 0;
        flops += self.interp.apply(0, [n, n, n], u, &mut s.t1, false);
        flops += self.interp.apply(1, [q, n, n], &s.t1, &mut s.t2, false);
        flops += self.interp.apply(2, [q, q, n], &s.t2, &mut s.uq, false);
        for p in 0..nq {
            let c = coeff.value[p];
            for l in 0..L {
                s.v[p][l] = c * s.uq[p][l];
            }
        }
        flops += nq as u64;
        if kind == OperatorKind::Hamiltonian {
            for d in 0..3 {
                flops += self.grad.apply(d, [q, q, q], &s.uq, &mut s.g[d], false);
                let cg = &coeff.gradient[d];
                for (p, gp) in s.g[d][..nq].iter_mut().enumerate() {
                    for x in gp.iter_mut() {
                        *x *= cg[p];
                    }
                }
            }
            flops += 3 * nq as u64;
            for d in 0..3 {
                flops += self.grad_t.apply(d, [q, q, q], &s.g[d], &mut s.v, true);
            }
        }
        flops += self.interp_t.apply(2, [q, q, q], &s.v, &mut s.t1, false);
        flops += self.interp_t.apply(1, [q, q, n], &s.t1, &mut s.t2, false);
        flops += self.interp_t.apply(0, [q, n, n], &s.t2, out, false);
        flops
    }

    /// Analytic flops per cell and lane.
    pub fn flops_per_cell(&self, kind: OperatorKind) -> u64 {
        let (n, q) = (self.n as u64, self.q as u64);
        let lines_in = [n * n, q * n, q * q];
        let mut f: u64 = lines_in
            .iter()
            .map(|l| l * self.interp.line_flops(false))
            .sum();
        f += lines_in
            .iter()
            .rev()
            .map(|l| l * self.interp_t.line_flops(false))
            .sum::<u64>();
        f += q * q * q;
        if kind == OperatorKind::Hamiltonian {
            f += 3 * q * q * (self.grad.line_flops(false) + self.grad_t.line_flops(true))
                + 3 * q * q * q;
        }
        f
    }
}

/// Dense element matrices by direct quadrature; entries `i <= j` are computed
/// and mirrored. Row-major `n^3 x n^3`.
pub fn element_matrix(shape: &ShapeInfo, kind: OperatorKind, coeff: &CellCoefficients) -> Vec<f64> {
    let (n, q) = (shape.n_dofs_1d(), shape.n_q);
    let nd = n * n * n;
    let nq = q * q * q;
    // tables over (point, dof)
    let mut val = vec![0.0; nq * nd];
    let mut grad = [vec![0.0; nq * nd], vec![0.0; nq * nd], vec![0.0; nq * nd]];
    for (p, pc) in (0..nq).map(|p| (p, [p % q, (p / q) % q, p / (q * q)])) {
        for (i, ic) in (0..nd).map(|i| (i, [i % n, (i / n) % n, i / (n * n)])) {
            let s = |a: usize| shape.values[pc[a] * n + ic[a]];
            let d = |a: usize| shape.gradients[pc[a] * n + ic[a]];
            val[p * nd + i] = s(0) * s(1) * s(2);
            grad[0][p * nd + i] = d(0) * s(1) * s(2);
            grad[1][p * nd + i] = s(0) * d(1) * s(2);
            grad[2][p * nd + i] = s(0) * s(1) * d(2);
        }
    }
    let mut m = vec![0.0; nd * nd];
    for i in 0..nd {
        for j in i..nd {
            let mut acc = 0.0;
            for p in 0..nq {
                acc += coeff.value[p] * val[p * nd + i] * val[p * nd + j];
                if kind == OperatorKind::Hamiltonian {
                    for (d, g) in grad.iter().enumerate() {
                        acc += coeff.gradient[d][p] * g[p * nd + i] * g[p * nd + j];
                    }
                }
            }
            m[i * nd + j] = acc;
            m[j * nd + i] = acc;
        }
    }
    m
}

/// `out = A u` with a dense element matrix. Returns flops per lane.
pub fn gemm_apply<const L: usize>(a: &[f64], u: &[[f64; L]], out: &mut [[f64; L]]) -> u64 {
    let nd = u.len();
    for (i, o) in out.iter_mut().enumerate().take(nd) {
        let row = &a[i * nd..(i + 1) * nd];
        let mut acc = [0.0; L];
        for (aij, uj) in row.iter().zip(u) {
            for l in 0..L {
                acc[l] += aij * uj[l];
            }
        }
        *o = acc;
    }
    2 * (nd * nd) as u64
}
