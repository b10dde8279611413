//! 1D Lagrange bases and quadrature on the unit interval.

use crate::{Error, Result};

/// Legendre polynomial `P_n(t)` and `P_{n-1}(t)`.
fn legendre_pair(n: usize, t: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, t);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    (p1, p0)
}

/// Makes points on `[-1, 1]` exactly antisymmetric and maps to `[0, 1]`.
fn symmetrize_to_unit(mut t: Vec<f64>, mut w: Vec<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = t.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| t[a].total_cmp(&t[b]));
    t = order.iter().map(|&i| t[i]).collect();
    w = order.iter().map(|&i| w[i]).collect();
    for i in 0..n / 2 {
        let a = 0.5 * (t[n - 1 - i] - t[i]);
        let wa = 0.5 * (w[i] + w[n - 1 - i]);
        t[i] = -a;
        t[n - 1 - i] = a;
        w[i] = wa;
        w[n - 1 - i] = wa;
    }
    if n % 2 == 1 {
        t[n / 2] = 0.0;
    }
    (
        t.iter().map(|x| 0.5 * (x + 1.0)).collect(),
        w.iter().map(|x| 0.5 * x).collect(),
    )
}

/// `n`-point Gauss-Legendre rule on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut t = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, pm) = legendre_pair(n, x);
            let dp = n as f64 * (x * p - pm) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (p, pm) = legendre_pair(n, x);
        let dp = n as f64 * (x * p - pm) / (x * x - 1.0);
        t.push(x);
        w.push(2.0 / ((1.0 - x * x) * dp * dp));
    }
    symmetrize_to_unit(t, w)
}

/// `n`-point Gauss-Lobatto-Legendre points and weights on `[0, 1]`, `n >= 2`.
pub fn gauss_lobatto(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let big_n = n - 1;
    let mut t = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * i as f64 / big_n as f64).cos();
        for _ in 0..100 {
            let (p, pm) = legendre_pair(big_n, x);
            let dx = (x * p - pm) / (n as f64 * p);
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (p, _) = legendre_pair(big_n, x);
        t.push(x);
        w.push(2.0 / ((big_n * n) as f64 * p * p));
    }
    symmetrize_to_unit(t, w)
}

pub fn lagrange_values(nodes: &[f64], x: f64) -> Vec<f64> {
    (0..nodes.len())
        .map(|i| {
            nodes
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &xj)| (x - xj) / (nodes[i] - xj))
                .product()
        })
        .collect()
}

pub fn lagrange_derivatives(nodes: &[f64], x: f64) -> Vec<f64> {
    let n = nodes.len();
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&k| k != i)
                .map(|k| {
                    let rest: f64 = (0..n)
                        .filter(|&j| j != i && j != k)
                        .map(|j| (x - nodes[j]) / (nodes[i] - nodes[j]))
                        .product();
                    rest / (nodes[i] - nodes[k])
                })
                .sum()
        })
        .collect()
}

/// Tabulated 1D shape data: Lagrange basis on Gauss-Lobatto nodes evaluated
/// at `p + 1` Gauss points of the unit interval.
#[derive(Clone, Debug)]
pub struct ShapeInfo {
    pub degree: usize,
    pub n_q: usize,
    pub nodes: Vec<f64>,
    pub q_points: Vec<f64>,
    pub q_weights: Vec<f64>,
    /// `values[q * n + i]`
    pub values: Vec<f64>,
    /// `gradients[q * n + i]`
    pub gradients: Vec<f64>,
    /// Derivatives of the Lagrange basis on the quadrature points, evaluated
    /// there: `colloc[q * n_q + k]`.
    pub colloc_gradients: Vec<f64>,
}

impl ShapeInfo {
    pub fn new(degree: usize) -> Result<Self> {
        if !(1..=8).contains(&degree) {
            return Err(Error::Config(format!(
                "unsupported polynomial degree {degree}"
            )));
        }
        let n = degree + 1;
        let (nodes, _) = gauss_lobatto(n);
        let (q_points, q_weights) = gauss_legendre(n);
        let mut values = Vec::with_capacity(n * n);
        let mut gradients = Vec::with_capacity(n * n);
        let mut colloc_gradients = Vec::with_capacity(n * n);
        for &x in &q_points {
            values.extend(lagrange_values(&nodes, x));
            gradients.extend(lagrange_derivatives(&nodes, x));
            colloc_gradients.extend(lagrange_derivatives(&q_points, x));
        }
        Ok(Self {
            degree,
            n_q: n,
            nodes,
            q_points,
            q_weights,
            values,
            gradients,
            colloc_gradients,
        })
    }

    pub fn n_dofs_1d(&self) -> usize {
        self.degree + 1
    }
}
