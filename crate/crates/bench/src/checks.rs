//! Oracle checks shared by `bench verify` and the acceptance tests. Each
//! distributed result is gathered and compared against references computed
//! from the assembled operator.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use mfsparse::bcsr::{
    build_ghost_scheme, mmult, tmmult, tr_tmmult, BlockCsrMatrix, BlockIndices, GhostScheme,
    RowPartition,
};
use mfsparse::comm::{run_ranks, RankContext};
use mfsparse::energy::{compute_energy, compute_gradient, directional_derivative, EnergyWorkspace};
use mfsparse::localization::LocalizationSpec;
use mfsparse::matfree::{CsrMatrix, OperatorSpec, Potential, Variant};
use mfsparse::mesh::StructuredMesh;
use mfsparse::oracle::{dense_from_entries, masked, relative_error};
use mfsparse::problem::Problem;
use mfsparse::Result;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub type Entries = Vec<(usize, usize, f64)>;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl Check {
    /// Passes when `value <= tolerance`.
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            passed: value <= tolerance,
            value,
            tolerance,
            detail: String::new(),
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(
            f,
            "[{status}] {}: {:.3e} (tol {:.1e})",
            self.name, self.value, self.tolerance
        )?;
        if !self.detail.is_empty() {
            write!(f, " {}", self.detail)?;
        }
        Ok(())
    }
}

/// Smooth potential bounded by one in magnitude: a few random plane waves.
pub fn random_potential(seed: u64) -> Potential {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<([f64; 3], f64, f64)> = (0..4)
        .map(|_| {
            let k = [
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-1.5..1.5),
            ];
            (
                k,
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(-0.25..0.25),
            )
        })
        .collect();
    Potential::Field(Arc::new(move |x: [f64; 3]| {
        waves
            .iter()
            .map(|(k, ph, a)| a * (k[0] * x[0] + k[1] * x[1] + k[2] * x[2] + ph).cos())
            .sum()
    }))
}

/// Random centers, radius and blocking inside the mesh.
pub fn random_layout(seed: u64, mesh: &StructuredMesh) -> LocalizationSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bb = mesh.bounding_box();
    let n = rng.gen_range(2..=6);
    let centers = (0..n)
        .map(|_| std::array::from_fn(|a| rng.gen_range(bb.lo[a]..bb.hi[a])))
        .collect();
    let diag = bb
        .hi
        .iter()
        .zip(&bb.lo)
        .map(|(h, l)| (h - l) * (h - l))
        .sum::<f64>()
        .sqrt();
    LocalizationSpec {
        centers,
        radius: rng.gen_range(0.15..0.5) * diag,
        block_size: rng.gen_range(1..=5),
        vectors_per_center: rng.gen_range(1..=3),
    }
}

/// One center whose support covers the whole mesh.
pub fn covering_layout(mesh: &StructuredMesh) -> LocalizationSpec {
    let bb = mesh.bounding_box();
    let diag = bb
        .hi
        .iter()
        .zip(&bb.lo)
        .map(|(h, l)| (h - l) * (h - l))
        .sum::<f64>()
        .sqrt();
    LocalizationSpec {
        centers: vec![std::array::from_fn(|a| 0.5 * (bb.lo[a] + bb.hi[a]))],
        radius: diag,
        block_size: 1,
        vectors_per_center: 1,
    }
}

pub fn dense_phi(p: &Problem, seed: u64) -> DMatrix<f64> {
    DMatrix::from_fn(p.n_dofs(), p.n_columns(), |i, j| p.phi_value(seed, i, j))
}

/// `A x` for a dense tall-and-skinny `x`.
pub fn csr_times(a: &CsrMatrix, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.n, x.ncols());
    for i in 0..a.n {
        for (k, v) in a.row(i) {
            for j in 0..x.ncols() {
                out[(i, j)] += v * x[(k, j)];
            }
        }
    }
    out
}

/// Entry-wise relative error of `a` against `b` over the keys present in
/// both.
pub fn compare_on_common(a: &Entries, b: &Entries) -> f64 {
    let bm: BTreeMap<(usize, usize), f64> = b.iter().map(|&(r, c, v)| ((r, c), v)).collect();
    let (mut diff, mut norm) = (0.0, 0.0);
    for &(r, c, v) in a {
        if let Some(&w) = bm.get(&(r, c)) {
            diff += (v - w) * (v - w);
            norm += w * w;
        }
    }
    if norm > 0.0 {
        (diff / norm).sqrt()
    } else {
        diff.sqrt()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct WorstEntry {
    pub row: usize,
    pub col: usize,
    pub row_block: usize,
    pub col_block: usize,
    pub error: f64,
}

impl std::fmt::Display for WorstEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "worst entry ({}, {}) in block ({}, {}), |error| {:.3e}",
            self.row, self.col, self.row_block, self.col_block, self.error
        )
    }
}

pub fn worst_entry(p: &Problem, got: &DMatrix<f64>, want: &DMatrix<f64>) -> Option<WorstEntry> {
    let (mut best, mut at) = (0.0, None);
    for j in 0..got.ncols() {
        for i in 0..got.nrows() {
            let e = (got[(i, j)] - want[(i, j)]).abs();
            if e > best {
                best = e;
                at = Some((i, j));
            }
        }
    }
    let (row, col) = at?;
    Some(WorstEntry {
        row,
        col,
        row_block: p.numbering.row_blocks.global_to_block(row)?.0,
        col_block: p.layout.column_blocks().global_to_block(col)?.0,
        error: best,
    })
}

/// Applies `spec` to the seeded multivector on `p.n_ranks()` ranks and
/// gathers the owned output entries. `fault` perturbs the first owned value
/// on rank 0.
pub fn apply_distributed(
    p: &Problem,
    spec: &OperatorSpec,
    variant: Variant,
    seed: u64,
    lane_width: usize,
    fault: bool,
) -> Result<Entries> {
    let parts = run_ranks(p.n_ranks(), |ctx| {
        let setup = p.rank_setup(ctx)?;
        let op = p.operator(&setup, spec.clone())?;
        let mut src = BlockCsrMatrix::with_lane_width(ctx, setup.phi.clone(), lane_width)?;
        let mut dst = BlockCsrMatrix::with_lane_width(ctx, setup.grown.clone(), lane_width)?;
        p.fill_phi(&mut src, seed)?;
        op.apply(ctx, &mut src, &mut dst, variant)?;
        if fault && ctx.rank() == 0 && setup.grown.n_owned_blocks() > 0 {
            if let Some(k) = dst.row_blocks(0).next() {
                dst.block_mut(k)?[0] += 1.0;
            }
        }
        Ok(dst.owned_entries())
    })?;
    Ok(parts.into_iter().flatten().collect())
}

#[derive(Clone, Debug)]
pub struct OperatorCheck {
    pub rel_error: f64,
    pub worst: Option<WorstEntry>,
}

pub fn operator_oracle(
    p: &Problem,
    reference: &CsrMatrix,
    spec: &OperatorSpec,
    variant: Variant,
    seed: u64,
    lane_width: usize,
    fault: bool,
) -> Result<OperatorCheck> {
    let want = csr_times(reference, &dense_phi(p, seed));
    let got = dense_from_entries(
        p.n_dofs(),
        p.n_columns(),
        &apply_distributed(p, spec, variant, seed, lane_width, fault)?,
    );
    Ok(OperatorCheck {
        rel_error: relative_error(&got, &want),
        worst: worst_entry(p, &got, &want),
    })
}

/// Everything the energy pipeline produces, gathered from all ranks.
#[derive(Clone, Debug)]
pub struct EnergyOutputs {
    pub energy: f64,
    /// Every rank returned the same bits for the energy.
    pub replicated: bool,
    pub phi_m: Entries,
    pub phi_h: Entries,
    pub m_bar: Entries,
    pub h_bar: Entries,
    pub gradient: Entries,
    /// `(tr(D^T G), central difference)` per direction seed.
    pub directional: Vec<(f64, f64)>,
    /// Raw storage of the gradient on each rank.
    pub gradient_bits: Vec<Vec<u64>>,
}

fn gather(parts: &[Entries]) -> Entries {
    let mut all: Entries = parts.iter().flatten().copied().collect();
    all.sort_by_key(|&(r, c, _)| (r, c));
    all
}

pub fn energy_outputs(
    p: &Problem,
    potential: &Potential,
    seed: u64,
    directions: &[u64],
    eps: f64,
    lane_width: usize,
) -> Result<EnergyOutputs> {
    let mass = OperatorSpec::mass();
    let ham = OperatorSpec::hamiltonian(potential.clone());
    let out = run_ranks(p.n_ranks(), |ctx| {
        let setup = p.rank_setup(ctx)?;
        let (mo, ho) = (
            p.operator(&setup, mass.clone())?,
            p.operator(&setup, ham.clone())?,
        );
        let mut ws = EnergyWorkspace::new(ctx, &setup, lane_width)?;
        let new =
            |ctx: &RankContext| BlockCsrMatrix::with_lane_width(ctx, setup.phi.clone(), lane_width);
        let mut phi = new(ctx)?;
        p.fill_phi(&mut phi, seed)?;

        let mut directional = Vec::new();
        let mut dir = new(ctx)?;
        let mut moved = new(ctx)?;
        for &ds in directions {
            p.fill_phi(&mut dir, ds)?;
            moved.copy_pattern_subset(&phi)?;
            moved.scale_add(1.0, eps, &dir)?;
            let plus = compute_energy(ctx, &mut moved, &mo, &ho, &mut ws)?;
            moved.scale_add(1.0, -2.0 * eps, &dir)?;
            let minus = compute_energy(ctx, &mut moved, &mo, &ho, &mut ws)?;
            directional.push((plus, minus, ds));
        }

        let energy = compute_energy(ctx, &mut phi, &mo, &ho, &mut ws)?;
        compute_gradient(ctx, &mut ws)?;
        let mut dd = Vec::new();
        for (plus, minus, ds) in directional {
            p.fill_phi(&mut dir, ds)?;
            let g = directional_derivative(ctx, &dir, &ws.gradient)?;
            dd.push((g, (plus - minus) / (2.0 * eps)));
        }
        let energies = ctx.all_gather_f64s(&[energy])?;
        Ok((
            energy,
            energies.iter().all(|e| e[0].to_bits() == energy.to_bits()),
            ws.phi_m.owned_entries(),
            ws.phi_h.owned_entries(),
            ws.m_bar.owned_entries(),
            ws.h_bar.owned_entries(),
            ws.gradient.owned_entries(),
            dd,
            ws.gradient
                .raw_values()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>(),
        ))
    })?;
    let pick =
        |f: fn(&_) -> &Entries| gather(&out.iter().map(|o| f(o).clone()).collect::<Vec<_>>());
    Ok(EnergyOutputs {
        energy: out[0].0,
        replicated: out
            .iter()
            .all(|o| o.1 && o.0.to_bits() == out[0].0.to_bits()),
        phi_m: pick(|o| &o.2),
        phi_h: pick(|o| &o.3),
        m_bar: pick(|o| &o.4),
        h_bar: pick(|o| &o.5),
        gradient: pick(|o| &o.6),
        directional: out[0].7.clone(),
        gradient_bits: out.iter().map(|o| o.8.clone()).collect(),
    })
}

/// Reference quantities from the assembled operators.
pub struct EnergyReference {
    pub phi_m: DMatrix<f64>,
    pub phi_h: DMatrix<f64>,
    pub m_bar: DMatrix<f64>,
    pub h_bar: DMatrix<f64>,
    pub energy: f64,
    pub gradient: DMatrix<f64>,
}

pub fn energy_reference(m: &CsrMatrix, h: &CsrMatrix, phi: &DMatrix<f64>) -> EnergyReference {
    let phi_m = csr_times(m, phi);
    let phi_h = csr_times(h, phi);
    let m_bar = phi.transpose() * &phi_m;
    let h_bar = phi.transpose() * &phi_h;
    let two_i_minus_m = DMatrix::<f64>::identity(m_bar.nrows(), m_bar.ncols()) * 2.0 - &m_bar;
    let energy = (&two_i_minus_m * &h_bar).trace();
    let gradient = (&phi_h * &two_i_minus_m) * 2.0 - (&phi_m * &h_bar) * 2.0;
    EnergyReference {
        phi_m,
        phi_h,
        m_bar,
        h_bar,
        energy,
        gradient,
    }
}

/// Compares gathered outputs against the reference. Products are compared
/// on their stored entries.
pub fn energy_checks(p: &Problem, out: &EnergyOutputs, r: &EnergyReference) -> Vec<Check> {
    let (n, m) = (p.n_dofs(), p.n_columns());
    let dense = |e: &Entries, rows| dense_from_entries(rows, m, e);
    let on_pattern = |e: &Entries, want: &DMatrix<f64>, rows| {
        let keys: BTreeSet<(usize, usize)> = e.iter().map(|&(a, b, _)| (a, b)).collect();
        relative_error(
            &dense(e, rows),
            &masked(want, |i, j| keys.contains(&(i, j))),
        )
    };
    let mb = dense(&out.m_bar, m);
    let hb = dense(&out.h_bar, m);
    let asym = |a: &DMatrix<f64>| {
        let nrm = a.norm();
        if nrm > 0.0 {
            (a - a.transpose()).norm() / nrm
        } else {
            0.0
        }
    };
    vec![
        Check::at_most("Phi_M", on_pattern(&out.phi_m, &r.phi_m, n), 1e-12),
        Check::at_most("Phi_H", on_pattern(&out.phi_h, &r.phi_h, n), 1e-12),
        Check::at_most("Mbar", on_pattern(&out.m_bar, &r.m_bar, m), 1e-12),
        Check::at_most("Hbar", on_pattern(&out.h_bar, &r.h_bar, m), 1e-12),
        Check::at_most(
            "energy",
            (out.energy - r.energy).abs() / r.energy.abs().max(f64::MIN_POSITIVE),
            1e-12,
        ),
        Check::at_most("gradient", on_pattern(&out.gradient, &r.gradient, n), 1e-12),
        Check::at_most("Mbar symmetry", asym(&mb), 1e-12),
        Check::at_most("Hbar symmetry", asym(&hb), 1e-12),
    ]
}

/// Central difference against `tr(D^T G)`, relative to the larger of the two.
pub fn directional_errors(out: &EnergyOutputs) -> Vec<f64> {
    out.directional
        .iter()
        .map(|&(g, fd)| (g - fd).abs() / g.abs().max(fd.abs()).max(f64::MIN_POSITIVE))
        .collect()
}

/// Entries keyed by mesh node and vector id instead of the rank-count
/// dependent DoF and column numbering.
pub fn canonical(p: &Problem, e: &Entries, rows_are_dofs: bool) -> Entries {
    e.iter()
        .map(|&(r, c, v)| {
            let r = if rows_are_dofs {
                p.node_of_dof(r)
            } else {
                p.vector_of_column(r)
            };
            (r, p.vector_of_column(c), v)
        })
        .collect()
}

/// Largest relative deviation between two runs of the energy pipeline,
/// possibly on different rank counts.
pub fn rank_deviation(pa: &Problem, a: &EnergyOutputs, pb: &Problem, b: &EnergyOutputs) -> f64 {
    let cmp = |x: &Entries, y: &Entries, dofs| {
        compare_on_common(&canonical(pa, x, dofs), &canonical(pb, y, dofs))
    };
    [
        (a.energy - b.energy).abs() / b.energy.abs().max(f64::MIN_POSITIVE),
        cmp(&a.phi_m, &b.phi_m, true),
        cmp(&a.phi_h, &b.phi_h, true),
        cmp(&a.m_bar, &b.m_bar, false),
        cmp(&a.h_bar, &b.h_bar, false),
        cmp(&a.gradient, &b.gradient, true),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// `(||H 1|| / ||M 1||, 1^T M 1)` for the constant multivector of a
/// covering problem with `V = 0`.
pub fn null_space(p: &Problem, variant: Variant) -> Result<(f64, f64)> {
    let res = run_ranks(p.n_ranks(), |ctx| {
        let setup = p.rank_setup(ctx)?;
        let mo = p.operator(&setup, OperatorSpec::mass())?;
        let ho = p.operator(&setup, OperatorSpec::hamiltonian(Potential::Zero))?;
        let mut ones = BlockCsrMatrix::new(ctx, setup.phi.clone())?;
        ones.fill_owned(|_, _| 1.0)?;
        let mut out = BlockCsrMatrix::new(ctx, setup.grown.clone())?;
        ho.apply(ctx, &mut ones, &mut out, variant)?;
        let h_norm = ctx.allreduce_sum(out.local_norm_sq())?;
        mo.apply(ctx, &mut ones, &mut out, variant)?;
        let m_norm = ctx.allreduce_sum(out.local_norm_sq())?;
        let mut total = 0.0;
        out.for_each_owned(|_, _, v| total += v);
        Ok((h_norm, m_norm, ctx.allreduce_sum(total)?))
    })?;
    let (h, m, total) = res[0];
    Ok(((h / m).sqrt(), total))
}

pub fn covering_problem(mesh: StructuredMesh, n_ranks: usize, degree: usize) -> Result<Problem> {
    let spec = covering_layout(&mesh);
    Problem::new(mesh, n_ranks, degree, spec)
}

/// Size limits of a random SpMM case.
#[derive(Clone, Copy, Debug)]
pub struct SpmmLimits {
    pub max_rows: usize,
    pub max_cols: usize,
    pub max_block: usize,
    pub max_ranks: usize,
}

impl Default for SpmmLimits {
    fn default() -> Self {
        Self {
            max_rows: 200,
            max_cols: 64,
            max_block: 16,
            max_ranks: 4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SpmmErrors {
    pub n_ranks: usize,
    pub rows: usize,
    pub cols: usize,
    pub mmult: f64,
    pub tmmult: f64,
    pub tr_tmmult: f64,
}

fn random_blocking(rng: &mut ChaCha8Rng, total: usize, max_block: usize) -> Arc<BlockIndices> {
    let mut sizes = Vec::new();
    let mut left = total;
    while left > 0 {
        let s = rng.gen_range(1..=max_block.min(left));
        sizes.push(s);
        left -= s;
    }
    Arc::new(BlockIndices::from_sizes(&sizes).expect("positive sizes"))
}

fn random_partition(
    rng: &mut ChaCha8Rng,
    rows: Arc<BlockIndices>,
    n_ranks: usize,
) -> Arc<RowPartition> {
    let mut cuts: Vec<usize> = (1..n_ranks)
        .map(|_| rng.gen_range(0..=rows.n_blocks()))
        .collect();
    cuts.sort_unstable();
    let starts = std::iter::once(0)
        .chain(cuts)
        .chain(std::iter::once(rows.n_blocks()))
        .collect();
    Arc::new(RowPartition::new(rows, starts).expect("monotone cuts"))
}

fn random_pattern(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<usize>> {
    let density = rng.gen_range(0.2..0.9);
    (0..rows)
        .map(|_| (0..cols).filter(|_| rng.gen_bool(density)).collect())
        .collect()
}

type RowSets = Vec<BTreeMap<usize, Vec<usize>>>;

fn exchange_sets(part: &RowPartition, wanted: impl Fn(usize, usize) -> bool) -> (RowSets, RowSets) {
    let n = part.n_ranks();
    let mut ghosts = vec![BTreeMap::new(); n];
    let mut imports = vec![BTreeMap::new(); n];
    for r in 0..n {
        for row in 0..part.rows().total() {
            let owner = part.owner_of_row(row).expect("row in range");
            if owner != r && wanted(r, row) {
                ghosts[r].entry(owner).or_insert_with(Vec::new).push(row);
                imports[owner].entry(r).or_insert_with(Vec::new).push(row);
            }
        }
    }
    (ghosts, imports)
}

fn scheme(
    ctx: &RankContext,
    part: &Arc<RowPartition>,
    cols: &Arc<BlockIndices>,
    pattern: &[Vec<usize>],
    sets: &(RowSets, RowSets),
) -> Result<Arc<GhostScheme>> {
    let r = ctx.rank();
    let owned = part.owned_blocks(r).map(|b| pattern[b].clone()).collect();
    Ok(Arc::new(build_ghost_scheme(
        ctx,
        part.clone(),
        cols.clone(),
        owned,
        &sets.0[r],
        &sets.1[r],
    )?))
}

/// Random distributed `C = A B`, `T = A^T A2` and `tr(A^T A2)` against dense
/// products.
pub fn spmm_case(seed: u64, limits: SpmmLimits) -> Result<SpmmErrors> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_ranks = rng.gen_range(1..=limits.max_ranks);
    let (n, k) = (
        rng.gen_range(1..=limits.max_rows),
        rng.gen_range(1..=limits.max_cols),
    );
    let rb = random_blocking(&mut rng, n, limits.max_block);
    let kb = random_blocking(&mut rng, k, limits.max_block);
    let p_r = random_partition(&mut rng, rb.clone(), n_ranks);
    let p_k = random_partition(&mut rng, kb.clone(), n_ranks);
    let (nr, nk) = (rb.n_blocks(), kb.n_blocks());
    let pa = random_pattern(&mut rng, nr, nk);
    let pa2 = random_pattern(&mut rng, nr, nk);
    let pb = random_pattern(&mut rng, nk, nk);
    let pc = random_pattern(&mut rng, nr, nk);
    let full: Vec<Vec<usize>> = vec![(0..nk).collect(); nk];
    let lane = [1, 2, 4, 8, 16][rng.gen_range(0..5)];
    let value_seed: u64 = rng.gen();

    let none = exchange_sets(&p_r, |_, _| false);
    let k_sets = exchange_sets(&p_k, |r, row| {
        let b = kb.global_to_block(row).expect("row in range").0;
        p_r.owned_blocks(r).any(|i| pa[i].contains(&b))
    });
    let value = |s: u64, r: usize, c: usize| mfsparse::util::hashed_uniform(value_seed ^ s, r, c);

    let out = run_ranks(n_ranks, |ctx| {
        let new = |part, pat: &[Vec<usize>], sets| -> Result<BlockCsrMatrix> {
            BlockCsrMatrix::with_lane_width(ctx, scheme(ctx, part, &kb, pat, sets)?, lane)
        };
        let mut a = new(&p_r, &pa, &none)?;
        let mut a2 = new(&p_r, &pa2, &none)?;
        let mut b = new(&p_k, &pb, &k_sets)?;
        let mut c = new(&p_r, &pc, &none)?;
        let mut t = new(&p_k, &full, &k_sets)?;
        a.fill_owned(|r, c| value(1, r, c))?;
        a2.fill_owned(|r, c| value(2, r, c))?;
        b.fill_owned(|r, c| value(3, r, c))?;
        mmult(ctx, &a, &mut b, &mut c)?;
        tmmult(ctx, &a, &a2, &mut t)?;
        let tr = tr_tmmult(ctx, &a, &a2)?;
        Ok([
            a.owned_entries(),
            a2.owned_entries(),
            b.owned_entries(),
            c.owned_entries(),
            t.owned_entries(),
        ]
        .map(|e| (e, tr)))
    })?;
    let dense = |i: usize, rows, cols| {
        dense_from_entries(rows, cols, out.iter().flat_map(|o| o[i].0.iter()))
    };
    let (da, da2, db, dc, dt) = (
        dense(0, n, k),
        dense(1, n, k),
        dense(2, k, k),
        dense(3, n, k),
        dense(4, k, k),
    );
    let stored: BTreeSet<(usize, usize)> = out
        .iter()
        .flat_map(|o| o[3].0.iter().map(|e| (e.0, e.1)))
        .collect();
    let want_c = masked(&(&da * &db), |i, j| stored.contains(&(i, j)));
    let want_tr = da.dot(&da2);
    let tr_err = out
        .iter()
        .map(|o| (o[0].1 - want_tr).abs() / want_tr.abs().max(1.0))
        .fold(0.0, f64::max);
    Ok(SpmmErrors {
        n_ranks,
        rows: n,
        cols: k,
        mmult: relative_error(&dc, &want_c),
        tmmult: relative_error(&dt, &(da.transpose() * &da2)),
        tr_tmmult: tr_err,
    })
}
