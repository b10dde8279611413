//! Acceptance suite. Every test prints one `criterion N ...: PASS|FAIL` line
//! and then asserts it.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use mfsparse::bcsr::{
    build_ghost_scheme, group_rows_by_block, BlockCsrMatrix, BlockIndices, BlockSparsityPattern,
    GhostBlock, RowPartition,
};
use mfsparse::comm::run_ranks;
use mfsparse::hilbert::hilbert_index;
use mfsparse::matfree::kernels::{element_matrix, gemm_apply, Scratch, SumFactorization};
use mfsparse::matfree::{
    assemble_reference, cell_coefficients, flop_report, CellDofMap, OperatorKind, OperatorSpec,
    RowsBlockAccessor, ShapeInfo, Variant,
};
use mfsparse::mesh::build_mesh;
use mfsparse::oracle::{asymmetry, dense_from_entries};
use mfsparse::problem::Problem;
use mfsparse_bench::checks::{
    apply_distributed, canonical, compare_on_common, covering_problem, directional_errors,
    energy_outputs, operator_oracle, random_layout, random_potential, rank_deviation, spmm_case,
    SpmmLimits,
};
use mfsparse_bench::{generate_problem, structural_stats, BenchConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: usize, name: &str, passed: bool, detail: String) {
    println!(
        "criterion {n:>2} {name}: {} ({detail})",
        if passed { "PASS" } else { "FAIL" }
    );
    assert!(passed, "criterion {n} {name} failed: {detail}");
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

#[test]
fn criterion_01_operator_oracle() {
    let t = Instant::now();
    let (mut worst, mut runs) = (0.0f64, 0);
    for (degree, ext) in [
        (1, [8, 8, 8]),
        (2, [6, 6, 6]),
        (3, [4, 4, 4]),
        (4, [4, 4, 4]),
    ] {
        let mesh = build_mesh(ext, [0.9, 1.0, 1.2], 1, [0.0; 3]).unwrap();
        for layout in 0..3u64 {
            let spec = random_layout(100 * degree as u64 + layout, &mesh);
            let ham = OperatorSpec::hamiltonian(random_potential(7 + layout));
            for ranks in [1, 2, 4] {
                let p = Problem::new(mesh.clone(), ranks, degree, spec.clone()).unwrap();
                for op in [OperatorSpec::mass(), ham.clone()] {
                    let a = assemble_reference(&p.mesh, &p.numbering, &op).unwrap();
                    for variant in [Variant::SumFac, Variant::Gemm] {
                        let lane = [2, 4, 8][layout as usize];
                        let r =
                            operator_oracle(&p, &a, &op, variant, layout + 1, lane, false).unwrap();
                        worst = worst.max(r.rel_error);
                        runs += 1;
                    }
                }
            }
        }
    }
    let el = secs(t.elapsed());
    report(
        1,
        "operator oracle",
        worst <= 1e-12 && el <= 120.0,
        format!("max rel error {worst:.2e} <= 1e-12 over {runs} runs, {el:.1} s <= 120 s"),
    );
}

#[test]
fn criterion_02_spmm_oracles() {
    let t = Instant::now();
    let limits = SpmmLimits {
        max_rows: 200,
        max_cols: 64,
        max_block: 16,
        max_ranks: 4,
    };
    let cases: Vec<_> = (0..60).map(|s| spmm_case(s, limits).unwrap()).collect();
    let worst = cases
        .iter()
        .map(|e| e.mmult.max(e.tmmult).max(e.tr_tmmult))
        .fold(0.0, f64::max);
    let ranks: BTreeSet<usize> = cases.iter().map(|e| e.n_ranks).collect();
    assert!(cases.iter().all(|e| e.rows <= 200 && e.cols <= 64));
    let el = secs(t.elapsed());
    report(
        2,
        "spmm oracles",
        worst <= 1e-12 && el <= 60.0 && cases.len() >= 50,
        format!("max rel error {worst:.2e} <= 1e-12 over {} cases on ranks {ranks:?}, {el:.1} s <= 60 s", cases.len()),
    );
}

#[test]
fn criterion_03_gradient_consistency() {
    let mut worst = 0.0f64;
    let mut pairs = 0;
    for (degree, ext, ranks) in [(1, [6, 6, 6], 2), (2, [4, 4, 4], 1), (3, [4, 4, 4], 3)] {
        let mesh = build_mesh(ext, [1.0; 3], 1, [0.0; 3]).unwrap();
        let p = Problem::new(
            mesh.clone(),
            ranks,
            degree,
            random_layout(degree as u64, &mesh),
        )
        .unwrap();
        let v = random_potential(degree as u64);
        for pair in 0..5u64 {
            let out = energy_outputs(&p, &v, 10 + pair, &[1000 + pair], 1e-5, 4).unwrap();
            worst = worst.max(directional_errors(&out)[0]);
            pairs += 1;
        }
    }
    report(
        3,
        "gradient consistency",
        worst <= 1e-6,
        format!("max central-difference rel error {worst:.2e} <= 1e-6 over {pairs} pairs"),
    );
}

#[test]
fn criterion_04_projected_symmetry() {
    let mesh = build_mesh([4, 4, 6], [1.0, 0.8, 1.1], 1, [0.0; 3]).unwrap();
    let spec = random_layout(44, &mesh);
    let v = random_potential(4);
    let mut worst = 0.0f64;
    for ranks in [1, 2, 3, 4, 6] {
        let p = Problem::new(mesh.clone(), ranks, 2, spec.clone()).unwrap();
        let out = energy_outputs(&p, &v, 3, &[], 1e-5, 8).unwrap();
        let m = p.n_columns();
        worst = worst.max(asymmetry(&dense_from_entries(m, m, &out.m_bar)));
        worst = worst.max(asymmetry(&dense_from_entries(m, m, &out.h_bar)));
    }
    report(
        4,
        "symmetry of Mbar and Hbar",
        worst <= 1e-12,
        format!("max asymmetry {worst:.2e} <= 1e-12 on ranks 1..6"),
    );
}

#[test]
fn criterion_05_rank_invariance() {
    let mesh = build_mesh([4, 4, 4], [1.0; 3], 1, [0.0; 3]).unwrap();
    let spec = random_layout(55, &mesh);
    let v = random_potential(5);
    let base = Problem::new(mesh.clone(), 1, 2, spec.clone()).unwrap();
    let out1 = energy_outputs(&base, &v, 9, &[], 1e-5, 4).unwrap();
    let gemm1 = apply_distributed(
        &base,
        &OperatorSpec::hamiltonian(v.clone()),
        Variant::Gemm,
        9,
        4,
        false,
    )
    .unwrap();
    let mut worst = 0.0f64;
    let mut replicated = out1.replicated;
    for ranks in [2, 4, 8] {
        let p = Problem::new(mesh.clone(), ranks, 2, spec.clone()).unwrap();
        let out = energy_outputs(&p, &v, 9, &[], 1e-5, 4).unwrap();
        replicated &= out.replicated;
        worst = worst.max(rank_deviation(&p, &out, &base, &out1));
        let gemm = apply_distributed(
            &p,
            &OperatorSpec::hamiltonian(v.clone()),
            Variant::Gemm,
            9,
            4,
            false,
        )
        .unwrap();
        worst = worst.max(compare_on_common(
            &canonical(&p, &gemm, true),
            &canonical(&base, &gemm1, true),
        ));
    }
    let p4 = Problem::new(mesh, 4, 2, spec).unwrap();
    let (a, b) = (
        energy_outputs(&p4, &v, 9, &[], 1e-5, 4).unwrap(),
        energy_outputs(&p4, &v, 9, &[], 1e-5, 4).unwrap(),
    );
    let bits =
        |e: &mfsparse_bench::checks::Entries| e.iter().map(|x| x.2.to_bits()).collect::<Vec<_>>();
    let identical = a.energy.to_bits() == b.energy.to_bits()
        && a.gradient_bits == b.gradient_bits
        && [
            (&a.m_bar, &b.m_bar),
            (&a.h_bar, &b.h_bar),
            (&a.phi_m, &b.phi_m),
            (&a.phi_h, &b.phi_h),
        ]
        .iter()
        .all(|(x, y)| bits(x) == bits(y));
    report(
        5,
        "rank invariance",
        worst <= 1e-12 && identical && replicated,
        format!("max deviation 1 vs {{2,4,8}} ranks {worst:.2e} <= 1e-12, reruns bit-identical: {identical}"),
    );
}

fn all_points<const D: usize>(levels: u32) -> Vec<[u64; D]> {
    let side = 1u64 << levels;
    (0..side.pow(D as u32))
        .map(|mut n| {
            std::array::from_fn(|_| {
                let c = n % side;
                n /= side;
                c
            })
        })
        .collect()
}

fn hilbert_ok<const D: usize>(levels: u32) -> bool {
    let mut keyed: Vec<(u128, [u64; D])> = all_points::<D>(levels)
        .into_iter()
        .map(|p| (hilbert_index(p, levels).unwrap().to_u128().unwrap(), p))
        .collect();
    keyed.sort();
    let bijective = keyed.iter().enumerate().all(|(i, k)| k.0 == i as u128);
    let adjacent = keyed.windows(2).all(|w| {
        w[0].1
            .iter()
            .zip(&w[1].1)
            .map(|(a, b)| a.abs_diff(*b))
            .sum::<u64>()
            == 1
    });
    bijective && adjacent
}

#[test]
fn criterion_06_hilbert_curve() {
    let mut ok = true;
    for levels in 1..=5 {
        ok &= hilbert_ok::<1>(levels) && hilbert_ok::<2>(levels) && hilbert_ok::<3>(levels);
        ok &= (0..1u64 << levels)
            .all(|x| hilbert_index([x], levels).unwrap().to_u128() == Some(x as u128));
    }
    report(
        6,
        "hilbert curve",
        ok,
        "bijective with unit steps for d <= 3, levels <= 5; 1D identity".into(),
    );
}

#[test]
fn criterion_07_ghost_blocking() {
    let blocking = Arc::new(BlockIndices::from_sizes(&[9, 6, 6, 4, 9, 6, 5]).unwrap());
    let rows = [15, 17, 19, 21, 23, 28, 30, 32, 35];
    let sizes: Vec<usize> = group_rows_by_block(&rows, &blocking)
        .unwrap()
        .iter()
        .map(|g| g.1.len())
        .collect();
    // the same rows read by rank 0 from rank 1 through a ghost scheme
    let part = Arc::new(RowPartition::new(blocking.clone(), vec![0, 2, 7]).unwrap());
    let cols = Arc::new(BlockIndices::from_sizes(&[3, 3]).unwrap());
    let schemes = run_ranks(2, |ctx| {
        let owned = part.owned_blocks(ctx.rank()).map(|_| vec![0, 1]).collect();
        let (g, i) = if ctx.rank() == 0 {
            (BTreeMap::from([(1, rows.to_vec())]), BTreeMap::new())
        } else {
            (BTreeMap::new(), BTreeMap::from([(0, rows.to_vec())]))
        };
        build_ghost_scheme(ctx, part.clone(), cols.clone(), owned, &g, &i)
    })
    .unwrap();
    let scheme_sizes: Vec<usize> = schemes[0].ghosts().iter().map(|g| g.rows.len()).collect();
    let example = sizes == [3, 2, 3, 1] && scheme_sizes == [3, 2, 3, 1];

    let mut agree = 0;
    for case in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(case);
        let n_ranks = rng.gen_range(1..=4);
        let nb = rng.gen_range(1..=12);
        let sizes: Vec<usize> = (0..nb).map(|_| rng.gen_range(1..=9)).collect();
        let rb = Arc::new(BlockIndices::from_sizes(&sizes).unwrap());
        let mut cuts: Vec<usize> = (1..n_ranks).map(|_| rng.gen_range(0..=nb)).collect();
        cuts.sort_unstable();
        let starts = std::iter::once(0)
            .chain(cuts)
            .chain(std::iter::once(nb))
            .collect();
        let part = Arc::new(RowPartition::new(rb.clone(), starts).unwrap());
        let pattern: Vec<Vec<usize>> = (0..nb)
            .map(|_| (0..2).filter(|_| rng.gen_bool(0.7)).collect())
            .collect();
        let total = rb.total();
        let picks: Vec<BTreeSet<usize>> = (0..n_ranks)
            .map(|r| {
                (0..total)
                    .filter(|&x| part.owner_of_row(x) != Some(r) && rng.gen_bool(0.3))
                    .collect()
            })
            .collect();
        let out = run_ranks(n_ranks, |ctx| {
            let r = ctx.rank();
            let mut g: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for &x in &picks[r] {
                g.entry(part.owner_of_row(x).unwrap()).or_default().push(x);
            }
            let mut i: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (peer, set) in picks.iter().enumerate() {
                for &x in set.iter().filter(|&&x| part.owner_of_row(x) == Some(r)) {
                    i.entry(peer).or_default().push(x);
                }
            }
            let owned = part.owned_blocks(r).map(|b| pattern[b].clone()).collect();
            build_ghost_scheme(ctx, part.clone(), cols.clone(), owned, &g, &i)
        })
        .unwrap();
        let ok = out.iter().enumerate().all(|(r, s)| {
            // brute force: scan rows in order and start a group at every block change
            let mut want: Vec<GhostBlock> = Vec::new();
            for &x in &picks[r] {
                let (b, off) = rb.global_to_block(x).unwrap();
                match want.last_mut() {
                    Some(w) if w.block == b => w.rows.push(off),
                    _ => want.push(GhostBlock {
                        owner: part.owner_of_block(b),
                        block: b,
                        rows: vec![off],
                    }),
                }
            }
            s.ghosts() == want.as_slice()
                && want
                    .iter()
                    .enumerate()
                    .all(|(k, w)| s.local_pattern().row(s.n_owned_blocks() + k) == pattern[w.block])
        });
        agree += ok as usize;
    }
    report(
        7,
        "ghost blocking",
        example && agree == 100,
        format!("worked example groups {sizes:?} / scheme {scheme_sizes:?} == [3, 2, 3, 1]; brute force agrees on {agree}/100"),
    );
}

/// Column blocks of every touched row, merged.
fn merge_oracle(p: &BlockSparsityPattern, blocks: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let cols: BTreeSet<usize> = blocks
        .iter()
        .flat_map(|&b| p.row(b).iter().copied())
        .collect();
    cols.into_iter()
        .map(|c| {
            (
                c,
                blocks
                    .iter()
                    .copied()
                    .filter(|&b| p.contains(b, c))
                    .collect(),
            )
        })
        .collect()
}

fn accessor_sequence(
    map: &CellDofMap,
    c: usize,
    p: &BlockSparsityPattern,
) -> Vec<(usize, Vec<usize>)> {
    let mut acc = RowsBlockAccessor::new();
    let mut out = Vec::new();
    let mut cur = acc.reinit(map, c, p);
    while let Some(col) = cur {
        out.push((col, acc.active_rows().map(|r| r.block_row).collect()));
        cur = acc.advance(p);
    }
    out
}

#[test]
fn criterion_08_accessor_merge() {
    // worked example: row blocks {8, 0, 2, 3}, rows 0 and 2 empty
    let rows = Arc::new(BlockIndices::from_sizes(&[4; 9]).unwrap());
    let cols = Arc::new(BlockIndices::from_sizes(&[2; 3]).unwrap());
    let mut lists = vec![vec![]; 9];
    lists[8] = vec![0, 2];
    lists[3] = vec![1, 2];
    let fig = BlockSparsityPattern::from_rows(rows, cols, lists).unwrap();
    let locs = [
        (8, 0),
        (8, 1),
        (0, 1),
        (2, 0),
        (0, 3),
        (3, 0),
        (8, 2),
        (2, 1),
        (3, 1),
    ];
    let map = CellDofMap::build(&[0], |_| (0..9).collect(), |d| Some(locs[d])).unwrap();
    let seq = accessor_sequence(&map, 0, &fig);
    let example = seq == merge_oracle(&fig, &[8, 0, 2, 3]) && seq[0] == (0, vec![8]);

    let mut cells_checked = 0;
    let mut all = true;
    for case in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(case);
        let (nb, nc) = (rng.gen_range(2..=12), rng.gen_range(1..=10));
        let rows = Arc::new(BlockIndices::from_sizes(&vec![6; nb]).unwrap());
        let cols = Arc::new(BlockIndices::from_sizes(&vec![3; nc]).unwrap());
        let density = rng.gen_range(0.1..0.9);
        let lists: Vec<Vec<usize>> = (0..nb)
            .map(|_| (0..nc).filter(|_| rng.gen_bool(density)).collect())
            .collect();
        let p = BlockSparsityPattern::from_rows(rows, cols, lists).unwrap();
        let n_cells = rng.gen_range(1..=8);
        let cells: Vec<usize> = (0..n_cells).collect();
        let dofs: Vec<Vec<(usize, usize)>> = cells
            .iter()
            .map(|_| {
                let mut seen = BTreeSet::new();
                (0..8)
                    .map(|_| (rng.gen_range(0..nb), rng.gen_range(0..6)))
                    .filter(|x| seen.insert(*x))
                    .collect()
            })
            .collect();
        // one global id per (block, row)
        let map = CellDofMap::build(
            &cells,
            |c| dofs[c].iter().map(|&(b, r)| b * 6 + r).collect(),
            |d| Some((d / 6, d % 6)),
        )
        .unwrap();
        for c in 0..n_cells {
            let touched: Vec<usize> = map.cell_blocks(c).iter().map(|x| x.0).collect();
            all &= accessor_sequence(&map, c, &p) == merge_oracle(&p, &touched);
            cells_checked += 1;
        }
    }
    report(
        8,
        "accessor merge",
        example && all,
        format!("worked example sequence {seq:?}; {cells_checked} cells of 20 random patterns match the k-way merge"),
    );
}

#[test]
fn criterion_09_structural_stats() {
    let mut lines = Vec::new();
    let mut ok = true;
    for degree in [2, 4] {
        let cfg = BenchConfig {
            atoms: 80,
            degree,
            spacing: 4.0,
            n_ranks: 3,
            ..Default::default()
        };
        let g = generate_problem(&cfg).unwrap();
        let s = structural_stats(&g);
        let ext = g.problem.mesh.extents();
        let n_exact: usize = ext.iter().map(|&n| degree * n + 1).product();
        let want_per_cell = (degree + 1).pow(3);
        ok &= s.dofs_per_cell == want_per_cell
            && s.n_dofs == n_exact
            && s.n_columns >= 160
            && (s.column_block_size.mean - 8.0).abs() <= 2.0;
        lines.push(format!(
            "p={degree}: {} DoFs/cell, N={} (exact {n_exact}), {} columns in blocks of {}",
            s.dofs_per_cell, s.n_dofs, s.n_columns, s.column_block_size
        ));
    }
    report(9, "structural stats", ok, lines.join("; "));
}

#[test]
fn criterion_10_complexity_trend() {
    let t = Instant::now();
    let mut ok = true;
    let mut ratios = Vec::new();
    for degree in 2..=4 {
        let s = flop_report(Variant::SumFac, degree, OperatorKind::Hamiltonian).unwrap();
        let g = flop_report(Variant::Gemm, degree, OperatorKind::Hamiltonian).unwrap();
        ok &= g.flops_per_cell_lane == 2 * ((degree + 1) as u64).pow(6);
        ratios.push(g.flops_per_dof / s.flops_per_dof);
    }
    ok &= ratios.windows(2).all(|w| w[1] > w[0]);
    let sumfac4 = flop_report(Variant::SumFac, 4, OperatorKind::Hamiltonian)
        .unwrap()
        .flops_per_dof;
    ok &= (100.0..=300.0).contains(&sumfac4);

    // counted kernel flops agree with the analytic numbers
    for degree in 1..=4 {
        let shape = ShapeInfo::new(degree).unwrap();
        let mesh = build_mesh([2, 2, 2], [1.0; 3], 1, [0.0; 3]).unwrap();
        let coeff = cell_coefficients(
            &shape,
            &mesh,
            0,
            &OperatorSpec::hamiltonian(random_potential(1)),
        );
        let nd = (degree + 1).pow(3);
        let u = vec![[1.0; 4]; nd];
        let mut v = vec![[0.0; 4]; nd];
        let a = element_matrix(&shape, OperatorKind::Hamiltonian, &coeff);
        ok &= gemm_apply(&a, &u, &mut v) == 2 * (nd * nd) as u64;
        let sf = SumFactorization::new(&shape);
        let mut scratch = Scratch::<4>::new(degree + 1, shape.n_q);
        for kind in [OperatorKind::Mass, OperatorKind::Hamiltonian] {
            ok &= sf.apply(kind, &coeff, &u, &mut v, &mut scratch) == sf.flops_per_cell(kind);
        }
    }

    // stored values per column as the tube grows 40 -> 80 -> 160 atom centers
    let per_col: Vec<f64> = [40, 80, 160]
        .iter()
        .map(|&atoms| {
            let cfg = BenchConfig {
                atoms,
                degree: 1,
                spacing: 2.0,
                ..Default::default()
            };
            structural_stats(&generate_problem(&cfg).unwrap()).stored_values_per_column
        })
        .collect();
    let mean = per_col.iter().sum::<f64>() / 3.0;
    let spread = per_col
        .iter()
        .map(|v| (v / mean - 1.0).abs())
        .fold(0.0, f64::max);
    ok &= spread <= 0.10;
    let el = secs(t.elapsed());
    ok &= el <= 120.0;
    report(
        10,
        "complexity trend",
        ok,
        format!(
            "gemm/sumfac per DoF {ratios:.2?} increasing, sumfac p=4 {sumfac4:.1} Flop/DoF in [100, 300], \
             stored values per column {per_col:.0?} within {:.1}% <= 10%, {el:.1} s",
            100.0 * spread
        ),
    );
}

#[test]
fn criterion_11_null_space_and_mass_total() {
    let mut residual = 0.0f64;
    let mut total_err = 0.0f64;
    for (degree, ext, ranks) in [
        (1, [4, 4, 6], 1),
        (2, [4, 4, 4], 2),
        (3, [4, 2, 4], 2),
        (4, [2, 2, 2], 1),
    ] {
        let mesh = build_mesh(ext, [0.7, 1.3, 0.9], 1, [0.5, -1.0, 2.0]).unwrap();
        let volume = mesh.volume();
        let p = covering_problem(mesh, ranks, degree).unwrap();
        for variant in [Variant::SumFac, Variant::Gemm] {
            let (r, total) = mfsparse_bench::checks::null_space(&p, variant).unwrap();
            residual = residual.max(r);
            total_err = total_err.max((total - volume).abs() / volume);
        }
    }
    report(
        11,
        "null space and mass total",
        residual <= 1e-12 && total_err <= 1e-12,
        format!(
            "|H 1| / |M 1| {residual:.2e} <= 1e-12, mass total rel error {total_err:.2e} <= 1e-12"
        ),
    );
}

#[test]
fn bench_problem_ghost_values_round_trip() {
    // sanity of the generated problem on several ranks: ghost update then
    // compress of a zeroed ghost copy leaves owned values unchanged
    let cfg = BenchConfig {
        atoms: 10,
        degree: 1,
        spacing: 4.0,
        n_ranks: 3,
        ..Default::default()
    };
    let g = generate_problem(&cfg).unwrap();
    let p = &g.problem;
    let ok = run_ranks(3, |ctx| {
        let setup = p.rank_setup(ctx)?;
        let mut m = BlockCsrMatrix::new(ctx, setup.phi.clone())?;
        p.fill_phi(&mut m, 1)?;
        let before = m.owned_entries();
        m.update_ghost_values(ctx)?;
        m.zero_out_ghosts()?;
        m.compress(ctx)?;
        Ok(before == m.owned_entries())
    })
    .unwrap();
    assert!(ok.into_iter().all(|x| x));
}
