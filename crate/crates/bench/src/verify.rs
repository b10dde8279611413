use mfsparse::matfree::{assemble_reference, OperatorSpec, Variant};
use mfsparse::problem::Problem;
use mfsparse::Result;
use serde::Serialize;

use crate::checks::{
    covering_problem, dense_phi, directional_errors, energy_checks, energy_outputs,
    energy_reference, null_space, operator_oracle, rank_deviation, spmm_case, Check, SpmmLimits,
};
use crate::config::BenchConfig;
use crate::generate::generate_problem;

#[derive(Clone, Debug, Serialize)]
pub struct VerifySummary {
    pub n_dofs: usize,
    pub n_columns: usize,
    pub checks: Vec<Check>,
}

impl VerifySummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// The configuration actually verified: one ring of atoms and `p <= 3`.
pub fn reduced_config(cfg: &BenchConfig) -> BenchConfig {
    BenchConfig {
        atoms: cfg.atoms.min(cfg.rings),
        degree: cfg.degree.min(3),
        ..cfg.clone()
    }
}

/// Runs the oracle suite on the reduced problem. With `inject_fault` one
/// value of an operator output is perturbed, which must be reported.
pub fn verify(cfg: &BenchConfig, inject_fault: bool) -> Result<VerifySummary> {
    let cfg = reduced_config(cfg);
    let g = generate_problem(&cfg)?;
    let p = &g.problem;
    let mass = OperatorSpec::mass();
    let ham = OperatorSpec::hamiltonian(g.potential.clone());
    let m_ref = assemble_reference(&p.mesh, &p.numbering, &mass)?;
    let h_ref = assemble_reference(&p.mesh, &p.numbering, &ham)?;
    let w = cfg.lane_width;
    let mut checks = Vec::new();

    for (spec, a, label) in [(&mass, &m_ref, "mass"), (&ham, &h_ref, "hamiltonian")] {
        for variant in [Variant::SumFac, Variant::Gemm] {
            let fault = inject_fault && label == "mass" && variant == Variant::SumFac;
            let r = operator_oracle(p, a, spec, variant, cfg.seed, w, fault)?;
            let mut c = Check::at_most(format!("operator {label} {variant:?}"), r.rel_error, 1e-12);
            if let (false, Some(worst)) = (c.passed, r.worst) {
                c = c.with_detail(worst.to_string());
            }
            checks.push(c);
        }
    }

    let directions = [cfg.seed.wrapping_add(101), cfg.seed.wrapping_add(202)];
    let out = energy_outputs(p, &g.potential, cfg.seed, &directions, 1e-5, w)?;
    let reference = energy_reference(&m_ref, &h_ref, &dense_phi(p, cfg.seed));
    checks.extend(energy_checks(p, &out, &reference));
    let fd = directional_errors(&out).into_iter().fold(0.0, f64::max);
    checks.push(Check::at_most("directional derivative", fd, 1e-6));
    checks.push(Check::at_most(
        "energy replicated",
        if out.replicated { 0.0 } else { 1.0 },
        0.0,
    ));

    let other_ranks = if cfg.n_ranks == 1 { 4 } else { 1 };
    let other = Problem::new(
        p.mesh.clone(),
        other_ranks,
        cfg.degree,
        p.layout.spec.clone(),
    )?;
    let out2 = energy_outputs(&other, &g.potential, cfg.seed, &[], 1e-5, w)?;
    checks.push(Check::at_most(
        format!("rank invariance {} vs {other_ranks}", cfg.n_ranks),
        rank_deviation(p, &out, &other, &out2),
        1e-12,
    ));

    let limits = SpmmLimits {
        max_ranks: cfg.n_ranks.max(2),
        ..Default::default()
    };
    let worst = (0..8)
        .map(|i| spmm_case(cfg.seed.wrapping_mul(31).wrapping_add(i), limits))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.mmult.max(e.tmmult).max(e.tr_tmmult))
        .fold(0.0, f64::max);
    checks.push(Check::at_most("spmm oracles", worst, 1e-12));

    let cover = covering_problem(p.mesh.clone(), cfg.n_ranks, cfg.degree)?;
    let (residual, total) = null_space(&cover, Variant::SumFac)?;
    checks.push(Check::at_most("hamiltonian null space", residual, 1e-12));
    let volume = p.mesh.volume();
    checks.push(Check::at_most(
        "mass total",
        (total - volume).abs() / volume,
        1e-12,
    ));

    Ok(VerifySummary {
        n_dofs: p.n_dofs(),
        n_columns: p.n_columns(),
        checks,
    })
}
