use std::io::Write;
use std::path::Path;
use std::time::Instant;

use mfsparse::bcsr::{mmult, tmmult, tr_tmmult, BlockCsrMatrix};
use mfsparse::comm::{run_ranks, RankContext};
use mfsparse::energy::{compute_energy, compute_gradient, EnergyWorkspace};
use mfsparse::matfree::{MatrixFreeOperator, OperatorSpec, Variant};
use mfsparse::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::{BenchConfig, Kernel};
use crate::generate::{generate_problem, GeneratedProblem};
use crate::stats::{structural_stats, MeanStd, StructuralStats};

/// One timed repetition; the CSV row format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub kernel: Kernel,
    pub rep: usize,
    pub rank_count: usize,
    /// Slowest rank.
    pub seconds: f64,
    /// Summed over ranks.
    pub flops: u64,
    pub bytes_est: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub kernel: Kernel,
    pub reps: usize,
    pub min_seconds: f64,
    pub mean_seconds: f64,
    pub max_seconds: f64,
    /// Per call, summed over ranks.
    pub flops: u64,
    /// `flops` divided by the number of DoFs.
    pub flops_per_dof: f64,
    pub bytes_estimate: u64,
    pub gflops_per_second: f64,
    pub rank_flops: MeanStd,
    pub rank_seconds: MeanStd,
    /// Slowest over mean rank time.
    pub imbalance: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub stats: StructuralStats,
    pub kernels: Vec<KernelReport>,
    pub valid: bool,
    pub error: Option<String>,
    pub samples: Vec<Sample>,
}

struct RankTiming {
    seconds: Vec<f64>,
    flops: u64,
    bytes: u64,
}

struct RankState {
    mass: MatrixFreeOperator,
    ham: MatrixFreeOperator,
    ws: EnergyWorkspace,
    phi: BlockCsrMatrix,
    phi_values: u64,
}

fn bytes_of(m: &BlockCsrMatrix) -> u64 {
    8 * m.raw_values().len() as u64
}

fn prepare(ctx: &RankContext, g: &GeneratedProblem, cfg: &BenchConfig) -> Result<RankState> {
    let p = &g.problem;
    let setup = p.rank_setup(ctx)?;
    let mass = p.operator(&setup, OperatorSpec::mass())?;
    let ham = p.operator(&setup, OperatorSpec::hamiltonian(g.potential.clone()))?;
    let mut ws = EnergyWorkspace::new(ctx, &setup, cfg.lane_width)?;
    let mut phi = BlockCsrMatrix::with_lane_width(ctx, setup.phi.clone(), cfg.lane_width)?;
    p.fill_phi(&mut phi, cfg.seed)?;
    compute_energy(ctx, &mut phi, &mass, &ham, &mut ws)?;
    compute_gradient(ctx, &mut ws)?;
    let phi_values = phi.owned_entries().len() as u64;
    Ok(RankState {
        mass,
        ham,
        ws,
        phi,
        phi_values,
    })
}

/// Runs one kernel call and returns `(flops, bytes)` on this rank.
fn call(ctx: &RankContext, k: Kernel, s: &mut RankState) -> Result<(u64, u64)> {
    let ws = &mut s.ws;
    Ok(match k {
        Kernel::ApplyM | Kernel::ApplyH | Kernel::ApplyHGemm => {
            let (op, dst, variant) = match k {
                Kernel::ApplyM => (&s.mass, &mut ws.phi_m, Variant::SumFac),
                Kernel::ApplyH => (&s.ham, &mut ws.phi_h, Variant::SumFac),
                _ => (&s.ham, &mut ws.phi_h, Variant::Gemm),
            };
            let st = op.apply(ctx, &mut s.phi, dst, variant)?;
            (st.flops, st.bytes_estimate)
        }
        Kernel::Mmult => {
            let f = mmult(ctx, &ws.phi_m, &mut ws.h_bar, &mut ws.gradient)?;
            (
                f,
                bytes_of(&ws.phi_m) + bytes_of(&ws.h_bar) + 2 * bytes_of(&ws.gradient),
            )
        }
        Kernel::Tmmult => {
            let f = tmmult(ctx, &s.phi, &ws.phi_h, &mut ws.h_bar)?;
            (
                f,
                bytes_of(&s.phi) + bytes_of(&ws.phi_h) + 2 * bytes_of(&ws.h_bar),
            )
        }
        Kernel::TrTmmult => {
            tr_tmmult(ctx, &s.phi, &ws.phi_h)?;
            (2 * s.phi_values, 16 * s.phi_values)
        }
        Kernel::Energy | Kernel::Gradient => {
            let (a0, f0) = (ws.apply_stats, ws.spmm_flops);
            if k == Kernel::Energy {
                compute_energy(ctx, &mut s.phi, &s.mass, &s.ham, ws)?;
            } else {
                compute_gradient(ctx, ws)?;
            }
            let spmm = ws.spmm_flops - f0;
            let bytes = ws.apply_stats.bytes_estimate - a0.bytes_estimate
                + bytes_of(&ws.phi_m)
                + bytes_of(&ws.phi_h)
                + bytes_of(&ws.gradient);
            (ws.apply_stats.flops - a0.flops + spmm, bytes)
        }
    })
}

fn time_kernel(g: &GeneratedProblem, cfg: &BenchConfig, k: Kernel) -> Result<Vec<RankTiming>> {
    run_ranks(cfg.n_ranks, |ctx| {
        let mut s = prepare(ctx, g, cfg)?;
        // warm-up
        call(ctx, k, &mut s)?;
        let mut seconds = Vec::with_capacity(cfg.reps);
        let mut last = (0, 0);
        for _ in 0..cfg.reps {
            ctx.barrier()?;
            let t = Instant::now();
            last = call(ctx, k, &mut s)?;
            seconds.push(t.elapsed().as_secs_f64());
        }
        Ok(RankTiming {
            seconds,
            flops: last.0,
            bytes: last.1,
        })
    })
}

fn summarize(
    k: Kernel,
    timings: &[RankTiming],
    n_dofs: usize,
    samples: &mut Vec<Sample>,
) -> KernelReport {
    let reps = timings[0].seconds.len();
    let per_rep: Vec<f64> = (0..reps)
        .map(|r| timings.iter().map(|t| t.seconds[r]).fold(0.0, f64::max))
        .collect();
    let flops: u64 = timings.iter().map(|t| t.flops).sum();
    let bytes: u64 = timings.iter().map(|t| t.bytes).sum();
    for (rep, &seconds) in per_rep.iter().enumerate() {
        samples.push(Sample {
            kernel: k,
            rep,
            rank_count: timings.len(),
            seconds,
            flops,
            bytes_est: bytes,
        });
    }
    let mean = per_rep.iter().sum::<f64>() / reps as f64;
    let rank_mean: Vec<f64> = timings
        .iter()
        .map(|t| t.seconds.iter().sum::<f64>() / reps as f64)
        .collect();
    let rank_seconds = MeanStd::of(&rank_mean);
    let slowest = rank_mean.iter().copied().fold(0.0, f64::max);
    KernelReport {
        kernel: k,
        reps,
        min_seconds: per_rep.iter().copied().fold(f64::INFINITY, f64::min),
        mean_seconds: mean,
        max_seconds: per_rep.iter().copied().fold(0.0, f64::max),
        flops,
        flops_per_dof: flops as f64 / n_dofs as f64,
        bytes_estimate: bytes,
        gflops_per_second: if mean > 0.0 {
            flops as f64 / mean * 1e-9
        } else {
            0.0
        },
        rank_flops: MeanStd::of(&timings.iter().map(|t| t.flops as f64).collect::<Vec<_>>()),
        rank_seconds,
        imbalance: if rank_seconds.mean > 0.0 {
            slowest / rank_seconds.mean
        } else {
            1.0
        },
    }
}

/// Times every configured kernel. A failing kernel stops the run and yields
/// a report flagged invalid that holds the kernels completed so far.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchReport> {
    let g = generate_problem(cfg)?;
    let stats = structural_stats(&g);
    let mut report = BenchReport {
        config: cfg.clone(),
        stats,
        kernels: Vec::new(),
        valid: true,
        error: None,
        samples: Vec::new(),
    };
    for &k in &cfg.kernels {
        match time_kernel(&g, cfg, k) {
            Ok(t) => {
                let r = summarize(k, &t, g.problem.n_dofs(), &mut report.samples);
                report.kernels.push(r);
            }
            Err(e) => {
                report.valid = false;
                report.error = Some(format!("{k}: {e}"));
                break;
            }
        }
    }
    Ok(report)
}

pub fn write_csv(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    for s in samples {
        w.serialize(s).map_err(|e| Error::Config(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> BenchConfig {
        BenchConfig {
            atoms: 10,
            degree: 1,
            spacing: 4.0,
            reps: 2,
            n_ranks: 2,
            ..Default::default()
        }
    }

    #[test]
    fn report_covers_every_kernel() {
        let r = run_benchmark(&tiny()).unwrap();
        assert!(r.valid);
        assert_eq!(r.kernels.len(), Kernel::ALL.len());
        assert_eq!(r.samples.len(), 2 * Kernel::ALL.len());
        for k in &r.kernels {
            assert!(k.min_seconds <= k.mean_seconds && k.mean_seconds <= k.max_seconds);
            assert!(k.flops > 0, "{:?}", k.kernel);
        }
        let f = |k: Kernel| r.kernels.iter().find(|x| x.kernel == k).unwrap().flops;
        assert!(f(Kernel::TrTmmult) < f(Kernel::Tmmult));
    }

    #[test]
    fn csv_has_the_fixed_header() {
        let r = run_benchmark(&BenchConfig {
            kernels: vec![Kernel::ApplyM],
            ..tiny()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_csv(&path, &r.samples).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "kernel,rep,rank_count,seconds,flops,bytes_est"
        );
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().starts_with("apply_m,0,2,"));
    }
}
