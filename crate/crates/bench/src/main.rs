use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfsparse::Error;
use mfsparse_bench::config::parse_kernels;
use mfsparse_bench::run::{write_csv, write_json};
use mfsparse_bench::{generate_problem, run_benchmark, structural_stats, verify, BenchConfig};

/// Benchmarks and verifies matrix-free operators on sparse multivectors.
#[derive(Parser)]
#[command(name = "bench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time the selected kernels.
    Run {
        #[command(flatten)]
        common: Common,
        /// JSON report destination.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-repetition timings as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the oracle suite on a reduced problem.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Perturb one operator output value; the suite must fail.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Print structural statistics of the generated problem.
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    atoms: Option<usize>,
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long)]
    ranks: Option<usize>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma separated, e.g. `apply_m,mmult`.
    #[arg(long)]
    kernels: Option<String>,
}

impl Common {
    fn resolve(&self) -> mfsparse::Result<BenchConfig> {
        let mut cfg = match &self.config {
            Some(p) => BenchConfig::from_json_file(p)?,
            None => BenchConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { cfg.$field = v; })*
            };
        }
        set!(atoms => atoms, degree => degree, ranks => n_ranks, radius => radius,
             block_size => block_size, reps => reps, seed => seed);
        if let Some(k) = &self.kernels {
            cfg.kernels = parse_kernels(k)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn execute(cli: Cli) -> mfsparse::Result<bool> {
    match cli.command {
        Command::Run { common, out, csv } => {
            let cfg = common.resolve()?;
            let report = run_benchmark(&cfg)?;
            let s = &report.stats;
            println!(
                "{} atoms, {} ranks, p={}: {} DoFs, {} columns, {} column blocks of {}",
                s.atoms,
                s.n_ranks,
                s.degree,
                s.n_dofs,
                s.n_columns,
                s.n_column_blocks,
                s.column_block_size
            );
            println!(
                "{:<14}{:>12}{:>12}{:>12}{:>14}{:>10}",
                "kernel", "min [s]", "mean [s]", "max [s]", "flops", "GFlop/s"
            );
            for k in &report.kernels {
                println!(
                    "{:<14}{:>12.3e}{:>12.3e}{:>12.3e}{:>14}{:>10.2}",
                    k.kernel.name(),
                    k.min_seconds,
                    k.mean_seconds,
                    k.max_seconds,
                    k.flops,
                    k.gflops_per_second
                );
            }
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
            if let Some(path) = csv {
                write_csv(&path, &report.samples)?;
            }
            if let Some(e) = &report.error {
                eprintln!("benchmark aborted: {e}");
            }
            Ok(report.valid)
        }
        Command::Verify {
            common,
            inject_fault,
        } => {
            let cfg = common.resolve()?;
            let summary = verify(&cfg, inject_fault)?;
            println!(
                "verifying {} DoFs x {} columns",
                summary.n_dofs, summary.n_columns
            );
            for c in &summary.checks {
                println!("{c}");
            }
            let failed = summary.failures().count();
            println!("{} checks, {failed} failed", summary.checks.len());
            Ok(failed == 0)
        }
        Command::Stats { common, out } => {
            let cfg = common.resolve()?;
            let stats = structural_stats(&generate_problem(&cfg)?);
            match out {
                Some(path) => write_json(&path, &stats)?,
                None => println!("{}", serde_json::to_string_pretty(&stats)?),
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ (Error::Config(_) | Error::Io(_) | Error::Json(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
