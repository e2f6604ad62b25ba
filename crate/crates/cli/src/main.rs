use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use bipart_cli::{cmd_decompose, cmd_example, cmd_ising_scan, cmd_reduce, JobConfig, ReduceMode};

/// Decompose matrix algebras into irreducible blocks, reduce density
/// matrices through bipartition tables, and search spin chains for
/// quasi-classical coarse-grainings.
#[derive(Parser)]
#[command(name = "bipart", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output directory for generated files.
    #[arg(long, global = true, env = "BIPART_OUT", default_value = ".")]
    out: PathBuf,

    /// Zero threshold for matrix entries and norms (default 1e-10 * dim).
    #[arg(long, global = true)]
    tol_zero: Option<f64>,

    /// Eigenvalue clustering radius (default 1e-8).
    #[arg(long, global = true)]
    tol_eig: Option<f64>,

    /// Proportionality residual threshold (default 1e-8).
    #[arg(long, global = true)]
    tol_prop: Option<f64>,

    /// Seed for randomized restarts and spot checks.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Thread count for the scan worker pool.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Upper bound on the alignment enumeration size.
    #[arg(long, global = true, default_value_t = 1_000_000)]
    cap: u128,

    /// Dump the reflection network after every scattering iteration.
    #[arg(long, global = true)]
    debug_network: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose the algebra generated by the Hermitian matrices in a file.
    Decompose { input: PathBuf },
    /// Write the generator file of a bundled example system
    /// (toy | spin-orbit | bound-pair | two-spin-total).
    Example {
        name: String,
        /// Orbital angular momentum for spin-orbit (integer, >= 1).
        #[arg(long)]
        l: Option<u32>,
        /// Lattice length for bound-pair (>= 3).
        #[arg(long)]
        d: Option<usize>,
    },
    /// Reduce a density matrix through a bipartition table.
    Reduce {
        rho: PathBuf,
        table: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Algebra)]
        mode: ModeArg,
    },
    /// Run the coarse-graining scan on the Ising chain.
    IsingScan {
        n: usize,
        g: f64,
        /// Observable family: the shared-mixing alpha scan or free
        /// per-site coefficients.
        #[arg(long, default_value = "alpha")]
        family: String,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Algebra,
    Partial,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = JobConfig {
        out_dir: cli.out,
        tol_zero: cli.tol_zero,
        tol_eig: cli.tol_eig,
        tol_prop: cli.tol_prop,
        seed: cli.seed,
        workers: cli.workers,
        cap: cli.cap,
        debug_network: cli.debug_network,
    };
    let result = match cli.command {
        Command::Decompose { input } => cmd_decompose(&input, &cfg),
        Command::Example { name, l, d } => cmd_example(&name, l, d, &cfg),
        Command::Reduce { rho, table, mode } => {
            let mode = match mode {
                ModeArg::Algebra => ReduceMode::Algebra,
                ModeArg::Partial => ReduceMode::Partial,
            };
            cmd_reduce(&rho, &table, mode, &cfg)
        }
        Command::IsingScan { n, g, family } => cmd_ising_scan(n, g, &family, &cfg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
