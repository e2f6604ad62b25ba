//! Command implementations for the `bipart` binary: ingest generator sets,
//! run decompositions and state reductions, build the bundled example
//! systems, and run the spin-chain coarse-graining scan.

pub mod formats;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use bipart_core::bpt::{
    reduce_algebra_state, reduce_partial_state, BipartitionTable, DensityMatrix,
};
use bipart_core::irrep::{irrep_decompose_traced, verify_decomposition, IrrepBasis};
use bipart_core::numerics::{ComplexOperator, Tolerance};
use bipart_core::systems;
use bipart_core::variational::{
    build_ising, columns_from_mc, compatibility_minimize, detect_sectors, gcrit,
    materialize_candidate, scan_alignments, Family, ScanConfig,
};
use bipart_core::Error as CoreError;

use formats::{MatrixFile, ReducedFile, TableFile};

#[derive(Debug)]
pub enum CliError {
    /// Unreadable or malformed input (exit code 2).
    Parse(String),
    /// Numeric failure in the pipeline (exit code 3).
    Numeric(CoreError),
    /// The decomposition failed verification (exit code 4).
    Verification(CoreError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Verification(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Parse(m) => write!(f, "parse error: {m}"),
            CliError::Numeric(e) => write!(f, "numeric failure: {e}"),
            CliError::Verification(e) => write!(f, "verification failure: {e}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::VerificationFailed { .. } => CliError::Verification(e),
            _ => CliError::Numeric(e),
        }
    }
}

/// Everything a job needs beyond its positional arguments. The seed fully
/// determines all randomized restarts and spot checks.
#[derive(Debug, Clone)]
pub struct JobConfig {
    pub out_dir: PathBuf,
    pub tol_zero: Option<f64>,
    pub tol_eig: Option<f64>,
    pub tol_prop: Option<f64>,
    pub seed: u64,
    pub workers: Option<usize>,
    pub cap: u128,
    pub debug_network: bool,
}

impl Default for JobConfig {
    fn default() -> Self {
        JobConfig {
            out_dir: PathBuf::from("."),
            tol_zero: None,
            tol_eig: None,
            tol_prop: None,
            seed: 0,
            workers: None,
            cap: 1_000_000,
            debug_network: false,
        }
    }
}

impl JobConfig {
    pub fn tolerance(&self, dim: usize) -> Tolerance {
        let mut t = Tolerance::for_dim(dim);
        if let Some(z) = self.tol_zero {
            t.eps_zero = z;
        }
        if let Some(e) = self.tol_eig {
            t.eps_eig = e;
        }
        if let Some(p) = self.tol_prop {
            t.eps_prop = p;
        }
        t
    }

    fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Parse(format!("serialization: {e}")))?;
    fs::write(path, text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}

fn load_matrices(path: &Path) -> Result<(usize, Vec<(String, ComplexOperator)>), CliError> {
    let file: MatrixFile = read_json(path)?;
    let ops = file.to_ops()?;
    if ops.is_empty() {
        return Err(CliError::Parse(format!(
            "{}: no matrices in file",
            path.display()
        )));
    }
    Ok((file.dim, ops))
}

/// Decomposes the algebra generated by the matrices in `input`, writes the
/// recovered basis as a table file, and prints the block summary and
/// verification residuals.
pub fn cmd_decompose(input: &Path, cfg: &JobConfig) -> Result<(), CliError> {
    let (dim, ops) = load_matrices(input)?;
    let tol = cfg.tolerance(dim);
    let generators: Vec<ComplexOperator> = ops.iter().map(|(_, m)| m.clone()).collect();

    let mut iteration = 0usize;
    let mut printer = |net: &bipart_core::scattering::ReflectionNetwork,
                       event: &bipart_core::scattering::ScatterEvent| {
        println!(
            "# scatter iteration {} pair ({}, {}) spectrum {:?}",
            event.iteration, event.pair.0, event.pair.1, event.spectrum
        );
        print!("{}", net.dump());
        iteration += 1;
    };
    let trace: Option<bipart_core::scattering::TraceFn> = if cfg.debug_network {
        Some(&mut printer)
    } else {
        None
    };
    let basis = irrep_decompose_traced(&generators, &tol, trace)?;

    let table = BipartitionTable::from(&basis);
    let out = cfg.out_path("basis.json");
    write_json(&out, &TableFile::from_table(&table))?;

    for b in &basis.blocks {
        println!("block: rows {} cols {}", b.rows, b.cols);
    }
    println!("null space dimension: {}", basis.h0_dim);
    println!("wrote {}", out.display());

    let report = verify_decomposition(&basis, &generators, &tol)?;
    for (name, check) in ops.iter().map(|(n, _)| n).zip(&report.per_generator) {
        println!(
            "generator {name}: off-block {:.3e}, structure {:.3e}, off-support {:.3e}",
            check.off_block, check.structure, check.off_support
        );
    }
    println!("max residual: {:.3e}", report.max_residual);
    Ok(())
}

/// Writes the generator file (and, for the two-spin example, the table file)
/// of one of the bundled example systems.
pub fn cmd_example(
    name: &str,
    l: Option<u32>,
    d: Option<usize>,
    cfg: &JobConfig,
) -> Result<(), CliError> {
    match name {
        "toy" => {
            let gens = systems::toy_generators();
            let named = vec![
                ("Z".to_string(), gens[0].clone()),
                ("X".to_string(), gens[1].clone()),
            ];
            let out = cfg.out_path("toy-generators.json");
            write_json(&out, &MatrixFile::from_ops(&named))?;
            println!("wrote {}", out.display());
        }
        "spin-orbit" => {
            let l = l.unwrap_or(1);
            if l < 1 {
                return Err(CliError::Parse("spin-orbit requires --l >= 1".into()));
            }
            let gens = systems::spin_orbit_generators(l);
            let named = vec![
                ("Jz".to_string(), gens[0].clone()),
                ("Jx".to_string(), gens[1].clone()),
            ];
            let out = cfg.out_path(&format!("spin-orbit-l{l}-generators.json"));
            write_json(&out, &MatrixFile::from_ops(&named))?;
            println!("wrote {}", out.display());
        }
        "bound-pair" => {
            let d = d.unwrap_or(3);
            if d < 3 {
                return Err(CliError::Parse("bound-pair requires --d >= 3".into()));
            }
            let gens = systems::bound_pair_generators(d);
            let named: Vec<(String, ComplexOperator)> = gens
                .into_iter()
                .enumerate()
                .map(|(i, m)| {
                    let name = if i < d {
                        format!("X{i}")
                    } else {
                        format!("P{}", i - d)
                    };
                    (name, m)
                })
                .collect();
            let out = cfg.out_path(&format!("bound-pair-d{d}-generators.json"));
            write_json(&out, &MatrixFile::from_ops(&named))?;
            println!("wrote {}", out.display());
        }
        "two-spin-total" => {
            let (ops, table) = systems::two_spin_total();
            let named = vec![
                ("Sz".to_string(), ops[0].clone()),
                ("Sx".to_string(), ops[1].clone()),
                ("Sy".to_string(), ops[2].clone()),
            ];
            let gen_out = cfg.out_path("two-spin-total-generators.json");
            write_json(&gen_out, &MatrixFile::from_ops(&named))?;
            let table_out = cfg.out_path("two-spin-total-table.json");
            write_json(&table_out, &TableFile::from_table(&table))?;
            println!("wrote {}", gen_out.display());
            println!("wrote {}", table_out.display());
        }
        other => {
            return Err(CliError::Parse(format!(
            "unknown example '{other}' (expected toy | spin-orbit | bound-pair | two-spin-total)"
        )))
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceMode {
    Algebra,
    Partial,
}

/// Reduces a density matrix through a table file, in either the
/// superselect-then-trace algebra mode (rectangular tables) or the partial
/// mode, and writes the reduced state with its labels and trace deficit.
pub fn cmd_reduce(
    rho_path: &Path,
    table_path: &Path,
    mode: ReduceMode,
    cfg: &JobConfig,
) -> Result<(), CliError> {
    let (dim, ops) = load_matrices(rho_path)?;
    let table_file: TableFile = read_json(table_path)?;
    let table = table_file.to_table()?;
    let tol = cfg.tolerance(dim);
    let rho = DensityMatrix::new(ops[0].1.clone(), &tol)?;

    let reduced = match mode {
        ReduceMode::Algebra => {
            let basis = IrrepBasis::try_from(&table)?;
            reduce_algebra_state(&rho, &basis)?
        }
        ReduceMode::Partial => reduce_partial_state(&rho, &table)?,
    };
    let out = cfg.out_path("reduced.json");
    write_json(&out, &ReducedFile::from_reduced(&reduced))?;
    println!("reduced dimension: {}", reduced.matrix.dim());
    println!("trace deficit: {:?}", reduced.trace_deficit);
    println!("wrote {}", out.display());
    Ok(())
}

/// Runs the full coarse-graining pipeline on the Ising chain: compatibility
/// minimization, column structure, sector detection, alignment scan, CSV
/// export, and the selected tables.
pub fn cmd_ising_scan(
    n_sites: usize,
    g: f64,
    family_name: &str,
    cfg: &JobConfig,
) -> Result<(), CliError> {
    if !(2..=12).contains(&n_sites) {
        return Err(CliError::Parse(
            "site count must be between 2 and 12".into(),
        ));
    }
    if g < 0.0 {
        return Err(CliError::Parse("field strength must be nonnegative".into()));
    }
    let family = match family_name {
        "alpha" => Family::default_alpha_scan(),
        "general" => Family::General {
            restarts: 8,
            seed: cfg.seed,
        },
        other => {
            return Err(CliError::Parse(format!(
                "unknown family '{other}' (expected alpha | general)"
            )))
        }
    };

    let run = || -> Result<(), CliError> {
        let chain = build_ising(n_sites, g);
        let tol = cfg.tolerance(chain.dim());
        let compat = compatibility_minimize(&chain, &family)?;
        let columns = columns_from_mc(&compat.observable, &tol)?;
        let sectors = detect_sectors(&chain, &columns, &tol);
        let scan_cfg = ScanConfig {
            cap: cfg.cap,
            fd_spot_checks: 10,
            fd_seed: cfg.seed,
        };
        let outcome = scan_alignments(&chain, &columns, &sectors, &scan_cfg)?;

        let csv = formats::scan_csv(&outcome, &columns);
        let csv_path = cfg.out_path("scan.csv");
        fs::write(&csv_path, csv)
            .map_err(|e| CliError::Parse(format!("{}: {e}", csv_path.display())))?;

        for (i, &index) in outcome.maximal_representatives.iter().enumerate() {
            let cand = materialize_candidate(&chain, &columns, &sectors, index)?;
            let path = cfg.out_path(&format!("selected-{i}.json"));
            write_json(&path, &TableFile::from_table(&cand.table))?;
        }

        println!("g_crit: {:?}", gcrit(n_sites));
        match compat.alpha {
            Some(a) if a.is_infinite() => {
                println!("selected M_c: collective spin-x (alpha = inf)")
            }
            Some(a) if a > 0.0 => println!("selected M_c: alpha = {a:?}"),
            Some(_) => println!("selected M_c: collective spin-z (alpha = 0)"),
            None => println!(
                "selected M_c: general coefficients {:?}",
                compat.observable.coefficients
            ),
        }
        println!("commutator norm: {:?}", compat.commutator_norm);
        println!("columns: {}", columns.n_columns());
        println!("sectors: {}", sectors.len());
        let mut histogram = vec![0usize; outcome.class_count];
        for s in &outcome.scores {
            histogram[s.class_id] += 1;
        }
        for (cid, count) in histogram.iter().enumerate() {
            println!("class {cid}: {count} candidates");
        }
        println!(
            "distinct maximal tables: {}",
            outcome.maximal_distinct_maps.len()
        );
        println!("wrote {}", csv_path.display());
        Ok(())
    };

    match cfg.workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| CliError::Parse(format!("worker pool: {e}")))?;
            pool.install(run)
        }
        None => run(),
    }
}
