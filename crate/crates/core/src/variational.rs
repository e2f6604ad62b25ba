//! Variational search for quasi-classical coarse-grainings of spin chains:
//! build the chain Hamiltonian, find the collective observable most
//! compatible with it, derive the column structure from the observable's
//! tensor-product eigenbasis, detect superselection sectors, enumerate
//! compact row alignments, and score each candidate by the average initial
//! entanglement growth rate of uniform row superpositions.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bpt::{reduce_operator, BipartitionTable};
use crate::dsu::UnionFind;
use crate::error::{Error, Result};
use crate::numerics::{commutator_fnorm, hermitian_eigen, ComplexOperator, Tolerance};
use crate::systems::{site_operator, spin_half};

/// A chain of spin-1/2 sites with a Frobenius-normalized Hamiltonian.
#[derive(Debug, Clone)]
pub struct SpinChain {
    pub n_sites: usize,
    pub hamiltonian: ComplexOperator,
}

impl SpinChain {
    pub fn dim(&self) -> usize {
        1 << self.n_sites
    }

    pub fn new(n_sites: usize, hamiltonian: ComplexOperator) -> Result<Self> {
        if hamiltonian.dim() != 1 << n_sites {
            return Err(Error::DimensionMismatch {
                left: hamiltonian.dim(),
                right: 1 << n_sites,
            });
        }
        let norm = hamiltonian.frobenius_norm();
        if norm == 0.0 {
            return Err(Error::InvalidInput("zero Hamiltonian".into()));
        }
        Ok(SpinChain {
            n_sites,
            hamiltonian: hamiltonian.scale(1.0 / norm),
        })
    }
}

/// Open-chain Ising Hamiltonian, built from spin-1/2 operators
/// (`s = sigma/2`) and Frobenius-normalized:
/// `H ~ -sum_mu s_z s_z - g sum_mu s_x`.
pub fn build_ising(n_sites: usize, g: f64) -> SpinChain {
    assert!(n_sites >= 2, "need at least two sites");
    assert!(g >= 0.0, "field strength must be nonnegative");
    let sz = spin_half('z');
    let sx = spin_half('x');
    let dim = 1 << n_sites;
    let mut h = ComplexOperator::zeros(dim);
    for mu in 0..n_sites - 1 {
        let zz = &site_operator(n_sites, mu, &sz) * &site_operator(n_sites, mu + 1, &sz);
        h = &h - &zz;
    }
    for mu in 0..n_sites {
        h = &h - &site_operator(n_sites, mu, &sx).scale(g);
    }
    SpinChain::new(n_sites, h).expect("nonzero Ising Hamiltonian")
}

/// Critical field strength of the compatibility transition,
/// `sqrt((N-1)/(2N))`.
pub fn gcrit(n_sites: usize) -> f64 {
    assert!(n_sites >= 2);
    ((n_sites - 1) as f64 / (2.0 * n_sites as f64)).sqrt()
}

/// A sum of single-site observables, Frobenius-normalized after assembly.
#[derive(Debug, Clone)]
pub struct CollectiveObservable {
    /// Per-site Pauli coefficients (x, y, z) of the unassembled `m_mu`.
    pub coefficients: Vec<[f64; 3]>,
    /// The per-site 2x2 operators.
    pub site_ops: Vec<ComplexOperator>,
    /// Assembled `M_c = sum_mu M_mu`, normalized to unit Frobenius norm.
    pub operator: ComplexOperator,
}

/// Assembles a collective observable from per-site Pauli coefficients.
/// Every site must carry at least one nonzero coefficient.
pub fn assemble_collective(coefficients: &[[f64; 3]]) -> Result<CollectiveObservable> {
    let n = coefficients.len();
    if n == 0 {
        return Err(Error::InvalidInput("no sites".into()));
    }
    let paulis = [
        crate::systems::pauli('x'),
        crate::systems::pauli('y'),
        crate::systems::pauli('z'),
    ];
    let mut site_ops = Vec::with_capacity(n);
    for (mu, c) in coefficients.iter().enumerate() {
        if c.iter().all(|x| x.abs() < 1e-14) {
            return Err(Error::InvalidInput(format!(
                "site {mu} has no support on any Pauli axis"
            )));
        }
        let mut m = ComplexOperator::zeros(2);
        for (a, p) in c.iter().zip(&paulis) {
            m = &m + &p.scale(*a);
        }
        site_ops.push(m);
    }
    let dim = 1 << n;
    let mut total = ComplexOperator::zeros(dim);
    for (mu, m) in site_ops.iter().enumerate() {
        total = &total + &site_operator(n, mu, m);
    }
    let norm = total.frobenius_norm();
    if norm < 1e-14 {
        return Err(Error::InvalidInput(
            "collective observable is numerically zero".into(),
        ));
    }
    Ok(CollectiveObservable {
        coefficients: coefficients.to_vec(),
        site_ops,
        operator: total.scale(1.0 / norm),
    })
}

/// The single-parameter mixing family `m_mu ~ (s_z + alpha s_x)`, shared by
/// every site and scaled so each site operator has eigenvalues +-1/2.
/// `alpha = inf` is the pure-x member.
pub fn alpha_collective(n_sites: usize, alpha: f64) -> CollectiveObservable {
    let c = if alpha.is_infinite() {
        [0.5, 0.0, 0.0]
    } else {
        let s = 1.0 / (2.0 * (1.0 + alpha * alpha).sqrt());
        [alpha * s, 0.0, s]
    };
    assemble_collective(&vec![c; n_sites]).expect("valid family member")
}

/// Candidate family for the compatibility minimization.
#[derive(Debug, Clone)]
pub enum Family {
    /// Evaluate `alpha` on an explicit grid (use `f64::INFINITY` for the
    /// pure-x member) and keep the argmin.
    AlphaScan { grid: Vec<f64> },
    /// Free per-site Pauli coefficients, minimized by simplex descent from
    /// seeded random restarts.
    General { restarts: usize, seed: u64 },
}

impl Family {
    /// `{0}` plus a log-spaced grid on `[1e-3, 1e3]` plus the pure-x member.
    pub fn default_alpha_scan() -> Family {
        let mut grid = vec![0.0];
        let points = 61;
        for i in 0..points {
            let t = i as f64 / (points - 1) as f64;
            grid.push(10f64.powf(-3.0 + 6.0 * t));
        }
        grid.push(f64::INFINITY);
        Family::AlphaScan { grid }
    }
}

#[derive(Debug, Clone)]
pub struct CompatibilityResult {
    pub observable: CollectiveObservable,
    pub commutator_norm: f64,
    /// The selected mixing parameter, when the family is the alpha scan.
    pub alpha: Option<f64>,
}

/// Finds the collective observable minimizing `||[H, M_c]||_F` within the
/// family.
pub fn compatibility_minimize(chain: &SpinChain, family: &Family) -> Result<CompatibilityResult> {
    match family {
        Family::AlphaScan { grid } => {
            if grid.is_empty() {
                return Err(Error::EmptyFamily);
            }
            let mut best: Option<(f64, f64)> = None;
            for &alpha in grid {
                let mc = alpha_collective(chain.n_sites, alpha);
                let norm = commutator_fnorm(&chain.hamiltonian, &mc.operator)?;
                if best.is_none_or(|(_, b)| norm < b) {
                    best = Some((alpha, norm));
                }
            }
            let (alpha, commutator_norm) = best.unwrap();
            Ok(CompatibilityResult {
                observable: alpha_collective(chain.n_sites, alpha),
                commutator_norm,
                alpha: Some(alpha),
            })
        }
        Family::General { restarts, seed } => {
            if *restarts == 0 {
                return Err(Error::EmptyFamily);
            }
            let n = chain.n_sites;
            let objective = |x: &[f64]| -> f64 {
                let coeffs: Vec<[f64; 3]> = x.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
                if coeffs.iter().any(|c| c.iter().all(|v| v.abs() < 1e-8)) {
                    return 1e6;
                }
                match assemble_collective(&coeffs) {
                    Ok(mc) => {
                        commutator_fnorm(&chain.hamiltonian, &mc.operator).unwrap_or(f64::INFINITY)
                    }
                    Err(_) => 1e6,
                }
            };
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut best: Option<(Vec<f64>, f64)> = None;
            for _ in 0..*restarts {
                let x0: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let (x, f) = nelder_mead(&objective, &x0, 0.5, 4000);
                if best.as_ref().is_none_or(|(_, b)| f < *b) {
                    best = Some((x, f));
                }
            }
            let (x, commutator_norm) = best.unwrap();
            let coeffs: Vec<[f64; 3]> = x.chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
            Ok(CompatibilityResult {
                observable: assemble_collective(&coeffs)?,
                commutator_norm,
                alpha: None,
            })
        }
    }
}

/// Derivative-free simplex descent (reflection, expansion, contraction,
/// shrink), run to simplex collapse or the iteration limit.
fn nelder_mead(
    f: &dyn Fn(&[f64]) -> f64,
    x0: &[f64],
    scale: f64,
    max_iter: usize,
) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += scale;
        let fx = f(&x);
        simplex.push((x, fx));
    }
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if simplex[n].1 - simplex[0].1 < 1e-13 {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let reflect: Vec<f64> = (0..n)
            .map(|j| centroid[j] + alpha * (centroid[j] - worst.0[j]))
            .collect();
        let fr = f(&reflect);
        if fr < simplex[0].1 {
            let expand: Vec<f64> = (0..n)
                .map(|j| centroid[j] + gamma * (reflect[j] - centroid[j]))
                .collect();
            let fe = f(&expand);
            simplex[n] = if fe < fr { (expand, fe) } else { (reflect, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflect, fr);
        } else {
            let contract: Vec<f64> = (0..n)
                .map(|j| centroid[j] + rho * (worst.0[j] - centroid[j]))
                .collect();
            let fc = f(&contract);
            if fc < worst.1 {
                simplex[n] = (contract, fc);
            } else {
                let best = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    for (x, b) in s.0.iter_mut().zip(&best) {
                        *x = b + sigma * (*x - b);
                    }
                    s.1 = f(&s.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}

/// Column structure derived from a product-diagonalizable collective
/// observable: product basis states grouped by eigenvalue.
///
/// State codes are integers whose binary digits, most significant first,
/// give the per-site bit (1 = the larger per-site eigenvalue), so a code
/// prints exactly like the conventional state string.
#[derive(Debug, Clone)]
pub struct ColumnStructure {
    pub n_sites: usize,
    /// Per-site eigenvalues, ascending.
    pub site_eigenvalues: Vec<[f64; 2]>,
    /// Per-site eigenvector matrices; column b holds the bit-b eigenvector.
    pub site_bases: Vec<DMatrix<C64>>,
    /// Column labels (distinct collective eigenvalues), ascending.
    pub labels: Vec<f64>,
    /// Per column: member state codes, ascending.
    pub columns: Vec<Vec<usize>>,
}

impl ColumnStructure {
    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn heights(&self) -> Vec<usize> {
        self.columns.iter().map(|c| c.len()).collect()
    }

    /// Change of basis from product eigenstates to the computational basis;
    /// column `code` is the product state with that code.
    pub fn basis_unitary(&self) -> DMatrix<C64> {
        let mut u = DMatrix::<C64>::identity(1, 1);
        for b in &self.site_bases {
            u = u.kronecker(b);
        }
        u
    }

    pub fn state_string(&self, code: usize) -> String {
        (0..self.n_sites)
            .map(|mu| {
                if (code >> (self.n_sites - 1 - mu)) & 1 == 1 {
                    '1'
                } else {
                    '0'
                }
            })
            .collect()
    }

    fn state_label(&self, code: usize) -> f64 {
        (0..self.n_sites)
            .map(|mu| self.site_eigenvalues[mu][(code >> (self.n_sites - 1 - mu)) & 1])
            .sum()
    }
}

/// Groups the product basis states of `M_c` by eigenvalue (within `eps_eig`).
/// Requires each per-site operator to be Hermitian, hence diagonalizable in
/// a product basis.
pub fn columns_from_mc(mc: &CollectiveObservable, tol: &Tolerance) -> Result<ColumnStructure> {
    let n = mc.site_ops.len();
    let mut site_eigenvalues = Vec::with_capacity(n);
    let mut site_bases = Vec::with_capacity(n);
    for (mu, m) in mc.site_ops.iter().enumerate() {
        if m.hermitian_residual() > tol.eps_zero * 2.0 {
            return Err(Error::NotProductDiagonalizable(format!(
                "site {mu} operator is not Hermitian"
            )));
        }
        let (vals, mut vecs) = hermitian_eigen(&m.symmetrized())?;
        for v in vecs.iter_mut() {
            crate::numerics::phase_fix(v, tol.eps_zero);
        }
        let mut basis = DMatrix::<C64>::zeros(2, 2);
        basis.column_mut(0).copy_from(&vecs[0]);
        basis.column_mut(1).copy_from(&vecs[1]);
        site_eigenvalues.push([vals[0], vals[1]]);
        site_bases.push(basis);
    }

    let mut structure = ColumnStructure {
        n_sites: n,
        site_eigenvalues,
        site_bases,
        labels: Vec::new(),
        columns: Vec::new(),
    };
    let dim = 1usize << n;
    let mut labeled: Vec<(f64, usize)> = (0..dim)
        .map(|code| (structure.state_label(code), code))
        .collect();
    labeled.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut last = f64::NEG_INFINITY;
    for (label, code) in labeled {
        if label - last > tol.eps_eig {
            structure.columns.push(Vec::new());
        }
        structure.columns.last_mut().unwrap().push(code);
        last = label;
    }
    for col in structure.columns.iter_mut() {
        col.sort();
    }
    structure.labels = structure
        .columns
        .iter()
        .map(|col| col.iter().map(|&c| structure.state_label(c)).sum::<f64>() / col.len() as f64)
        .collect();
    Ok(structure)
}

/// The Hamiltonian expressed in the product eigenbasis of the collective
/// observable.
pub fn hamiltonian_in_mc_basis(chain: &SpinChain, columns: &ColumnStructure) -> DMatrix<C64> {
    let u = columns.basis_unitary();
    u.adjoint() * chain.hamiltonian.matrix() * u
}

/// Superselection sectors: unions of columns not connected by any Hamiltonian
/// matrix element in the collective eigenbasis. Returns the partition of
/// column indices; sectors and their columns follow the label order.
pub fn detect_sectors(
    chain: &SpinChain,
    columns: &ColumnStructure,
    tol: &Tolerance,
) -> Vec<Vec<usize>> {
    let h = hamiltonian_in_mc_basis(chain, columns);
    let nc = columns.n_columns();
    let mut uf = UnionFind::new(nc);
    for k in 0..nc {
        for l in k + 1..nc {
            let connected = columns.columns[k].iter().any(|&s| {
                columns.columns[l]
                    .iter()
                    .any(|&t| h[(s, t)].norm() > tol.eps_zero)
            });
            if connected {
                uf.union(k, l);
            }
        }
    }
    uf.components()
}

/// A concrete row alignment: the column partition from the collective
/// observable, a sector assignment, one permutation per column, the derived
/// compact table, and the quasi-classicality score.
#[derive(Debug, Clone)]
pub struct CoarseGrainingCandidate {
    pub index: u64,
    /// Per column (global order: sectors in order, columns by label):
    /// `perms[k][i]` is the position, within the column's sorted state list,
    /// of the state sitting at row `i`.
    pub perms: Vec<Vec<usize>>,
    pub sectors: Vec<Vec<usize>>,
    pub table: BipartitionTable,
    pub q: f64,
}

fn factorial(n: usize) -> u128 {
    (1..=n as u128).product()
}

/// Lehmer-code unranking of the permutations of `0..n`.
fn unrank_permutation(mut rank: u128, n: usize) -> Vec<usize> {
    let mut items: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(n);
    for i in (0..n).rev() {
        let f = factorial(i);
        let d = (rank / f) as usize;
        rank %= f;
        out.push(items.remove(d));
    }
    out
}

/// Global column order of a scan: sectors in order, columns within each
/// sector ordered by label (the order produced by `detect_sectors`).
fn global_columns(sectors: &[Vec<usize>]) -> Vec<usize> {
    sectors.iter().flatten().copied().collect()
}

/// Per-column permutations of the candidate at a mixed-radix index.
pub fn candidate_perms(
    columns: &ColumnStructure,
    sectors: &[Vec<usize>],
    index: u64,
) -> Vec<Vec<usize>> {
    let order = global_columns(sectors);
    let radices: Vec<u128> = order
        .iter()
        .map(|&k| factorial(columns.columns[k].len()))
        .collect();
    let mut digits = vec![0u128; order.len()];
    let mut rest = index as u128;
    for i in (0..order.len()).rev() {
        digits[i] = rest % radices[i];
        rest /= radices[i];
    }
    order
        .iter()
        .zip(digits)
        .map(|(&k, d)| unrank_permutation(d, columns.columns[k].len()))
        .collect()
}

/// Encodes per-column permutations for CSV export: row positions joined by
/// `-` within a column, columns joined by `|`.
pub fn encode_perms(perms: &[Vec<usize>]) -> String {
    perms
        .iter()
        .map(|p| {
            p.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join("-")
        })
        .collect::<Vec<_>>()
        .join("|")
}

/// State codes per global column slot: `cells[slot][row]`.
fn slot_cells(
    columns: &ColumnStructure,
    sectors: &[Vec<usize>],
    perms: &[Vec<usize>],
) -> Vec<Vec<usize>> {
    let order = global_columns(sectors);
    order
        .iter()
        .zip(perms)
        .map(|(&k, perm)| perm.iter().map(|&pos| columns.columns[k][pos]).collect())
        .collect()
}

/// Canonical form of a reduction map: per block, the multiset of rows, each
/// row the sorted list of its state codes; rows sorted within each block.
pub type CanonicalMap = Vec<Vec<Vec<usize>>>;

/// Two candidates induce the same state-reduction map exactly when their
/// canonical maps coincide (the map depends only on which states share a
/// row, not on row labels).
pub fn canonical_map(
    columns: &ColumnStructure,
    sectors: &[Vec<usize>],
    perms: &[Vec<usize>],
) -> CanonicalMap {
    let cells = slot_cells(columns, sectors, perms);
    let mut out = Vec::with_capacity(sectors.len());
    let mut base = 0usize;
    for sector in sectors {
        let n_rows = sector
            .iter()
            .map(|&k| columns.columns[k].len())
            .max()
            .unwrap_or(0);
        let mut rows: Vec<Vec<usize>> = Vec::with_capacity(n_rows);
        for i in 0..n_rows {
            let mut row: Vec<usize> = sector
                .iter()
                .enumerate()
                .filter(|(j, _)| cells[base + j].len() > i)
                .map(|(j, _)| cells[base + j][i])
                .collect();
            row.sort();
            rows.push(row);
        }
        rows.sort();
        out.push(rows);
        base += sector.len();
    }
    out
}

/// Materializes a candidate: builds its compact per-sector table (cells are
/// the product eigenstates in the computational basis) and scores it.
pub fn materialize_candidate(
    chain: &SpinChain,
    columns: &ColumnStructure,
    sectors: &[Vec<usize>],
    index: u64,
) -> Result<CoarseGrainingCandidate> {
    let perms = candidate_perms(columns, sectors, index);
    let u = columns.basis_unitary();
    let cells = slot_cells(columns, sectors, &perms);
    let order = global_columns(sectors);
    let mut blocks = Vec::with_capacity(sectors.len());
    let mut slot = 0usize;
    for sector in sectors {
        let mut cols = Vec::with_capacity(sector.len());
        for &k in sector {
            let col_cells: Vec<DVector<C64>> = cells[slot]
                .iter()
                .map(|&code| u.column(code).into_owned())
                .collect();
            cols.push((col_cells, format!("m={}", columns.labels[k])));
            slot += 1;
        }
        blocks.push(cols);
    }
    debug_assert_eq!(slot, order.len());
    let table = BipartitionTable::from_columns(chain.dim(), blocks)?;
    let mut cand = CoarseGrainingCandidate {
        index,
        perms,
        sectors: sectors.to_vec(),
        table,
        q: 0.0,
    };
    cand.q = score_qbpt(chain, &cand)?;
    Ok(cand)
}

fn row_sdd(
    chain: &SpinChain,
    table: &BipartitionTable,
    block: &crate::bpt::TableBlock,
    row: usize,
) -> Result<f64> {
    let h = &chain.hamiltonian;
    let members = block.row_members(row);
    let w = members.len() as f64;
    let mut phi = DVector::<C64>::zeros(table.dim());
    for &k in &members {
        phi += &block.columns()[k].cells[row];
    }
    phi /= C64::new(w.sqrt(), 0.0);
    let rho = ComplexOperator::outer(&phi, &phi);
    let comm = &(h * &rho) - &(&rho * h);
    let rho_dot = comm.scale_complex(C64::new(0.0, -1.0));
    let comm2 = &(h * &comm) - &(&comm * h);
    // rho''(0) = -[H, [H, rho]]
    let rho_ddot = comm2.scale(-1.0);
    let rho_c = reduce_operator(&rho, table)?;
    let rho_dot_c = reduce_operator(&rho_dot, table)?;
    let rho_ddot_c = reduce_operator(&rho_ddot, table)?;
    let term = (&(&rho_c * &rho_ddot_c) + &(&rho_dot_c * &rho_dot_c)).trace();
    Ok(-2.0 * term.re)
}

/// Average initial entanglement growth rate over the rows of a candidate
/// table: each row's uniform superposition is scored by
/// `S''_lin(0) = -2 tr(rho_c rho''_c + rho'_c^2)` with
/// `rho'_c = tr_(R)(-i[H, rho])` and `rho''_c = tr_(R)(-[H, [H, rho]])`.
pub fn score_qbpt(chain: &SpinChain, candidate: &CoarseGrainingCandidate) -> Result<f64> {
    let table = &candidate.table;
    let mut total = 0.0;
    let mut n_rows = 0usize;
    for block in table.blocks() {
        for i in 0..block.n_rows() {
            total += row_sdd(chain, table, block, i)?;
            n_rows += 1;
        }
    }
    Ok(total / n_rows as f64)
}

/// Cross-validates the analytic `S''_lin(0)` of every row against a central
/// finite difference of `S_lin(t) = 1 - tr(rho_c(t)^2)` with step `1e-4`.
/// Errors when a row deviates beyond `1e-5` relative plus the roundoff floor
/// of the difference quotient; returns the worst fraction of that budget any
/// row consumed.
pub fn validate_qbpt_fd(chain: &SpinChain, candidate: &CoarseGrainingCandidate) -> Result<f64> {
    let step = 1e-4;
    let table = &candidate.table;
    let dim = table.dim();
    let (vals, vecs) = hermitian_eigen(&chain.hamiltonian)?;
    let mut wmat = DMatrix::<C64>::zeros(dim, dim);
    for (j, v) in vecs.iter().enumerate() {
        wmat.column_mut(j).copy_from(v);
    }
    let evolve = |phi: &DVector<C64>, t: f64| -> DVector<C64> {
        let y = wmat.adjoint() * phi;
        let y = DVector::<C64>::from_iterator(
            dim,
            y.iter()
                .zip(&vals)
                .map(|(c, l)| c * C64::new(0.0, -l * t).exp()),
        );
        &wmat * y
    };
    let mut worst: f64 = 0.0;
    for block in table.blocks() {
        for i in 0..block.n_rows() {
            let members = block.row_members(i);
            let w = members.len() as f64;
            let mut phi = DVector::<C64>::zeros(dim);
            for &k in &members {
                phi += &block.columns()[k].cells[i];
            }
            phi /= C64::new(w.sqrt(), 0.0);
            let s_lin = |t: f64| -> Result<f64> {
                let u = evolve(&phi, t);
                let rho_c = reduce_operator(&ComplexOperator::outer(&u, &u), table)?;
                Ok(1.0 - (&rho_c * &rho_c).trace().re)
            };
            let fd = (s_lin(step)? - 2.0 * s_lin(0.0)? + s_lin(-step)?) / (step * step);
            let analytic = row_sdd(chain, table, block, i)?;
            let dev = (analytic - fd).abs();
            // the absolute floor covers finite-difference cancellation noise,
            // which scales like machine epsilon / step^2
            let floor = 1e4 * f64::EPSILON / (step * step);
            let budget = 1e-5 * analytic.abs().max(fd.abs()) + floor;
            if dev > budget {
                return Err(Error::NonConvergence(format!(
                    "analytic S''(0) = {analytic:.9e} disagrees with finite difference {fd:.9e}"
                )));
            }
            worst = worst.max(dev / budget);
        }
    }
    Ok(worst)
}

/// One scored candidate in a scan.
#[derive(Debug, Clone)]
pub struct CandidateScore {
    pub index: u64,
    pub q: f64,
    pub class_id: usize,
    pub map_id: usize,
}

#[derive(Debug, Clone)]
pub struct ScanOutcome {
    pub sectors: Vec<Vec<usize>>,
    /// All candidates, sorted by descending score then ascending index.
    pub scores: Vec<CandidateScore>,
    /// Number of distinct score classes (gap threshold 1e-9).
    pub class_count: usize,
    /// Candidate count in the maximal (highest-Q) class.
    pub maximal_class_size: usize,
    /// Distinct reduction maps in the maximal class, canonicalized, in
    /// first-occurrence order.
    pub maximal_distinct_maps: Vec<CanonicalMap>,
    /// A representative candidate index per maximal distinct map.
    pub maximal_representatives: Vec<u64>,
    pub total: u64,
    /// Count of distinct reduction maps over the whole scan.
    pub distinct_map_count: usize,
}

#[derive(Debug, Clone)]
pub struct ScanConfig {
    /// Upper bound on the permutation count.
    pub cap: u128,
    /// Number of seeded random candidates whose analytic score is checked
    /// against the finite-difference oracle and the table-based scorer.
    pub fd_spot_checks: usize,
    pub fd_seed: u64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            cap: 1_000_000,
            fd_spot_checks: 10,
            fd_seed: 7,
        }
    }
}

/// Fast per-candidate scoring frame: everything is expressed in the product
/// eigenbasis of the collective observable, where table cells are elementary
/// vectors and the reduction map is pure indexing. Agreement with the
/// table-based [`score_qbpt`] is enforced by the scan's spot checks.
struct ScanFrame {
    h: DMatrix<C64>,
    /// Per block: per row, the participating global column slots.
    layout: Vec<Vec<Vec<usize>>>,
    n_cols: usize,
    block_of_slot: Vec<usize>,
}

impl ScanFrame {
    fn new(chain: &SpinChain, columns: &ColumnStructure, sectors: &[Vec<usize>]) -> Self {
        let h = hamiltonian_in_mc_basis(chain, columns);
        let mut block_of_slot = Vec::new();
        for (b, sector) in sectors.iter().enumerate() {
            block_of_slot.extend(std::iter::repeat_n(b, sector.len()));
        }
        let mut layout = Vec::new();
        let mut base = 0usize;
        for sector in sectors {
            let n_rows = sector
                .iter()
                .map(|&k| columns.columns[k].len())
                .max()
                .unwrap();
            let rows: Vec<Vec<usize>> = (0..n_rows)
                .map(|i| {
                    sector
                        .iter()
                        .enumerate()
                        .filter(|(_, &k)| columns.columns[k].len() > i)
                        .map(|(j, _)| base + j)
                        .collect()
                })
                .collect();
            layout.push(rows);
            base += sector.len();
        }
        ScanFrame {
            h,
            layout,
            n_cols: block_of_slot.len(),
            block_of_slot,
        }
    }

    /// `R(x y^H)[l][k] = sum_rows x[s(row,l)] conj(y[s(row,k)])`, block-local.
    fn reduce_pair(
        &self,
        cells: &[Vec<usize>],
        x: &DVector<C64>,
        y: &DVector<C64>,
    ) -> DMatrix<C64> {
        let n = self.n_cols;
        let mut out = DMatrix::<C64>::zeros(n, n);
        for l in 0..n {
            for k in 0..n {
                if self.block_of_slot[l] != self.block_of_slot[k] {
                    continue;
                }
                let depth = cells[l].len().min(cells[k].len());
                let mut acc = C64::new(0.0, 0.0);
                for i in 0..depth {
                    acc += x[cells[l][i]] * y[cells[k][i]].conj();
                }
                out[(l, k)] = acc;
            }
        }
        out
    }

    /// Q of the candidate whose state codes per (slot, row) are `cells`.
    fn score(&self, cells: &[Vec<usize>]) -> f64 {
        let dim = self.h.nrows();
        let n = self.n_cols;
        let mut total = 0.0;
        let mut n_rows = 0usize;
        for rows in &self.layout {
            for (row_idx, slots) in rows.iter().enumerate() {
                let w = slots.len() as f64;
                let mut phi = DVector::<C64>::zeros(dim);
                for &s in slots {
                    phi[cells[s][row_idx]] += C64::new(1.0 / w.sqrt(), 0.0);
                }
                let v = &self.h * &phi;
                let hv = &self.h * &v;
                let r_phiphi = self.reduce_pair(cells, &phi, &phi);
                let r_vphi = self.reduce_pair(cells, &v, &phi);
                let r_phiv = self.reduce_pair(cells, &phi, &v);
                let r_vv = self.reduce_pair(cells, &v, &v);
                let r_wphi = self.reduce_pair(cells, &hv, &phi);
                let r_phiw = self.reduce_pair(cells, &phi, &hv);
                // rho'_c = -i (R(v phi^H) - R(phi v^H))
                // rho''_c = -(R(w phi^H) + R(phi w^H) - 2 R(v v^H))
                let mut term = C64::new(0.0, 0.0);
                let mi = C64::new(0.0, -1.0);
                for a in 0..n {
                    for b in 0..n {
                        let rho_c_ab = r_phiphi[(a, b)];
                        let rho_dd_ba = -(r_wphi[(b, a)] + r_phiw[(b, a)] - r_vv[(b, a)] * 2.0);
                        term += rho_c_ab * rho_dd_ba;
                        let rd_ab = mi * (r_vphi[(a, b)] - r_phiv[(a, b)]);
                        let rd_ba = mi * (r_vphi[(b, a)] - r_phiv[(b, a)]);
                        term += rd_ab * rd_ba;
                    }
                }
                total += -2.0 * term.re;
                n_rows += 1;
            }
        }
        total / n_rows as f64
    }
}

/// Enumerates all compact row alignments, scores each by `Q`, groups them
/// into score classes (gap 1e-9) and distinct reduction maps, and reports
/// the maximal class. Scoring is distributed over the thread pool and merged
/// by candidate index, so results do not depend on the worker count.
pub fn scan_alignments(
    chain: &SpinChain,
    columns: &ColumnStructure,
    sectors: &[Vec<usize>],
    cfg: &ScanConfig,
) -> Result<ScanOutcome> {
    let order = global_columns(sectors);
    let total_u128: u128 = order
        .iter()
        .map(|&k| factorial(columns.columns[k].len()))
        .product();
    if total_u128 > cfg.cap {
        return Err(Error::EnumerationTooLarge {
            count: total_u128,
            cap: cfg.cap,
        });
    }
    let total = total_u128 as u64;
    let frame = ScanFrame::new(chain, columns, sectors);

    let qs: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|index| {
            let perms = candidate_perms(columns, sectors, index);
            frame.score(&slot_cells(columns, sectors, &perms))
        })
        .collect();

    // distinct-map ids, assigned in ascending candidate order
    let mut map_ids = vec![0usize; total as usize];
    let mut map_table: HashMap<CanonicalMap, usize> = HashMap::new();
    for index in 0..total {
        let perms = candidate_perms(columns, sectors, index);
        let cm = canonical_map(columns, sectors, &perms);
        let next = map_table.len();
        map_ids[index as usize] = *map_table.entry(cm).or_insert(next);
    }

    let mut scored: Vec<(u64, f64)> = (0..total).map(|i| (i, qs[i as usize])).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut scores = Vec::with_capacity(total as usize);
    let mut class_id = 0usize;
    let mut prev_q = f64::INFINITY;
    for (rank, &(index, q)) in scored.iter().enumerate() {
        if rank > 0 && prev_q - q > 1e-9 {
            class_id += 1;
        }
        prev_q = q;
        scores.push(CandidateScore {
            index,
            q,
            class_id,
            map_id: map_ids[index as usize],
        });
    }
    let class_count = class_id + 1;
    let maximal_class_size = scores.iter().filter(|s| s.class_id == 0).count();

    let mut maximal_distinct_maps = Vec::new();
    let mut maximal_representatives = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for s in scores.iter().filter(|s| s.class_id == 0) {
        if seen.insert(s.map_id) {
            let perms = candidate_perms(columns, sectors, s.index);
            maximal_distinct_maps.push(canonical_map(columns, sectors, &perms));
            maximal_representatives.push(s.index);
        }
    }

    // seeded spot checks: finite differences and the table-based scorer
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.fd_seed);
    for _ in 0..cfg.fd_spot_checks.min(total as usize) {
        let index = rng.gen_range(0..total);
        let cand = materialize_candidate(chain, columns, sectors, index)?;
        validate_qbpt_fd(chain, &cand)?;
        let fast = qs[index as usize];
        if (fast - cand.q).abs() > 1e-9 * cand.q.abs().max(1.0) {
            return Err(Error::NonConvergence(format!(
                "fast scan score {fast:.12e} disagrees with table score {:.12e}",
                cand.q
            )));
        }
    }

    Ok(ScanOutcome {
        sectors: sectors.to_vec(),
        scores,
        class_count,
        maximal_class_size,
        maximal_distinct_maps,
        maximal_representatives,
        total,
        distinct_map_count: map_table.len(),
    })
}
