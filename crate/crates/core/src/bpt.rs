//! Bipartition tables as first-class values: rectangular (generalized) and
//! compact non-rectangular (partial) tables, their bipartition operators,
//! the commutant transpose, and the two state-reduction maps.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::irrep::IrrepBasis;
use crate::numerics::{hermitian_eigen, ComplexOperator, Tolerance};

/// One column of a table block: its cells stacked from row 1, plus a label
/// carried through to reduced states.
#[derive(Debug, Clone)]
pub struct TableColumn {
    pub cells: Vec<DVector<C64>>,
    pub label: String,
}

/// One block of a table. Compactness is structural: cells are stored from
/// row 1 without gaps, and the row count is the tallest column.
#[derive(Debug, Clone)]
pub struct TableBlock {
    columns: Vec<TableColumn>,
}

impl TableBlock {
    pub fn columns(&self) -> &[TableColumn] {
        &self.columns
    }

    pub fn heights(&self) -> Vec<usize> {
        self.columns.iter().map(|c| c.cells.len()).collect()
    }

    pub fn n_rows(&self) -> usize {
        self.columns
            .iter()
            .map(|c| c.cells.len())
            .max()
            .unwrap_or(0)
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn is_rectangular(&self) -> bool {
        let h = self.n_rows();
        self.columns.iter().all(|c| c.cells.len() == h)
    }

    /// Columns present at a given row index.
    pub fn row_members(&self, row: usize) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&k| self.columns[k].cells.len() > row)
            .collect()
    }
}

/// Block-structured grid of orthonormal basis vectors.
#[derive(Debug, Clone)]
pub struct BipartitionTable {
    dim: usize,
    blocks: Vec<TableBlock>,
}

impl BipartitionTable {
    /// Builds a table from per-block column lists (cells stacked from row 1).
    pub fn from_columns(dim: usize, blocks: Vec<Vec<(Vec<DVector<C64>>, String)>>) -> Result<Self> {
        let blocks: Vec<TableBlock> = blocks
            .into_iter()
            .map(|cols| TableBlock {
                columns: cols
                    .into_iter()
                    .map(|(cells, label)| TableColumn { cells, label })
                    .collect(),
            })
            .collect();
        let t = BipartitionTable { dim, blocks };
        t.validate(&Tolerance::for_dim(dim))?;
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[TableBlock] {
        &self.blocks
    }

    pub fn total_columns(&self) -> usize {
        self.blocks.iter().map(|b| b.n_cols()).sum()
    }

    pub fn total_cells(&self) -> usize {
        self.blocks
            .iter()
            .flat_map(|b| b.columns.iter())
            .map(|c| c.cells.len())
            .sum()
    }

    /// All blocks rectangular (a generalized bipartition rather than a
    /// partial one).
    pub fn is_rectangular(&self) -> bool {
        self.blocks.iter().all(|b| b.is_rectangular())
    }

    /// Global labels, one per column: (block index, column label).
    pub fn column_labels(&self) -> Vec<(usize, String)> {
        let mut out = Vec::new();
        for (q, b) in self.blocks.iter().enumerate() {
            for c in &b.columns {
                out.push((q, c.label.clone()));
            }
        }
        out
    }

    pub fn validate(&self, tol: &Tolerance) -> Result<()> {
        let mut cells: Vec<&DVector<C64>> = Vec::new();
        for b in &self.blocks {
            if b.columns.is_empty() {
                return Err(Error::NonCompact("block without columns".into()));
            }
            for c in &b.columns {
                if c.cells.is_empty() {
                    return Err(Error::NonCompact("column without cells".into()));
                }
                for v in &c.cells {
                    if v.len() != self.dim {
                        return Err(Error::DimensionMismatch {
                            left: v.len(),
                            right: self.dim,
                        });
                    }
                    cells.push(v);
                }
            }
        }
        if cells.len() > self.dim {
            return Err(Error::InvalidInput(format!(
                "table holds {} cells on dimension {}",
                cells.len(),
                self.dim
            )));
        }
        let lim = 10.0 * tol.eps_zero * self.dim as f64;
        for (i, a) in cells.iter().enumerate() {
            for (j, b) in cells.iter().enumerate().skip(i) {
                let want = if i == j { 1.0 } else { 0.0 };
                if (a.dotc(b).norm() - want).abs() > lim {
                    return Err(Error::InvalidInput(format!(
                        "table cells {i} and {j} are not orthonormal"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Rows become columns; defined for rectangular tables only, where the
    /// transposed table's operators span the commutant.
    pub fn transpose(&self) -> Result<BipartitionTable> {
        if !self.is_rectangular() {
            return Err(Error::NotRectangular);
        }
        let blocks = self
            .blocks
            .iter()
            .map(|b| TableBlock {
                columns: (0..b.n_rows())
                    .map(|i| TableColumn {
                        cells: b.columns.iter().map(|c| c.cells[i].clone()).collect(),
                        label: format!("r{i}"),
                    })
                    .collect(),
            })
            .collect();
        Ok(BipartitionTable {
            dim: self.dim,
            blocks,
        })
    }
}

impl From<&IrrepBasis> for BipartitionTable {
    fn from(basis: &IrrepBasis) -> Self {
        let blocks = basis
            .blocks
            .iter()
            .map(|b| TableBlock {
                columns: (0..b.cols)
                    .map(|k| TableColumn {
                        cells: (0..b.rows).map(|i| b.grid[i][k].clone()).collect(),
                        label: format!("k{k}"),
                    })
                    .collect(),
            })
            .collect();
        BipartitionTable {
            dim: basis.dim,
            blocks,
        }
    }
}

impl TryFrom<&BipartitionTable> for IrrepBasis {
    type Error = Error;

    /// Rectangular tables round-trip into block bases (used when a serialized
    /// decomposition is loaded back for algebra-state reduction).
    fn try_from(t: &BipartitionTable) -> Result<IrrepBasis> {
        if !t.is_rectangular() {
            return Err(Error::NotRectangular);
        }
        let blocks = t
            .blocks
            .iter()
            .enumerate()
            .map(|(q, b)| crate::irrep::IrrepBlock {
                rows: b.n_rows(),
                cols: b.n_cols(),
                grid: (0..b.n_rows())
                    .map(|i| b.columns.iter().map(|c| c.cells[i].clone()).collect())
                    .collect(),
                root: q as u32,
            })
            .collect();
        let basis = IrrepBasis {
            dim: t.dim,
            blocks,
            h0_dim: 0,
        };
        let support = basis.support_dim();
        Ok(IrrepBasis {
            h0_dim: t.dim - support,
            ..basis
        })
    }
}

/// Bipartition operator `S^q_{kl}`: the partial isometry mapping column `l`
/// to column `k` of block `q` row by row.
#[derive(Debug, Clone)]
pub struct Bpo {
    pub block: usize,
    pub k: usize,
    pub l: usize,
    pub operator: ComplexOperator,
}

/// All bipartition operators of a table, including the column projections
/// `S_kk`.
pub fn bpos(table: &BipartitionTable) -> Vec<Bpo> {
    let mut out = Vec::new();
    for (q, b) in table.blocks().iter().enumerate() {
        for k in 0..b.n_cols() {
            for l in 0..b.n_cols() {
                let depth = b.columns[k].cells.len().min(b.columns[l].cells.len());
                let mut m = DMatrix::<C64>::zeros(table.dim(), table.dim());
                for i in 0..depth {
                    m += &b.columns[k].cells[i] * b.columns[l].cells[i].adjoint();
                }
                out.push(Bpo {
                    block: q,
                    k,
                    l,
                    operator: ComplexOperator::new(m).expect("square"),
                });
            }
        }
    }
    out
}

/// Least-squares residual of expressing `m` in the span of the table's
/// bipartition operators.
pub fn algebra_span_residual(table: &BipartitionTable, m: &ComplexOperator) -> f64 {
    let ops = bpos(table);
    let d2 = table.dim() * table.dim();
    let mut a = DMatrix::<C64>::zeros(d2, ops.len());
    for (j, op) in ops.iter().enumerate() {
        for (i, v) in op.operator.matrix().iter().enumerate() {
            a[(i, j)] = *v;
        }
    }
    let mut rhs = DVector::<C64>::zeros(d2);
    for (i, v) in m.matrix().iter().enumerate() {
        rhs[i] = *v;
    }
    let svd = a.clone().svd(true, true);
    match svd.solve(&rhs, 1e-12) {
        Ok(x) => (a * x - rhs).norm(),
        Err(_) => f64::INFINITY,
    }
}

/// Density matrix: Hermitian, positive semidefinite, unit trace.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    operator: ComplexOperator,
}

impl DensityMatrix {
    pub fn new(operator: ComplexOperator, tol: &Tolerance) -> Result<Self> {
        let dim = operator.dim();
        let herm = operator.hermitian_residual();
        if herm > tol.eps_zero * dim as f64 {
            return Err(Error::NotHermitian {
                residual: herm,
                limit: tol.eps_zero * dim as f64,
            });
        }
        let (vals, _) = hermitian_eigen(&operator.symmetrized())?;
        if vals.first().copied().unwrap_or(0.0) < -tol.eps_zero {
            return Err(Error::InvalidInput(format!(
                "density matrix has negative eigenvalue {:.3e}",
                vals[0]
            )));
        }
        let tr = operator.trace().re;
        if (tr - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "density matrix trace {tr:.12} differs from 1"
            )));
        }
        Ok(DensityMatrix { operator })
    }

    /// From a normalized state vector.
    pub fn pure(psi: &DVector<C64>) -> Result<Self> {
        let n = psi.norm();
        if (n - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput("state vector is not normalized".into()));
        }
        Ok(DensityMatrix {
            operator: ComplexOperator::outer(psi, psi),
        })
    }

    pub fn operator(&self) -> &ComplexOperator {
        &self.operator
    }

    pub fn dim(&self) -> usize {
        self.operator.dim()
    }
}

/// A reduced density matrix together with the sector/column labels of the
/// space it lives on and the trace lost to the null space or to projected-out
/// coherences (never silently renormalized away).
#[derive(Debug, Clone)]
pub struct ReducedState {
    pub matrix: ComplexOperator,
    pub labels: Vec<(usize, String)>,
    pub trace_deficit: f64,
}

/// Matrix element `sum_i <e_{i,l}| rho |e_{i,k}>` over the rows shared by two
/// columns.
fn column_pair_element(rho: &ComplexOperator, col_k: &TableColumn, col_l: &TableColumn) -> C64 {
    let depth = col_k.cells.len().min(col_l.cells.len());
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..depth {
        let rk = rho.apply(&col_k.cells[i]);
        acc += col_l.cells[i].dotc(&rk);
    }
    acc
}

/// The linear state-reduction map applied to an arbitrary operator (used for
/// derivatives of density matrices, which are not states themselves).
pub fn reduce_operator(op: &ComplexOperator, table: &BipartitionTable) -> Result<ComplexOperator> {
    if op.dim() != table.dim() {
        return Err(Error::DimensionMismatch {
            left: op.dim(),
            right: table.dim(),
        });
    }
    Ok(reduce_over_columns(op, table).matrix)
}

fn reduce_over_columns(rho: &ComplexOperator, table: &BipartitionTable) -> ReducedState {
    let n = table.total_columns();
    let mut out = DMatrix::<C64>::zeros(n, n);
    let mut offset = 0;
    for b in table.blocks() {
        for k in 0..b.n_cols() {
            for l in 0..b.n_cols() {
                out[(offset + l, offset + k)] =
                    column_pair_element(rho, &b.columns[k], &b.columns[l]);
            }
        }
        offset += b.n_cols();
    }
    let matrix = ComplexOperator::new(out).expect("square");
    let trace_deficit = rho.trace().re - matrix.trace().re;
    ReducedState {
        matrix,
        labels: table.column_labels(),
        trace_deficit,
    }
}

/// State reduction for a matrix algebra: project onto each superselection
/// sector, express in the block basis, and partial-trace the multiplicity
/// (row) index. The output is block-diagonal over sectors on the direct sum
/// of the irrep spaces; the trace may drop by the null-space weight.
pub fn reduce_algebra_state(rho: &DensityMatrix, basis: &IrrepBasis) -> Result<ReducedState> {
    if rho.dim() != basis.dim {
        return Err(Error::DimensionMismatch {
            left: rho.dim(),
            right: basis.dim,
        });
    }
    let table = BipartitionTable::from(basis);
    Ok(reduce_over_columns(rho.operator(), &table))
}

/// State reduction for a partial bipartition: coherences between different
/// rows are discarded, same-row coherences are summed per column pair, and
/// inter-block coherences vanish. The output dimension is the total column
/// count.
pub fn reduce_partial_state(rho: &DensityMatrix, table: &BipartitionTable) -> Result<ReducedState> {
    if rho.dim() != table.dim() {
        return Err(Error::DimensionMismatch {
            left: rho.dim(),
            right: table.dim(),
        });
    }
    Ok(reduce_over_columns(rho.operator(), table))
}
