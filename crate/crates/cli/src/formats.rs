//! On-disk formats: JSON documents for matrices, bipartition tables, reduced
//! states, and the CSV scan export. All numbers are written with full
//! round-trip precision so parse(serialize(x)) = x bit-exactly.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use bipart_core::bpt::{BipartitionTable, ReducedState};
use bipart_core::numerics::ComplexOperator;
use bipart_core::variational::{encode_perms, CandidateScore, ColumnStructure, ScanOutcome};

use crate::CliError;

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct NamedMatrix {
    pub name: String,
    /// Row-major real parts.
    pub re: Vec<Vec<f64>>,
    /// Row-major imaginary parts.
    pub im: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct MatrixFile {
    pub dim: usize,
    pub matrices: Vec<NamedMatrix>,
}

impl MatrixFile {
    pub fn from_ops(ops: &[(String, ComplexOperator)]) -> Self {
        let dim = ops.first().map_or(0, |(_, m)| m.dim());
        let matrices = ops
            .iter()
            .map(|(name, m)| {
                let mat = m.matrix();
                NamedMatrix {
                    name: name.clone(),
                    re: (0..dim)
                        .map(|i| (0..dim).map(|j| mat[(i, j)].re).collect())
                        .collect(),
                    im: (0..dim)
                        .map(|i| (0..dim).map(|j| mat[(i, j)].im).collect())
                        .collect(),
                }
            })
            .collect();
        MatrixFile { dim, matrices }
    }

    pub fn to_ops(&self) -> Result<Vec<(String, ComplexOperator)>, CliError> {
        let mut out = Vec::with_capacity(self.matrices.len());
        for m in &self.matrices {
            if m.re.len() != self.dim || m.im.len() != self.dim {
                return Err(CliError::Parse(format!(
                    "matrix {} has {} rows, expected {}",
                    m.name,
                    m.re.len(),
                    self.dim
                )));
            }
            let mut mat = DMatrix::<C64>::zeros(self.dim, self.dim);
            for i in 0..self.dim {
                if m.re[i].len() != self.dim || m.im[i].len() != self.dim {
                    return Err(CliError::Parse(format!(
                        "matrix {} row {i} has the wrong length",
                        m.name
                    )));
                }
                for j in 0..self.dim {
                    mat[(i, j)] = C64::new(m.re[i][j], m.im[i][j]);
                }
            }
            let op = ComplexOperator::new(mat)
                .map_err(|e| CliError::Parse(format!("matrix {}: {e}", m.name)))?;
            out.push((m.name.clone(), op));
        }
        Ok(out)
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct VectorEntry {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct TableBlockEntry {
    pub q: usize,
    pub heights: Vec<usize>,
    pub labels: Vec<String>,
    /// Cells in row-major grid order: row by row, the columns present at
    /// that row from left to right.
    pub vectors: Vec<VectorEntry>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct TableFile {
    pub dim: usize,
    pub blocks: Vec<TableBlockEntry>,
}

fn vector_entry(v: &DVector<C64>) -> VectorEntry {
    VectorEntry {
        re: v.iter().map(|c| c.re).collect(),
        im: v.iter().map(|c| c.im).collect(),
    }
}

impl TableFile {
    pub fn from_table(table: &BipartitionTable) -> Self {
        let blocks = table
            .blocks()
            .iter()
            .enumerate()
            .map(|(q, b)| {
                let heights = b.heights();
                let labels = b.columns().iter().map(|c| c.label.clone()).collect();
                let mut vectors = Vec::new();
                for i in 0..b.n_rows() {
                    for c in b.columns() {
                        if c.cells.len() > i {
                            vectors.push(vector_entry(&c.cells[i]));
                        }
                    }
                }
                TableBlockEntry {
                    q,
                    heights,
                    labels,
                    vectors,
                }
            })
            .collect();
        TableFile {
            dim: table.dim(),
            blocks,
        }
    }

    pub fn to_table(&self) -> Result<BipartitionTable, CliError> {
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let n_cols = b.heights.len();
            if b.labels.len() != n_cols {
                return Err(CliError::Parse(format!(
                    "block {}: {} labels for {} columns",
                    b.q,
                    b.labels.len(),
                    n_cols
                )));
            }
            let expected: usize = b.heights.iter().sum();
            if b.vectors.len() != expected {
                return Err(CliError::Parse(format!(
                    "block {}: {} vectors, heights require {expected}",
                    b.q,
                    b.vectors.len()
                )));
            }
            let n_rows = b.heights.iter().copied().max().unwrap_or(0);
            let mut columns: Vec<Vec<DVector<C64>>> = vec![Vec::new(); n_cols];
            let mut it = b.vectors.iter();
            for i in 0..n_rows {
                for (k, &h) in b.heights.iter().enumerate() {
                    if h > i {
                        let entry = it.next().expect("counted above");
                        if entry.re.len() != self.dim || entry.im.len() != self.dim {
                            return Err(CliError::Parse(format!(
                                "block {} has a vector of the wrong dimension",
                                b.q
                            )));
                        }
                        let v = DVector::<C64>::from_iterator(
                            self.dim,
                            entry
                                .re
                                .iter()
                                .zip(&entry.im)
                                .map(|(&re, &im)| C64::new(re, im)),
                        );
                        columns[k].push(v);
                    }
                }
            }
            blocks.push(
                columns
                    .into_iter()
                    .zip(&b.labels)
                    .map(|(cells, label)| (cells, label.clone()))
                    .collect(),
            );
        }
        BipartitionTable::from_columns(self.dim, blocks)
            .map_err(|e| CliError::Parse(format!("invalid table: {e}")))
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct LabelEntry {
    pub block: usize,
    pub label: String,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct ReducedFile {
    pub dim: usize,
    pub labels: Vec<LabelEntry>,
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
    pub trace_deficit: f64,
}

impl ReducedFile {
    pub fn from_reduced(r: &ReducedState) -> Self {
        let dim = r.matrix.dim();
        let m = r.matrix.matrix();
        ReducedFile {
            dim,
            labels: r
                .labels
                .iter()
                .map(|(block, label)| LabelEntry {
                    block: *block,
                    label: label.clone(),
                })
                .collect(),
            re: (0..dim)
                .map(|i| (0..dim).map(|j| m[(i, j)].re).collect())
                .collect(),
            im: (0..dim)
                .map(|i| (0..dim).map(|j| m[(i, j)].im).collect())
                .collect(),
            trace_deficit: r.trace_deficit,
        }
    }
}

/// CSV export of a scan: one row per candidate, sorted by descending score.
pub fn scan_csv(outcome: &ScanOutcome, columns: &ColumnStructure) -> String {
    let mut s = String::from("candidate_index,permutation,q,class_id,distinct_map_id\n");
    for CandidateScore {
        index,
        q,
        class_id,
        map_id,
    } in &outcome.scores
    {
        let perms = bipart_core::variational::candidate_perms(columns, &outcome.sectors, *index);
        s.push_str(&format!(
            "{index},{},{q:?},{class_id},{map_id}\n",
            encode_perms(&perms)
        ));
    }
    s
}
