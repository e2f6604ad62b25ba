//! Dense complex-matrix kernel: Hermitian spectral decomposition with
//! eigenvalue clustering, norms, commutators, and tolerance-aware predicates.
//!
//! Everything downstream (scattering, irrep construction, state reduction)
//! is built on the primitives in this module, so the conventions fixed here
//! (eigenvalue sort order, eigenvector phases, degenerate-cluster bases) are
//! what make whole-pipeline runs reproducible.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Tolerance policy threaded through the pipeline.
///
/// `eps_zero` is the "this is numerically zero" scale for matrix entries and
/// Frobenius norms, `eps_eig` is the clustering radius for eigenvalues, and
/// `eps_prop` bounds proportionality residuals (path-isometry holonomies,
/// least-squares fits).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub eps_eig: f64,
    pub eps_zero: f64,
    pub eps_prop: f64,
}

impl Tolerance {
    /// Defaults for a given problem dimension: `eps_zero = 1e-10 * dim`,
    /// `eps_eig = 1e-8`, `eps_prop = 1e-8`. Above dimension 100 the
    /// clustering radius is lifted to `eps_zero` to keep `eps_eig >= eps_zero`.
    pub fn for_dim(dim: usize) -> Self {
        let eps_zero = 1e-10 * dim.max(1) as f64;
        Tolerance {
            eps_eig: 1e-8f64.max(eps_zero),
            eps_zero,
            eps_prop: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_zero > 0.0 && self.eps_eig > 0.0 && self.eps_prop > 0.0) {
            return Err(Error::InvalidInput(
                "tolerances must be strictly positive".into(),
            ));
        }
        if self.eps_eig < self.eps_zero {
            return Err(Error::InvalidInput(format!(
                "eps_eig ({:.3e}) must be >= eps_zero ({:.3e})",
                self.eps_eig, self.eps_zero
            )));
        }
        Ok(())
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::for_dim(1)
    }
}

/// Dense complex square matrix; the universal carrier for generators,
/// projections, isometries and density matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexOperator {
    mat: DMatrix<C64>,
}

impl ComplexOperator {
    /// Wraps a square matrix with finite entries.
    pub fn new(mat: DMatrix<C64>) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::DimensionMismatch {
                left: mat.nrows(),
                right: mat.ncols(),
            });
        }
        if mat.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::InvalidInput("matrix entry is not finite".into()));
        }
        Ok(ComplexOperator { mat })
    }

    pub fn identity(dim: usize) -> Self {
        ComplexOperator {
            mat: DMatrix::identity(dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        ComplexOperator {
            mat: DMatrix::zeros(dim, dim),
        }
    }

    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> C64) -> Self {
        ComplexOperator {
            mat: DMatrix::from_fn(dim, dim, f),
        }
    }

    /// Rank-1 operator `v w^H`.
    pub fn outer(v: &DVector<C64>, w: &DVector<C64>) -> Self {
        ComplexOperator {
            mat: v * w.adjoint(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.mat
    }

    pub fn adjoint(&self) -> Self {
        ComplexOperator {
            mat: self.mat.adjoint(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        ComplexOperator {
            mat: self.mat.scale(s),
        }
    }

    pub fn scale_complex(&self, s: C64) -> Self {
        ComplexOperator { mat: &self.mat * s }
    }

    pub fn trace(&self) -> C64 {
        self.mat.trace()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.mat.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn kronecker(&self, other: &Self) -> Self {
        ComplexOperator {
            mat: self.mat.kronecker(&other.mat),
        }
    }

    /// `||self - other||_F`.
    pub fn distance(&self, other: &Self) -> f64 {
        (&self.mat - &other.mat)
            .iter()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn hermitian_residual(&self) -> f64 {
        (&self.mat - self.mat.adjoint())
            .iter()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// `(m + m^H)/2`.
    pub fn symmetrized(&self) -> Self {
        ComplexOperator {
            mat: (&self.mat + self.mat.adjoint()).scale(0.5),
        }
    }

    /// Applies the operator to a vector.
    pub fn apply(&self, v: &DVector<C64>) -> DVector<C64> {
        &self.mat * v
    }
}

impl std::ops::Mul for &ComplexOperator {
    type Output = ComplexOperator;
    fn mul(self, rhs: &ComplexOperator) -> ComplexOperator {
        ComplexOperator {
            mat: &self.mat * &rhs.mat,
        }
    }
}

impl std::ops::Add for &ComplexOperator {
    type Output = ComplexOperator;
    fn add(self, rhs: &ComplexOperator) -> ComplexOperator {
        ComplexOperator {
            mat: &self.mat + &rhs.mat,
        }
    }
}

impl std::ops::Sub for &ComplexOperator {
    type Output = ComplexOperator;
    fn sub(self, rhs: &ComplexOperator) -> ComplexOperator {
        ComplexOperator {
            mat: &self.mat - &rhs.mat,
        }
    }
}

/// One cluster of a Hermitian spectral decomposition: a distinct eigenvalue,
/// the projection on its eigenspace, and an explicit orthonormal eigenbasis.
#[derive(Debug, Clone)]
pub struct SpectralCluster {
    pub eigenvalue: f64,
    pub projection: ComplexOperator,
    pub rank: usize,
    pub basis: Vec<DVector<C64>>,
}

/// Clustered spectral decomposition of a Hermitian operator. Nonzero clusters
/// are sorted by ascending eigenvalue; the zero cluster (|lambda| <= eps_eig)
/// is reported separately.
#[derive(Debug, Clone)]
pub struct SpectralForm {
    pub clusters: Vec<SpectralCluster>,
    pub zero_cluster: Option<SpectralCluster>,
}

impl SpectralForm {
    /// Sum of ranks over nonzero clusters plus the zero-cluster rank.
    pub fn total_rank(&self) -> usize {
        self.clusters.iter().map(|c| c.rank).sum::<usize>()
            + self.zero_cluster.as_ref().map_or(0, |c| c.rank)
    }
}

/// Fixes the gauge of an eigenvector: the first component whose magnitude
/// exceeds `eps` is made real positive.
pub fn phase_fix(v: &mut DVector<C64>, eps: f64) {
    for i in 0..v.len() {
        let a = v[i];
        if a.norm() > eps {
            let phase = a.conj() / a.norm();
            for x in v.iter_mut() {
                *x *= phase;
            }
            return;
        }
    }
}

pub(crate) fn lex_key_cmp(a: &DVector<C64>, b: &DVector<C64>) -> std::cmp::Ordering {
    for i in 0..a.len() {
        match a[i].re.total_cmp(&b[i].re) {
            std::cmp::Ordering::Equal => {}
            o => return o,
        }
        match a[i].im.total_cmp(&b[i].im) {
            std::cmp::Ordering::Equal => {}
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

/// Eigenvalues (ascending) and matching eigenvectors of a Hermitian matrix.
pub fn hermitian_eigen(m: &ComplexOperator) -> Result<(Vec<f64>, Vec<DVector<C64>>)> {
    let dim = m.dim();
    let se = m
        .matrix()
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 10_000)
        .ok_or(Error::EigFailure { dim })?;
    let mut pairs: Vec<(f64, DVector<C64>)> = se
        .eigenvalues
        .iter()
        .zip(se.eigenvectors.column_iter())
        .map(|(l, v)| (*l, v.into_owned()))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pairs.into_iter().unzip())
}

/// Spectral decomposition of a Hermitian operator with eigenvalue clustering.
///
/// Eigenvalues within `eps_eig` of each other (single-linkage on the sorted
/// list) share one cluster; clusters whose value lies within `eps_eig` of zero
/// go to the zero cluster. Cluster bases are orthonormal with a deterministic
/// phase and ordering convention, so identical inputs give identical output.
pub fn spectral_decompose(m: &ComplexOperator, tol: &Tolerance) -> Result<SpectralForm> {
    tol.validate()?;
    let dim = m.dim();
    let herm_residual = m.hermitian_residual();
    let limit = tol.eps_zero * dim as f64;
    if herm_residual > limit {
        return Err(Error::NotHermitian {
            residual: herm_residual,
            limit,
        });
    }
    let sym = m.symmetrized();
    let (vals, vecs) = hermitian_eigen(&sym)?;

    // single-linkage grouping on the sorted eigenvalue list
    let mut groups: Vec<(Vec<f64>, Vec<DVector<C64>>)> = Vec::new();
    for (l, v) in vals.into_iter().zip(vecs) {
        match groups.last_mut() {
            Some((ls, vs)) if l - *ls.last().unwrap() <= tol.eps_eig => {
                ls.push(l);
                vs.push(v);
            }
            _ => groups.push((vec![l], vec![v])),
        }
    }

    let mut clusters = Vec::new();
    let mut zero_cluster = None;
    for (ls, mut vs) in groups {
        let eigenvalue = ls.iter().sum::<f64>() / ls.len() as f64;
        for v in vs.iter_mut() {
            phase_fix(v, tol.eps_zero);
        }
        vs.sort_by(lex_key_cmp);
        gram_schmidt(&mut vs)?;
        let rank = vs.len();
        let mut proj = DMatrix::<C64>::zeros(dim, dim);
        for v in &vs {
            proj += v * v.adjoint();
        }
        let cluster = SpectralCluster {
            eigenvalue,
            projection: ComplexOperator::new(proj)?,
            rank,
            basis: vs,
        };
        if eigenvalue.abs() <= tol.eps_eig {
            zero_cluster = Some(cluster);
        } else {
            clusters.push(cluster);
        }
    }
    Ok(SpectralForm {
        clusters,
        zero_cluster,
    })
}

/// In-place Gram-Schmidt re-orthonormalization; the input is expected to be
/// close to orthonormal already (it comes from an eigensolver).
fn gram_schmidt(vs: &mut [DVector<C64>]) -> Result<()> {
    for i in 0..vs.len() {
        for j in 0..i {
            let overlap = vs[j].dotc(&vs[i]);
            let prev = vs[j].clone();
            vs[i] -= prev * overlap;
        }
        let n = vs[i].norm();
        if n < 0.5 {
            return Err(Error::SpectralFailure(
                "eigenvector set degenerated during re-orthonormalization".into(),
            ));
        }
        vs[i] /= C64::new(n, 0.0);
    }
    Ok(())
}

/// `||ab - ba||_F`.
pub fn commutator_fnorm(a: &ComplexOperator, b: &ComplexOperator) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok((a * b).distance(&(b * a)))
}

/// True iff `p = p^H = p^2` within `eps_zero`.
pub fn is_projection(p: &ComplexOperator, tol: &Tolerance) -> bool {
    p.hermitian_residual() <= tol.eps_zero * p.dim() as f64
        && (p * p).distance(p) <= tol.eps_zero * p.dim() as f64
}

/// True iff both `s s^H` and `s^H s` are projections within `eps_zero`.
pub fn is_partial_isometry(s: &ComplexOperator, tol: &Tolerance) -> bool {
    let sh = s.adjoint();
    is_projection(&(s * &sh), tol) && is_projection(&(&sh * s), tol)
}

/// Rank of a projection via its trace; errors when the trace is farther than
/// 0.01 from an integer (a sign of numerical trouble upstream).
pub fn projection_rank(p: &ComplexOperator) -> Result<usize> {
    let t = p.trace().re;
    let r = t.round();
    if (t - r).abs() > 0.01 || r < 0.0 {
        return Err(Error::SpectralFailure(format!(
            "projection trace {t:.6} is not close to a nonnegative integer"
        )));
    }
    Ok(r as usize)
}

/// Least-squares proportionality fit: the scalar `c` minimizing
/// `||a - c b||_F`, together with the residual at the optimum.
pub fn proportionality_fit(a: &ComplexOperator, b: &ComplexOperator) -> (C64, f64) {
    let denom: f64 = b.matrix().iter().map(|x| x.norm_sqr()).sum();
    if denom == 0.0 {
        return (C64::new(0.0, 0.0), a.frobenius_norm());
    }
    let num: C64 = b
        .matrix()
        .iter()
        .zip(a.matrix().iter())
        .map(|(x, y)| x.conj() * y)
        .sum();
    let c = num / denom;
    (c, a.distance(&b.scale_complex(c)))
}
