//! From a proper reflection network to a verified irrep decomposition:
//! minimality check via spanning-tree cycle holonomies (with a spectral-split
//! repair), completeness repair to a maximal set of minimal projections, and
//! construction of the block basis that simultaneously block-diagonalizes the
//! generators.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::numerics::{
    hermitian_eigen, is_projection, phase_fix, projection_rank, spectral_decompose,
    ComplexOperator, Tolerance,
};
use crate::scattering::{
    path_isometry, run_scattering_loop, EdgeState, ReflectionNetwork, TraceFn, VertexId,
};

/// Normalized product of projections along a network path; a partial isometry
/// from the eigenspace of the last vertex to the eigenspace of the first.
#[derive(Debug, Clone)]
pub struct PathIsometry {
    pub path: Vec<VertexId>,
    pub operator: ComplexOperator,
    pub normalization: f64,
}

impl PathIsometry {
    pub fn along(net: &ReflectionNetwork, path: &[VertexId]) -> Result<Self> {
        let mut normalization = 1.0;
        for w in path.windows(2) {
            match net.edge(w[0], w[1]) {
                Some(EdgeState::Reflecting(l)) if l > 0.0 => normalization *= l,
                other => {
                    return Err(Error::InvalidInput(format!(
                        "path step {}->{} is not properly reflecting ({other:?})",
                        w[0], w[1]
                    )))
                }
            }
        }
        Ok(PathIsometry {
            path: path.to_vec(),
            operator: path_isometry(net, path)?,
            normalization: normalization.sqrt(),
        })
    }
}

/// A maximal set of pairwise-orthogonal minimal projections, recorded as
/// vertex ids, together with the identity element of the algebra.
#[derive(Debug, Clone)]
pub struct Msmp {
    pub members: Vec<VertexId>,
    pub identity: ComplexOperator,
}

/// One Wedderburn block: an `rows x cols` grid of orthonormal basis vectors.
/// Rows index the multiplicity space, columns the irrep space.
#[derive(Debug, Clone)]
pub struct IrrepBlock {
    pub rows: usize,
    pub cols: usize,
    pub grid: Vec<Vec<DVector<C64>>>,
    /// Network vertex the block was rooted at (stable ordering key).
    pub root: VertexId,
}

/// The change of basis that exhibits the Wedderburn structure of the algebra:
/// a list of blocks plus the dimension of the null space left over.
#[derive(Debug, Clone)]
pub struct IrrepBasis {
    pub dim: usize,
    pub blocks: Vec<IrrepBlock>,
    pub h0_dim: usize,
}

impl IrrepBasis {
    pub fn support_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.rows * b.cols).sum()
    }

    /// Multiset of (rows, cols) block dimensions, sorted.
    pub fn block_dims(&self) -> Vec<(usize, usize)> {
        let mut d: Vec<(usize, usize)> = self.blocks.iter().map(|b| (b.rows, b.cols)).collect();
        d.sort();
        d
    }

    /// Embedding isometry `V`: rows enumerate (block, row, col) cells in
    /// order, each row holding the conjugated basis vector.
    pub fn embedding(&self) -> DMatrix<C64> {
        let mut v = DMatrix::<C64>::zeros(self.support_dim(), self.dim);
        let mut r = 0;
        for b in &self.blocks {
            for i in 0..b.rows {
                for k in 0..b.cols {
                    v.row_mut(r).copy_from(&b.grid[i][k].adjoint());
                    r += 1;
                }
            }
        }
        v
    }

    /// Projection onto the algebra support (complement of the null space).
    pub fn support_projection(&self) -> ComplexOperator {
        let mut p = DMatrix::<C64>::zeros(self.dim, self.dim);
        for b in &self.blocks {
            for row in &b.grid {
                for cell in row {
                    p += cell * cell.adjoint();
                }
            }
        }
        ComplexOperator::new(p).expect("square by construction")
    }

    /// Orthonormality of the whole grid.
    pub fn validate(&self, tol: &Tolerance) -> Result<()> {
        let v = self.embedding();
        let gram = &v * v.adjoint();
        let eye = DMatrix::<C64>::identity(self.support_dim(), self.support_dim());
        let resid = (gram - eye)
            .iter()
            .map(|c| c.norm_sqr())
            .sum::<f64>()
            .sqrt();
        if resid > 10.0 * tol.eps_zero * self.dim as f64 {
            return Err(Error::SpectralFailure(format!(
                "irrep basis is not orthonormal: residual {resid:.3e}"
            )));
        }
        Ok(())
    }
}

fn component_rank(net: &ReflectionNetwork, comp: &[VertexId]) -> usize {
    net.vertex(comp[0]).rank
}

/// BFS spanning tree of a component; returns (order, parent map). Neighbors
/// are visited in ascending id, so the tree is deterministic.
fn spanning_tree(
    net: &ReflectionNetwork,
    comp: &[VertexId],
    root: VertexId,
) -> BTreeMap<VertexId, VertexId> {
    let mut parent = BTreeMap::new();
    let in_comp: std::collections::BTreeSet<VertexId> = comp.iter().copied().collect();
    let mut queue = std::collections::VecDeque::from([root]);
    let mut seen = std::collections::BTreeSet::from([root]);
    while let Some(v) = queue.pop_front() {
        let mut nb: Vec<VertexId> = net
            .reflecting_neighbors(v)
            .into_iter()
            .map(|(u, _)| u)
            .filter(|u| in_comp.contains(u) && !seen.contains(u))
            .collect();
        nb.sort();
        for u in nb {
            // neighbor lists can overlap between queue entries
            if seen.insert(u) {
                parent.insert(u, v);
                queue.push_back(u);
            }
        }
    }
    parent
}

fn tree_path(parent: &BTreeMap<VertexId, VertexId>, root: VertexId, v: VertexId) -> Vec<VertexId> {
    let mut path = vec![v];
    let mut cur = v;
    while cur != root {
        cur = parent[&cur];
        path.push(cur);
    }
    path.reverse(); // root ... v
    path
}

/// Key for choosing roots and maximal-independent-set order: vertices of the
/// first generator are preferred so that recovered bases line up with the
/// first generator's eigenstructure.
fn greedy_key(net: &ReflectionNetwork, id: VertexId) -> (usize, u32, VertexId) {
    let v = net.vertex(id);
    (v.rank, v.lineage, id)
}

/// Spectral projections of a unitary supported on the eigenspace of `root`.
///
/// The Hermitian pair `(U + U^H)/2` and `(U - U^H)/2i` is decomposed jointly:
/// the first is clustered, and degenerate clusters are refined by the second,
/// so eigenvalues on the unit circle separate even when their real parts
/// coincide.
fn unitary_spectral_split(
    u: &ComplexOperator,
    root_projection: &ComplexOperator,
    tol: &Tolerance,
) -> Result<Vec<ComplexOperator>> {
    let dim = u.dim();
    let sf = spectral_decompose(root_projection, tol)?;
    let cluster = sf
        .clusters
        .iter()
        .find(|c| (c.eigenvalue - 1.0).abs() < 0.5)
        .ok_or_else(|| Error::SpectralFailure("root projection has no unit eigenspace".into()))?;
    let r = cluster.rank;
    let mut b = DMatrix::<C64>::zeros(dim, r);
    for (j, v) in cluster.basis.iter().enumerate() {
        b.column_mut(j).copy_from(v);
    }
    let ur = ComplexOperator::new(b.adjoint() * u.matrix() * &b)?;
    let h1 = ur.symmetrized();
    let h2 = ComplexOperator::new(
        (ur.matrix() - ur.matrix().adjoint()).scale(0.5) * C64::new(0.0, -1.0),
    )?
    .symmetrized();

    let (vals, vecs) = hermitian_eigen(&h1)?;
    let mut groups: Vec<(f64, Vec<DVector<C64>>)> = Vec::new();
    for (l, v) in vals.into_iter().zip(vecs) {
        match groups.last_mut() {
            Some((last, vs)) if l - *last <= tol.eps_eig => {
                *last = l;
                vs.push(v);
            }
            _ => groups.push((l, vec![v])),
        }
    }

    let mut subspaces: Vec<Vec<DVector<C64>>> = Vec::new();
    for (_, vs) in groups {
        if vs.len() == 1 {
            subspaces.push(vs);
            continue;
        }
        // refine the degenerate real-part cluster with the imaginary part
        let k = vs.len();
        let mut c = DMatrix::<C64>::zeros(r, k);
        for (j, v) in vs.iter().enumerate() {
            c.column_mut(j).copy_from(v);
        }
        let kmat = ComplexOperator::new(c.adjoint() * h2.matrix() * &c)?.symmetrized();
        let (kvals, kvecs) = hermitian_eigen(&kmat)?;
        let mut sub: Vec<(f64, Vec<DVector<C64>>)> = Vec::new();
        for (l, w) in kvals.into_iter().zip(kvecs) {
            let lifted = &c * w;
            match sub.last_mut() {
                Some((last, ws)) if l - *last <= tol.eps_eig => {
                    *last = l;
                    ws.push(lifted);
                }
                _ => sub.push((l, vec![lifted])),
            }
        }
        subspaces.extend(sub.into_iter().map(|(_, ws)| ws));
    }

    let mut parts = Vec::new();
    for ws in subspaces {
        let mut p = DMatrix::<C64>::zeros(dim, dim);
        for w in ws {
            let lifted = &b * w;
            p += &lifted * lifted.adjoint();
        }
        parts.push(ComplexOperator::new(p)?.symmetrized());
    }
    Ok(parts)
}

/// Ensures every vertex of a proper network is a minimal projection of the
/// generated algebra.
///
/// Per connected component, a spanning tree is built and each non-tree edge's
/// cycle holonomy `U` is tested for proportionality to the root projection
/// (scalar holonomy on fundamental cycles implies path independence for all
/// paths, since any closed walk factors through conjugated fundamental
/// cycles). On failure the vertices are split with the spectral projections
/// of `U`, which lie in the algebra, and the component is re-scattered.
pub fn establish_minimality(net: ReflectionNetwork, tol: &Tolerance) -> Result<ReflectionNetwork> {
    let mut net = net;
    if !net.is_proper() {
        return Err(Error::InvalidInput(
            "establish_minimality requires a proper reflection network".into(),
        ));
    }
    let rounds = net.dim() + 1;
    for _ in 0..rounds {
        match find_nonscalar_holonomy(&net, tol)? {
            None => return Ok(net),
            Some((root, hol)) => {
                let root_v = net.vertex(root).clone();
                let parts = unitary_spectral_split(&hol, &root_v.projection, tol)?;
                if parts.len() < 2 {
                    return Err(Error::SpectralFailure(
                        "holonomy failed the scalar test but produced a single spectral part"
                            .into(),
                    ));
                }
                for p in parts {
                    net.add_vertex_resolved(p, root_v.lineage, tol, &[])?;
                }
                run_scattering_loop(&mut net, tol, None)?;
            }
        }
    }
    Err(Error::NonConvergence(format!(
        "minimality splitting exceeded {rounds} rounds"
    )))
}

fn find_nonscalar_holonomy(
    net: &ReflectionNetwork,
    tol: &Tolerance,
) -> Result<Option<(VertexId, ComplexOperator)>> {
    for comp in net.components() {
        if component_rank(net, &comp) == 1 || comp.len() == 1 {
            continue; // rank-1 projections are always minimal
        }
        let root = *comp.iter().min_by_key(|&&id| greedy_key(net, id)).unwrap();
        let parent = spanning_tree(net, &comp, root);
        let tree_edges: std::collections::BTreeSet<(VertexId, VertexId)> =
            parent.iter().map(|(&v, &p)| (v.min(p), v.max(p))).collect();
        let rank = net.vertex(root).rank as f64;
        for (&(a, b), e) in net.edges() {
            if !matches!(e, EdgeState::Reflecting(_)) || tree_edges.contains(&(a, b)) {
                continue;
            }
            if !comp.contains(&a) {
                continue;
            }
            // cycle root ... a, b ... root
            let mut cycle = tree_path(&parent, root, a);
            let mut back = tree_path(&parent, root, b);
            back.reverse();
            cycle.extend(back);
            let hol = path_isometry(net, &cycle)?;
            let c = hol.trace() / rank;
            let resid = hol.distance(&net.vertex(root).projection.scale_complex(c));
            if resid > tol.eps_prop {
                return Ok(Some((root, hol)));
            }
        }
    }
    Ok(None)
}

/// Completes a minimal network to one containing an MSMP.
///
/// A maximal independent (pairwise-orthogonal) vertex set is chosen greedily
/// in (rank, lineage, id) order. For every vertex not resolved by the
/// candidate identity, the complementary projection
/// `(I - I_A) P (I - I_A) / (1 - alpha)` is built, added to the network with
/// explicit reflection relations, and appended to the set.
pub fn establish_completeness(
    net: ReflectionNetwork,
    tol: &Tolerance,
) -> Result<(ReflectionNetwork, Msmp)> {
    let mut net = net;
    let dim = net.dim();
    let eye = ComplexOperator::identity(dim);

    let mut order = net.vertex_ids();
    order.sort_by_key(|&id| greedy_key(&net, id));

    let mut members: Vec<VertexId> = Vec::new();
    for &id in &order {
        if members.iter().all(|&m| net.edge(id, m).is_none()) {
            members.push(id);
        }
    }
    let mut identity = ComplexOperator::zeros(dim);
    for &m in &members {
        identity = &identity + &net.vertex(m).projection;
    }

    let limit = 10.0 * tol.eps_zero;
    let mut queue: Vec<VertexId> = order.clone();
    let mut safety = 0;
    while let Some(&v_id) = queue.iter().find(|&&v| {
        (&identity * &net.vertex(v).projection).distance(&net.vertex(v).projection) > limit
    }) {
        safety += 1;
        if safety > dim + 1 {
            return Err(Error::NonConvergence(
                "completeness repair exceeded the dimension bound".into(),
            ));
        }
        let v = net.vertex(v_id).clone();
        let sandwich = (&(&v.projection * &identity) * &v.projection).symmetrized();
        let alpha = sandwich.trace().re / v.rank as f64;
        if sandwich.distance(&v.projection.scale(alpha)) > tol.eps_prop * dim as f64 {
            return Err(Error::SpectralFailure(
                "vertex is not minimal against the candidate identity".into(),
            ));
        }
        let c = 1.0 - alpha;
        if c.abs() <= tol.eps_zero {
            return Err(Error::DegenerateNormalization { value: c.abs() });
        }
        let outside = &eye - &identity;
        let comp = (&(&outside * &v.projection) * &outside)
            .scale(1.0 / c)
            .symmetrized();
        let relaxed = Tolerance {
            eps_zero: tol.eps_zero * 10.0,
            ..*tol
        };
        if !is_projection(&comp, &relaxed) {
            return Err(Error::SpectralFailure(
                "complementary projection failed the projection relations".into(),
            ));
        }
        let rank = projection_rank(&comp)?;

        // the new projection is minimal, so against every existing vertex it
        // is either orthogonal or properly reflecting; pin those edges so the
        // network stays proper
        let mut assume = Vec::new();
        for &other in &net.vertex_ids() {
            let o = net.vertex(other);
            let prod = &comp * &o.projection;
            if prod.frobenius_norm() <= tol.eps_zero {
                continue;
            }
            let lambda = (&(&comp * &o.projection) * &comp).trace().re / rank as f64;
            assume.push((other, EdgeState::Reflecting(lambda)));
        }
        let new_id = net.add_vertex_resolved(comp.clone(), v.lineage, tol, &assume)?;
        members.push(new_id);
        identity = &identity + &net.vertex(new_id).projection;
        queue.push(new_id);
    }

    // final resolution check over every vertex
    for &id in &net.vertex_ids() {
        let p = &net.vertex(id).projection;
        if (&identity * p).distance(p) > limit {
            return Err(Error::SpectralFailure(
                "MSMP identity does not resolve every vertex".into(),
            ));
        }
    }
    Ok((net, Msmp { members, identity }))
}

/// Builds the block basis from a minimal, complete network: per connected
/// component the root's eigenbasis forms the first column, mapped to the
/// remaining MSMP members along spanning-tree path isometries.
pub fn construct_irrep_basis(
    net: &ReflectionNetwork,
    msmp: &Msmp,
    tol: &Tolerance,
) -> Result<IrrepBasis> {
    let dim = net.dim();
    let member_set: std::collections::BTreeSet<VertexId> = msmp.members.iter().copied().collect();
    let mut blocks = Vec::new();
    for comp in net.components() {
        let mut members: Vec<VertexId> = comp
            .iter()
            .copied()
            .filter(|id| member_set.contains(id))
            .collect();
        if members.is_empty() {
            return Err(Error::SpectralFailure(
                "component without an MSMP member".into(),
            ));
        }
        members.sort_by_key(|&id| greedy_key(net, id));
        let root = members[0];
        let root_v = net.vertex(root);
        let sf = spectral_decompose(&root_v.projection, tol)?;
        let cluster = sf
            .clusters
            .iter()
            .find(|c| (c.eigenvalue - 1.0).abs() < 0.5)
            .ok_or_else(|| {
                Error::SpectralFailure("root projection has no unit eigenspace".into())
            })?;
        let rows = cluster.rank;
        if rows != root_v.rank {
            return Err(Error::SpectralFailure(
                "root eigenspace rank disagrees with vertex rank".into(),
            ));
        }

        let parent = spanning_tree(net, &comp, root);
        let mut columns: Vec<Vec<DVector<C64>>> = Vec::new();
        for &m in &members {
            let mut path = tree_path(&parent, root, m);
            path.reverse(); // m ... root: maps root eigenspace to m eigenspace
            let iso = PathIsometry::along(net, &path)?;
            let mut col = Vec::with_capacity(rows);
            for e in &cluster.basis {
                let mut cell = iso.operator.apply(e);
                let n = cell.norm();
                if (n - 1.0).abs() > 1e-6 {
                    return Err(Error::SpectralFailure(format!(
                        "path isometry distorted a basis vector (norm {n:.6})"
                    )));
                }
                cell /= C64::new(n, 0.0);
                col.push(cell);
            }
            // one phase per column, fixed on the first-row vector
            let mut lead = col[0].clone();
            phase_fix(&mut lead, tol.eps_zero);
            let gauge = pick_gauge(&col[0], &lead);
            for cell in col.iter_mut() {
                *cell *= gauge;
            }
            columns.push(col);
        }
        // column order: earliest-supported first-row vector first, ties by
        // the full lexicographic key
        let lead = |v: &DVector<C64>| v.iter().position(|c| c.norm() > 1e-9).unwrap_or(v.len());
        columns.sort_by(|a, b| {
            lead(&a[0])
                .cmp(&lead(&b[0]))
                .then_with(|| crate::numerics::lex_key_cmp(&a[0], &b[0]))
        });

        let cols = columns.len();
        let grid: Vec<Vec<DVector<C64>>> = (0..rows)
            .map(|i| columns.iter().map(|c| c[i].clone()).collect())
            .collect();
        blocks.push(IrrepBlock {
            rows,
            cols,
            grid,
            root,
        });
    }

    blocks
        .sort_by(|a, b| (b.rows * b.cols, b.cols, a.root).cmp(&(a.rows * a.cols, a.cols, b.root)));
    let support: usize = blocks.iter().map(|b| b.rows * b.cols).sum();
    let basis = IrrepBasis {
        dim,
        blocks,
        h0_dim: dim - support,
    };
    basis.validate(tol)?;
    Ok(basis)
}

fn pick_gauge(cell: &DVector<C64>, phase_fixed: &DVector<C64>) -> C64 {
    // the multiplier that carries `cell` onto its phase-fixed version
    for i in 0..cell.len() {
        if cell[i].norm() > 1e-12 {
            return phase_fixed[i] / cell[i];
        }
    }
    C64::new(1.0, 0.0)
}

/// Spectral projections of every generator (nonzero eigenvalues only), each
/// tagged with its generator index.
pub fn get_all_spectral_projections(
    generators: &[ComplexOperator],
    tol: &Tolerance,
) -> Result<Vec<(ComplexOperator, u32)>> {
    let mut out = Vec::new();
    for (idx, g) in generators.iter().enumerate() {
        let sf = spectral_decompose(g, tol)?;
        for c in &sf.clusters {
            out.push((c.projection.clone(), idx as u32));
        }
    }
    Ok(out)
}

/// End-to-end decomposition of the algebra generated by Hermitian matrices.
pub fn irrep_decompose(generators: &[ComplexOperator], tol: &Tolerance) -> Result<IrrepBasis> {
    irrep_decompose_traced(generators, tol, None)
}

/// Same as [`irrep_decompose`] with an optional per-iteration scattering trace.
pub fn irrep_decompose_traced(
    generators: &[ComplexOperator],
    tol: &Tolerance,
    trace: Option<TraceFn>,
) -> Result<IrrepBasis> {
    let Some(first) = generators.first() else {
        return Err(Error::InvalidInput("empty generator list".into()));
    };
    let dim = first.dim();
    for g in generators {
        if g.dim() != dim {
            return Err(Error::DimensionMismatch {
                left: dim,
                right: g.dim(),
            });
        }
    }
    let projections = get_all_spectral_projections(generators, tol)?;
    if projections.is_empty() {
        return Err(Error::InvalidInput(
            "all generators are numerically zero".into(),
        ));
    }
    let net = crate::scattering::scatter_all_with_lineage(projections, tol, trace)?;
    let net = establish_minimality(net, tol)?;
    let (net, msmp) = establish_completeness(net, tol)?;
    construct_irrep_basis(&net, &msmp, tol)
}

/// Residuals of one generator against the Wedderburn form.
#[derive(Debug, Clone)]
pub struct GeneratorCheck {
    /// Largest entry outside the diagonal blocks of `V M V^H`.
    pub off_block: f64,
    /// Largest deviation from the `I (x) M_B` structure inside blocks.
    pub structure: f64,
    /// `||M - P M P||_F` for the support projection `P`.
    pub off_support: f64,
    /// Extracted irrep matrices `M_{B_q}`, one per block.
    pub irrep_matrices: Vec<DMatrix<C64>>,
}

impl GeneratorCheck {
    pub fn residual(&self) -> f64 {
        self.off_block.max(self.structure).max(self.off_support)
    }
}

#[derive(Debug, Clone)]
pub struct VerificationReport {
    pub per_generator: Vec<GeneratorCheck>,
    pub max_residual: f64,
}

/// Checks that every generator takes the form `(+)_q I_{A_q} (x) M_{B_q}`
/// in the recovered basis and vanishes on the null space; errors with the
/// worst offender when a residual exceeds `eps_prop`.
pub fn verify_decomposition(
    basis: &IrrepBasis,
    generators: &[ComplexOperator],
    tol: &Tolerance,
) -> Result<VerificationReport> {
    let v = basis.embedding();
    let p = basis.support_projection();
    let mut per_generator = Vec::new();
    let mut max_residual: f64 = 0.0;
    let mut worst: Option<usize> = None;
    for (gi, m) in generators.iter().enumerate() {
        if m.dim() != basis.dim {
            return Err(Error::DimensionMismatch {
                left: m.dim(),
                right: basis.dim,
            });
        }
        let t = &v * m.matrix() * v.adjoint();
        let mut off_block: f64 = 0.0;
        let mut structure: f64 = 0.0;
        let mut irrep_matrices = Vec::new();

        let mut offsets = Vec::with_capacity(basis.blocks.len());
        let mut off = 0;
        for b in &basis.blocks {
            offsets.push(off);
            off += b.rows * b.cols;
        }
        let total = off;
        for (qi, b) in basis.blocks.iter().enumerate() {
            let o = offsets[qi];
            let span = b.rows * b.cols;
            // off-block entries
            for r in o..o + span {
                for c in 0..total {
                    if (o..o + span).contains(&c) {
                        continue;
                    }
                    off_block = off_block.max(t[(r, c)].norm());
                }
            }
            // irrep matrix from row 0, then every row must repeat it
            let mut mb = DMatrix::<C64>::zeros(b.cols, b.cols);
            for k in 0..b.cols {
                for l in 0..b.cols {
                    mb[(k, l)] = t[(o + k, o + l)];
                }
            }
            for i in 0..b.rows {
                for ip in 0..b.rows {
                    for k in 0..b.cols {
                        for l in 0..b.cols {
                            let got = t[(o + i * b.cols + k, o + ip * b.cols + l)];
                            let want = if i == ip {
                                mb[(k, l)]
                            } else {
                                C64::new(0.0, 0.0)
                            };
                            structure = structure.max((got - want).norm());
                        }
                    }
                }
            }
            irrep_matrices.push(mb);
        }
        let off_support = m.distance(&(&(&p * m) * &p));
        let check = GeneratorCheck {
            off_block,
            structure,
            off_support,
            irrep_matrices,
        };
        if check.residual() > max_residual {
            max_residual = check.residual();
            worst = Some(gi);
        }
        per_generator.push(check);
    }
    if max_residual > tol.eps_prop {
        return Err(Error::VerificationFailed {
            generator: worst.unwrap_or(0),
            residual: max_residual,
        });
    }
    Ok(VerificationReport {
        per_generator,
        max_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::is_partial_isometry;
    use crate::scattering::scatter_all_with_lineage;
    use crate::systems;
    use rand::{Rng, SeedableRng};

    fn tol8() -> Tolerance {
        Tolerance::for_dim(8)
    }

    fn toy_network() -> ReflectionNetwork {
        let (pz1, pz2, px1) = systems::toy_projections();
        scatter_all_with_lineage(vec![(pz1, 0), (pz2, 0), (px1, 1)], &tol8(), None).unwrap()
    }

    #[test]
    fn minimality_passes_on_toy_network() {
        let net = toy_network();
        let before: Vec<VertexId> = net.vertex_ids();
        let net = establish_minimality(net, &tol8()).unwrap();
        assert_eq!(net.vertex_ids(), before, "network unchanged");
    }

    #[test]
    fn minimality_trivial_for_rank_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let dim = 5;
        let tol = Tolerance::for_dim(dim);
        let projs: Vec<ComplexOperator> = (0..3)
            .map(|_| systems::random_projection(dim, 1, &mut rng))
            .collect();
        let net = crate::scattering::scatter_all(&projs, &tol).unwrap();
        let n = net.vertex_count();
        let net = establish_minimality(net, &tol).unwrap();
        assert_eq!(net.vertex_count(), n);
    }

    /// Two inequivalent rank-1 triangles embedded as rank-2 reflecting
    /// projections with equal reflection coefficients per edge but different
    /// accumulated cycle phases; the holonomy check must split them apart.
    #[test]
    fn minimality_splits_twisted_triangle() {
        use nalgebra::DVector;
        let dim = 6;
        let tol = Tolerance::for_dim(dim);
        let s2 = 2f64.sqrt();
        let s3 = 3f64.sqrt();
        let us = [
            DVector::from_vec(vec![
                C64::new(1.0, 0.0),
                C64::new(0.0, 0.0),
                C64::new(0.0, 0.0),
            ]),
            DVector::from_vec(vec![
                C64::new(1.0 / s2, 0.0),
                C64::new(1.0 / s2, 0.0),
                C64::new(0.0, 0.0),
            ]),
            DVector::from_vec(vec![
                C64::new(1.0 / s3, 0.0),
                C64::new(0.0, 1.0 / s3),
                C64::new(1.0 / s3, 0.0),
            ]),
        ];
        let ws: Vec<DVector<C64>> = us.iter().map(|u| u.map(|c| c.conj())).collect();
        let mut projs = Vec::new();
        for (u, w) in us.iter().zip(&ws) {
            let mut m = nalgebra::DMatrix::<C64>::zeros(dim, dim);
            m.view_mut((0, 0), (3, 3)).copy_from(&(u * u.adjoint()));
            m.view_mut((3, 3), (3, 3)).copy_from(&(w * w.adjoint()));
            projs.push(ComplexOperator::new(m).unwrap());
        }
        let net = crate::scattering::scatter_all(&projs, &tol).unwrap();
        assert!(net.is_proper());
        for v in net.vertices() {
            assert_eq!(v.rank, 2, "engineered vertices reflect without breaking");
        }
        let net = establish_minimality(net, &tol).unwrap();
        for v in net.vertices() {
            assert_eq!(v.rank, 1, "all vertices split to rank 1");
        }
        assert_eq!(net.components().len(), 2);
    }

    /// Three inequivalent rank-1 triangles with cycle phases pi/4, -pi/4 and
    /// pi/3, stacked into rank-3 reflecting projections. The first two phases
    /// share a cosine, so the holonomy split must fall through to the
    /// imaginary-part refinement before all three blocks separate.
    #[test]
    fn minimality_splits_three_blocks_with_degenerate_real_parts() {
        use nalgebra::DVector;
        let dim = 9;
        let tol = Tolerance::for_dim(dim);
        let s2 = 2f64.sqrt();
        let s3 = 3f64.sqrt();
        let us = [
            DVector::from_vec(vec![
                C64::new(1.0, 0.0),
                C64::new(0.0, 0.0),
                C64::new(0.0, 0.0),
            ]),
            DVector::from_vec(vec![
                C64::new(1.0 / s2, 0.0),
                C64::new(1.0 / s2, 0.0),
                C64::new(0.0, 0.0),
            ]),
            DVector::from_vec(vec![
                C64::new(1.0 / s3, 0.0),
                C64::new(0.0, 1.0 / s3),
                C64::new(1.0 / s3, 0.0),
            ]),
        ];
        // same pairwise overlap moduli as `us`, cycle phase pi/3
        let psi = std::f64::consts::PI / 3.0;
        let a = C64::new(1.0 / s3, 0.0);
        let b = C64::new(
            (2f64 / 3.0).sqrt() * psi.cos(),
            (2f64 / 3.0).sqrt() * psi.sin(),
        ) - a;
        let c = C64::new((2.0 / 3.0 - b.norm_sqr()).sqrt(), 0.0);
        let vs = [
            DVector::from_vec(vec![
                C64::new(1.0, 0.0),
                C64::new(0.0, 0.0),
                C64::new(0.0, 0.0),
            ]),
            DVector::from_vec(vec![
                C64::new(1.0 / s2, 0.0),
                C64::new(1.0 / s2, 0.0),
                C64::new(0.0, 0.0),
            ]),
            DVector::from_vec(vec![a, b, c]),
        ];
        let mut projs = Vec::new();
        for i in 0..3 {
            let w = us[i].map(|x| x.conj());
            let mut m = nalgebra::DMatrix::<C64>::zeros(dim, dim);
            m.view_mut((0, 0), (3, 3))
                .copy_from(&(&us[i] * us[i].adjoint()));
            m.view_mut((3, 3), (3, 3)).copy_from(&(&w * w.adjoint()));
            m.view_mut((6, 6), (3, 3))
                .copy_from(&(&vs[i] * vs[i].adjoint()));
            projs.push(ComplexOperator::new(m).unwrap());
        }
        let net = crate::scattering::scatter_all(&projs, &tol).unwrap();
        for v in net.vertices() {
            assert_eq!(v.rank, 3, "engineered vertices reflect without breaking");
        }
        let net = establish_minimality(net, &tol).unwrap();
        assert_eq!(net.vertex_count(), 9);
        for v in net.vertices() {
            assert_eq!(v.rank, 1);
        }
        assert_eq!(net.components().len(), 3);
        // downstream construction recovers three full 3x3 blocks
        let (net, msmp) = establish_completeness(net, &tol).unwrap();
        let basis = construct_irrep_basis(&net, &msmp, &tol).unwrap();
        assert_eq!(basis.block_dims(), vec![(1, 3), (1, 3), (1, 3)]);
    }

    #[test]
    fn verification_rejects_foreign_generators() {
        let tol = tol8();
        let basis = irrep_decompose(&systems::toy_generators(), &tol).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let stranger = systems::random_hermitian(8, &mut rng);
        match verify_decomposition(&basis, std::slice::from_ref(&stranger), &tol) {
            Err(Error::VerificationFailed { residual, .. }) => assert!(residual > 1e-3),
            other => panic!("expected VerificationFailed, got {other:?}"),
        }
    }

    #[test]
    fn completeness_reconstructs_toy_complement() {
        let (pz1, _, px1) = systems::toy_projections();
        let tol = tol8();
        let net =
            scatter_all_with_lineage(vec![(pz1.clone(), 0), (px1.clone(), 1)], &tol, None).unwrap();
        let net = establish_minimality(net, &tol).unwrap();
        let before = net.vertex_count();
        assert_eq!(before, 3);
        let (net, msmp) = establish_completeness(net, &tol).unwrap();
        assert_eq!(net.vertex_count(), 4);
        assert_eq!(msmp.members.len(), 3);
        // the reconstructed projection is 2 Pz2 Px1 Pz2
        let pz2 = &ComplexOperator::identity(8) - &pz1;
        let expected = (&(&pz2 * &px1) * &pz2).scale(2.0);
        let new_id = *msmp.members.last().unwrap();
        assert!(net.vertex(new_id).projection.distance(&expected) < 1e-9);
        // identity acts as identity on every vertex
        for v in net.vertices() {
            assert!((&msmp.identity * &v.projection).distance(&v.projection) < 1e-9);
        }
    }

    #[test]
    fn completeness_identity_resolving_inputs_add_nothing() {
        let net = toy_network();
        let n = net.vertex_count();
        let (net, msmp) = establish_completeness(net, &tol8()).unwrap();
        assert_eq!(net.vertex_count(), n);
        assert_eq!(msmp.members.len(), 4);
        assert!(msmp.identity.distance(&ComplexOperator::identity(8)) < 1e-10);
    }

    #[test]
    fn completeness_restores_deleted_msmp_member() {
        // synthesize a complete minimal network from a known 2-block BPT
        // (columns = S_kk, bridges = rotated projections), then delete one
        // column member and let the repair reconstruct it
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let dim = 6;
        let tol = Tolerance::for_dim(dim);
        let u = systems::random_unitary(dim, &mut rng);
        // block: rows 2, cols 3: cells u[:, 2k + i]
        let cell = |i: usize, k: usize| u.column(2 * k + i).into_owned();
        let col_proj = |k: usize| {
            let mut p = nalgebra::DMatrix::<C64>::zeros(dim, dim);
            for i in 0..2 {
                let c = cell(i, k);
                p += &c * c.adjoint();
            }
            ComplexOperator::new(p).unwrap()
        };
        let bridge = |k: usize, l: usize| {
            let mut p = nalgebra::DMatrix::<C64>::zeros(dim, dim);
            for i in 0..2 {
                let a = cell(i, k);
                let b = cell(i, l);
                let v = (&a + &b).scale(1.0 / 2f64.sqrt());
                p += &v * v.adjoint();
            }
            ComplexOperator::new(p).unwrap()
        };
        let full = [
            (col_proj(0), 0),
            (col_proj(1), 0),
            (col_proj(2), 0),
            (bridge(0, 1), 1),
            (bridge(1, 2), 1),
        ];
        // drop column 2 and rebuild
        let reduced: Vec<(ComplexOperator, u32)> = full
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 2)
            .map(|(_, x)| x.clone())
            .collect();
        let net = scatter_all_with_lineage(reduced, &tol, None).unwrap();
        let net = establish_minimality(net, &tol).unwrap();
        let count = net.vertex_count();
        let (net, msmp) = establish_completeness(net, &tol).unwrap();
        assert_eq!(
            net.vertex_count(),
            count + 1,
            "exactly one projection added"
        );
        let new_id = *msmp.members.last().unwrap();
        assert!(net.vertex(new_id).projection.distance(&col_proj(2)) < 1e-8);
        for v in net.vertices() {
            assert!((&msmp.identity * &v.projection).distance(&v.projection) < 1e-8);
        }
    }

    #[test]
    fn toy_basis_blocks_and_block_forms() {
        let tol = tol8();
        let gens = systems::toy_generators();
        let basis = irrep_decompose(&gens, &tol).unwrap();
        assert_eq!(basis.block_dims(), vec![(2, 1), (2, 1), (2, 2)]);
        assert_eq!(basis.h0_dim, 0);

        let report = verify_decomposition(&basis, &gens, &tol).unwrap();
        assert!(report.max_residual < 1e-9);

        // the 2x2 block carries Z as diag(1,-1) and X as the swap matrix
        let big = report.per_generator[0]
            .irrep_matrices
            .iter()
            .zip(&report.per_generator[1].irrep_matrices)
            .find(|(mz, _)| mz.nrows() == 2)
            .unwrap();
        let (mz, mx) = big;
        assert!((mz[(0, 0)].re - 1.0).abs() < 1e-9 && (mz[(1, 1)].re + 1.0).abs() < 1e-9);
        assert!(mz[(0, 1)].norm() < 1e-9 && mz[(1, 0)].norm() < 1e-9);
        assert!((mx[(0, 1)].re - 1.0).abs() < 1e-9 && (mx[(1, 0)].re - 1.0).abs() < 1e-9);
        assert!(mx[(0, 0)].norm() < 1e-9 && mx[(1, 1)].norm() < 1e-9);

        // single-column blocks span the null parts of the Z projections
        let (pz1, pz2, px1) = systems::toy_projections();
        let pzx = &(&pz1 * &px1) * &pz1;
        let half1 = spectral_decompose(&pzx, &tol).unwrap().clusters[0]
            .projection
            .clone();
        let null1 = &pz1 - &half1;
        let pzx2 = &(&pz2 * &px1) * &pz2;
        let half2 = spectral_decompose(&pzx2, &tol).unwrap().clusters[0]
            .projection
            .clone();
        let null2 = &pz2 - &half2;
        let mut found = [false, false];
        for b in &basis.blocks {
            if (b.rows, b.cols) != (2, 1) {
                continue;
            }
            let mut p = nalgebra::DMatrix::<C64>::zeros(8, 8);
            for row in &b.grid {
                p += &row[0] * row[0].adjoint();
            }
            let p = ComplexOperator::new(p).unwrap();
            if p.distance(&null1) < 1e-9 {
                found[0] = true;
            }
            if p.distance(&null2) < 1e-9 {
                found[1] = true;
            }
        }
        assert!(found[0] && found[1]);
    }

    #[test]
    fn toy_with_redundant_generator_projections() {
        // feeding all four spectral projections (X2 = I - X1 is redundant)
        // must yield the same block structure
        let tol = tol8();
        let (pz1, pz2, px1) = systems::toy_projections();
        let px2 = &ComplexOperator::identity(8) - &px1;
        let projections = vec![(pz1, 0), (pz2, 0), (px1, 1), (px2, 1)];
        let net = scatter_all_with_lineage(projections, &tol, None).unwrap();
        let net = establish_minimality(net, &tol).unwrap();
        let (net, msmp) = establish_completeness(net, &tol).unwrap();
        let basis = construct_irrep_basis(&net, &msmp, &tol).unwrap();
        assert_eq!(basis.block_dims(), vec![(2, 1), (2, 1), (2, 2)]);
    }

    #[test]
    fn single_generator_blocks_are_eigenspaces() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let dim = 6;
        let tol = Tolerance::for_dim(dim);
        let m = systems::random_hermitian(dim, &mut rng);
        let basis = irrep_decompose(std::slice::from_ref(&m), &tol).unwrap();
        // generic spectrum: all eigenvalues distinct, blocks are (1,1)
        assert_eq!(basis.block_dims(), vec![(1, 1); 6]);
        let report = verify_decomposition(&basis, std::slice::from_ref(&m), &tol).unwrap();
        assert!(report.max_residual < 1e-9);
        for mb in &report.per_generator[0].irrep_matrices {
            assert_eq!(mb.nrows(), 1);
        }
    }

    #[test]
    fn synthetic_two_blocks_recovered() {
        let synth = systems::synthetic_algebra(&[(2, 1), (2, 2)], 3, 42);
        let tol = Tolerance::for_dim(6);
        let basis = irrep_decompose(&synth.generators, &tol).unwrap();
        assert_eq!(basis.block_dims(), vec![(2, 1), (2, 2)]);
        let report = verify_decomposition(&basis, &synth.generators, &tol).unwrap();
        assert!(report.max_residual < 1e-8);
    }

    #[test]
    fn null_space_reported() {
        // two generators acting on a common 4-dim support inside dim 6
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let dim = 6;
        let tol = Tolerance::for_dim(dim);
        let u = systems::random_unitary(dim, &mut rng);
        let mut gens = Vec::new();
        for _ in 0..2 {
            let mut m = nalgebra::DMatrix::<C64>::zeros(dim, dim);
            let h = systems::random_hermitian(4, &mut rng);
            m.view_mut((0, 0), (4, 4)).copy_from(h.matrix());
            gens.push(
                ComplexOperator::new(&u * m * u.adjoint())
                    .unwrap()
                    .symmetrized(),
            );
        }
        let basis = irrep_decompose(&gens, &tol).unwrap();
        assert_eq!(basis.h0_dim, 2);
        assert_eq!(basis.support_dim(), 4);
        verify_decomposition(&basis, &gens, &tol).unwrap();
    }

    #[test]
    fn path_independence_spot_check() {
        // in the toy component, the two simple paths between the Z parts are
        // proportional
        let net = toy_network();
        let tol = tol8();
        let comps = net.components();
        let big = comps.iter().find(|c| c.len() == 3).unwrap();
        let x_id = *big
            .iter()
            .find(|&&id| net.reflecting_neighbors(id).len() == 2)
            .unwrap();
        let ends: Vec<VertexId> = big.iter().copied().filter(|&id| id != x_id).collect();
        let direct = PathIsometry::along(&net, &[ends[0], x_id, ends[1]]).unwrap();
        let loopy = PathIsometry::along(&net, &[ends[0], x_id, ends[0], x_id, ends[1]]).unwrap();
        assert!(is_partial_isometry(&direct.operator, &tol));
        let (c, resid) = crate::numerics::proportionality_fit(&loopy.operator, &direct.operator);
        assert!(resid <= tol.eps_prop, "residual {resid:.3e}");
        assert!((c.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn path_independence_on_random_paths() {
        use rand::seq::SliceRandom;

        fn random_simple_path(
            net: &ReflectionNetwork,
            comp: &[VertexId],
            from: VertexId,
            to: VertexId,
            rng: &mut rand_chacha::ChaCha8Rng,
        ) -> Option<Vec<VertexId>> {
            fn go(
                net: &ReflectionNetwork,
                comp: &[VertexId],
                to: VertexId,
                visited: &mut Vec<VertexId>,
                rng: &mut rand_chacha::ChaCha8Rng,
            ) -> bool {
                let current = *visited.last().unwrap();
                if current == to {
                    return true;
                }
                let mut nb: Vec<VertexId> = net
                    .reflecting_neighbors(current)
                    .into_iter()
                    .map(|(u, _)| u)
                    .filter(|u| comp.contains(u) && !visited.contains(u))
                    .collect();
                nb.shuffle(rng);
                for n in nb {
                    visited.push(n);
                    if go(net, comp, to, visited, rng) {
                        return true;
                    }
                    visited.pop();
                }
                false
            }
            let mut visited = vec![from];
            go(net, comp, to, &mut visited, rng).then_some(visited)
        }

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let synth = systems::synthetic_algebra(&[(2, 3)], 3, 77);
        let tol = Tolerance::for_dim(6);
        let projections = get_all_spectral_projections(&synth.generators, &tol).unwrap();
        let net = scatter_all_with_lineage(projections, &tol, None).unwrap();
        let net = establish_minimality(net, &tol).unwrap();
        let comps = net.components();
        let comp = comps.iter().max_by_key(|c| c.len()).unwrap();
        assert!(comp.len() >= 3);
        for _ in 0..100 {
            let a = comp[rng.gen_range(0..comp.len())];
            let b = comp[rng.gen_range(0..comp.len())];
            if a == b {
                continue;
            }
            let (Some(p1), Some(p2)) = (
                random_simple_path(&net, comp, a, b, &mut rng),
                random_simple_path(&net, comp, a, b, &mut rng),
            ) else {
                continue;
            };
            let s1 = PathIsometry::along(&net, &p1).unwrap().operator;
            let s2 = PathIsometry::along(&net, &p2).unwrap().operator;
            let (c, resid) = crate::numerics::proportionality_fit(&s1, &s2);
            assert!(
                resid <= tol.eps_prop,
                "paths {p1:?} and {p2:?} disagree: residual {resid:.3e}"
            );
            assert!((c.norm() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn redundant_generator_added_to_toy() {
        // a third generator on the same spectral projections changes nothing
        let tol = tol8();
        let (pz1, _, px1) = systems::toy_projections();
        let px2 = &ComplexOperator::identity(8) - &px1;
        let mut gens = systems::toy_generators();
        gens.push(&px1.scale(2.0) - &px2.scale(3.0));
        let basis = irrep_decompose(&gens, &tol).unwrap();
        assert_eq!(basis.block_dims(), vec![(2, 1), (2, 1), (2, 2)]);
        let _ = pz1;
        verify_decomposition(&basis, &gens, &tol).unwrap();
    }

    #[test]
    fn dimension_accounting_random() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let dim = rng.gen_range(4..9);
            let tol = Tolerance::for_dim(dim);
            let gens: Vec<ComplexOperator> = (0..2)
                .map(|_| systems::random_hermitian(dim, &mut rng))
                .collect();
            let basis = irrep_decompose(&gens, &tol).unwrap();
            let total: usize = basis.blocks.iter().map(|b| b.rows * b.cols).sum();
            assert_eq!(total + basis.h0_dim, dim);
        }
    }

    /// End-to-end sanity on arbitrary generator sets: the pipeline always
    /// produces a decomposition that verifies against its own inputs.
    #[test]
    fn random_generator_sets_always_verify() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        for case in 0..20 {
            let dim = rng.gen_range(2..9);
            let n_gens = rng.gen_range(1..4);
            let tol = Tolerance::for_dim(dim);
            let gens: Vec<ComplexOperator> = (0..n_gens)
                .map(|_| systems::random_hermitian(dim, &mut rng))
                .collect();
            let basis = irrep_decompose(&gens, &tol).unwrap();
            let report = verify_decomposition(&basis, &gens, &tol).unwrap();
            assert!(
                report.max_residual <= tol.eps_prop,
                "case {case}: residual {:.3e}",
                report.max_residual
            );
        }
    }
}
