//! Scattering of projection pairs and the reflection network that tracks
//! reflection relations until every pair is reflecting.
//!
//! Scattering breaks a pair of projections via the spectral decomposition of
//! `P1 P2 P1`; the nonzero eigenvalue clusters give the "left" parts, the
//! mirror parts come from `P2 (.) P2 / lambda`, and what remains of each input
//! is its null part. The network records, per vertex pair, whether the
//! relation is still unknown, properly reflecting with coefficient lambda, or
//! orthogonal (no entry).

use std::collections::BTreeMap;

use crate::dsu::UnionFind;
use crate::error::{Error, Result};
use crate::numerics::{
    is_projection, projection_rank, spectral_decompose, ComplexOperator, Tolerance,
};

pub type VertexId = u32;

/// Relation attached to a vertex pair. Orthogonal pairs carry no entry at all.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgeState {
    Unknown,
    Reflecting(f64),
}

#[derive(Debug, Clone)]
pub struct Vertex {
    pub id: VertexId,
    pub projection: ComplexOperator,
    pub rank: usize,
    /// Index of the generator (or input projection) this vertex descends from.
    pub lineage: u32,
}

/// Outcome of scattering one projection pair.
///
/// `left_parts[i]` and `right_parts[i]` belong to `spectrum[i]`; parts of each
/// side are pairwise orthogonal and sum (with the null part) to their input.
#[derive(Debug, Clone)]
pub struct ScatterOutcome {
    pub spectrum: Vec<f64>,
    pub left_parts: Vec<ComplexOperator>,
    pub right_parts: Vec<ComplexOperator>,
    pub left_null: Option<ComplexOperator>,
    pub right_null: Option<ComplexOperator>,
    /// Marks spectrum entries with lambda ~ 1 where both sides coincide.
    pub unity: Vec<bool>,
}

impl ScatterOutcome {
    /// Number of pieces an input was broken into (nonzero parts plus null).
    fn piece_count(parts: &[ComplexOperator], null: &Option<ComplexOperator>) -> usize {
        parts.len() + null.is_some() as usize
    }

    pub fn left_broken(&self) -> bool {
        Self::piece_count(&self.left_parts, &self.left_null) > 1
    }

    pub fn right_broken(&self) -> bool {
        Self::piece_count(&self.right_parts, &self.right_null) > 1
    }
}

fn relaxed(tol: &Tolerance) -> Tolerance {
    Tolerance {
        eps_zero: tol.eps_zero * 10.0,
        ..*tol
    }
}

/// Scatters a projection pair.
///
/// Left parts are the nonzero spectral clusters of `p1 p2 p1`; right parts are
/// `p2 L p2 / lambda`; null parts are the remainders, included only when their
/// norm exceeds `eps_zero`. A cluster with lambda within `eps_eig` of 1 has
/// equal sides (checked) and is flagged in `unity`.
pub fn scatter_pair(
    p1: &ComplexOperator,
    p2: &ComplexOperator,
    tol: &Tolerance,
) -> Result<ScatterOutcome> {
    if p1.dim() != p2.dim() {
        return Err(Error::DimensionMismatch {
            left: p1.dim(),
            right: p2.dim(),
        });
    }
    for (name, p) in [("first", p1), ("second", p2)] {
        if !is_projection(p, tol) {
            return Err(Error::NotProjection {
                reason: format!("{name} scattering input fails the projection relations"),
            });
        }
    }

    let prod = (&(p1 * p2) * p1).symmetrized();
    let sf = spectral_decompose(&prod, tol)?;

    let rtol = relaxed(tol);
    let mut spectrum = Vec::new();
    let mut left_parts = Vec::new();
    let mut right_parts = Vec::new();
    let mut unity = Vec::new();
    for c in &sf.clusters {
        let lambda = c.eigenvalue;
        let left = c.projection.clone();
        let right = (&(p2 * &left) * p2).scale(1.0 / lambda).symmetrized();
        if !is_projection(&right, &rtol) {
            return Err(Error::SpectralFailure(format!(
                "mirror part for lambda = {lambda:.6} is not a projection"
            )));
        }
        if projection_rank(&right)? != c.rank {
            return Err(Error::SpectralFailure(format!(
                "mirror part rank disagrees with left part for lambda = {lambda:.6}"
            )));
        }
        let is_unity = (lambda - 1.0).abs() <= tol.eps_eig;
        if is_unity && left.distance(&right) > 10.0 * tol.eps_zero * p1.dim() as f64 {
            return Err(Error::SpectralFailure(
                "lambda = 1 cluster has unequal sides".into(),
            ));
        }
        let right = if is_unity { left.clone() } else { right };
        spectrum.push(lambda);
        left_parts.push(left);
        right_parts.push(right);
        unity.push(is_unity);
    }

    let null_of =
        |p: &ComplexOperator, parts: &[ComplexOperator]| -> Result<Option<ComplexOperator>> {
            let mut n = p.clone();
            for part in parts {
                n = &n - part;
            }
            if n.frobenius_norm() <= tol.eps_zero {
                return Ok(None);
            }
            let n = n.symmetrized();
            if !is_projection(&n, &rtol) {
                return Err(Error::SpectralFailure(
                    "null remainder is not a projection".into(),
                ));
            }
            Ok(Some(n))
        };
    let left_null = null_of(p1, &left_parts)?;
    let right_null = null_of(p2, &right_parts)?;

    let mut out = ScatterOutcome {
        spectrum,
        left_parts,
        right_parts,
        left_null,
        right_null,
        unity,
    };
    // an unbroken side is snapped back to its input to avoid numerical drift
    if !out.left_broken() {
        if let Some(n) = out.left_null.as_mut() {
            *n = p1.clone();
        } else if let Some(l) = out.left_parts.first_mut() {
            *l = p1.clone();
        }
    }
    if !out.right_broken() {
        if let Some(n) = out.right_null.as_mut() {
            *n = p2.clone();
        } else if let Some(r) = out.right_parts.first_mut() {
            *r = p2.clone();
        }
    }
    Ok(out)
}

/// Graph of projections with reflection-status edges.
#[derive(Debug, Clone)]
pub struct ReflectionNetwork {
    dim: usize,
    vertices: BTreeMap<VertexId, Vertex>,
    edges: BTreeMap<(VertexId, VertexId), EdgeState>,
    next_id: VertexId,
}

fn key(a: VertexId, b: VertexId) -> (VertexId, VertexId) {
    (a.min(b), a.max(b))
}

impl ReflectionNetwork {
    pub fn new(dim: usize) -> Self {
        ReflectionNetwork {
            dim,
            vertices: BTreeMap::new(),
            edges: BTreeMap::new(),
            next_id: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertex(&self, id: VertexId) -> &Vertex {
        &self.vertices[&id]
    }

    pub fn vertices(&self) -> impl Iterator<Item = &Vertex> {
        self.vertices.values()
    }

    pub fn vertex_ids(&self) -> Vec<VertexId> {
        self.vertices.keys().copied().collect()
    }

    /// `None` means the pair is orthogonal.
    pub fn edge(&self, a: VertexId, b: VertexId) -> Option<EdgeState> {
        self.edges.get(&key(a, b)).copied()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&(VertexId, VertexId), &EdgeState)> {
        self.edges.iter()
    }

    pub fn unknown_edge_count(&self) -> usize {
        self.edges
            .values()
            .filter(|e| matches!(e, EdgeState::Unknown))
            .count()
    }

    pub fn is_proper(&self) -> bool {
        self.unknown_edge_count() == 0
    }

    /// Reflecting neighbors of a vertex with their coefficients.
    pub fn reflecting_neighbors(&self, id: VertexId) -> Vec<(VertexId, f64)> {
        let mut out = Vec::new();
        for (&(a, b), e) in &self.edges {
            if let EdgeState::Reflecting(l) = e {
                if a == id {
                    out.push((b, *l));
                } else if b == id {
                    out.push((a, *l));
                }
            }
        }
        out
    }

    /// Connected components over all (unknown or reflecting) edges, each
    /// sorted by vertex id, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<VertexId>> {
        let ids = self.vertex_ids();
        let index: BTreeMap<VertexId, usize> =
            ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let mut uf = UnionFind::new(ids.len());
        for &(a, b) in self.edges.keys() {
            uf.union(index[&a], index[&b]);
        }
        uf.components()
            .into_iter()
            .map(|c| c.into_iter().map(|i| ids[i]).collect())
            .collect()
    }

    fn set_edge(&mut self, a: VertexId, b: VertexId, state: EdgeState, tol: &Tolerance) {
        if a == b {
            return;
        }
        match state {
            EdgeState::Reflecting(l) if l <= tol.eps_zero => {
                self.edges.remove(&key(a, b));
            }
            _ => {
                self.edges.insert(key(a, b), state);
            }
        }
    }

    pub(crate) fn remove_vertex(&mut self, id: VertexId) {
        self.vertices.remove(&id);
        self.edges.retain(|&(a, b), _| a != id && b != id);
    }

    /// Inserts a projection, resolving its relation to every existing vertex:
    /// assumptions from the caller take precedence, then the direct
    /// orthogonality test, then the rank-1/rank-1 shortcut; anything else is
    /// left unknown. A projection equal to an existing vertex is merged into
    /// it and the existing id returned.
    pub(crate) fn add_vertex_resolved(
        &mut self,
        projection: ComplexOperator,
        lineage: u32,
        tol: &Tolerance,
        assume: &[(VertexId, EdgeState)],
    ) -> Result<VertexId> {
        if projection.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                left: projection.dim(),
                right: self.dim,
            });
        }
        let rank = projection_rank(&projection)?;
        let dedupe = 10.0 * tol.eps_zero * self.dim as f64;

        if let Some(&dup) = self
            .vertices
            .iter()
            .find(|(_, v)| v.rank == rank && v.projection.distance(&projection) <= dedupe)
            .map(|(id, _)| id)
        {
            for &(other, state) in assume {
                if other == dup {
                    continue;
                }
                match (self.edge(dup, other), state) {
                    (None, EdgeState::Reflecting(_)) | (Some(EdgeState::Unknown), _) => {
                        self.set_edge(dup, other, state, tol);
                    }
                    _ => {}
                }
            }
            return Ok(dup);
        }

        let id = self.next_id;
        self.next_id += 1;
        let assumed: BTreeMap<VertexId, EdgeState> = assume.iter().copied().collect();
        let mut new_edges = Vec::new();
        for (&other, v) in &self.vertices {
            if let Some(&state) = assumed.get(&other) {
                new_edges.push((other, state));
                continue;
            }
            let prod = &projection * &v.projection;
            if prod.frobenius_norm() <= tol.eps_zero {
                continue; // orthogonal
            }
            if rank == 1 && v.rank == 1 {
                let lambda = prod.trace().re;
                new_edges.push((other, EdgeState::Reflecting(lambda)));
            } else {
                new_edges.push((other, EdgeState::Unknown));
            }
        }
        for (other, state) in new_edges {
            if let EdgeState::Reflecting(l) = state {
                if l > tol.eps_zero && self.vertices[&other].rank != rank {
                    return Err(Error::SpectralFailure(format!(
                        "reflecting pair with unequal ranks {} vs {}",
                        self.vertices[&other].rank, rank
                    )));
                }
            }
            self.set_edge(id, other, state, tol);
        }
        self.vertices.insert(
            id,
            Vertex {
                id,
                projection,
                rank,
                lineage,
            },
        );
        Ok(id)
    }

    /// Line-oriented dump used by the optional per-iteration debug trace.
    pub fn dump(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        for v in self.vertices.values() {
            writeln!(s, "vertex {} rank {} lineage {}", v.id, v.rank, v.lineage).unwrap();
        }
        for (&(a, b), e) in &self.edges {
            match e {
                EdgeState::Unknown => writeln!(s, "edge {a} {b} unknown").unwrap(),
                EdgeState::Reflecting(l) => writeln!(s, "edge {a} {b} reflecting {l:.12}").unwrap(),
            }
        }
        s
    }
}

/// One scattering iteration, reported to the optional trace callback.
#[derive(Debug, Clone)]
pub struct ScatterEvent {
    pub iteration: usize,
    pub pair: (VertexId, VertexId),
    pub spectrum: Vec<f64>,
    pub left_broken: bool,
    pub right_broken: bool,
}

pub type TraceFn<'a> = &'a mut dyn FnMut(&ReflectionNetwork, &ScatterEvent);

/// Picks the unknown edge to scatter next: smallest (min rank, max rank,
/// vertex-id pair). Low-rank projections are less likely to break, which
/// limits the number of reflection-relation resets.
fn pick_unknown_pair(net: &ReflectionNetwork) -> Option<(VertexId, VertexId)> {
    net.edges()
        .filter(|(_, e)| matches!(e, EdgeState::Unknown))
        .map(|(&(a, b), _)| {
            let (ra, rb) = (net.vertex(a).rank, net.vertex(b).rank);
            ((ra.min(rb), ra.max(rb), a, b), (a, b))
        })
        .min_by_key(|(k, _)| *k)
        .map(|(_, pair)| pair)
}

/// Runs the scattering loop on an existing network until it is proper.
/// The iteration count is capped at `dim^2`.
pub(crate) fn run_scattering_loop(
    net: &mut ReflectionNetwork,
    tol: &Tolerance,
    mut trace: Option<TraceFn>,
) -> Result<()> {
    let cap = net.dim() * net.dim();
    for iteration in 0..cap {
        let Some((a, b)) = pick_unknown_pair(net) else {
            return Ok(());
        };
        // orient so the lower (rank, id) endpoint is scattered directly
        let (a, b) = {
            let (ka, kb) = ((net.vertex(a).rank, a), (net.vertex(b).rank, b));
            if ka <= kb {
                (a, b)
            } else {
                (b, a)
            }
        };
        let va = net.vertex(a).clone();
        let vb = net.vertex(b).clone();
        let outcome = scatter_pair(&va.projection, &vb.projection, tol)?;
        apply_outcome(net, &va, &vb, &outcome, tol)?;
        if let Some(t) = trace.as_mut() {
            let event = ScatterEvent {
                iteration,
                pair: (a, b),
                spectrum: outcome.spectrum.clone(),
                left_broken: outcome.left_broken(),
                right_broken: outcome.right_broken(),
            };
            t(net, &event);
        }
    }
    if net.is_proper() {
        Ok(())
    } else {
        Err(Error::NonConvergence(format!(
            "scattering exceeded the dim^2 = {cap} iteration bound"
        )))
    }
}

fn apply_outcome(
    net: &mut ReflectionNetwork,
    va: &Vertex,
    vb: &Vertex,
    out: &ScatterOutcome,
    tol: &Tolerance,
) -> Result<()> {
    let left_broken = out.left_broken();
    let right_broken = out.right_broken();

    if !left_broken && !right_broken {
        // relabel the edge: reflecting for the single nonzero lambda,
        // orthogonal when the product vanished
        match out.spectrum.as_slice() {
            [] => net.set_edge(va.id, vb.id, EdgeState::Reflecting(0.0), tol),
            [l] => net.set_edge(va.id, vb.id, EdgeState::Reflecting(*l), tol),
            _ => {
                return Err(Error::SpectralFailure(
                    "unbroken pair with more than one eigenvalue".into(),
                ))
            }
        }
        return Ok(());
    }

    if left_broken {
        net.remove_vertex(va.id);
    }
    if right_broken {
        net.remove_vertex(vb.id);
    } else {
        // the kept right vertex loses its stale edge to the broken left
        net.set_edge(va.id, vb.id, EdgeState::Reflecting(0.0), tol);
    }

    // insert left parts (ascending lambda, then null)
    let mut left_ids = Vec::with_capacity(out.left_parts.len());
    for part in &out.left_parts {
        let id = if left_broken {
            net.add_vertex_resolved(part.clone(), va.lineage, tol, &[])?
        } else {
            va.id
        };
        left_ids.push(id);
    }
    if left_broken {
        if let Some(n) = &out.left_null {
            net.add_vertex_resolved(n.clone(), va.lineage, tol, &[])?;
        }
    }

    // insert right parts, pinning the reflecting edge to the matching left part
    for (i, part) in out.right_parts.iter().enumerate() {
        if out.unity[i] {
            // both sides share one vertex; nothing further to insert
            continue;
        }
        let assume = [(left_ids[i], EdgeState::Reflecting(out.spectrum[i]))];
        if right_broken {
            net.add_vertex_resolved(part.clone(), vb.lineage, tol, &assume)?;
        } else {
            net.set_edge(
                vb.id,
                left_ids[i],
                EdgeState::Reflecting(out.spectrum[i]),
                tol,
            );
        }
    }
    if right_broken {
        if let Some(n) = &out.right_null {
            net.add_vertex_resolved(n.clone(), vb.lineage, tol, &[])?;
        }
    }
    Ok(())
}

/// Builds the improper reflection network from a projection list (lineage =
/// input position) and scatters until proper.
pub fn scatter_all(projections: &[ComplexOperator], tol: &Tolerance) -> Result<ReflectionNetwork> {
    let tagged: Vec<(ComplexOperator, u32)> = projections.iter().cloned().zip(0u32..).collect();
    scatter_all_with_lineage(tagged, tol, None)
}

/// Full-control entry point: explicit lineage tags and an optional trace
/// callback invoked after every scattering iteration.
pub fn scatter_all_with_lineage(
    projections: Vec<(ComplexOperator, u32)>,
    tol: &Tolerance,
    trace: Option<TraceFn>,
) -> Result<ReflectionNetwork> {
    tol.validate()?;
    let Some(dim) = projections.first().map(|(p, _)| p.dim()) else {
        return Err(Error::InvalidInput("empty projection list".into()));
    };
    let mut net = ReflectionNetwork::new(dim);
    for (p, lineage) in projections {
        if !is_projection(&p, tol) {
            return Err(Error::NotProjection {
                reason: "scatter_all input fails the projection relations".into(),
            });
        }
        net.add_vertex_resolved(p, lineage, tol, &[])?;
    }
    run_scattering_loop(&mut net, tol, trace)?;
    Ok(net)
}

/// Normalized product of projections along a path: a partial isometry from
/// the eigenspace of the last vertex to the eigenspace of the first.
pub fn path_isometry(net: &ReflectionNetwork, path: &[VertexId]) -> Result<ComplexOperator> {
    if path.is_empty() {
        return Err(Error::InvalidInput("empty path".into()));
    }
    let mut op = net.vertex(path[0]).projection.clone();
    let mut norm = 1.0;
    for w in path.windows(2) {
        let (a, b) = (w[0], w[1]);
        match net.edge(a, b) {
            Some(EdgeState::Reflecting(l)) if l > 0.0 => {
                op = &op * &net.vertex(b).projection;
                norm *= l;
            }
            other => {
                return Err(Error::InvalidInput(format!(
                    "path step {a}->{b} is not a properly reflecting edge ({other:?})"
                )))
            }
        }
    }
    Ok(op.scale(1.0 / norm.sqrt()))
}
