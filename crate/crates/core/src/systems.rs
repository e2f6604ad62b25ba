//! Builders for the example systems: the 8-dimensional two-observable toy
//! model, the spin-orbit particle, the bound pair on a periodic lattice, the
//! two-spin total-spin table, and seeded synthetic algebras with a planted
//! block structure. Plus the spin-operator and Kronecker helpers shared with
//! the spin-chain module.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::bpt::BipartitionTable;
use crate::numerics::ComplexOperator;

pub const PAULI_AXES: [char; 3] = ['x', 'y', 'z'];

/// 2x2 Pauli matrix for axis `x`, `y` or `z`.
pub fn pauli(axis: char) -> ComplexOperator {
    let (a, b, c, d) = match axis {
        'x' => (0.0.into(), 1.0.into(), 1.0.into(), 0.0.into()),
        'y' => (
            C64::new(0.0, 0.0),
            C64::new(0.0, -1.0),
            C64::new(0.0, 1.0),
            C64::new(0.0, 0.0),
        ),
        'z' => (1.0.into(), 0.0.into(), 0.0.into(), (-1.0).into()),
        _ => panic!("unknown Pauli axis {axis}"),
    };
    ComplexOperator::new(DMatrix::from_row_slice(2, 2, &[a, b, c, d])).unwrap()
}

/// Spin-1/2 operator `sigma/2`.
pub fn spin_half(axis: char) -> ComplexOperator {
    pauli(axis).scale(0.5)
}

/// Embeds a single-site operator at `site` of an `n_sites` qubit chain.
pub fn site_operator(n_sites: usize, site: usize, local: &ComplexOperator) -> ComplexOperator {
    let id = ComplexOperator::identity(2);
    let mut out = ComplexOperator::identity(1);
    for k in 0..n_sites {
        out = out.kronecker(if k == site { local } else { &id });
    }
    out
}

fn basis_vector(dim: usize, entries: &[(usize, C64)]) -> DVector<C64> {
    let mut v = DVector::<C64>::zeros(dim);
    for &(i, a) in entries {
        v[i] = a;
    }
    v
}

fn dyad(v: &DVector<C64>) -> DMatrix<C64> {
    v * v.adjoint()
}

/// The toy system's spectral projections: `Pi_{Z;1}` on the span of the first
/// four basis states, its complement partner, and the rank-2 `Pi_{X;1}`.
pub fn toy_projections() -> (ComplexOperator, ComplexOperator, ComplexOperator) {
    let r = |x: f64| C64::new(x, 0.0);
    let mut pz1 = DMatrix::<C64>::zeros(8, 8);
    for i in 0..4 {
        pz1[(i, i)] = r(1.0);
    }
    let pz1 = ComplexOperator::new(pz1).unwrap();
    let pz2 = &ComplexOperator::identity(8) - &pz1;
    let s2 = 1.0 / 2f64.sqrt();
    let v37 = basis_vector(8, &[(2, r(s2)), (6, r(s2))]);
    let v1256 = basis_vector(8, &[(0, r(0.5)), (1, r(0.5)), (4, r(0.5)), (5, r(0.5))]);
    let px1 = ComplexOperator::new(dyad(&v37) + dyad(&v1256)).unwrap();
    (pz1, pz2, px1)
}

/// Toy generators `Z = Pi_{Z;1} - Pi_{Z;2}` and `X = Pi_{X;1} - Pi_{X;2}`
/// (eigenvalues 1 and -1 on both observables).
pub fn toy_generators() -> Vec<ComplexOperator> {
    let (pz1, pz2, px1) = toy_projections();
    let px2 = &ComplexOperator::identity(8) - &px1;
    vec![&pz1 - &pz2, &px1 - &px2]
}

/// Total angular momentum components `J_z`, `J_x` for a spin-1/2 particle
/// with integer orbital angular momentum `l`, on dimension `2(2l+1)`.
/// Basis order: orbital `m_L = -l..l` (major) times spin `m_S = -1/2, +1/2`.
pub fn spin_orbit_generators(l: u32) -> Vec<ComplexOperator> {
    assert!(l >= 1, "orbital angular momentum must be at least 1");
    let lf = l as f64;
    let d = (2 * l + 1) as usize;
    let mut lz = DMatrix::<C64>::zeros(d, d);
    let mut lx = DMatrix::<C64>::zeros(d, d);
    for i in 0..d {
        let m = -lf + i as f64;
        lz[(i, i)] = C64::new(m, 0.0);
        if i + 1 < d {
            // <m+1| L_+ |m> = sqrt(l(l+1) - m(m+1))
            let amp = (lf * (lf + 1.0) - m * (m + 1.0)).sqrt() / 2.0;
            lx[(i + 1, i)] = C64::new(amp, 0.0);
            lx[(i, i + 1)] = C64::new(amp, 0.0);
        }
    }
    let lz = ComplexOperator::new(lz).unwrap();
    let lx = ComplexOperator::new(lx).unwrap();
    let sz = {
        let mut m = DMatrix::<C64>::zeros(2, 2);
        m[(0, 0)] = C64::new(-0.5, 0.0);
        m[(1, 1)] = C64::new(0.5, 0.0);
        ComplexOperator::new(m).unwrap()
    };
    let sx = spin_half('x');
    let id_l = ComplexOperator::identity(d);
    let id_s = ComplexOperator::identity(2);
    let jz = &lz.kronecker(&id_s) + &id_l.kronecker(&sz);
    let jx = &lx.kronecker(&id_s) + &id_l.kronecker(&sx);
    vec![jz, jx]
}

/// Center-of-mass position and momentum observables of a bound particle pair
/// on a periodic lattice of length `d`, on dimension `2d`.
///
/// Basis: index `2n` is the pair at sites `(n, n+1)`, index `2n+1` the pair
/// at `(n+1, n)`. The position observables are the rank-2 projections on a
/// fixed center; the momentum observables are the sums of the two dyads of
/// Fourier-transformed bound pairs, `|p;m,m+1><p;m,m+1| + |p;m+1,m><p;m+1,m|`,
/// whose eigenvalue split separates the symmetric and antisymmetric
/// orientation parts.
pub fn bound_pair_generators(d: usize) -> Vec<ComplexOperator> {
    assert!(d >= 3, "lattice length must be at least 3");
    let dim = 2 * d;
    let mut gens = Vec::with_capacity(2 * d);
    for n in 0..d {
        let mut p = DMatrix::<C64>::zeros(dim, dim);
        p[(2 * n, 2 * n)] = C64::new(1.0, 0.0);
        p[(2 * n + 1, 2 * n + 1)] = C64::new(1.0, 0.0);
        gens.push(ComplexOperator::new(p).unwrap());
    }
    let omega = |k: i64| {
        let phi = 2.0 * std::f64::consts::PI * k as f64 / d as f64;
        C64::new(phi.cos(), phi.sin())
    };
    let norm = 1.0 / (dim as f64).sqrt();
    for m in 0..d as i64 {
        let mut p1 = DVector::<C64>::zeros(dim);
        let mut p2 = DVector::<C64>::zeros(dim);
        for n in 0..d as i64 {
            let base = 2 * m * n + m + n;
            p1[2 * n as usize] = omega(base + 1) * norm;
            p1[2 * n as usize + 1] = omega(base) * norm;
            p2[2 * n as usize] = omega(base) * norm;
            p2[2 * n as usize + 1] = omega(base + 1) * norm;
        }
        gens.push(ComplexOperator::new(dyad(&p1) + dyad(&p2)).unwrap());
    }
    gens
}

/// Projections on the symmetric and antisymmetric orientation sectors of the
/// bound pair (the superselection sectors of its observable algebra).
pub fn bound_pair_sector_projections(d: usize) -> (ComplexOperator, ComplexOperator) {
    let dim = 2 * d;
    let s2 = 1.0 / 2f64.sqrt();
    let mut sym = DMatrix::<C64>::zeros(dim, dim);
    let mut anti = DMatrix::<C64>::zeros(dim, dim);
    for n in 0..d {
        let chi0 = basis_vector(
            dim,
            &[(2 * n, C64::new(s2, 0.0)), (2 * n + 1, C64::new(s2, 0.0))],
        );
        let chipi = basis_vector(
            dim,
            &[(2 * n, C64::new(s2, 0.0)), (2 * n + 1, C64::new(-s2, 0.0))],
        );
        sym += dyad(&chi0);
        anti += dyad(&chipi);
    }
    (
        ComplexOperator::new(sym).unwrap(),
        ComplexOperator::new(anti).unwrap(),
    )
}

/// Two spin-1/2 particles: total spin operators `[S_z, S_x, S_y]` and the
/// singlet-triplet table whose columns are labeled by total spin-z.
/// Basis order `|00>, |01>, |10>, |11>`.
pub fn two_spin_total() -> (Vec<ComplexOperator>, BipartitionTable) {
    let id = ComplexOperator::identity(2);
    let total = |axis: char| {
        let s = spin_half(axis);
        &s.kronecker(&id) + &id.kronecker(&s)
    };
    let ops = vec![total('z'), total('x'), total('y')];

    let r = |x: f64| C64::new(x, 0.0);
    let s2 = 1.0 / 2f64.sqrt();
    // sigma_z |0> = +|0>, so |11> carries total spin-z -1 and |00> carries +1
    let minus1_t = basis_vector(4, &[(3, r(1.0))]);
    let zero_t = basis_vector(4, &[(1, r(s2)), (2, r(s2))]);
    let zero_s = basis_vector(4, &[(1, r(s2)), (2, r(-s2))]);
    let plus1_t = basis_vector(4, &[(0, r(1.0))]);
    let table = BipartitionTable::from_columns(
        4,
        vec![vec![
            (vec![minus1_t], "m=-1".to_string()),
            (vec![zero_t, zero_s], "m=0".to_string()),
            (vec![plus1_t], "m=1".to_string()),
        ]],
    )
    .expect("valid compact table");
    (ops, table)
}

pub fn random_unitary(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<C64> {
    let g = DMatrix::<C64>::from_fn(dim, dim, |_, _| {
        C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    });
    g.qr().q()
}

pub fn random_hermitian(dim: usize, rng: &mut ChaCha8Rng) -> ComplexOperator {
    let g = DMatrix::<C64>::from_fn(dim, dim, |_, _| {
        C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
    });
    ComplexOperator::new((&g + g.adjoint()).scale(0.5)).unwrap()
}

pub fn random_projection(dim: usize, rank: usize, rng: &mut ChaCha8Rng) -> ComplexOperator {
    let u = random_unitary(dim, rng);
    let mut p = DMatrix::<C64>::zeros(dim, dim);
    for k in 0..rank {
        let col = u.column(k);
        p += col * col.adjoint();
    }
    ComplexOperator::new(p).unwrap()
}

/// A seeded random algebra with planted Wedderburn structure.
#[derive(Debug, Clone)]
pub struct SyntheticAlgebra {
    pub generators: Vec<ComplexOperator>,
    pub unitary: DMatrix<C64>,
    /// Planted (multiplicity rows, irrep cols) per block.
    pub blocks: Vec<(usize, usize)>,
}

impl SyntheticAlgebra {
    /// Planted block dimensions as a sorted multiset.
    pub fn planted_dims(&self) -> Vec<(usize, usize)> {
        let mut d = self.blocks.clone();
        d.sort();
        d
    }
}

/// Builds `U ((+)_q I_{r_q} (x) M_{B_q}) U^H` generators for the given block
/// multiset. Eigenvalues are resampled until every generator separates
/// distinct blocks by at least 1e-6 and stays that far from zero, so the
/// planted structure is numerically unambiguous.
pub fn synthetic_algebra(
    blocks: &[(usize, usize)],
    n_generators: usize,
    seed: u64,
) -> SyntheticAlgebra {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim: usize = blocks.iter().map(|&(r, n)| r * n).sum();
    let u = random_unitary(dim, &mut rng);
    'attempt: loop {
        let mut gens = Vec::with_capacity(n_generators);
        for _ in 0..n_generators {
            let mut planted = DMatrix::<C64>::zeros(dim, dim);
            let mut offset = 0;
            let mut block_eigs: Vec<Vec<f64>> = Vec::new();
            for &(r, n) in blocks {
                let mb = random_hermitian(n, &mut rng);
                let eye = DMatrix::<C64>::identity(r, r);
                let big = eye.kronecker(mb.matrix());
                let span = r * n;
                planted
                    .view_mut((offset, offset), (span, span))
                    .copy_from(&big);
                offset += span;
                let (vals, _) = crate::numerics::hermitian_eigen(&mb).expect("hermitian");
                block_eigs.push(vals);
            }
            // distinct blocks must not share eigenvalues, and none may vanish
            for (i, a) in block_eigs.iter().enumerate() {
                for v in a {
                    if v.abs() < 1e-6 {
                        continue 'attempt;
                    }
                    for b in block_eigs.iter().skip(i + 1) {
                        for w in b {
                            if (v - w).abs() < 1e-6 {
                                continue 'attempt;
                            }
                        }
                    }
                }
            }
            let g = ComplexOperator::new(&u * planted * u.adjoint())
                .unwrap()
                .symmetrized();
            gens.push(g);
        }
        return SyntheticAlgebra {
            generators: gens,
            unitary: u,
            blocks: blocks.to_vec(),
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{commutator_fnorm, is_projection, Tolerance};

    #[test]
    fn toy_projections_are_projections() {
        let tol = Tolerance::for_dim(8);
        let (pz1, pz2, px1) = toy_projections();
        for p in [&pz1, &pz2, &px1] {
            assert!(is_projection(p, &tol));
        }
        assert!((&pz1 * &pz2).frobenius_norm() < 1e-14);
        assert_eq!((&pz1 + &pz2).distance(&ComplexOperator::identity(8)), 0.0);
    }

    #[test]
    fn angular_momentum_commutation() {
        // [J_z, J_x] = i J_y, verified through the Jacobi closure
        // [[J_z, J_x], J_z] having the J_x commutation norm
        let gens = spin_orbit_generators(2);
        let (jz, jx) = (&gens[0], &gens[1]);
        let comm = &(jz * jx) - &(jx * jz);
        // J_y = -i [J_z, J_x]
        let jy = comm.scale_complex(C64::new(0.0, -1.0));
        assert!(jy.hermitian_residual() < 1e-12);
        // [J_x, J_y] = i J_z
        let comm2 = &(jx * &jy) - &(&jy * jx);
        assert!(comm2.distance(&jz.scale_complex(C64::new(0.0, 1.0))) < 1e-12);
    }

    #[test]
    fn bound_pair_generator_shapes() {
        let tol = Tolerance::for_dim(10);
        let gens = bound_pair_generators(5);
        assert_eq!(gens.len(), 10);
        for g in &gens[..5] {
            assert!(is_projection(g, &tol));
        }
        for g in &gens[5..] {
            assert!(g.hermitian_residual() < 1e-12);
            // trace 2: two unit dyads
            assert!((g.trace().re - 2.0).abs() < 1e-12);
        }
        let (sym, anti) = bound_pair_sector_projections(5);
        assert!(is_projection(&sym, &tol));
        assert!((&sym * &anti).frobenius_norm() < 1e-14);
        // every generator commutes with the sector split
        for g in &gens {
            assert!(commutator_fnorm(g, &sym).unwrap() < 1e-10);
        }
    }

    #[test]
    fn two_spin_ops_close_su2() {
        let (ops, table) = two_spin_total();
        let (sz, sx, sy) = (&ops[0], &ops[1], &ops[2]);
        let comm = &(sz * sx) - &(sx * sz);
        assert!(comm.distance(&sy.scale_complex(C64::new(0.0, 1.0))) < 1e-14);
        assert_eq!(table.dim(), 4);
        assert_eq!(table.blocks()[0].heights(), &[1, 2, 1]);
    }

    #[test]
    fn synthetic_algebra_has_planted_form() {
        let s = synthetic_algebra(&[(1, 2), (3, 1)], 3, 7);
        assert_eq!(s.generators.len(), 3);
        assert_eq!(s.generators[0].dim(), 5);
        // generators commute with the conjugated block projector
        let mut p = DMatrix::<C64>::zeros(5, 5);
        for i in 0..2 {
            p[(i, i)] = C64::new(1.0, 0.0);
        }
        let p = ComplexOperator::new(&s.unitary * p * s.unitary.adjoint()).unwrap();
        for g in &s.generators {
            assert!(commutator_fnorm(g, &p).unwrap() < 1e-10);
        }
    }
}
