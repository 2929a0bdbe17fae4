//! Seeded random instance families used by tests and benchmarks.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::{singlet_vector, HamiltonianSpec, SpinSystem};
use crate::numerics::{inner, kron_vec, normalized, CMatrix, C64};

pub fn random_state(dim: usize, rng: &mut impl Rng) -> Vec<C64> {
    loop {
        let v: Vec<C64> =
            (0..dim).map(|_| C64::new(StandardNormal.sample(rng), StandardNormal.sample(rng))).collect();
        if let Some(u) = normalized(&v) {
            return u;
        }
    }
}

/// Random connected graph: a random spanning tree plus each other edge with
/// probability `extra`.
pub fn random_connected_graph(n: usize, extra: f64, rng: &mut impl Rng) -> SpinSystem {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges = std::collections::BTreeSet::new();
    for i in 1..n {
        let j = rng.random_range(0..i);
        let (a, b) = (order[i], order[j]);
        edges.insert((a.min(b), a.max(b)));
    }
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(extra) {
                edges.insert((a, b));
            }
        }
    }
    SpinSystem::new(n, edges).expect("valid graph")
}

/// Orthonormal vectors orthogonal to `avoid` (Gram-Schmidt on random draws).
fn random_orthonormal(count: usize, avoid: &[Vec<C64>], dim: usize, rng: &mut impl Rng) -> Vec<Vec<C64>> {
    let mut basis: Vec<Vec<C64>> = avoid.to_vec();
    let mut out = Vec::new();
    while out.len() < count {
        let mut v = random_state(dim, rng);
        for b in &basis {
            let c = inner(b, &v);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= c * y;
            }
        }
        if let Some(u) = normalized(&v).filter(|_| crate::numerics::norm(&v) > 1e-6) {
            basis.push(u.clone());
            out.push(u);
        }
    }
    out
}

/// PSD term with the given support vectors and random eigenvalues in `[0.5, 2)`.
fn psd_from_support(support: &[Vec<C64>], rng: &mut impl Rng) -> CMatrix {
    let mut h = CMatrix::zeros(4, 4);
    for v in support {
        h += &CMatrix::projector(v).scale_real(rng.random_range(0.5..2.0));
    }
    h
}

/// Frustration-free instance with a planted product ground state: every term
/// annihilates `⊗ φ_v`. Term ranks are drawn from `1..=max_rank`.
pub fn planted_product(n: usize, extra: f64, max_rank: usize, rng: &mut impl Rng) -> HamiltonianSpec {
    let system = random_connected_graph(n, extra, rng);
    let phis: Vec<Vec<C64>> = (0..n).map(|_| random_state(2, rng)).collect();
    let mut spec = HamiltonianSpec::new(system.clone());
    for &(a, b) in system.edges() {
        let rank = rng.random_range(1..=max_rank.clamp(1, 3));
        let avoid = kron_vec(&phis[a], &phis[b]);
        let support = random_orthonormal(rank, &[avoid], 4, rng);
        spec.two_spin.insert((a, b), psd_from_support(&support, rng));
    }
    spec
}

/// Twisted singlet sum: the constraint on `(a, b)` is `<Ψ⁻|(L_a ⊗ L_b)` with
/// random invertible `L_v`, so the kernel is `(⊗ L_v)^{-1}` applied to the
/// symmetric subspace and has dimension `N + 1`.
pub fn twisted_singlets(n: usize, extra: f64, rng: &mut impl Rng) -> HamiltonianSpec {
    let system = random_connected_graph(n, extra, rng);
    let factors: Vec<CMatrix> = (0..n)
        .map(|_| loop {
            let m = CMatrix::from_vec(2, 2, random_state(4, rng));
            let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
            if det.norm() > 0.2 {
                break m;
            }
        })
        .collect();
    let psi = singlet_vector();
    let mut spec = HamiltonianSpec::new(system.clone());
    for &(a, b) in system.edges() {
        // bra = <Ψ⁻|(L_a ⊗ L_b); the term is |β><β| with β = bra^*
        let l = factors[a].kron(&factors[b]);
        let bra: Vec<C64> = (0..4).map(|j| (0..4).map(|i| psi[i].conj() * l[(i, j)]).sum()).collect();
        let ket: Vec<C64> = normalized(&bra).unwrap().iter().map(|x| x.conj()).collect();
        spec.two_spin.insert((a, b), CMatrix::projector(&ket).scale_real(rng.random_range(0.5..2.0)));
    }
    spec
}

/// Adds a random entangled rank-1 term on a random edge, which usually
/// destroys the planted ground space.
pub fn perturb(spec: &HamiltonianSpec, rng: &mut impl Rng) -> HamiltonianSpec {
    let mut out = spec.clone();
    let edges = spec.system.edges();
    let &(a, b) = edges.choose(rng).expect("at least one edge");
    let v = random_state(4, rng);
    let m = CMatrix::projector(&v).scale_real(rng.random_range(0.5..2.0));
    out.add_two_spin(a, b, m).expect("edge exists");
    out
}

/// Random rank-`rank` PSD term with an entangled support.
pub fn random_term(rank: usize, rng: &mut impl Rng) -> CMatrix {
    let support = random_orthonormal(rank, &[], 4, rng);
    psd_from_support(&support, rng)
}
