//! Brute-force reference: assemble the full `2^N` Hamiltonian and
//! diagonalize it, densely for small systems and matrix-free otherwise.
//!
//! Site `s` of an `N`-spin system maps to bit `N - 1 - s` of a basis index,
//! matching the tensor ordering used by [`crate::model`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{HamiltonianSpec, LocalOperator, LocalSum, Observable};
use crate::numerics::{hermitian_eig, inner, norm, CMatrix, C64, ZERO};

/// Eigenvalues below this count as zero modes / degenerate with the ground.
pub const GAP_THRESHOLD: f64 = 1e-7;

pub const DENSE_LIMIT: usize = 12;
pub const ITERATIVE_LIMIT: usize = 20;

#[derive(Clone, Copy, Debug)]
pub struct OracleOptions {
    /// Systems up to this size are diagonalized densely.
    pub dense_limit: usize,
    /// Hard ceiling for the matrix-free path.
    pub iterative_limit: usize,
    pub seed: u64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { dense_limit: 10, iterative_limit: ITERATIVE_LIMIT, seed: 0x5eed }
    }
}

struct PreparedTerm {
    matrix: CMatrix,
    mask: usize,
    offsets: Vec<usize>,
}

/// Matrix-free Hamiltonian on `n_sites` qubits.
pub struct AssembledHamiltonian {
    n_sites: usize,
    terms: Vec<PreparedTerm>,
    constant: f64,
}

impl AssembledHamiltonian {
    pub fn new(n_sites: usize, sum: &LocalSum) -> Result<Self> {
        let mut terms = Vec::with_capacity(sum.terms.len());
        for t in &sum.terms {
            terms.push(prepare(n_sites, t)?);
        }
        Ok(Self { n_sites, terms, constant: sum.constant })
    }

    pub fn from_spec(spec: &HamiltonianSpec) -> Result<Self> {
        Self::new(spec.n_sites(), &spec.to_local_sum())
    }

    /// Terms only, without `ground_shift`.
    pub fn from_spec_terms(spec: &HamiltonianSpec) -> Result<Self> {
        let mut sum = spec.to_local_sum();
        sum.constant = 0.0;
        Self::new(spec.n_sites(), &sum)
    }

    pub fn from_observable(n_sites: usize, obs: &Observable) -> Result<Self> {
        Self::new(n_sites, &obs.to_local_sum())
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dim(&self) -> usize {
        1 << self.n_sites
    }

    pub fn apply(&self, psi: &[C64]) -> Vec<C64> {
        assert_eq!(psi.len(), self.dim());
        let mut out: Vec<C64> = psi.iter().map(|x| x * self.constant).collect();
        let mut local = Vec::new();
        for t in &self.terms {
            let k = t.offsets.len();
            local.resize(k, ZERO);
            for base in 0..self.dim() {
                if base & t.mask != 0 {
                    continue;
                }
                for (m, &off) in t.offsets.iter().enumerate() {
                    local[m] = psi[base | off];
                }
                for (r, &off) in t.offsets.iter().enumerate() {
                    let row = t.matrix.row(r);
                    let mut acc = ZERO;
                    for (a, b) in row.iter().zip(&local) {
                        acc += a * b;
                    }
                    out[base | off] += acc;
                }
            }
        }
        out
    }

    pub fn expectation(&self, psi: &[C64]) -> f64 {
        inner(psi, &self.apply(psi)).re
    }

    pub fn dense(&self) -> CMatrix {
        let dim = self.dim();
        let mut m = CMatrix::identity(dim).scale_real(self.constant);
        for t in &self.terms {
            for base in 0..dim {
                if base & t.mask != 0 {
                    continue;
                }
                for (r, &ro) in t.offsets.iter().enumerate() {
                    for (c, &co) in t.offsets.iter().enumerate() {
                        m[(base | ro, base | co)] += t.matrix[(r, c)];
                    }
                }
            }
        }
        m
    }
}

fn prepare(n_sites: usize, op: &LocalOperator) -> Result<PreparedTerm> {
    let k = op.sites.len();
    let bits: Vec<usize> = op
        .sites
        .iter()
        .map(|&s| if s < n_sites { Ok(n_sites - 1 - s) } else { Err(Error::SiteOutOfRange { site: s, n: n_sites }) })
        .collect::<Result<_>>()?;
    let mask = bits.iter().fold(0, |acc, &b| acc | (1 << b));
    let offsets = (0..1usize << k)
        .map(|m| (0..k).fold(0, |acc, i| acc | (((m >> (k - 1 - i)) & 1) << bits[i])))
        .collect();
    Ok(PreparedTerm { matrix: op.matrix.clone(), mask, offsets })
}

#[derive(Clone, Debug)]
pub struct GroundResult {
    pub energy: f64,
    /// Number of eigenvalues within [`GAP_THRESHOLD`] of the ground energy.
    pub degeneracy: usize,
    /// Lowest eigenvalues found, ascending (at least `k` or `degeneracy`).
    pub energies: Vec<f64>,
    pub vectors: Vec<Vec<C64>>,
}

fn check_size(n: usize, limit: usize) -> Result<()> {
    if n > limit {
        return Err(Error::TooLarge { n, limit });
    }
    Ok(())
}

/// Ground energy (with `ground_shift`), its degeneracy, and the lowest `k`
/// eigenvectors.
pub fn exact_ground(spec: &HamiltonianSpec, k: usize, opts: &OracleOptions) -> Result<GroundResult> {
    let n = spec.n_sites();
    check_size(n, opts.iterative_limit.min(ITERATIVE_LIMIT))?;
    if n <= opts.dense_limit.min(DENSE_LIMIT) {
        exact_ground_dense(spec, k)
    } else {
        exact_ground_iterative(spec, k, opts.seed)
    }
}

pub fn exact_ground_dense(spec: &HamiltonianSpec, k: usize) -> Result<GroundResult> {
    check_size(spec.n_sites(), DENSE_LIMIT)?;
    let h = AssembledHamiltonian::from_spec(spec)?;
    let eig = hermitian_eig(&h.dense())?;
    let e0 = eig.values[0];
    let degeneracy = eig.values.iter().take_while(|&&e| e - e0 < GAP_THRESHOLD).count();
    let count = k.max(degeneracy).min(eig.values.len());
    Ok(GroundResult {
        energy: e0,
        degeneracy,
        energies: eig.values[..count].to_vec(),
        vectors: (0..count).map(|i| eig.vector(i)).collect(),
    })
}

/// Matrix-free path: restarted Lanczos with full re-orthogonalization,
/// deflating converged vectors one at a time.
pub fn exact_ground_iterative(spec: &HamiltonianSpec, k: usize, seed: u64) -> Result<GroundResult> {
    check_size(spec.n_sites(), ITERATIVE_LIMIT)?;
    let h = AssembledHamiltonian::from_spec(spec)?;
    let dim = h.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut energies: Vec<f64> = Vec::new();
    let mut vectors: Vec<Vec<C64>> = Vec::new();
    let k = k.max(1);
    loop {
        if vectors.len() >= dim {
            break;
        }
        let (theta, x) = lanczos_lowest(&h, &vectors, &mut rng);
        energies.push(theta);
        vectors.push(x);
        let e0 = energies.iter().copied().fold(f64::INFINITY, f64::min);
        let last = *energies.last().unwrap();
        if vectors.len() >= k && last - e0 >= GAP_THRESHOLD {
            break;
        }
        if vectors.len() >= 256 {
            break;
        }
    }
    let mut order: Vec<usize> = (0..energies.len()).collect();
    order.sort_by(|&a, &b| energies[a].total_cmp(&energies[b]));
    let energies: Vec<f64> = order.iter().map(|&i| energies[i]).collect();
    let vectors: Vec<Vec<C64>> = order.iter().map(|&i| vectors[i].clone()).collect();
    let e0 = energies[0];
    let degeneracy = energies.iter().take_while(|&&e| e - e0 < GAP_THRESHOLD).count();
    let count = k.max(degeneracy).min(energies.len());
    Ok(GroundResult { energy: e0, degeneracy, energies: energies[..count].to_vec(), vectors: vectors[..count].to_vec() })
}

fn project_out(v: &mut [C64], basis: &[Vec<C64>]) {
    for b in basis {
        let c = inner(b, v);
        for (x, y) in v.iter_mut().zip(b) {
            *x -= c * y;
        }
    }
}

fn scale_in_place(v: &mut [C64], s: f64) {
    for x in v.iter_mut() {
        *x *= s;
    }
}

/// Lowest eigenpair of `h` on the orthogonal complement of `locked`.
fn lanczos_lowest(h: &AssembledHamiltonian, locked: &[Vec<C64>], rng: &mut ChaCha8Rng) -> (f64, Vec<C64>) {
    let dim = h.dim();
    let steps = if dim > 1 << 18 { 24 } else { 60 }.min(dim - locked.len());
    let mut v: Vec<C64> = (0..dim).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
    project_out(&mut v, locked);
    project_out(&mut v, locked);
    let nv = norm(&v);
    scale_in_place(&mut v, 1.0 / nv);

    let mut best = (f64::INFINITY, v.clone());
    for _restart in 0..400 {
        let mut basis: Vec<Vec<C64>> = vec![v.clone()];
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut invariant = false;
        for j in 0..steps {
            let mut w = h.apply(&basis[j]);
            let a = inner(&basis[j], &w).re;
            alpha.push(a);
            for _ in 0..2 {
                project_out(&mut w, locked);
                project_out(&mut w, &basis);
            }
            let b = norm(&w);
            if b < 1e-13 * a.abs().max(1.0) {
                invariant = true;
                break;
            }
            if j + 1 == steps {
                break;
            }
            beta.push(b);
            scale_in_place(&mut w, 1.0 / b);
            basis.push(w);
        }
        let m = alpha.len();
        let mut t = CMatrix::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = C64::new(alpha[i], 0.0);
            if i + 1 < m {
                t[(i, i + 1)] = C64::new(beta[i], 0.0);
                t[(i + 1, i)] = C64::new(beta[i], 0.0);
            }
        }
        let eig = hermitian_eig(&t).expect("tridiagonal matrix is symmetric");
        let s = eig.vector(0);
        let mut x = vec![ZERO; dim];
        for (coef, b) in s.iter().zip(&basis) {
            for (xi, bi) in x.iter_mut().zip(b) {
                *xi += coef * bi;
            }
        }
        project_out(&mut x, locked);
        let nx = norm(&x);
        scale_in_place(&mut x, 1.0 / nx);
        let hx = h.apply(&x);
        let rayleigh = inner(&x, &hx).re;
        let residual = hx.iter().zip(&x).map(|(a, b)| (a - b * rayleigh).norm_sqr()).sum::<f64>().sqrt();
        if rayleigh < best.0 {
            best = (rayleigh, x.clone());
        }
        if residual < 1e-10 * rayleigh.abs().max(1.0) || invariant {
            return (rayleigh, x);
        }
        v = x;
    }
    best
}

/// Dimension of the numerical kernel of the assembled terms.
pub fn kernel_dimension(spec: &HamiltonianSpec) -> Result<usize> {
    Ok(kernel_vectors(spec)?.len())
}

/// Orthonormal basis of the kernel of the assembled terms (eigenvalues below
/// [`GAP_THRESHOLD`]; `ground_shift` is ignored).
pub fn kernel_vectors(spec: &HamiltonianSpec) -> Result<Vec<Vec<C64>>> {
    check_size(spec.n_sites(), DENSE_LIMIT)?;
    let h = AssembledHamiltonian::from_spec_terms(spec)?;
    let eig = hermitian_eig(&h.dense())?;
    Ok((0..eig.values.len()).filter(|&i| eig.values[i] < GAP_THRESHOLD).map(|i| eig.vector(i)).collect())
}

/// Smallest eigenvalue of the assembled terms (without `ground_shift`).
pub fn min_term_energy(spec: &HamiltonianSpec) -> Result<f64> {
    check_size(spec.n_sites(), DENSE_LIMIT)?;
    let h = AssembledHamiltonian::from_spec_terms(spec)?;
    Ok(hermitian_eig(&h.dense())?.values[0])
}

/// `tr(P A) / tr(P)` over the kernel projector `P`.
pub fn projector_average(spec: &HamiltonianSpec, obs: &Observable) -> Result<f64> {
    let kernel = kernel_vectors(spec)?;
    if kernel.is_empty() {
        return Err(Error::FrustratedInput);
    }
    let a = AssembledHamiltonian::from_observable(spec.n_sites(), obs)?;
    Ok(kernel.iter().map(|v| a.expectation(v)).sum::<f64>() / kernel.len() as f64)
}

/// `<ψ| |M_z| |ψ>` with `M_z = Σ Z_v`, which is diagonal in the computational basis.
pub fn abs_magnetization(psi: &[C64], n_sites: usize) -> f64 {
    psi.iter()
        .enumerate()
        .map(|(x, a)| {
            let ones = (x as u64).count_ones() as i64;
            a.norm_sqr() * (n_sites as i64 - 2 * ones).abs() as f64
        })
        .sum()
}
