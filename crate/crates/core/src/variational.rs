//! Estimates for Hamiltonians close to a frustration-free one.
//!
//! Upper bounds come from restricting `H` to a subspace (the symmetric
//! subspace, a frustration-free reference's ground manifold, or a product
//! state); the lower bound is Anderson's edge decomposition.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::groundspace::{GroundOptions, GroundSpace, GroundSpaceModel, ProductBasisSpace, Restriction, GRAM_CUTOFF};
use crate::model::{
    build_lattice, named_model, swap_factors, HamiltonianSpec, LatticeKind, LocalSum, ModelKind, Observable,
};
use crate::numerics::{hermitian_eig, CMatrix, C64, ONE, ZERO};
use crate::oracle::{abs_magnetization, exact_ground, AssembledHamiltonian, GroundResult, OracleOptions};
use crate::reduction::{pullback_operator, ReducedHamiltonian};

/// Eigenvalues this close to the minimum count as degenerate minimizers.
pub const DEGENERACY_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Anderson,
    Ed,
    Product,
    Rotated,
    Symmetric,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Anderson => "anderson",
            Method::Ed => "ed",
            Method::Product => "product",
            Method::Rotated => "rotated",
            Method::Symmetric => "symmetric",
        }
    }

    pub fn bound_type(self) -> BoundType {
        match self {
            Method::Anderson => BoundType::Lower,
            Method::Ed => BoundType::Exact,
            _ => BoundType::Upper,
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anderson" => Ok(Method::Anderson),
            "ed" => Ok(Method::Ed),
            "product" => Ok(Method::Product),
            "rotated" => Ok(Method::Rotated),
            "symmetric" => Ok(Method::Symmetric),
            other => Err(Error::Parse(format!("unknown method `{other}`"))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundType {
    Upper,
    Lower,
    Exact,
}

impl BoundType {
    pub fn name(self) -> &'static str {
        match self {
            BoundType::Upper => "upper",
            BoundType::Lower => "lower",
            BoundType::Exact => "exact",
        }
    }
}

#[derive(Clone, Debug)]
pub struct EstimateResult {
    pub method: Method,
    pub energy: f64,
    pub bound: BoundType,
    /// Coefficients of the minimizer in the method's own basis.
    pub state: Option<Vec<C64>>,
    /// Per-site `mz = <M_z>/N` and `abs_mz = <|M_z|>/N`, plus user observables.
    pub observables: BTreeMap<String, f64>,
    /// Degeneracy (exact), retained subspace rank (subspace methods).
    pub ground_dim: Option<usize>,
    pub wall_time: Duration,
}

impl EstimateResult {
    fn new(method: Method, energy: f64, started: Instant) -> Self {
        Self {
            method,
            energy,
            bound: method.bound_type(),
            state: None,
            observables: BTreeMap::new(),
            ground_dim: None,
            wall_time: started.elapsed(),
        }
    }
}

/// The subspace a symmetric estimate restricts to.
#[derive(Clone, Copy, Debug)]
pub enum Subspace<'a> {
    /// `Sym` of all sites.
    Symmetric,
    /// Ground manifold of a frustration-free reference, pulled back
    /// through its isometry network.
    Kernel(&'a GroundSpaceModel),
}

/// `<|M_z|>` for `Σ c_x Ψ_x` where every `Ψ_x` is a product over all sites.
/// Uses the generating function `Π_v (a_v + b_v t)` of each matrix element.
fn product_basis_abs_mz(space: &ProductBasisSpace, coeffs: &[C64], n_sites: usize) -> Option<f64> {
    let mut site_states: Vec<Option<(usize, Vec<[C64; 2]>)>> = vec![None; n_sites];
    for (b, block) in space.blocks.iter().enumerate() {
        for (i, &v) in block.sites.iter().enumerate() {
            let m = &block.embeddings[i];
            let states = block
                .alphas
                .iter()
                .map(|a| {
                    let s = [m[(0, 0)] * a[0] + m[(0, 1)] * a[1], m[(1, 0)] * a[0] + m[(1, 1)] * a[1]];
                    let n = (s[0].norm_sqr() + s[1].norm_sqr()).sqrt();
                    [s[0] / n, s[1] / n]
                })
                .collect();
            *site_states.get_mut(v)? = Some((b, states));
        }
    }
    let site_states: Vec<(usize, Vec<[C64; 2]>)> = site_states.into_iter().collect::<Option<_>>()?;
    let dims: Vec<usize> = space.blocks.iter().map(|b| b.alphas.len()).collect();
    let split = |mut x: usize| {
        let mut idx = vec![0; dims.len()];
        for b in (0..dims.len()).rev() {
            idx[b] = x % dims[b];
            x /= dims[b];
        }
        idx
    };
    let d = coeffs.len();
    let mut dist = vec![0.0; n_sites + 1];
    for x in 0..d {
        let sx = split(x);
        for y in 0..d {
            let w = coeffs[x].conj() * coeffs[y];
            if w == ZERO {
                continue;
            }
            let sy = split(y);
            let mut poly = vec![ZERO; n_sites + 1];
            poly[0] = ONE;
            for (v, (b, states)) in site_states.iter().enumerate() {
                let (p, q) = (&states[sx[*b]], &states[sy[*b]]);
                let up = p[0].conj() * q[0];
                let down = p[1].conj() * q[1];
                for k in (0..=v + 1).rev() {
                    let shifted = if k > 0 { poly[k - 1] * up } else { ZERO };
                    poly[k] = poly[k] * down + shifted;
                }
            }
            for (k, c) in poly.iter().enumerate() {
                dist[k] += (w * c).re;
            }
        }
    }
    let norm: f64 = dist.iter().sum();
    Some(dist.iter().enumerate().map(|(k, p)| p * (2.0 * k as f64 - n_sites as f64).abs()).sum::<f64>() / norm)
}

/// Minimizes `H` over a subspace and evaluates observables on the
/// minimizer, averaging over a degenerate minimizing eigenspace.
#[allow(clippy::too_many_arguments)]
fn subspace_minimum(
    method: Method,
    h: &LocalSum,
    restriction: &Restriction,
    observables: &[(String, LocalSum)],
    mz: &LocalSum,
    n_sites: usize,
    abs_mz: bool,
    started: Instant,
) -> Result<EstimateResult> {
    let a_bar = restriction.restrict(h)?.a_bar;
    let eig = hermitian_eig(&a_bar)?;
    let e0 = eig.values[0];
    let degenerate: Vec<usize> = (0..eig.values.len()).take_while(|&i| eig.values[i] - e0 < DEGENERACY_TOL).collect();
    let mut result = EstimateResult::new(method, e0, started);
    result.state = Some(eig.vector(0));
    result.ground_dim = Some(restriction.rank());
    let mut all: Vec<(String, &LocalSum)> = observables.iter().map(|(n, o)| (n.clone(), o)).collect();
    all.push(("mz".into(), mz));
    for (name, op) in all {
        let o_bar = restriction.restrict(op)?.a_bar;
        let value = degenerate.iter().map(|&i| o_bar.sandwich(&eig.vector(i), &eig.vector(i)).re).sum::<f64>()
            / degenerate.len() as f64;
        let value = if name == "mz" { value / n_sites as f64 } else { value };
        result.observables.insert(name, value);
    }
    if abs_mz {
        let t = &restriction.orthonormalizer().transform;
        let mut total = 0.0;
        for &i in &degenerate {
            let coeffs = t.adjoint().matvec(&eig.vector(i));
            match product_basis_abs_mz(restriction.space(), &coeffs, n_sites) {
                Some(v) => total += v,
                None => return Ok(result),
            }
        }
        result.observables.insert("abs_mz".into(), total / degenerate.len() as f64 / n_sites as f64);
    }
    result.wall_time = started.elapsed();
    Ok(result)
}

/// Variational upper bound from the restriction of `H` to `subspace`.
pub fn symmetric_estimate(
    spec: &HamiltonianSpec,
    subspace: Subspace<'_>,
    observables: &[(String, Observable)],
) -> Result<EstimateResult> {
    let started = Instant::now();
    let n = spec.n_sites();
    let ops: Vec<(String, LocalSum)> = observables.iter().map(|(k, o)| (k.clone(), o.to_local_sum())).collect();
    let mz = Observable::magnetization_z(n).to_local_sum();
    match subspace {
        Subspace::Symmetric => {
            let restriction = Restriction::new(ProductBasisSpace::symmetric((0..n).collect()), GRAM_CUTOFF)?;
            subspace_minimum(Method::Symmetric, &spec.to_local_sum(), &restriction, &ops, &mz, n, true, started)
        }
        Subspace::Kernel(model) => {
            let net = &model.network;
            if net.leaf_sites.len() != n {
                return Err(Error::InvalidSystem("reference model has a different number of sites".into()));
            }
            let restriction = Restriction::new(model.space(), GRAM_CUTOFF)?;
            let pulled: Vec<(String, LocalSum)> =
                ops.iter().map(|(k, o)| (k.clone(), pullback_operator(net, o))).collect();
            let h = pullback_operator(net, &spec.to_local_sum());
            // |M_z| has no local pullback; only available without isometries
            let trivial = net.steps.is_empty();
            subspace_minimum(Method::Symmetric, &h, &restriction, &pulled, &pullback_operator(net, &mz), n, trivial, started)
        }
    }
}

/// Symmetric estimate relative to the ground manifold of a reference
/// Hamiltonian; fails when the reference is frustrated.
pub fn reference_estimate(
    spec: &HamiltonianSpec,
    reference: &HamiltonianSpec,
    observables: &[(String, Observable)],
    opts: &GroundOptions,
) -> Result<EstimateResult> {
    let gs = match GroundSpace::build(reference, opts) {
        Err(Error::FrustratedInput) => return Err(Error::FrustratedReference),
        other => other?,
    };
    symmetric_estimate(spec, Subspace::Kernel(&gs.model), observables)
}

/// `(1 ⊗ <φ|) h (1 ⊗ |φ>)` for a term in factor order `(v, other)`.
fn partial_expectation(h: &CMatrix, phi: &[C64; 2]) -> CMatrix {
    CMatrix::from_fn(2, 2, |i, j| {
        let mut acc = ZERO;
        for k in 0..2 {
            for l in 0..2 {
                acc += phi[k].conj() * h[(2 * i + k, 2 * j + l)] * phi[l];
            }
        }
        acc
    })
}

fn product_energy(spec: &HamiltonianSpec, phis: &[[C64; 2]]) -> f64 {
    let mut e = spec.ground_shift;
    for (&(a, b), h) in &spec.two_spin {
        let v = crate::numerics::kron_vec(&phis[a], &phis[b]);
        e += h.sandwich(&v, &v).re;
    }
    for (&v, h) in &spec.single_spin {
        e += h.sandwich(&phis[v], &phis[v]).re;
    }
    e
}

/// Terms touching each site, each in factor order `(site, other)`.
fn incident_terms(spec: &HamiltonianSpec) -> Vec<Vec<(usize, CMatrix)>> {
    let mut out = vec![Vec::new(); spec.n_sites()];
    for (&(a, b), h) in &spec.two_spin {
        out[a].push((b, h.clone()));
        out[b].push((a, swap_factors(h)));
    }
    out
}

fn random_qubit(rng: &mut impl Rng) -> [C64; 2] {
    let v = crate::instances::random_state(2, rng);
    [v[0], v[1]]
}

fn product_abs_mz(phis: &[[C64; 2]]) -> f64 {
    let n = phis.len();
    let mut dist = vec![0.0; n + 1];
    dist[0] = 1.0;
    for (v, phi) in phis.iter().enumerate() {
        let up = phi[0].norm_sqr() / (phi[0].norm_sqr() + phi[1].norm_sqr());
        for k in (0..=v + 1).rev() {
            let shifted = if k > 0 { dist[k - 1] * up } else { 0.0 };
            dist[k] = dist[k] * (1.0 - up) + shifted;
        }
    }
    dist.iter().enumerate().map(|(k, p)| p * (2.0 * k as f64 - n as f64).abs()).sum::<f64>() / n as f64
}

/// Best product state from coordinate-wise exact single-site updates.
/// Restart 0 starts from `|0…0>`, later ones from seeded random states.
pub fn product_mean_field(spec: &HamiltonianSpec, restarts: usize, seed: u64) -> Result<EstimateResult> {
    let started = Instant::now();
    let n = spec.n_sites();
    let incident = incident_terms(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<[C64; 2]>)> = None;
    for restart in 0..restarts.max(1) {
        let mut phis: Vec<[C64; 2]> =
            if restart == 0 { vec![[ONE, ZERO]; n] } else { (0..n).map(|_| random_qubit(&mut rng)).collect() };
        let mut energy = product_energy(spec, &phis);
        for _sweep in 0..10_000 {
            for v in 0..n {
                let mut field = spec.single_spin.get(&v).cloned().unwrap_or_else(|| CMatrix::zeros(2, 2));
                for (other, h) in &incident[v] {
                    field += &partial_expectation(h, &phis[*other]);
                }
                let field = (&field + &field.adjoint()).scale_real(0.5);
                let g = hermitian_eig(&field)?.vector(0);
                phis[v] = [g[0], g[1]];
            }
            let next = product_energy(spec, &phis);
            let done = (energy - next).abs() < 1e-10;
            energy = next;
            if done {
                break;
            }
        }
        if best.as_ref().is_none_or(|(e, _)| energy < *e) {
            best = Some((energy, phis));
        }
    }
    let (energy, phis) = best.expect("at least one restart");
    let mut r = EstimateResult::new(Method::Product, energy, started);
    let mz: f64 = phis.iter().map(|p| p[0].norm_sqr() - p[1].norm_sqr()).sum::<f64>() / n as f64;
    r.observables.insert("mz".into(), mz);
    r.observables.insert("abs_mz".into(), product_abs_mz(&phis));
    r.state = Some(phis.iter().flat_map(|p| p.iter().copied()).collect());
    r.wall_time = started.elapsed();
    Ok(r)
}

/// `Σ_edges λ_min(h_ab + h_a/deg(a) ⊗ 1 + 1 ⊗ h_b/deg(b))`, plus isolated
/// single-site minima and the constant shift.
pub fn anderson_bound(spec: &HamiltonianSpec) -> Result<EstimateResult> {
    let started = Instant::now();
    let n = spec.n_sites();
    let mut degree = vec![0usize; n];
    for &(a, b) in spec.two_spin.keys() {
        degree[a] += 1;
        degree[b] += 1;
    }
    let id = CMatrix::identity(2);
    let share = |v: usize| -> Option<CMatrix> {
        spec.single_spin.get(&v).map(|h| h.scale_real(1.0 / degree[v] as f64))
    };
    let mut bound = spec.ground_shift;
    for (&(a, b), h) in &spec.two_spin {
        let mut t = h.clone();
        if let Some(s) = share(a) {
            t += &s.kron(&id);
        }
        if let Some(s) = share(b) {
            t += &id.kron(&s);
        }
        bound += hermitian_eig(&t)?.values[0];
    }
    for (&v, h) in &spec.single_spin {
        if degree[v] == 0 {
            bound += hermitian_eig(h)?.values[0];
        }
    }
    Ok(EstimateResult::new(Method::Anderson, bound, started))
}

/// One layer of pairwise isometries built from the two-site reduced terms.
#[derive(Clone, Debug, PartialEq)]
pub struct QLayer {
    /// `(parent, daughter)` with the lower site as parent.
    pub pairs: Vec<(usize, usize)>,
    /// 4x2, columns are the two lowest eigenvectors of `η_{a,b}`.
    pub isometries: Vec<CMatrix>,
}

/// Greedy maximal matching in edge order.
pub fn greedy_matching(spec: &HamiltonianSpec) -> Vec<(usize, usize)> {
    let mut used = vec![false; spec.n_sites()];
    let mut out = Vec::new();
    for &(a, b) in spec.system.edges() {
        if !used[a] && !used[b] {
            used[a] = true;
            used[b] = true;
            out.push((a, b));
        }
    }
    out
}

/// `Tr_{rest}(H) / 2^{N-2}` on the pair `(a, b)`, scalar part dropped.
pub fn reduced_pair_term(spec: &HamiltonianSpec, a: usize, b: usize) -> CMatrix {
    let id = CMatrix::identity(2);
    let mut eta = CMatrix::zeros(4, 4);
    let partial_trace_second = |h: &CMatrix| -> CMatrix {
        CMatrix::from_fn(2, 2, |i, j| (h[(2 * i, 2 * j)] + h[(2 * i + 1, 2 * j + 1)]) * 0.5)
    };
    for (&(u, v), h) in &spec.two_spin {
        match (u == a || u == b, v == a || v == b) {
            (true, true) => eta += &(if u == a { h.clone() } else { swap_factors(h) }),
            (true, false) | (false, true) => {
                let (inside, oriented) = if u == a || u == b { (u, h.clone()) } else { (v, swap_factors(h)) };
                let s = partial_trace_second(&oriented);
                eta += &(if inside == a { s.kron(&id) } else { id.kron(&s) });
            }
            _ => {}
        }
    }
    for (&v, h) in &spec.single_spin {
        if v == a {
            eta += &h.kron(&id);
        } else if v == b {
            eta += &id.kron(h);
        }
    }
    eta
}

/// Contracts every pair of `matching` (default: greedy) by its `Q` isometry.
/// Returns the layer, `H' = T₁† H T₁` on the parents relabeled `0..`, and
/// the original label of each new site.
pub fn build_q_layer(
    spec: &HamiltonianSpec,
    matching: Option<&[(usize, usize)]>,
) -> Result<(QLayer, HamiltonianSpec, Vec<usize>)> {
    let pairs: Vec<(usize, usize)> = match matching {
        Some(m) => m.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect(),
        None => greedy_matching(spec),
    };
    let mut used = vec![false; spec.n_sites()];
    for &(a, b) in &pairs {
        if !spec.system.has_edge(a, b) {
            return Err(Error::NotAMatching(format!("({a}, {b}) is not an edge")));
        }
        for s in [a, b] {
            if used[s] {
                return Err(Error::NotAMatching(format!("site {s} appears twice")));
            }
            used[s] = true;
        }
    }
    let mut h = ReducedHamiltonian::from_spec(spec);
    let mut isometries = Vec::with_capacity(pairs.len());
    for &(a, b) in &pairs {
        let eta = reduced_pair_term(spec, a, b);
        let eig = hermitian_eig(&eta)?;
        let q = CMatrix::from_columns(4, &[eig.vector(0), eig.vector(1)]);
        h.apply_pair_isometry(a, b, &q);
        isometries.push(q);
    }
    let (mut reduced, labels) = h.to_spec().ok_or_else(|| Error::InvalidSystem("no sites left".into()))?;
    reduced.ground_shift = spec.ground_shift;
    Ok((QLayer { pairs, isometries }, reduced, labels))
}

#[derive(Clone, Copy, Debug)]
pub struct RotationBudget {
    pub sweeps: usize,
    /// Extra random starts after the product-state start.
    pub restarts: usize,
    pub grid: usize,
    pub golden_steps: usize,
}

impl Default for RotationBudget {
    fn default() -> Self {
        Self { sweeps: 3, restarts: 1, grid: 8, golden_steps: 16 }
    }
}

/// `U(θ, φ)` with `U|0> = cos(θ/2)|0> + e^{iφ} sin(θ/2)|1>`.
pub fn bloch_unitary(theta: f64, phi: f64) -> CMatrix {
    let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    CMatrix::from_vec(
        2,
        2,
        vec![C64::new(c, 0.0), -C64::from_polar(s, -phi), C64::from_polar(s, phi), C64::new(c, 0.0)],
    )
}

fn bloch_angles(v: &[C64; 2]) -> (f64, f64) {
    let n = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
    let theta = 2.0 * (v[1].norm() / n).clamp(-1.0, 1.0).asin();
    let phi = if v[1].norm() > 0.0 { (v[1] * v[0].conj()).arg() } else { 0.0 };
    (theta, phi)
}

fn rotated_space(angles: &[(f64, f64)]) -> ProductBasisSpace {
    ProductBasisSpace::rotated(angles.iter().map(|&(t, p)| bloch_unitary(t, p)).collect(), (0..angles.len()).collect())
}

fn rotated_energy(h: &LocalSum, angles: &[(f64, f64)]) -> Result<f64> {
    let r = Restriction::new(rotated_space(angles), GRAM_CUTOFF)?;
    Ok(hermitian_eig(&r.restrict(h)?.a_bar)?.values[0])
}

/// Minimizes the symmetric estimate of `(⊗U_v)† H (⊗U_v)` over per-site
/// Bloch rotations. Starts from the product mean-field state, so the result
/// never exceeds the product energy.
pub fn rotated_symmetric_estimate(
    spec: &HamiltonianSpec,
    budget: &RotationBudget,
    seed: u64,
) -> Result<EstimateResult> {
    let started = Instant::now();
    let n = spec.n_sites();
    let h = spec.to_local_sum();
    let product = product_mean_field(spec, 4, seed)?;
    let flat = product.state.clone().expect("product state");
    let start: Vec<(f64, f64)> = (0..n).map(|v| bloch_angles(&[flat[2 * v], flat[2 * v + 1]])).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut starts = vec![start];
    for _ in 0..budget.restarts {
        starts.push((0..n).map(|_| (rng.random_range(0.0..std::f64::consts::PI), rng.random_range(0.0..std::f64::consts::TAU))).collect());
    }
    let mut best: Option<(f64, Vec<(f64, f64)>)> = None;
    for mut angles in starts {
        let mut energy = rotated_energy(&h, &angles)?;
        for _ in 0..budget.sweeps {
            let before = energy;
            for v in 0..n {
                for which in 0..2 {
                    let eval = |x: f64, angles: &mut Vec<(f64, f64)>| -> Result<f64> {
                        let saved = angles[v];
                        if which == 0 {
                            angles[v].0 = x;
                        } else {
                            angles[v].1 = x;
                        }
                        let e = rotated_energy(&h, angles);
                        angles[v] = saved;
                        e
                    };
                    let current = if which == 0 { angles[v].0 } else { angles[v].1 };
                    let step = std::f64::consts::TAU / budget.grid.max(2) as f64;
                    let mut best_x = current;
                    let mut best_e = energy;
                    for g in 1..budget.grid.max(2) {
                        let x = current + g as f64 * step;
                        let e = eval(x, &mut angles)?;
                        if e < best_e {
                            best_e = e;
                            best_x = x;
                        }
                    }
                    // golden-section refinement around the best grid point
                    let (mut lo, mut hi) = (best_x - step, best_x + step);
                    let ratio = (5f64.sqrt() - 1.0) / 2.0;
                    let mut x1 = hi - ratio * (hi - lo);
                    let mut x2 = lo + ratio * (hi - lo);
                    let mut e1 = eval(x1, &mut angles)?;
                    let mut e2 = eval(x2, &mut angles)?;
                    for _ in 0..budget.golden_steps {
                        if e1 < e2 {
                            hi = x2;
                            x2 = x1;
                            e2 = e1;
                            x1 = hi - ratio * (hi - lo);
                            e1 = eval(x1, &mut angles)?;
                        } else {
                            lo = x1;
                            x1 = x2;
                            e1 = e2;
                            x2 = lo + ratio * (hi - lo);
                            e2 = eval(x2, &mut angles)?;
                        }
                    }
                    for (x, e) in [(x1, e1), (x2, e2)] {
                        if e < best_e {
                            best_e = e;
                            best_x = x;
                        }
                    }
                    if best_e < energy {
                        energy = best_e;
                        if which == 0 {
                            angles[v].0 = best_x;
                        } else {
                            angles[v].1 = best_x;
                        }
                    }
                }
            }
            if before - energy < 1e-10 {
                break;
            }
        }
        if best.as_ref().is_none_or(|(e, _)| energy < *e) {
            best = Some((energy, angles));
        }
    }
    let (energy, angles) = best.expect("at least one start");
    let restriction = Restriction::new(rotated_space(&angles), GRAM_CUTOFF)?;
    let mz = Observable::magnetization_z(n).to_local_sum();
    let mut r = subspace_minimum(Method::Rotated, &h, &restriction, &[], &mz, n, true, started)?;
    if r.energy > product.energy {
        // the product state lies in every rotated subspace we visited first
        r = EstimateResult { method: Method::Rotated, bound: BoundType::Upper, ..product };
    } else {
        r.energy = r.energy.min(energy);
    }
    r.wall_time = started.elapsed();
    Ok(r)
}

/// Per-site `mz` and `abs_mz` averaged over the degenerate ground vectors.
pub fn ground_observables(g: &GroundResult, n: usize) -> Result<BTreeMap<String, f64>> {
    let mz = AssembledHamiltonian::from_observable(n, &Observable::magnetization_z(n))?;
    let vecs = &g.vectors[..g.degeneracy];
    let avg = |f: &dyn Fn(&[C64]) -> f64| vecs.iter().map(|v| f(v)).sum::<f64>() / vecs.len() as f64;
    let mut out = BTreeMap::new();
    out.insert("mz".to_string(), avg(&|v| mz.expectation(v)) / n as f64);
    out.insert("abs_mz".to_string(), avg(&|v| abs_magnetization(v, n)) / n as f64);
    Ok(out)
}

/// Exact diagonalization with maximal-mixture observables over the
/// degenerate ground space.
pub fn exact_estimate(spec: &HamiltonianSpec, opts: &OracleOptions) -> Result<EstimateResult> {
    let started = Instant::now();
    let g = exact_ground(spec, 1, opts)?;
    let mut r = EstimateResult::new(Method::Ed, g.energy, started);
    r.observables = ground_observables(&g, spec.n_sites())?;
    r.ground_dim = Some(g.degeneracy);
    r.wall_time = started.elapsed();
    Ok(r)
}

/// A named model on a lattice, instantiated per `λ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Family {
    pub model: ModelKind,
    pub lattice: LatticeKind,
    pub dims: (usize, usize),
}

impl Family {
    pub fn instance(&self, lambda: f64) -> Result<HamiltonianSpec> {
        Ok(named_model(self.model, build_lattice(self.lattice, self.dims)?, lambda))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SweepOptions {
    pub seed: u64,
    pub oracle: OracleOptions,
    pub budget: RotationBudget,
    pub restarts: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { seed: 0, oracle: OracleOptions::default(), budget: RotationBudget::default(), restarts: 4 }
    }
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub lambda: f64,
    pub method: Method,
    pub n_sites: usize,
    pub result: std::result::Result<EstimateResult, Error>,
}

pub fn estimate(spec: &HamiltonianSpec, method: Method, opts: &SweepOptions) -> Result<EstimateResult> {
    match method {
        Method::Symmetric => symmetric_estimate(spec, Subspace::Symmetric, &[]),
        Method::Product => product_mean_field(spec, opts.restarts, opts.seed),
        Method::Anderson => anderson_bound(spec),
        Method::Rotated => rotated_symmetric_estimate(spec, &opts.budget, opts.seed),
        Method::Ed => exact_estimate(spec, &opts.oracle),
    }
}

/// One row per `(λ, method)`, sorted by `λ` then method name. Cells run in
/// parallel; each is deterministic given the seed.
pub fn lambda_sweep(family: &Family, lambdas: &[f64], methods: &[Method], opts: &SweepOptions) -> Vec<SweepRow> {
    let mut methods: Vec<Method> = methods.to_vec();
    methods.sort_by_key(|m| m.name());
    methods.dedup();
    let cells: Vec<(f64, Method)> = lambdas.iter().flat_map(|&l| methods.iter().map(move |&m| (l, m))).collect();
    let mut rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|&(lambda, method)| {
            let spec = family.instance(lambda);
            let n_sites = spec.as_ref().map(|s| s.n_sites()).unwrap_or(0);
            let result = spec.and_then(|s| estimate(&s, method, opts));
            SweepRow { lambda, method, n_sites, result }
        })
        .collect();
    rows.sort_by(|a, b| a.lambda.total_cmp(&b.lambda).then(a.method.name().cmp(b.method.name())));
    rows
}
