//! Explicit ground manifolds of complete homogeneous residuals.
//!
//! Within a residual component rooted at `a`, every constraint is
//! `<Ψ⁻|(L_u ⊗ L_v)` with `L_a = 1`. The kernel is therefore `C Sym` with
//! `C = ⊗ L_v⁻¹`, and it is spanned by the product vectors `C |α_j>^{⊗n}`
//! for any `n + 1` pairwise independent `α_j`. Operators are restricted to
//! that span through skew Gram matrices whose entries factorize over sites;
//! products of many per-site overlaps are accumulated in log form.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{components, normalize_terms, HamiltonianSpec, Observable};
use crate::numerics::{inner, normalized, singular_values, wrap_phase, CMatrix, Orthonormalizer, C64, ONE, ZERO};
use crate::reduction::{
    apply_network, pullback_operator, reduce, CompleteHomogeneous, Constraint, IsometryNetwork, ReduceOptions,
    ReductionOutcome, MAX_MATERIALIZED,
};
use crate::model::LocalSum;

/// Relative eigenvalue cutoff of the Gram matrix.
pub const GRAM_CUTOFF: f64 = 1e-10;
/// Tolerance of the factor consistency check.
pub const CONSISTENCY_TOL: f64 = 1e-8;
/// Singular values below this fraction of the largest are dropped.
pub const SCHMIDT_CUTOFF: f64 = 1e-8;
/// Largest ground dimension for which restriction matrices are formed.
pub const MAX_RESTRICTED_DIM: usize = 1 << 13;
/// Below this support overlap the entry is recomputed in log form.
const RATIO_FLOOR: f64 = 1e-100;

/// `E = [[0, 1], [-1, 0]]`, so `<Ψ⁻|` reshaped is `E / √2`.
fn epsilon() -> CMatrix {
    CMatrix::from_real(2, 2, &[0.0, 1.0, -1.0, 0.0])
}

fn det2(m: &CMatrix) -> C64 {
    m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]
}

fn inverse2(m: &CMatrix) -> CMatrix {
    let d = det2(m);
    CMatrix::from_vec(2, 2, vec![m[(1, 1)] / d, -m[(0, 1)] / d, -m[(1, 0)] / d, m[(0, 0)] / d])
}

fn bra_matrix(c: &Constraint, from: usize) -> CMatrix {
    let b = c.oriented(from);
    CMatrix::from_vec(2, 2, vec![b[0][0], b[0][1], b[1][0], b[1][1]])
}

/// `θ_j = jπ/(n + 1)`, `α_j = cos θ_j |0> + sin θ_j |1>`.
pub fn choose_alphas(n_c: usize) -> Vec<[C64; 2]> {
    (0..=n_c)
        .map(|j| {
            let theta = j as f64 * PI / (n_c + 1) as f64;
            [C64::new(theta.cos(), 0.0), C64::new(theta.sin(), 0.0)]
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComponentModel {
    pub root: usize,
    /// Ascending; includes the root.
    pub sites: Vec<usize>,
    /// `L_v`, normalized to Frobenius norm `√2`; identity on the root.
    pub local_factors: BTreeMap<usize, CMatrix>,
    /// `G` with `G^{⊗n} Sym = Sym`, chosen so that `Σ_v (L_v⁻¹ G)†(L_v⁻¹ G) ∝ 1`;
    /// this balances the per-site overlaps and improves Gram conditioning.
    pub gauge: CMatrix,
    pub alphas: Vec<[C64; 2]>,
}

impl ComponentModel {
    /// `L_v⁻¹ G`, which maps the symmetric subspace onto the kernel.
    pub fn embedding(&self, v: usize) -> CMatrix {
        &inverse2(&self.local_factors[&v]) * &self.gauge
    }
}

fn balancing_gauge(factors: &BTreeMap<usize, CMatrix>) -> Result<CMatrix> {
    let mut sum = CMatrix::zeros(2, 2);
    for l in factors.values() {
        let m = inverse2(l);
        sum += &m.conjugate(&CMatrix::identity(2));
    }
    let sum = sum.scale_real(1.0 / factors.len() as f64);
    let (g, rank) = crate::numerics::pinv_sqrt(&(&sum + &sum.adjoint()).scale_real(0.5), 1e-14)?;
    Ok(if rank == 2 { g } else { CMatrix::identity(2) })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundSpaceModel {
    pub components: Vec<ComponentModel>,
    pub network: IsometryNetwork,
}

impl GroundSpaceModel {
    pub fn ground_dimension(&self) -> usize {
        self.components.iter().fold(1usize, |acc, c| acc.saturating_mul(c.alphas.len()))
    }

    pub fn space(&self) -> ProductBasisSpace {
        self.space_with_alphas(choose_alphas)
    }

    /// The same manifold spanned with another family of `α` vectors
    /// (`alphas(n)` must return `n + 1` pairwise independent states).
    pub fn space_with_alphas(&self, alphas: impl Fn(usize) -> Vec<[C64; 2]>) -> ProductBasisSpace {
        ProductBasisSpace {
            blocks: self
                .components
                .iter()
                .map(|c| ProductBlock {
                    sites: c.sites.clone(),
                    embeddings: c.sites.iter().map(|&v| c.embedding(v)).collect(),
                    alphas: alphas(c.sites.len()),
                })
                .collect(),
        }
    }
}

/// Solves `<β_{a,v}| ∝ <Ψ⁻|(1 ⊗ L_v)` for every non-root site and checks the
/// remaining constraints against `<Ψ⁻|(L_u ⊗ L_v)`.
pub fn local_factors(outcome: &CompleteHomogeneous) -> Result<GroundSpaceModel> {
    let e = epsilon();
    let mut out = Vec::with_capacity(outcome.components.len());
    for comp in &outcome.components {
        let root = comp.root();
        let mut factors = BTreeMap::new();
        factors.insert(root, CMatrix::identity(2));
        for &v in &comp.sites[1..] {
            let c = comp
                .root_constraints
                .get(&v)
                .ok_or(Error::InconsistentConstraints(root, v))?;
            let l = (&e * &bra_matrix(c, root)).scale_real(-1.0);
            let l = l.scale_real(2f64.sqrt() / l.frobenius_norm());
            if det2(&l).norm() <= 1e-10 {
                return Err(Error::InconsistentConstraints(root, v));
            }
            factors.insert(v, l);
        }
        for c in &comp.constraints {
            let (u, v) = c.edge;
            let predicted = &(&factors[&u].transpose() * &e) * &factors[&v];
            let p = [predicted[(0, 0)], predicted[(0, 1)], predicted[(1, 0)], predicted[(1, 1)]];
            let p = normalized(&p).ok_or(Error::InconsistentConstraints(u, v))?;
            if 1.0 - inner(&c.bra, &p).norm() > CONSISTENCY_TOL {
                return Err(Error::InconsistentConstraints(u, v));
            }
        }
        let gauge = balancing_gauge(&factors)?;
        out.push(ComponentModel {
            root,
            sites: comp.sites.clone(),
            local_factors: factors,
            gauge,
            alphas: choose_alphas(comp.sites.len()),
        });
    }
    Ok(GroundSpaceModel { components: out, network: outcome.network.clone() })
}

/// Sites whose states are `M_v α_j` for a shared index `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductBlock {
    pub sites: Vec<usize>,
    pub embeddings: Vec<CMatrix>,
    pub alphas: Vec<[C64; 2]>,
}

impl ProductBlock {
    fn state(&self, i: usize, j: usize) -> [C64; 2] {
        let m = &self.embeddings[i];
        let a = &self.alphas[j];
        [m[(0, 0)] * a[0] + m[(0, 1)] * a[1], m[(1, 0)] * a[0] + m[(1, 1)] * a[1]]
    }
}

/// Span of `⊗_blocks ⊗_{v ∈ block} M_v |α_{j_block}>` over all index tuples,
/// enumerated lexicographically with the first block most significant.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductBasisSpace {
    pub blocks: Vec<ProductBlock>,
}

impl ProductBasisSpace {
    /// The plain symmetric subspace of `sites`.
    pub fn symmetric(sites: Vec<usize>) -> Self {
        Self::rotated(sites.iter().map(|_| CMatrix::identity(2)).collect(), sites)
    }

    /// `(⊗ U_v) Sym`.
    pub fn rotated(embeddings: Vec<CMatrix>, sites: Vec<usize>) -> Self {
        let alphas = choose_alphas(sites.len());
        Self { blocks: vec![ProductBlock { sites, embeddings, alphas }] }
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().fold(1usize, |acc, b| acc.saturating_mul(b.alphas.len()))
    }

    fn split(&self, mut x: usize) -> Vec<usize> {
        let mut idx = vec![0; self.blocks.len()];
        for (b, block) in self.blocks.iter().enumerate().rev() {
            idx[b] = x % block.alphas.len();
            x /= block.alphas.len();
        }
        idx
    }

    /// Basis vectors materialized on `order` (ascending), unnormalized.
    pub fn materialize(&self, order: &[usize]) -> Result<Vec<Vec<C64>>> {
        if order.len() > MAX_MATERIALIZED {
            return Err(Error::TooLarge { n: order.len(), limit: MAX_MATERIALIZED });
        }
        let mut location = BTreeMap::new();
        for (b, block) in self.blocks.iter().enumerate() {
            for (i, &v) in block.sites.iter().enumerate() {
                location.insert(v, (b, i));
            }
        }
        let mut out = Vec::with_capacity(self.dim());
        for x in 0..self.dim() {
            let idx = self.split(x);
            let mut psi = vec![ONE];
            for v in order {
                let &(b, i) = location.get(v).ok_or(Error::SupportNotInRoots(*v))?;
                let s = self.blocks[b].state(i, idx[b]);
                psi = crate::numerics::kron_vec(&psi, &s);
            }
            out.push(psi);
        }
        Ok(out)
    }
}

/// `z^count` products with exact zeros counted separately, so that zero
/// factors can be divided back out.
#[derive(Clone, Copy, Debug, PartialEq)]
struct LogAcc {
    zeros: i64,
    log_magnitude: f64,
    phase: f64,
}

impl LogAcc {
    const ONE: Self = Self { zeros: 0, log_magnitude: 0.0, phase: 0.0 };

    fn mul_pow(&mut self, z: C64, count: i64) {
        if z == ZERO {
            self.zeros += count;
        } else {
            self.log_magnitude += count as f64 * z.norm().ln();
            self.phase = wrap_phase(self.phase + count as f64 * z.arg());
        }
    }

    fn times(self, o: Self) -> Self {
        Self {
            zeros: self.zeros + o.zeros,
            log_magnitude: self.log_magnitude + o.log_magnitude,
            // each factor is already wrapped; from_polar accepts any angle
            phase: self.phase + o.phase,
        }
    }

    /// Value scaled by `exp(-shift)`.
    fn value(self, shift: f64) -> C64 {
        if self.zeros > 0 {
            return ZERO;
        }
        C64::from_polar((self.log_magnitude - shift).exp(), self.phase)
    }
}

/// Per-block table `S(j, k) = Π_v <α_j|M_v† M_v|α_k>`.
struct BlockTable {
    d: usize,
    entries: Vec<LogAcc>,
    /// `(block index of site, position)` lookup for per-site overlaps.
    states: Vec<Vec<[C64; 2]>>,
}

impl BlockTable {
    fn new(block: &ProductBlock) -> Self {
        let d = block.alphas.len();
        let states: Vec<Vec<[C64; 2]>> =
            (0..block.sites.len()).map(|i| (0..d).map(|j| block.state(i, j)).collect()).collect();
        // sites sharing M†M contribute identical overlaps
        let mut classes: HashMap<[u64; 8], (usize, i64)> = HashMap::new();
        for (i, m) in block.embeddings.iter().enumerate() {
            let g = m.conjugate(&CMatrix::identity(2));
            let mut key = [0u64; 8];
            for (n, z) in g.data().iter().enumerate() {
                key[2 * n] = z.re.to_bits();
                key[2 * n + 1] = z.im.to_bits();
            }
            classes.entry(key).or_insert((i, 0)).1 += 1;
        }
        let mut entries = vec![LogAcc::ONE; d * d];
        let mut reps: Vec<(usize, i64)> = classes.into_values().collect();
        reps.sort_unstable();
        for (i, count) in reps {
            let s = &states[i];
            for j in 0..d {
                for k in 0..d {
                    entries[j * d + k].mul_pow(dot2(&s[j], &s[k]), count);
                }
            }
        }
        Self { d, entries, states }
    }

    fn overlap(&self, i: usize, j: usize, k: usize) -> C64 {
        dot2(&self.states[i][j], &self.states[i][k])
    }
}

fn dot2(a: &[C64; 2], b: &[C64; 2]) -> C64 {
    a[0].conj() * b[0] + a[1].conj() * b[1]
}

#[derive(Clone, Debug)]
pub struct RestrictionResult {
    /// Skew matrix `<Ψ_j|A|Ψ_k>` with basis vectors rescaled to unit norm.
    pub w: CMatrix,
    /// Gram matrix of the rescaled basis.
    pub b: CMatrix,
    pub ortho_transform: CMatrix,
    pub a_bar: CMatrix,
    pub retained_rank: usize,
}

/// Precomputed Gram data of a [`ProductBasisSpace`].
pub struct Restriction {
    space: ProductBasisSpace,
    tables: Vec<BlockTable>,
    location: BTreeMap<usize, (usize, usize)>,
    /// `½ log B_jj` per basis vector before rescaling.
    log_norms: Vec<f64>,
    splits: Vec<Vec<usize>>,
    gram: CMatrix,
    ortho: Orthonormalizer,
    trace_kernel: OnceLock<CMatrix>,
}

impl Restriction {
    pub fn new(space: ProductBasisSpace, cutoff: f64) -> Result<Self> {
        let d = space.dim();
        if d > MAX_RESTRICTED_DIM {
            return Err(Error::TooLarge { n: d, limit: MAX_RESTRICTED_DIM });
        }
        let tables: Vec<BlockTable> = space.blocks.iter().map(BlockTable::new).collect();
        let mut location = BTreeMap::new();
        for (b, block) in space.blocks.iter().enumerate() {
            for (i, &v) in block.sites.iter().enumerate() {
                location.insert(v, (b, i));
            }
        }
        let splits: Vec<Vec<usize>> = (0..d).map(|x| space.split(x)).collect();
        let split = &splits;
        let log_norms: Vec<f64> = split
            .iter()
            .map(|idx| idx.iter().enumerate().map(|(b, &j)| tables[b].entries[j * tables[b].d + j].log_magnitude).sum::<f64>() * 0.5)
            .collect();
        let mut gram = CMatrix::zeros(d, d);
        for x in 0..d {
            for y in 0..d {
                let acc = (0..tables.len()).fold(LogAcc::ONE, |acc, b| {
                    acc.times(tables[b].entries[split[x][b] * tables[b].d + split[y][b]])
                });
                gram[(x, y)] = acc.value(log_norms[x] + log_norms[y]);
            }
        }
        let gram = (&gram + &gram.adjoint()).scale_real(0.5);
        let ortho = Orthonormalizer::new(&gram, cutoff)?;
        Ok(Self { space, tables, location, log_norms, splits, gram, ortho, trace_kernel: OnceLock::new() })
    }

    pub fn space(&self) -> &ProductBasisSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.gram.rows()
    }

    pub fn rank(&self) -> usize {
        self.ortho.rank()
    }

    pub fn gram(&self) -> &CMatrix {
        &self.gram
    }

    pub fn orthonormalizer(&self) -> &Orthonormalizer {
        &self.ortho
    }

    /// `W(A)` in the rescaled basis.
    pub fn skew_matrix(&self, op: &LocalSum) -> Result<CMatrix> {
        let d = self.dim();
        let nb = self.tables.len();
        let mut w = self.gram.scale_real(op.constant);
        for term in &op.terms {
            let loc: Vec<(usize, usize)> = term
                .sites
                .iter()
                .map(|v| self.location.get(v).copied().ok_or(Error::SupportNotInRoots(*v)))
                .collect::<Result<_>>()?;
            let mut touched: Vec<usize> = loc.iter().map(|&(b, _)| b).collect();
            touched.sort_unstable();
            touched.dedup();
            let k = loc.len();
            let mut left = vec![ZERO; 1 << k];
            let mut right = vec![ZERO; 1 << k];
            // with a single touched block the local element depends on (j, k) only
            let local_table: Option<(usize, Vec<C64>)> = (touched.len() == 1).then(|| {
                let b = touched[0];
                let db = self.tables[b].d;
                let mut idx = vec![0; nb];
                let mut table = vec![ZERO; db * db];
                for j in 0..db {
                    idx[b] = j;
                    fill_local(&self.tables, &loc, &idx, &mut left);
                    for kk in 0..db {
                        idx[b] = kk;
                        fill_local(&self.tables, &loc, &idx, &mut right);
                        table[j * db + kk] = term.matrix.sandwich(&left, &right);
                    }
                }
                (b, table)
            });
            for x in 0..d {
                let sx = &self.splits[x];
                if local_table.is_none() {
                    fill_local(&self.tables, &loc, sx, &mut left);
                }
                for y in 0..d {
                    let sy = &self.splits[y];
                    let local = match &local_table {
                        Some((b, table)) => table[sx[*b] * self.tables[*b].d + sy[*b]],
                        None => {
                            fill_local(&self.tables, &loc, sy, &mut right);
                            term.matrix.sandwich(&left, &right)
                        }
                    };
                    if local == ZERO {
                        continue;
                    }
                    // W_xy = B_xy · local / Π_support g, with B already rescaled
                    let mut g = ONE;
                    for &(b, i) in &loc {
                        g *= self.tables[b].overlap(i, sx[b], sy[b]);
                    }
                    if g.norm() > RATIO_FLOOR {
                        w[(x, y)] += self.gram[(x, y)] * (local / g);
                    } else {
                        w[(x, y)] += self.divided_entry(&loc, sx, sy, x, y) * local;
                    }
                }
            }
        }
        Ok(w)
    }

    /// `B_xy / Π_support g` in log form, for nearly orthogonal support states.
    fn divided_entry(&self, loc: &[(usize, usize)], sx: &[usize], sy: &[usize], x: usize, y: usize) -> C64 {
        let mut acc = LogAcc::ONE;
        for (b, t) in self.tables.iter().enumerate() {
            acc = acc.times(t.entries[sx[b] * t.d + sy[b]]);
        }
        for &(b, i) in loc {
            acc.mul_pow(self.tables[b].overlap(i, sx[b], sy[b]), -1);
        }
        acc.value(self.log_norms[x] + self.log_norms[y])
    }

    pub fn restrict(&self, op: &LocalSum) -> Result<RestrictionResult> {
        let w = self.skew_matrix(op)?;
        let a_bar = self.ortho.apply(&w);
        Ok(RestrictionResult {
            b: self.gram.clone(),
            ortho_transform: self.ortho.transform.clone(),
            retained_rank: self.rank(),
            a_bar,
            w,
        })
    }

    /// `tr(Ā) / r`: the maximal-mixture average over the retained span,
    /// evaluated as `Σ W_xy (T†T)_yx` without forming `Ā`.
    pub fn mixture_average(&self, op: &LocalSum) -> Result<f64> {
        let w = self.skew_matrix(op)?;
        let p = self.trace_kernel.get_or_init(|| &self.ortho.transform.adjoint() * &self.ortho.transform);
        let d = self.dim();
        let mut acc = ZERO;
        for x in 0..d {
            for y in 0..d {
                acc += w[(x, y)] * p[(y, x)];
            }
        }
        Ok(acc.re / self.rank() as f64)
    }
}

fn fill_local(tables: &[BlockTable], loc: &[(usize, usize)], idx: &[usize], out: &mut [C64]) {
    let k = loc.len();
    for (x, o) in out.iter_mut().enumerate() {
        let mut z = ONE;
        for (p, &(b, i)) in loc.iter().enumerate() {
            let bit = (x >> (k - 1 - p)) & 1;
            z *= tables[b].states[i][idx[b]][bit];
        }
        *o = z;
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GroundOptions {
    pub reduce: ReduceOptions,
    pub gram_cutoff: f64,
}

impl Default for GroundOptions {
    fn default() -> Self {
        Self { reduce: ReduceOptions::default(), gram_cutoff: GRAM_CUTOFF }
    }
}

/// Relative tolerance for treating `M†M` as a multiple of the identity.
pub const ISOTROPY_TOL: f64 = 1e-10;

impl ComponentModel {
    /// `U_v` with `embedding(v) ∝ U_v` unitary, when that holds for every site.
    pub fn unitary_embeddings(&self) -> Option<BTreeMap<usize, CMatrix>> {
        self.sites
            .iter()
            .map(|&v| {
                let m = self.embedding(v);
                let n = m.conjugate(&CMatrix::identity(2));
                let scale = 0.5 * n.trace().re;
                let defect = (&n - &CMatrix::identity(2).scale_real(scale)).max_abs();
                (scale > 0.0 && defect <= ISOTROPY_TOL * scale).then(|| (v, m.scale_real(1.0 / scale.sqrt())))
            })
            .collect()
    }
}

/// `P_Sym / (m + 1)` on `m` qubits.
fn symmetric_mixture(m: usize) -> CMatrix {
    let binom = |k: u32| -> f64 { (0..k).fold(1.0, |acc, i| acc * (m as u32 - i) as f64 / (i + 1) as f64) };
    let dim = 1usize << m;
    CMatrix::from_fn(dim, dim, |x, y| {
        let (kx, ky) = (x.count_ones(), y.count_ones());
        if kx == ky {
            C64::new(1.0 / (binom(kx) * (m + 1) as f64), 0.0)
        } else {
            ZERO
        }
    })
}

/// Exact maximal-mixture averages when every component is a unitary image
/// of the symmetric subspace. The `m`-site marginal of `P_Sym/(n+1)` is
/// `P_Sym/(m+1)` on those sites, so no Gram matrix is needed.
#[derive(Clone, Debug)]
pub struct IsotropicMixture {
    /// Site to (component index, `U_v`).
    location: BTreeMap<usize, (usize, CMatrix)>,
}

impl IsotropicMixture {
    pub fn new(model: &GroundSpaceModel) -> Option<Self> {
        let mut location = BTreeMap::new();
        for (c, comp) in model.components.iter().enumerate() {
            for (v, u) in comp.unitary_embeddings()? {
                location.insert(v, (c, u));
            }
        }
        Some(Self { location })
    }

    /// Reduced density matrix on `sites` (ascending).
    fn marginal(&self, sites: &[usize]) -> Result<CMatrix> {
        let m = sites.len();
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (p, v) in sites.iter().enumerate() {
            let (c, _) = self.location.get(v).ok_or(Error::SupportNotInRoots(*v))?;
            groups.entry(*c).or_default().push(p);
        }
        let blocks: Vec<(Vec<usize>, CMatrix)> = groups
            .into_values()
            .map(|pos| {
                let u = pos.iter().fold(CMatrix::identity(1), |acc, &p| acc.kron(&self.location[&sites[p]].1));
                let rho = u.adjoint().conjugate(&symmetric_mixture(pos.len()));
                (pos, rho)
            })
            .collect();
        let gather = |x: usize, pos: &[usize]| pos.iter().fold(0, |acc, &p| (acc << 1) | ((x >> (m - 1 - p)) & 1));
        Ok(CMatrix::from_fn(1 << m, 1 << m, |x, y| {
            blocks.iter().fold(ONE, |acc, (pos, rho)| acc * rho[(gather(x, pos), gather(y, pos))])
        }))
    }

    /// `Σ_terms tr(A_S ρ_S)` for an operator on root sites.
    pub fn average(&self, op: &LocalSum) -> Result<f64> {
        let mut acc = op.constant;
        for term in &op.terms {
            let rho = self.marginal(&term.sites)?;
            let d = rho.rows();
            for x in 0..d {
                for y in 0..d {
                    acc += (term.matrix[(x, y)] * rho[(y, x)]).re;
                }
            }
        }
        Ok(acc)
    }
}

/// A solved frustration-free instance: reduction, factors and Gram data.
pub struct GroundSpace {
    pub spec: HamiltonianSpec,
    pub outcome: CompleteHomogeneous,
    pub model: GroundSpaceModel,
    /// Present when every component is a unitary image of `Sym`.
    pub isotropic: Option<IsotropicMixture>,
    gram_cutoff: f64,
    restriction: OnceLock<std::result::Result<Restriction, Error>>,
}

impl GroundSpace {
    /// Normalizes `spec`, reduces it and builds the local factors. The Gram
    /// machinery is built on first use.
    pub fn build(spec: &HamiltonianSpec, opts: &GroundOptions) -> Result<Self> {
        let spec = normalize_terms(spec)?;
        let outcome = match reduce(&spec, &opts.reduce)? {
            ReductionOutcome::Frustrated { .. } => return Err(Error::FrustratedInput),
            ReductionOutcome::CompleteHomogeneous(c) => c,
        };
        let model = local_factors(&outcome)?;
        let isotropic = IsotropicMixture::new(&model);
        Ok(Self { spec, outcome, model, isotropic, gram_cutoff: opts.gram_cutoff, restriction: OnceLock::new() })
    }

    pub fn restriction(&self) -> Result<&Restriction> {
        self.restriction
            .get_or_init(|| Restriction::new(self.model.space(), self.gram_cutoff))
            .as_ref()
            .map_err(Clone::clone)
    }

    /// `T† A T` restricted to the kernel.
    pub fn restrict(&self, op: &LocalSum) -> Result<RestrictionResult> {
        self.restriction()?.restrict(&pullback_operator(&self.model.network, op))
    }

    pub fn expectation(&self, obs: &Observable) -> Result<f64> {
        self.expectation_of(&obs.to_local_sum())
    }

    /// Maximal-mixture average; exact marginals when available, otherwise
    /// the Gram restriction.
    pub fn expectation_of(&self, op: &LocalSum) -> Result<f64> {
        let pulled = pullback_operator(&self.model.network, op);
        match &self.isotropic {
            Some(iso) => iso.average(&pulled),
            None => self.restriction()?.mixture_average(&pulled),
        }
    }

    /// Unnormalized kernel basis `T C |α_j>^{⊗n}` on the original sites.
    pub fn basis_states(&self) -> Result<Vec<Vec<C64>>> {
        let roots = &self.model.network.root_sites;
        self.model
            .space()
            .materialize(roots)?
            .iter()
            .map(|psi| apply_network(&self.model.network, psi))
            .collect()
    }
}

/// Maximal-mixture average of `obs` over the ground manifold of `spec`.
pub fn ground_expectation(spec: &HamiltonianSpec, obs: &Observable, opts: &GroundOptions) -> Result<f64> {
    GroundSpace::build(spec, opts)?.expectation(obs)
}

/// Zero when frustrated, otherwise `Π (n_i + 1)`.
pub fn ground_dimension(spec: &HamiltonianSpec, opts: &ReduceOptions) -> Result<usize> {
    Ok(reduce(&normalize_terms(spec)?, opts)?.ground_dimension())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchmidtReport {
    pub max_rank: usize,
    pub bound: usize,
    pub pass: bool,
}

/// Schmidt rank across `region | rest` of one state (amplitudes indexed with
/// site `s` at bit `N - 1 - s`).
pub fn schmidt_rank(psi: &[C64], n_sites: usize, region: &[usize]) -> usize {
    let inside: Vec<usize> = region.to_vec();
    let outside: Vec<usize> = (0..n_sites).filter(|s| !region.contains(s)).collect();
    let rows = 1 << inside.len();
    let cols = 1 << outside.len();
    let gather = |sites: &[usize], x: usize| -> usize {
        sites.iter().fold(0, |acc, &s| (acc << 1) | ((x >> (n_sites - 1 - s)) & 1))
    };
    let mut m = CMatrix::zeros(rows, cols);
    for (x, &a) in psi.iter().enumerate() {
        m[(gather(&inside, x), gather(&outside, x))] = a;
    }
    let sv = singular_values(&m);
    let top = sv.first().copied().unwrap_or(0.0);
    sv.iter().filter(|&&s| s > SCHMIDT_CUTOFF * top).count()
}

/// Samples random ground states and checks that their Schmidt rank across
/// `region` stays within `|region| + 1`. The region must induce a connected
/// subgraph of the interactions.
pub fn schmidt_check(
    spec: &HamiltonianSpec,
    region: &[usize],
    samples: usize,
    seed: u64,
    opts: &GroundOptions,
) -> Result<SchmidtReport> {
    let n = spec.n_sites();
    if n > crate::oracle::ITERATIVE_LIMIT {
        return Err(Error::TooLarge { n, limit: crate::oracle::ITERATIVE_LIMIT });
    }
    let mut region: Vec<usize> = region.to_vec();
    region.sort_unstable();
    region.dedup();
    if region.is_empty() || region.len() >= n || region.iter().any(|&s| s >= n) {
        return Err(Error::InvalidSystem("region must be a nonempty proper subset of the sites".into()));
    }
    let index: BTreeMap<usize, usize> = region.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    let inner_edges = spec
        .two_spin
        .keys()
        .filter(|(a, b)| index.contains_key(a) && index.contains_key(b))
        .map(|(a, b)| (index[a], index[b]));
    if components(region.len(), inner_edges).len() > 1 {
        return Err(Error::InvalidSystem("region must induce a connected subgraph".into()));
    }
    let gs = GroundSpace::build(spec, opts)?;
    let basis = gs.basis_states()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rank = 0;
    for _ in 0..samples {
        let mut psi = vec![ZERO; 1 << n];
        for b in &basis {
            let c = C64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
            for (p, x) in psi.iter_mut().zip(b) {
                *p += c * x;
            }
        }
        let Some(psi) = normalized(&psi) else { continue };
        max_rank = max_rank.max(schmidt_rank(&psi, n, &region));
    }
    let bound = region.len() + 1;
    Ok(SchmidtReport { max_rank, bound, pass: max_rank <= bound })
}
