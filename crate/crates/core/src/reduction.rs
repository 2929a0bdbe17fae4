//! Isometric reduction of frustration-free two-spin Hamiltonians.
//!
//! Rank-2 and rank-3 couplings are contracted pairwise by isometries onto a
//! two-dimensional subspace containing the coupling's kernel. Rank-1
//! single-spin terms pin their spin to the orthogonal state. Once only rank-1
//! couplings remain, constraints are closed under induction through the
//! singlet; any inconsistency is merged into a rank-2 coupling and the loop
//! continues. The process ends either with a full-rank term (frustrated) or
//! with a complete homogeneous residual plus the tree network of isometries
//! that maps its kernel onto the original one.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};
use crate::model::{
    check_natural, reshaped_det, swap_factors, HamiltonianSpec, LocalOperator, LocalSum, Naturalness, SpinSystem,
    ViolationReason,
};
use crate::numerics::{hermitian_eig, inner, normalized, CMatrix, C64, DEFAULT_TOL, ZERO};

/// Induced constraints below this norm are treated as vanishing.
pub const INDUCTION_ZERO: f64 = 1e-12;

/// Largest leaf count for which [`apply_network`] materializes states.
pub const MAX_MATERIALIZED: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum EdgeOrder {
    /// Lowest edge / site first; the lower site of a pair is the parent.
    #[default]
    LowestFirst,
    /// Highest edge / site first; the higher site of a pair is the parent.
    HighestFirst,
}

#[derive(Clone, Copy, Debug)]
pub struct ReduceOptions {
    /// Relative rank tolerance.
    pub tol: f64,
    /// Two constraints are the same when `|<b1|b2>| > 1 - dup_tol`.
    pub dup_tol: f64,
    pub order: EdgeOrder,
}

impl Default for ReduceOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, dup_tol: 1e-9, order: EdgeOrder::LowestFirst }
    }
}

/// A rank-1 two-spin constraint `<β|`: the functional `ψ ↦ Σ bra_i ψ_i` on
/// sites `edge = (a, b)`, `a < b`, indexed by `2 s_a + s_b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub edge: (usize, usize),
    pub bra: [C64; 4],
    pub entangled: bool,
}

impl Constraint {
    /// Normalizes `bra`; `None` for a zero functional.
    pub fn new(edge: (usize, usize), bra: [C64; 4]) -> Option<Self> {
        let (a, b) = edge;
        let bra = if a < b { bra } else { [bra[0], bra[2], bra[1], bra[3]] };
        let unit = normalized(&bra)?;
        let bra = [unit[0], unit[1], unit[2], unit[3]];
        let entangled = reshaped_det(&bra).norm() > crate::model::ENTANGLEMENT_TOL;
        Some(Self { edge: (a.min(b), a.max(b)), bra, entangled })
    }

    /// Constraint whose functional annihilates the kernel of `|β><β|`.
    pub fn from_ket(edge: (usize, usize), ket: &[C64]) -> Option<Self> {
        Self::new(edge, [ket[0].conj(), ket[1].conj(), ket[2].conj(), ket[3].conj()])
    }

    /// `|β><β|` with `|β> = bra^*`, in the `(a, b)` factor order of `edge`.
    pub fn projector(&self) -> CMatrix {
        let ket: Vec<C64> = self.bra.iter().map(|x| x.conj()).collect();
        CMatrix::projector(&ket)
    }

    /// The bra as a 2x2 matrix with rows indexed by `from`.
    pub fn oriented(&self, from: usize) -> [[C64; 2]; 2] {
        let b = &self.bra;
        if from == self.edge.0 {
            [[b[0], b[1]], [b[2], b[3]]]
        } else {
            [[b[0], b[2]], [b[1], b[3]]]
        }
    }

    pub fn other(&self, site: usize) -> Option<usize> {
        match self.edge {
            (a, b) if a == site => Some(b),
            (a, b) if b == site => Some(a),
            _ => None,
        }
    }

    /// Equal up to a scalar, within `dup_tol` on the normalized overlap.
    pub fn proportional(&self, other: &Constraint, dup_tol: f64) -> bool {
        self.edge == other.edge && inner(&self.bra, &other.bra).norm() > 1.0 - dup_tol
    }
}

/// `<β'_{ac}| = (<β_ab| ⊗ <β_bc|)(1 ⊗ |Ψ⁻> ⊗ 1)`, normalized; `None` when the
/// contraction vanishes.
pub fn induce_constraint(first: &Constraint, second: &Constraint) -> Result<Option<Constraint>> {
    let mismatch = || Error::SharedSiteMismatch { first: first.edge, second: second.edge };
    let (p, q) = first.edge;
    let shared = if second.edge.0 == p || second.edge.1 == p {
        p
    } else if second.edge.0 == q || second.edge.1 == q {
        q
    } else {
        return Err(mismatch());
    };
    let a = first.other(shared).unwrap();
    let c = second.other(shared).unwrap();
    if a == c {
        return Err(mismatch());
    }
    let m1 = first.oriented(a);
    let m2 = second.oriented(shared);
    // Ψ⁻ as a matrix is [[0, 1], [-1, 0]] / √2
    let s = C64::new(FRAC_1_SQRT_2, 0.0);
    let psi = [[ZERO, s], [-s, ZERO]];
    let mut out = [[ZERO; 2]; 2];
    for i in 0..2 {
        for l in 0..2 {
            let mut acc = ZERO;
            for j in 0..2 {
                for k in 0..2 {
                    acc += m1[i][j] * psi[j][k] * m2[k][l];
                }
            }
            out[i][l] = acc;
        }
    }
    let bra = [out[0][0], out[0][1], out[1][0], out[1][1]];
    let n = bra.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    if n < INDUCTION_ZERO {
        return Ok(None);
    }
    Ok(Constraint::new((a, c), bra))
}

/// Number of eigenvalues above `tol · λ_max` of a PSD term.
pub fn term_rank(h: &CMatrix, tol: f64) -> Result<usize> {
    rank_with_scale(h, tol, 0.0)
}

/// Rank with the threshold `tol · max(λ_max, scale)`, so that numerically
/// vanishing terms count as zero.
fn rank_with_scale(h: &CMatrix, tol: f64, scale: f64) -> Result<usize> {
    let eig = hermitian_eig(h)?;
    let lmax = eig.max_value();
    if lmax <= 0.0 {
        return Ok(0);
    }
    let threshold = tol * lmax.max(scale);
    Ok(eig.values.iter().filter(|&&v| v > threshold).count())
}

#[derive(Clone, Debug, PartialEq)]
pub enum IsometryStep {
    /// `R_{u:uv}`: maps the new spin `parent` into the pair `(parent, daughter)`.
    /// `isometry` is 4x2 with rows indexed by `2 s_parent + s_daughter`.
    PairContraction { parent: usize, daughter: usize, isometry: CMatrix },
    /// Spin `site` is fixed to `state`.
    SpinFix { site: usize, state: [C64; 2] },
}

/// The tree tensor network of reduction steps, in the order they were applied.
#[derive(Clone, Debug, PartialEq)]
pub struct IsometryNetwork {
    pub steps: Vec<IsometryStep>,
    pub root_sites: Vec<usize>,
    pub leaf_sites: Vec<usize>,
}

impl IsometryNetwork {
    pub fn empty(n_leaves: usize) -> Self {
        Self { steps: vec![], root_sites: (0..n_leaves).collect(), leaf_sites: (0..n_leaves).collect() }
    }

    /// Longest chain of nested contractions above any root.
    pub fn depth(&self) -> usize {
        let mut depth: BTreeMap<usize, usize> = BTreeMap::new();
        for step in &self.steps {
            if let IsometryStep::PairContraction { parent, daughter, .. } = step {
                let d = depth.get(parent).copied().unwrap_or(0).max(depth.get(daughter).copied().unwrap_or(0)) + 1;
                depth.insert(*parent, d);
            }
        }
        self.root_sites.iter().map(|r| depth.get(r).copied().unwrap_or(0)).max().unwrap_or(0)
    }

    pub fn contractions(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s, IsometryStep::PairContraction { .. })).count()
    }

    pub fn fixes(&self) -> usize {
        self.steps.len() - self.contractions()
    }
}

/// A Hamiltonian during reduction, keeping the original site labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedHamiltonian {
    pub n_leaves: usize,
    pub active: BTreeSet<usize>,
    /// Keyed by `(a, b)`, `a < b`, factor order `(a, b)`.
    pub two_spin: BTreeMap<(usize, usize), CMatrix>,
    pub single_spin: BTreeMap<usize, CMatrix>,
    adjacency: BTreeMap<usize, BTreeSet<usize>>,
}

fn key(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl ReducedHamiltonian {
    pub fn from_spec(spec: &HamiltonianSpec) -> Self {
        let mut h = Self {
            n_leaves: spec.n_sites(),
            active: (0..spec.n_sites()).collect(),
            two_spin: BTreeMap::new(),
            single_spin: spec.single_spin.clone(),
            adjacency: BTreeMap::new(),
        };
        for (&(a, b), m) in &spec.two_spin {
            h.add_two(a, b, m.clone());
        }
        h
    }

    /// Relabels the active sites to `0..n` in ascending order. Returns the
    /// spec and the original label of each new site, or `None` when no site
    /// is left.
    pub fn to_spec(&self) -> Option<(HamiltonianSpec, Vec<usize>)> {
        let labels: Vec<usize> = self.active.iter().copied().collect();
        if labels.is_empty() {
            return None;
        }
        let index: BTreeMap<usize, usize> = labels.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let edges = self.two_spin.keys().map(|&(a, b)| (index[&a], index[&b]));
        let system = SpinSystem::new(labels.len(), edges).ok()?;
        let mut spec = HamiltonianSpec::new(system);
        for (&(a, b), m) in &self.two_spin {
            spec.two_spin.insert((index[&a], index[&b]), m.clone());
        }
        for (&v, m) in &self.single_spin {
            spec.single_spin.insert(index[&v], m.clone());
        }
        Some((spec, labels))
    }

    /// Term on `(a, b)` in that factor order.
    pub fn two_spin_term(&self, a: usize, b: usize) -> Option<CMatrix> {
        let m = self.two_spin.get(&key(a, b))?;
        Some(if a < b { m.clone() } else { swap_factors(m) })
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency.get(&v).into_iter().flat_map(|s| s.iter().copied())
    }

    /// Adds `m` (factor order `(a, b)`) onto the pair term.
    fn add_two(&mut self, a: usize, b: usize, m: CMatrix) {
        let m = hermitian_part(if a < b { m } else { swap_factors(&m) });
        match self.two_spin.get_mut(&key(a, b)) {
            Some(existing) => *existing += &m,
            None => {
                self.two_spin.insert(key(a, b), m);
                self.adjacency.entry(a).or_default().insert(b);
                self.adjacency.entry(b).or_default().insert(a);
            }
        }
    }

    fn add_single(&mut self, v: usize, m: CMatrix) {
        let m = hermitian_part(m);
        match self.single_spin.get_mut(&v) {
            Some(existing) => *existing += &m,
            None => {
                self.single_spin.insert(v, m);
            }
        }
    }

    fn remove_two(&mut self, a: usize, b: usize) -> Option<CMatrix> {
        let m = self.two_spin.remove(&key(a, b))?;
        if let Some(s) = self.adjacency.get_mut(&a) {
            s.remove(&b);
        }
        if let Some(s) = self.adjacency.get_mut(&b) {
            s.remove(&a);
        }
        Some(if a < b { m } else { swap_factors(&m) })
    }

    /// Removes and returns all pair terms touching `v`, each in factor order
    /// `(neighbor, v)`.
    fn detach(&mut self, v: usize) -> Vec<(usize, CMatrix)> {
        let nbrs: Vec<usize> = self.neighbors(v).collect();
        nbrs.into_iter().map(|a| (a, self.remove_two(a, v).unwrap())).collect()
    }

    fn scale(&self) -> f64 {
        self.two_spin.values().chain(self.single_spin.values()).map(|m| m.max_abs()).fold(0.0, f64::max)
    }

    fn contract_in_place(&mut self, parent: usize, daughter: usize, tol: f64, scale: f64) -> Result<IsometryStep> {
        let h = self
            .two_spin_term(parent, daughter)
            .ok_or_else(|| Error::InvalidSystem(format!("no term on ({parent}, {daughter})")))?;
        let rank = rank_with_scale(&h, tol, scale)?;
        if !(2..=3).contains(&rank) {
            return Err(Error::RankOutOfRange(parent, daughter, rank));
        }
        // Two lowest eigenvectors: the kernel, completed for rank 3 by the
        // lowest excited state.
        let eig = hermitian_eig(&h)?;
        let r = CMatrix::from_columns(4, &[eig.vector(0), eig.vector(1)]);
        self.apply_pair_isometry(parent, daughter, &r);
        Ok(IsometryStep::PairContraction { parent, daughter, isometry: r })
    }

    /// Replaces `(parent, daughter)` by `parent` through `r` (4x2), mapping
    /// every term as `R† h R`.
    pub(crate) fn apply_pair_isometry(&mut self, parent: usize, daughter: usize, r: &CMatrix) {
        let id2 = CMatrix::identity(2);
        let pair = self.remove_two(parent, daughter);
        let mut single = CMatrix::zeros(2, 2);
        if let Some(h) = pair {
            single += &r.conjugate(&h);
        }
        if let Some(s) = self.single_spin.remove(&parent) {
            single += &r.conjugate(&s.kron(&id2));
        }
        if let Some(s) = self.single_spin.remove(&daughter) {
            single += &r.conjugate(&id2.kron(&s));
        }
        let lift = id2.kron(r);
        for (a, h) in self.detach(parent) {
            // (a, parent) ⊗ 1_daughter, order (a, parent, daughter)
            let m = h.kron(&id2);
            self.add_two(a, parent, lift.conjugate(&m));
        }
        for (a, h) in self.detach(daughter) {
            // (a, daughter) with identity on parent, order (a, parent, daughter)
            let m = embed_skip_middle(&h);
            self.add_two(a, parent, lift.conjugate(&m));
        }
        if single.max_abs() > 0.0 {
            self.add_single(parent, single);
        }
        self.active.remove(&daughter);
        self.adjacency.remove(&daughter);
    }

    fn fix_in_place(&mut self, site: usize, tol: f64, scale: f64) -> Result<IsometryStep> {
        let s = self
            .single_spin
            .get(&site)
            .ok_or(Error::SingleSiteRank { site, rank: 0 })?;
        let rank = rank_with_scale(s, tol, scale)?;
        match rank {
            1 => {}
            2 => return Err(Error::FullRankSingleSite(site)),
            r => return Err(Error::SingleSiteRank { site, rank: r }),
        }
        let eig = hermitian_eig(s)?;
        let chi = eig.vector(0);
        self.fix_to_state(site, [chi[0], chi[1]]);
        Ok(IsometryStep::SpinFix { site, state: [chi[0], chi[1]] })
    }

    pub(crate) fn fix_to_state(&mut self, site: usize, chi: [C64; 2]) {
        self.single_spin.remove(&site);
        for (a, h) in self.detach(site) {
            // (1 ⊗ <χ|) h (1 ⊗ |χ>)
            let reduced = CMatrix::from_fn(2, 2, |i, j| {
                let mut acc = ZERO;
                for k in 0..2 {
                    for l in 0..2 {
                        acc += chi[k].conj() * h[(2 * i + k, 2 * j + l)] * chi[l];
                    }
                }
                acc
            });
            self.add_single(a, reduced);
        }
        self.active.remove(&site);
        self.adjacency.remove(&site);
    }
}

/// Conjugations accumulate rounding; terms are kept exactly Hermitian.
fn hermitian_part(m: CMatrix) -> CMatrix {
    (&m + &m.adjoint()).scale_real(0.5)
}

/// Embeds an operator on `(a, x)` into order `(a, y, x)` with identity on `y`.
fn embed_skip_middle(h: &CMatrix) -> CMatrix {
    CMatrix::from_fn(8, 8, |i, j| {
        let (ai, yi, xi) = (i >> 2, (i >> 1) & 1, i & 1);
        let (aj, yj, xj) = (j >> 2, (j >> 1) & 1, j & 1);
        if yi != yj {
            ZERO
        } else {
            h[(2 * ai + xi, 2 * aj + xj)]
        }
    })
}

/// Contracts `(parent, daughter)` by the isometry onto the two lowest
/// eigenvectors of their coupling.
pub fn contract_pair(
    h: &ReducedHamiltonian,
    parent: usize,
    daughter: usize,
    tol: f64,
) -> Result<(ReducedHamiltonian, IsometryStep)> {
    let mut out = h.clone();
    let scale = h.scale();
    let step = out.contract_in_place(parent, daughter, tol, scale)?;
    Ok((out, step))
}

/// Fixes `site` to the kernel of its rank-1 single-spin term.
pub fn fix_spin(h: &ReducedHamiltonian, site: usize, tol: f64) -> Result<(ReducedHamiltonian, IsometryStep)> {
    let mut out = h.clone();
    let scale = h.scale();
    let step = out.fix_in_place(site, tol, scale)?;
    Ok((out, step))
}

/// One connected component of the complete homogeneous residual.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualComponent {
    /// Ascending; the first site is the root.
    pub sites: Vec<usize>,
    /// The rank-1 couplings left by the reduction.
    pub constraints: Vec<Constraint>,
    /// Closed constraint between the root and every other site.
    pub root_constraints: BTreeMap<usize, Constraint>,
}

impl ResidualComponent {
    pub fn root(&self) -> usize {
        self.sites[0]
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Closed constraint on any pair of distinct sites of the component.
    pub fn closed_constraint(&self, u: usize, v: usize) -> Result<Constraint> {
        let root = self.root();
        let missing = || Error::InvalidSystem(format!("({u}, {v}) is not a pair of this component"));
        if u == v {
            return Err(missing());
        }
        if u == root || v == root {
            let other = if u == root { v } else { u };
            return self.root_constraints.get(&other).cloned().ok_or_else(missing);
        }
        let (cu, cv) = (self.root_constraints.get(&u).ok_or_else(missing)?, self.root_constraints.get(&v).ok_or_else(missing)?);
        induce_constraint(cu, cv)?.ok_or_else(missing)
    }

    /// Every pairwise closed constraint (the complete constraint graph).
    pub fn closure(&self) -> Result<Vec<Constraint>> {
        let mut out = Vec::new();
        for (i, &u) in self.sites.iter().enumerate() {
            for &v in &self.sites[i + 1..] {
                out.push(self.closed_constraint(u, v)?);
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompleteHomogeneous {
    pub components: Vec<ResidualComponent>,
    pub network: IsometryNetwork,
    pub stats: ReductionStats,
}

impl CompleteHomogeneous {
    /// Total number of residual spins `n_c`.
    pub fn n_c(&self) -> usize {
        self.components.iter().map(|c| c.len()).sum()
    }

    /// `Π (n_i + 1)`, saturating.
    pub fn ground_dimension(&self) -> usize {
        self.components.iter().fold(1usize, |acc, c| acc.saturating_mul(c.len() + 1))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReductionStats {
    pub contractions: usize,
    pub fixes: usize,
    pub merges: usize,
    pub closure_passes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FrustrationWitness {
    /// Full-rank coupling between the (current labels of) two spins.
    TwoSpin { edge: (usize, usize) },
    /// Full-rank single-spin term.
    SingleSpin { site: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub enum ReductionOutcome {
    Frustrated { witness: FrustrationWitness, network: IsometryNetwork, stats: ReductionStats },
    CompleteHomogeneous(CompleteHomogeneous),
}

impl ReductionOutcome {
    pub fn is_frustrated(&self) -> bool {
        matches!(self, ReductionOutcome::Frustrated { .. })
    }

    pub fn ground_dimension(&self) -> usize {
        match self {
            ReductionOutcome::Frustrated { .. } => 0,
            ReductionOutcome::CompleteHomogeneous(c) => c.ground_dimension(),
        }
    }

    pub fn complete(&self) -> Option<&CompleteHomogeneous> {
        match self {
            ReductionOutcome::CompleteHomogeneous(c) => Some(c),
            _ => None,
        }
    }
}

struct Reducer {
    h: ReducedHamiltonian,
    opts: ReduceOptions,
    scale: f64,
    steps: Vec<IsometryStep>,
    stats: ReductionStats,
    two_rank: BTreeMap<(usize, usize), usize>,
    single_rank: BTreeMap<usize, usize>,
}

enum Next {
    Frustrated(FrustrationWitness),
    Continue,
    Closed(Vec<ResidualComponent>),
}

impl Reducer {
    fn refresh_site(&mut self, v: usize) -> Result<Option<FrustrationWitness>> {
        let nbrs: Vec<usize> = self.h.neighbors(v).collect();
        for a in nbrs {
            if let Some(w) = self.refresh_pair(key(a, v))? {
                return Ok(Some(w));
            }
        }
        self.refresh_single(v)
    }

    fn refresh_pair(&mut self, k: (usize, usize)) -> Result<Option<FrustrationWitness>> {
        let Some(m) = self.h.two_spin.get(&k) else {
            self.two_rank.remove(&k);
            return Ok(None);
        };
        let r = rank_with_scale(m, self.opts.tol, self.scale)?;
        match r {
            0 => {
                self.h.remove_two(k.0, k.1);
                self.two_rank.remove(&k);
            }
            4 => return Ok(Some(FrustrationWitness::TwoSpin { edge: k })),
            _ => {
                self.two_rank.insert(k, r);
            }
        }
        Ok(None)
    }

    fn refresh_single(&mut self, v: usize) -> Result<Option<FrustrationWitness>> {
        let Some(m) = self.h.single_spin.get(&v) else {
            self.single_rank.remove(&v);
            return Ok(None);
        };
        match rank_with_scale(m, self.opts.tol, self.scale)? {
            0 => {
                self.h.single_spin.remove(&v);
                self.single_rank.remove(&v);
            }
            2 => return Ok(Some(FrustrationWitness::SingleSpin { site: v })),
            r => {
                self.single_rank.insert(v, r);
            }
        }
        Ok(None)
    }

    fn pick<T: Copy>(&self, mut items: impl DoubleEndedIterator<Item = T>) -> Option<T> {
        match self.opts.order {
            EdgeOrder::LowestFirst => items.next(),
            EdgeOrder::HighestFirst => items.next_back(),
        }
    }

    fn step(&mut self) -> Result<Next> {
        if let Some(site) = self.pick(self.single_rank.keys().copied()) {
            let step = self.h.fix_in_place(site, self.opts.tol, self.scale)?;
            self.single_rank.remove(&site);
            let stale: Vec<(usize, usize)> = self.two_rank.keys().copied().filter(|&(a, b)| a == site || b == site).collect();
            for k in stale {
                self.two_rank.remove(&k);
            }
            self.steps.push(step);
            self.stats.fixes += 1;
            for v in self.h.single_spin.keys().copied().collect::<Vec<_>>() {
                if let Some(w) = self.refresh_single(v)? {
                    return Ok(Next::Frustrated(w));
                }
            }
            return Ok(Next::Continue);
        }

        let contractible = self.two_rank.iter().filter(|(_, &r)| r == 2 || r == 3).map(|(&k, _)| k);
        if let Some((a, b)) = self.pick(contractible) {
            let (parent, daughter) = match self.opts.order {
                EdgeOrder::LowestFirst => (a, b),
                EdgeOrder::HighestFirst => (b, a),
            };
            let stale: Vec<(usize, usize)> = self
                .two_rank
                .keys()
                .copied()
                .filter(|&(x, y)| [x, y].iter().any(|s| *s == parent || *s == daughter))
                .collect();
            for k in stale {
                self.two_rank.remove(&k);
            }
            self.single_rank.remove(&daughter);
            let step = self.h.contract_in_place(parent, daughter, self.opts.tol, self.scale)?;
            self.steps.push(step);
            self.stats.contractions += 1;
            if let Some(w) = self.refresh_site(parent)? {
                return Ok(Next::Frustrated(w));
            }
            return Ok(Next::Continue);
        }

        self.close()
    }

    /// Closure over rank-1 couplings. Constraints are transported from each
    /// component root along a BFS tree by induction; every remaining coupling
    /// is compared with the induced constraint on its pair.
    fn close(&mut self) -> Result<Next> {
        self.stats.closure_passes += 1;
        let mut constraints: BTreeMap<(usize, usize), Constraint> = BTreeMap::new();
        for (&k, m) in &self.h.two_spin {
            let eig = hermitian_eig(m)?;
            let c = Constraint::from_ket(k, &eig.vector(3))
                .ok_or_else(|| Error::InvalidSystem(format!("vanishing coupling on {k:?}")))?;
            if !c.entangled {
                return Err(Error::NotNatural(format!("product constraint on ({}, {})", k.0, k.1)));
            }
            constraints.insert(k, c);
        }

        let mut seen: BTreeSet<usize> = BTreeSet::new();
        let mut components = Vec::new();
        for &root in &self.h.active {
            if seen.contains(&root) {
                continue;
            }
            seen.insert(root);
            let mut sites = vec![root];
            let mut root_constraints: BTreeMap<usize, Constraint> = BTreeMap::new();
            let mut tree_edges: BTreeSet<(usize, usize)> = BTreeSet::new();
            let mut queue = VecDeque::from([root]);
            while let Some(p) = queue.pop_front() {
                let nbrs: Vec<usize> = self.h.neighbors(p).collect();
                for v in nbrs {
                    if seen.contains(&v) {
                        continue;
                    }
                    seen.insert(v);
                    sites.push(v);
                    tree_edges.insert(key(p, v));
                    let bpv = &constraints[&key(p, v)];
                    let transported = if p == root {
                        bpv.clone()
                    } else {
                        induce_constraint(&root_constraints[&p], bpv)?
                            .ok_or_else(|| Error::NotNatural(format!("induced constraint vanished on ({root}, {v})")))?
                    };
                    if !transported.entangled {
                        return Err(Error::NotNatural(format!("induced product constraint on ({root}, {v})")));
                    }
                    root_constraints.insert(v, transported);
                    queue.push_back(v);
                }
            }
            sites.sort_unstable();
            let member: BTreeSet<usize> = sites.iter().copied().collect();
            let comp_constraints: Vec<Constraint> = constraints
                .iter()
                .filter(|(k, _)| member.contains(&k.0))
                .map(|(_, c)| c.clone())
                .collect();
            let component = ResidualComponent { sites, constraints: comp_constraints, root_constraints };
            for c in &component.constraints {
                if tree_edges.contains(&c.edge) {
                    continue;
                }
                let predicted = component.closed_constraint(c.edge.0, c.edge.1)?;
                if !predicted.proportional(c, self.opts.dup_tol) {
                    let (u, v) = c.edge;
                    self.h.add_two(u, v, predicted.projector());
                    self.stats.merges += 1;
                    if let Some(w) = self.refresh_pair((u, v))? {
                        return Ok(Next::Frustrated(w));
                    }
                    return Ok(Next::Continue);
                }
            }
            components.push(component);
        }
        Ok(Next::Closed(components))
    }
}

/// Decides frustration-freeness and, if frustration-free, returns the
/// complete homogeneous residual with its isometry network.
///
/// `spec` must be normalized (every term's smallest eigenvalue zero) and
/// natural.
pub fn reduce(spec: &HamiltonianSpec, opts: &ReduceOptions) -> Result<ReductionOutcome> {
    match check_natural(spec)? {
        Naturalness::Natural => {}
        Naturalness::Violation { reason, location } => {
            let what = match reason {
                ViolationReason::IsolatedSubsystem => "isolated subsystem",
                ViolationReason::ProductExcitedSpace => "coupling without an entangled excited state",
            };
            return Err(Error::NotNatural(format!("{what} at {location:?}")));
        }
    }
    let h = ReducedHamiltonian::from_spec(spec);
    let scale = h.scale();
    let mut r = Reducer {
        h,
        opts: *opts,
        scale,
        steps: vec![],
        stats: ReductionStats::default(),
        two_rank: BTreeMap::new(),
        single_rank: BTreeMap::new(),
    };
    let network = |r: &Reducer| IsometryNetwork {
        steps: r.steps.clone(),
        root_sites: r.h.active.iter().copied().collect(),
        leaf_sites: (0..r.h.n_leaves).collect(),
    };
    let keys: Vec<(usize, usize)> = r.h.two_spin.keys().copied().collect();
    for k in keys {
        if let Some(w) = r.refresh_pair(k)? {
            return Ok(ReductionOutcome::Frustrated { witness: w, network: network(&r), stats: r.stats });
        }
    }
    let singles: Vec<usize> = r.h.single_spin.keys().copied().collect();
    for v in singles {
        if let Some(w) = r.refresh_single(v)? {
            return Ok(ReductionOutcome::Frustrated { witness: w, network: network(&r), stats: r.stats });
        }
    }
    loop {
        match r.step()? {
            Next::Continue => continue,
            Next::Frustrated(witness) => {
                return Ok(ReductionOutcome::Frustrated { witness, network: network(&r), stats: r.stats });
            }
            Next::Closed(components) => {
                return Ok(ReductionOutcome::CompleteHomogeneous(CompleteHomogeneous {
                    components,
                    network: network(&r),
                    stats: r.stats,
                }));
            }
        }
    }
}

/// Maps a state on the root sites (ascending, first root most significant)
/// to the leaf sites. For validation only.
pub fn apply_network(network: &IsometryNetwork, psi: &[C64]) -> Result<Vec<C64>> {
    let n_leaves = network.leaf_sites.len();
    if n_leaves > MAX_MATERIALIZED {
        return Err(Error::TooLarge { n: n_leaves, limit: MAX_MATERIALIZED });
    }
    let roots = &network.root_sites;
    if psi.len() != 1 << roots.len() {
        return Err(Error::InvalidSystem(format!(
            "root state has length {}, expected {}",
            psi.len(),
            1usize << roots.len()
        )));
    }
    let mut order: Vec<usize> = roots.clone();
    let mut amp: Vec<C64> = psi.to_vec();
    for step in network.steps.iter().rev() {
        let n = order.len();
        match step {
            IsometryStep::PairContraction { parent, daughter, isometry } => {
                let pos = order.iter().position(|s| s == parent).expect("parent present");
                let bit = n - 1 - pos;
                let mut next = vec![ZERO; amp.len() * 2];
                for (x, &a) in amp.iter().enumerate() {
                    if a == ZERO {
                        continue;
                    }
                    let s = (x >> bit) & 1;
                    let cleared = x & !(1 << bit);
                    for su in 0..2 {
                        for sv in 0..2 {
                            let r = isometry[(2 * su + sv, s)];
                            if r == ZERO {
                                continue;
                            }
                            let y = ((cleared | (su << bit)) << 1) | sv;
                            next[y] += r * a;
                        }
                    }
                }
                order.push(*daughter);
                amp = next;
            }
            IsometryStep::SpinFix { site, state } => {
                let mut next = vec![ZERO; amp.len() * 2];
                for (x, &a) in amp.iter().enumerate() {
                    next[x << 1] = state[0] * a;
                    next[(x << 1) | 1] = state[1] * a;
                }
                order.push(*site);
                amp = next;
            }
        }
    }
    Ok(permute_to_ascending(&order, &amp))
}

/// Reorders qubits so that sites appear ascending.
pub(crate) fn permute_to_ascending(order: &[usize], amp: &[C64]) -> Vec<C64> {
    let n = order.len();
    let mut sorted: Vec<usize> = order.to_vec();
    sorted.sort_unstable();
    let target_pos: Vec<usize> = order.iter().map(|s| sorted.binary_search(s).unwrap()).collect();
    let mut out = vec![ZERO; amp.len()];
    for (x, &a) in amp.iter().enumerate() {
        let mut y = 0;
        for (p, &t) in target_pos.iter().enumerate() {
            let b = (x >> (n - 1 - p)) & 1;
            y |= b << (n - 1 - t);
        }
        out[y] = a;
    }
    out
}

/// Expands `op` to act on `target` (a superset of its sites, ascending).
pub(crate) fn embed_operator(op: &LocalOperator, target: &[usize]) -> CMatrix {
    let k = target.len();
    let pos: Vec<usize> = op.sites.iter().map(|s| target.binary_search(s).expect("site in target")).collect();
    let m = op.sites.len();
    let dim = 1 << k;
    let local = |x: usize| -> usize {
        pos.iter().enumerate().fold(0, |acc, (i, &p)| acc | (((x >> (k - 1 - p)) & 1) << (m - 1 - i)))
    };
    let rest_mask: usize = (0..k).filter(|p| !pos.contains(p)).fold(0, |acc, p| acc | (1 << (k - 1 - p)));
    CMatrix::from_fn(dim, dim, |i, j| {
        if i & rest_mask != j & rest_mask {
            ZERO
        } else {
            op.matrix[(local(i), local(j))]
        }
    })
}

/// `T† A T` as a sum of operators on root sites. Each step only touches terms
/// whose support meets it, and no term's support grows.
pub fn pullback_operator(network: &IsometryNetwork, a: &LocalSum) -> LocalSum {
    let mut out = LocalSum { terms: vec![], constant: a.constant };
    for term in &a.terms {
        let mut sites = term.sites.clone();
        let mut m = term.matrix.clone();
        for step in &network.steps {
            match step {
                IsometryStep::PairContraction { parent, daughter, isometry } => {
                    if !sites.contains(parent) && !sites.contains(daughter) {
                        continue;
                    }
                    let mut full: Vec<usize> = sites.clone();
                    for s in [*parent, *daughter] {
                        if !full.contains(&s) {
                            full.push(s);
                        }
                    }
                    full.sort_unstable();
                    let big = embed_operator(&LocalOperator { sites: sites.clone(), matrix: m }, &full);
                    let reduced: Vec<usize> = full.iter().copied().filter(|s| s != daughter).collect();
                    m = contract_operator(&big, &full, &reduced, *parent, *daughter, isometry);
                    sites = reduced;
                }
                IsometryStep::SpinFix { site, state } => {
                    if !sites.contains(site) {
                        continue;
                    }
                    let reduced: Vec<usize> = sites.iter().copied().filter(|s| s != site).collect();
                    m = fix_operator(&m, &sites, *site, state);
                    sites = reduced;
                }
            }
        }
        if sites.is_empty() {
            out.constant += m[(0, 0)].re;
        } else {
            out.terms.push(LocalOperator { sites, matrix: m });
        }
    }
    out
}

/// Index in `full` of configuration `y` on `reduced`, with `parent`/`daughter`
/// bits overridden.
fn expand_index(y: usize, reduced: &[usize], full: &[usize], overrides: &[(usize, usize)]) -> usize {
    let (kr, kf) = (reduced.len(), full.len());
    let mut x = 0;
    for (p, s) in full.iter().enumerate() {
        let bit = if let Some(&(_, b)) = overrides.iter().find(|(site, _)| site == s) {
            b
        } else {
            let q = reduced.binary_search(s).unwrap();
            (y >> (kr - 1 - q)) & 1
        };
        x |= bit << (kf - 1 - p);
    }
    x
}

fn contract_operator(
    m: &CMatrix,
    full: &[usize],
    reduced: &[usize],
    parent: usize,
    daughter: usize,
    r: &CMatrix,
) -> CMatrix {
    let kr = reduced.len();
    let dim = 1 << kr;
    let ppos = reduced.binary_search(&parent).unwrap();
    let parent_bit = |y: usize| (y >> (kr - 1 - ppos)) & 1;
    let mut out = CMatrix::zeros(dim, dim);
    for y1 in 0..dim {
        for y2 in 0..dim {
            let mut acc = ZERO;
            for a in 0..4 {
                let ra = r[(a, parent_bit(y1))].conj();
                if ra == ZERO {
                    continue;
                }
                let x1 = expand_index(y1, reduced, full, &[(parent, a >> 1), (daughter, a & 1)]);
                for b in 0..4 {
                    let rb = r[(b, parent_bit(y2))];
                    if rb == ZERO {
                        continue;
                    }
                    let x2 = expand_index(y2, reduced, full, &[(parent, b >> 1), (daughter, b & 1)]);
                    acc += ra * m[(x1, x2)] * rb;
                }
            }
            out[(y1, y2)] = acc;
        }
    }
    out
}

fn fix_operator(m: &CMatrix, sites: &[usize], site: usize, chi: &[C64; 2]) -> CMatrix {
    let reduced: Vec<usize> = sites.iter().copied().filter(|&s| s != site).collect();
    let dim = 1 << reduced.len();
    CMatrix::from_fn(dim, dim, |y1, y2| {
        let mut acc = ZERO;
        for t1 in 0..2 {
            let x1 = expand_index(y1, &reduced, sites, &[(site, t1)]);
            for t2 in 0..2 {
                let x2 = expand_index(y2, &reduced, sites, &[(site, t2)]);
                acc += chi[t1].conj() * m[(x1, x2)] * chi[t2];
            }
        }
        acc
    })
}
