//! Spin systems, Hamiltonians and observables.
//!
//! Multi-site matrices act on their sites in ascending order with the lowest
//! site as the most significant tensor factor, so a two-spin term on `(a, b)`
//! with `a < b` is indexed by `2 * s_a + s_b`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{self, hermitian_eig, pauli_x, pauli_y, pauli_z, CMatrix, C64, ONE, ZERO};

/// Tolerance used for the determinant test on excited spaces.
pub const ENTANGLEMENT_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct SpinSystem {
    n_sites: usize,
    edges: Vec<(usize, usize)>,
    coords: Option<Vec<(usize, usize)>>,
}

impl SpinSystem {
    /// Edges are normalized to `a < b` and sorted; self-loops and duplicates
    /// are rejected.
    pub fn new(n_sites: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n_sites == 0 {
            return Err(Error::InvalidSystem("a system needs at least one site".into()));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::InvalidSystem(format!("self-loop on site {a}")));
            }
            for s in [a, b] {
                if s >= n_sites {
                    return Err(Error::SiteOutOfRange { site: s, n: n_sites });
                }
            }
            if !set.insert((a.min(b), a.max(b))) {
                return Err(Error::InvalidSystem(format!("duplicate edge ({a}, {b})")));
            }
        }
        Ok(Self { n_sites, edges: set.into_iter().collect(), coords: None })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn coords(&self) -> Option<&[(usize, usize)]> {
        self.coords.as_deref()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.binary_search(&(a.min(b), a.max(b))).is_ok()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == v || b == v).count()
    }

    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| match (a == v, b == v) {
                (true, _) => Some(b),
                (_, true) => Some(a),
                _ => None,
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatticeKind {
    Chain,
    SquareTorus,
    TrigonalTorus,
}

impl FromStr for LatticeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chain" => Ok(Self::Chain),
            "square_torus" => Ok(Self::SquareTorus),
            "trigonal_torus" => Ok(Self::TrigonalTorus),
            other => Err(Error::UnknownLattice(other.to_string())),
        }
    }
}

impl fmt::Display for LatticeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Chain => "chain",
            Self::SquareTorus => "square_torus",
            Self::TrigonalTorus => "trigonal_torus",
        })
    }
}

/// Open chains use `dims.0` sites (the second axis must be 1). Tori place
/// site `(x, y)` at index `y * dims.0 + x`; the trigonal torus adds the
/// `(1, 1)` diagonal of every plaquette.
pub fn build_lattice(kind: LatticeKind, dims: (usize, usize)) -> Result<SpinSystem> {
    let (lx, ly) = dims;
    if lx == 0 || ly == 0 {
        return Err(Error::InvalidSystem("lattice dimensions must be positive".into()));
    }
    match kind {
        LatticeKind::Chain => {
            if ly != 1 {
                return Err(Error::InvalidSystem("a chain has a single axis".into()));
            }
            let mut sys = SpinSystem::new(lx, (1..lx).map(|i| (i - 1, i)))?;
            sys.coords = Some((0..lx).map(|x| (x, 0)).collect());
            Ok(sys)
        }
        LatticeKind::SquareTorus | LatticeKind::TrigonalTorus => {
            for l in [lx, ly] {
                if l < 3 {
                    return Err(Error::DegenerateLattice(l));
                }
            }
            let mut offsets = vec![(1, 0), (0, 1)];
            if kind == LatticeKind::TrigonalTorus {
                offsets.push((1, 1));
            }
            let index = |x: usize, y: usize| (y % ly) * lx + (x % lx);
            let mut edges = BTreeSet::new();
            for y in 0..ly {
                for x in 0..lx {
                    for &(dx, dy) in &offsets {
                        let (a, b) = (index(x, y), index(x + dx, y + dy));
                        edges.insert((a.min(b), a.max(b)));
                    }
                }
            }
            let mut sys = SpinSystem::new(lx * ly, edges)?;
            sys.coords = Some((0..lx * ly).map(|i| (i % lx, i / lx)).collect());
            Ok(sys)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Pauli {
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn matrix(self) -> CMatrix {
        match self {
            Pauli::X => pauli_x(),
            Pauli::Y => pauli_y(),
            Pauli::Z => pauli_z(),
        }
    }
}

/// A matrix acting on an ascending list of sites.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalOperator {
    pub sites: Vec<usize>,
    pub matrix: CMatrix,
}

impl LocalOperator {
    /// Reorders the tensor factors so that `sites` ends up ascending.
    pub fn new(sites: Vec<usize>, matrix: CMatrix) -> Self {
        let k = sites.len();
        assert_eq!(matrix.rows(), 1 << k, "matrix does not match support");
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by_key(|&i| sites[i]);
        if order.iter().enumerate().all(|(i, &o)| i == o) {
            return Self { sites, matrix };
        }
        let sorted: Vec<usize> = order.iter().map(|&i| sites[i]).collect();
        // new position p holds old factor order[p]
        let remap = |x: usize| -> usize {
            let mut old = 0;
            for (p, &o) in order.iter().enumerate() {
                let bit = (x >> (k - 1 - p)) & 1;
                old |= bit << (k - 1 - o);
            }
            old
        };
        let dim = 1 << k;
        let m = CMatrix::from_fn(dim, dim, |i, j| matrix[(remap(i), remap(j))]);
        Self { sites: sorted, matrix: m }
    }

    pub fn locality(&self) -> usize {
        self.sites.len()
    }
}

/// A sum of local operators plus a scalar.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LocalSum {
    pub terms: Vec<LocalOperator>,
    pub constant: f64,
}

impl LocalSum {
    pub fn identity() -> Self {
        Self { terms: vec![], constant: 1.0 }
    }

    pub fn support(&self) -> BTreeSet<usize> {
        self.terms.iter().flat_map(|t| t.sites.iter().copied()).collect()
    }

    pub fn locality(&self) -> usize {
        self.terms.iter().map(|t| t.locality()).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PauliTerm {
    pub coeff: C64,
    /// Ascending, distinct sites.
    pub ops: Vec<(usize, Pauli)>,
}

/// A linear combination of Pauli strings.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Observable {
    pub terms: Vec<PauliTerm>,
}

impl Observable {
    pub fn identity() -> Self {
        Self { terms: vec![PauliTerm { coeff: ONE, ops: vec![] }] }
    }

    pub fn single(coeff: f64, ops: &[(usize, Pauli)]) -> Self {
        let mut ops = ops.to_vec();
        ops.sort();
        Self { terms: vec![PauliTerm { coeff: C64::new(coeff, 0.0), ops }] }
    }

    /// `M_z = Σ_v Z_v`
    pub fn magnetization_z(n_sites: usize) -> Self {
        Self {
            terms: (0..n_sites).map(|v| PauliTerm { coeff: ONE, ops: vec![(v, Pauli::Z)] }).collect(),
        }
    }

    /// Parses strings like `"Z0 Z1"` or `"X3"`; the empty string is the identity.
    pub fn parse_string(coeff: C64, s: &str) -> Result<Self> {
        let mut ops = Vec::new();
        for tok in s.split_whitespace() {
            let (p, idx) = tok.split_at(1);
            let p = match p {
                "X" | "x" => Pauli::X,
                "Y" | "y" => Pauli::Y,
                "Z" | "z" => Pauli::Z,
                _ => return Err(Error::Parse(format!("bad Pauli factor `{tok}`"))),
            };
            let site: usize = idx.parse().map_err(|_| Error::Parse(format!("bad site in `{tok}`")))?;
            if ops.iter().any(|&(s, _)| s == site) {
                return Err(Error::Parse(format!("site {site} repeated in `{s}`")));
            }
            ops.push((site, p));
        }
        ops.sort();
        Ok(Self { terms: vec![PauliTerm { coeff, ops }] })
    }

    pub fn locality(&self) -> usize {
        self.terms.iter().map(|t| t.ops.len()).max().unwrap_or(0)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(mut self, other: Observable) -> Self {
        self.terms.extend(other.terms);
        self
    }

    pub fn to_local_sum(&self) -> LocalSum {
        let mut sum = LocalSum::default();
        for t in &self.terms {
            if t.ops.is_empty() {
                sum.constant += t.coeff.re;
                continue;
            }
            let mut m = CMatrix::identity(1);
            for &(_, p) in &t.ops {
                m = m.kron(&p.matrix());
            }
            sum.terms.push(LocalOperator::new(t.ops.iter().map(|&(s, _)| s).collect(), m.scale(t.coeff)));
        }
        sum
    }

    pub fn max_site(&self) -> Option<usize> {
        self.terms.iter().flat_map(|t| t.ops.iter().map(|&(s, _)| s)).max()
    }
}

/// Swaps the two tensor factors of a 4x4 matrix.
pub fn swap_factors(h: &CMatrix) -> CMatrix {
    let sw = |i: usize| ((i & 1) << 1) | (i >> 1);
    CMatrix::from_fn(4, 4, |i, j| h[(sw(i), sw(j))])
}

#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianSpec {
    pub system: SpinSystem,
    /// Keyed by `(a, b)` with `a < b`.
    pub two_spin: BTreeMap<(usize, usize), CMatrix>,
    pub single_spin: BTreeMap<usize, CMatrix>,
    pub ground_shift: f64,
}

impl HamiltonianSpec {
    pub fn new(system: SpinSystem) -> Self {
        Self { system, two_spin: BTreeMap::new(), single_spin: BTreeMap::new(), ground_shift: 0.0 }
    }

    pub fn n_sites(&self) -> usize {
        self.system.n_sites()
    }

    /// Adds `h` acting on `(a, b)` in that factor order; accumulates onto an
    /// existing term.
    pub fn add_two_spin(&mut self, a: usize, b: usize, h: CMatrix) -> Result<()> {
        if !self.system.has_edge(a, b) {
            return Err(Error::InvalidSystem(format!("({a}, {b}) is not an edge")));
        }
        if h.rows() != 4 || h.cols() != 4 {
            return Err(Error::NotSquare { rows: h.rows(), cols: h.cols() });
        }
        let h = if a < b { h } else { swap_factors(&h) };
        let key = (a.min(b), a.max(b));
        match self.two_spin.get_mut(&key) {
            Some(m) => *m += &h,
            None => {
                self.two_spin.insert(key, h);
            }
        }
        Ok(())
    }

    pub fn add_single_spin(&mut self, v: usize, h: CMatrix) -> Result<()> {
        if v >= self.n_sites() {
            return Err(Error::SiteOutOfRange { site: v, n: self.n_sites() });
        }
        if h.rows() != 2 || h.cols() != 2 {
            return Err(Error::NotSquare { rows: h.rows(), cols: h.cols() });
        }
        match self.single_spin.get_mut(&v) {
            Some(m) => *m += &h,
            None => {
                self.single_spin.insert(v, h);
            }
        }
        Ok(())
    }

    /// Checks the structural invariants: edge keys exist and every term is
    /// Hermitian to `tol` relative.
    pub fn validate(&self, tol: f64) -> Result<()> {
        for (&(a, b), h) in &self.two_spin {
            if a >= b || !self.system.has_edge(a, b) {
                return Err(Error::Validation {
                    location: format!("edge ({a}, {b})"),
                    message: "term key is not an edge of the system".into(),
                });
            }
            if !h.is_hermitian(tol) {
                return Err(Error::Validation {
                    location: format!("edge ({a}, {b})"),
                    message: format!("matrix is not Hermitian (defect {:.3e})", h.hermitian_defect()),
                });
            }
        }
        for (&v, h) in &self.single_spin {
            if v >= self.n_sites() {
                return Err(Error::SiteOutOfRange { site: v, n: self.n_sites() });
            }
            if !h.is_hermitian(tol) {
                return Err(Error::Validation {
                    location: format!("site {v}"),
                    message: format!("matrix is not Hermitian (defect {:.3e})", h.hermitian_defect()),
                });
            }
        }
        Ok(())
    }

    pub fn has_single_spin_terms(&self) -> bool {
        !self.single_spin.is_empty()
    }

    /// The Hamiltonian as a sum of local operators, `ground_shift` included.
    pub fn to_local_sum(&self) -> LocalSum {
        let mut terms: Vec<LocalOperator> = self
            .two_spin
            .iter()
            .map(|(&(a, b), h)| LocalOperator { sites: vec![a, b], matrix: h.clone() })
            .collect();
        terms.extend(self.single_spin.iter().map(|(&v, h)| LocalOperator { sites: vec![v], matrix: h.clone() }));
        LocalSum { terms, constant: self.ground_shift }
    }

    /// Largest absolute entry over all terms.
    pub fn scale(&self) -> f64 {
        self.two_spin.values().chain(self.single_spin.values()).map(|h| h.max_abs()).fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Xxz,
    Tfi,
    HeisenbergFerro,
    SingletSum,
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xxz" => Ok(Self::Xxz),
            "tfi" => Ok(Self::Tfi),
            "heisenberg_ferro" => Ok(Self::HeisenbergFerro),
            "singlet_sum" => Ok(Self::SingletSum),
            other => Err(Error::UnknownModel(other.to_string())),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Xxz => "xxz",
            Self::Tfi => "tfi",
            Self::HeisenbergFerro => "heisenberg_ferro",
            Self::SingletSum => "singlet_sum",
        })
    }
}

pub fn singlet_vector() -> Vec<C64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    vec![ZERO, C64::new(s, 0.0), C64::new(-s, 0.0), ZERO]
}

/// `-XX - YY - (1 - λ) ZZ`
pub fn xxz_term(lambda: f64) -> CMatrix {
    let xx = pauli_x().kron(&pauli_x());
    let yy = pauli_y().kron(&pauli_y());
    let zz = pauli_z().kron(&pauli_z());
    &(&xx + &yy).scale_real(-1.0) - &zz.scale_real(1.0 - lambda)
}

/// Builds one of the named models on `system`. No normalization is applied.
pub fn named_model(kind: ModelKind, system: SpinSystem, lambda: f64) -> HamiltonianSpec {
    let edge_term = match kind {
        ModelKind::Xxz => xxz_term(lambda),
        ModelKind::Tfi => pauli_z().kron(&pauli_z()).scale_real(-1.0),
        ModelKind::HeisenbergFerro => xxz_term(0.0),
        ModelKind::SingletSum => CMatrix::projector(&singlet_vector()),
    };
    let mut spec = HamiltonianSpec::new(system);
    for &(a, b) in spec.system.edges().to_vec().iter() {
        spec.two_spin.insert((a, b), edge_term.clone());
    }
    if kind == ModelKind::Tfi {
        for v in 0..spec.n_sites() {
            spec.single_spin.insert(v, pauli_x().scale_real(-lambda));
        }
    }
    spec
}

/// Shifts every term so its smallest eigenvalue is zero and records the
/// total shift. Terms that vanish after the shift are dropped.
pub fn normalize_terms(spec: &HamiltonianSpec) -> Result<HamiltonianSpec> {
    let mut out = HamiltonianSpec::new(spec.system.clone());
    out.ground_shift = spec.ground_shift;
    for (&key, h) in &spec.two_spin {
        let (shifted, lmin) = shift_to_zero(h)?;
        out.ground_shift += lmin;
        if shifted.max_abs() > 1e-13 * h.max_abs().max(1.0) {
            out.two_spin.insert(key, shifted);
        }
    }
    for (&v, h) in &spec.single_spin {
        let (shifted, lmin) = shift_to_zero(h)?;
        out.ground_shift += lmin;
        if shifted.max_abs() > 1e-13 * h.max_abs().max(1.0) {
            out.single_spin.insert(v, shifted);
        }
    }
    Ok(out)
}

fn shift_to_zero(h: &CMatrix) -> Result<(CMatrix, f64)> {
    let lmin = hermitian_eig(h)?.values[0];
    let sym = (h + &h.adjoint()).scale_real(0.5);
    let shifted = &sym - &CMatrix::identity(h.rows()).scale_real(lmin);
    Ok((shifted, lmin))
}

#[derive(Clone, Debug, PartialEq)]
pub enum ViolationReason {
    IsolatedSubsystem,
    ProductExcitedSpace,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Naturalness {
    Natural,
    Violation {
        reason: ViolationReason,
        /// Offending edge, or the sites of a component cut off from site 0.
        location: Vec<usize>,
    },
}

impl Naturalness {
    pub fn is_natural(&self) -> bool {
        matches!(self, Naturalness::Natural)
    }
}

/// `det` of a two-qubit vector reshaped to 2x2.
pub fn reshaped_det(v: &[C64]) -> C64 {
    v[0] * v[3] - v[1] * v[2]
}

/// Whether a subspace of C^2 ⊗ C^2 (orthonormal columns) contains an
/// entangled vector.
pub fn span_has_entangled(basis: &[Vec<C64>]) -> bool {
    match basis.len() {
        0 => false,
        1 => reshaped_det(&basis[0]).norm() > ENTANGLEMENT_TOL,
        2 => {
            let (a, b) = (&basis[0], &basis[1]);
            // det(x a + y b) = x² det a + x y (a0 b3 + a3 b0 - a1 b2 - a2 b1) + y² det b
            let cross = a[0] * b[3] + a[3] * b[0] - a[1] * b[2] - a[2] * b[1];
            [reshaped_det(a), cross, reshaped_det(b)].iter().any(|c| c.norm() > ENTANGLEMENT_TOL)
        }
        // Product vectors form a quadric; no 3-dimensional subspace lies in it.
        _ => true,
    }
}

/// Eigenvectors of `h` whose eigenvalues exceed `tol · λ_max`.
pub fn support_basis(h: &CMatrix, tol: f64) -> Result<Vec<Vec<C64>>> {
    let eig = hermitian_eig(h)?;
    let lmax = eig.max_value();
    if lmax <= 0.0 {
        return Ok(vec![]);
    }
    Ok((0..eig.values.len()).filter(|&i| eig.values[i] > tol * lmax).map(|i| eig.vector(i)).collect())
}

/// Connected components of the graph formed by the given edges over `n` sites.
pub fn components(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for (a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let mut comp = vec![];
        let mut queue = VecDeque::from([s]);
        seen[s] = true;
        while let Some(v) = queue.pop_front() {
            comp.push(v);
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Naturalness of a normalized Hamiltonian: connected interaction graph and
/// an entangled vector in every term's excited space.
pub fn check_natural(spec: &HamiltonianSpec) -> Result<Naturalness> {
    let comps = components(spec.n_sites(), spec.two_spin.keys().copied());
    if comps.len() > 1 {
        return Ok(Naturalness::Violation { reason: ViolationReason::IsolatedSubsystem, location: comps[1].clone() });
    }
    for (&(a, b), h) in &spec.two_spin {
        let support = support_basis(h, numerics::DEFAULT_TOL)?;
        if !support.is_empty() && !span_has_entangled(&support) {
            return Ok(Naturalness::Violation { reason: ViolationReason::ProductExcitedSpace, location: vec![a, b] });
        }
    }
    Ok(Naturalness::Natural)
}
