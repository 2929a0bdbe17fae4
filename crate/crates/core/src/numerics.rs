//! Small dense complex linear algebra.
//!
//! Matrices here are at most a few thousand rows; everything is stored
//! row-major in a flat `Vec`. Eigen- and singular-value decompositions are
//! delegated to `faer`, with a real-arithmetic fast path when the input has
//! no imaginary part.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Default relative rank / kernel tolerance.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Relative asymmetry allowed before a matrix is rejected as non-Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Eigenvalues at or below this are treated as exact zeros by [`pinv_sqrt`].
pub const ABSOLUTE_FLOOR: f64 = 1e-300;

#[derive(Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row-major data. Panics on a length mismatch.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match shape");
        Self { rows, cols, data }
    }

    pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> Self {
        Self::from_vec(rows, cols, data.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = C64::new(v, 0.0);
        }
        m
    }

    pub fn from_columns(rows: usize, columns: &[Vec<C64>]) -> Self {
        let mut m = Self::zeros(rows, columns.len());
        for (j, col) in columns.iter().enumerate() {
            assert_eq!(col.len(), rows);
            for i in 0..rows {
                m[(i, j)] = col[i];
            }
        }
        m
    }

    /// `|v><w|`
    pub fn outer(v: &[C64], w: &[C64]) -> Self {
        Self::from_fn(v.len(), w.len(), |i, j| v[i] * w[j].conj())
    }

    pub fn projector(v: &[C64]) -> Self {
        Self::outer(v, v)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| x * s).collect() }
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|x| x.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest entry of `|M - M^dagger|`.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.rows {
            for j in i..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, rel_tol: f64) -> bool {
        self.is_square() && self.hermitian_defect() <= rel_tol * self.max_abs().max(f64::MIN_POSITIVE)
    }

    /// `self ⊗ other`, with `self` on the more significant index.
    pub fn kron(&self, other: &Self) -> Self {
        let rows = self.rows * other.rows;
        let cols = self.cols * other.cols;
        Self::from_fn(rows, cols, |i, j| {
            self[(i / other.rows, j / other.cols)] * other[(i % other.rows, j % other.cols)]
        })
    }

    pub fn matvec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `v^dagger M w`
    pub fn sandwich(&self, v: &[C64], w: &[C64]) -> C64 {
        inner(v, &self.matvec(w))
    }

    /// `self^dagger * m * self`
    pub fn conjugate(&self, m: &Self) -> Self {
        &(&self.adjoint() * m) * self
    }

    fn is_real(&self) -> bool {
        let scale = self.max_abs();
        self.data.iter().all(|x| x.im.abs() <= 1e-15 * scale)
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, rhs.rows, "shape mismatch in matrix product");
        if self.rows * self.cols * rhs.cols > 1 << 18 {
            let a = faer::Mat::<C64>::from_fn(self.rows, self.cols, |i, j| self[(i, j)]);
            let b = faer::Mat::<C64>::from_fn(rhs.rows, rhs.cols, |i, j| rhs[(i, j)]);
            let c = &a * &b;
            return CMatrix::from_fn(self.rows, rhs.cols, |i, j| c[(i, j)]);
        }
        let mut out = CMatrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == ZERO {
                    continue;
                }
                let row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, b) in out_row.iter_mut().zip(row) {
                    *o += a * b;
                }
            }
        }
        out
    }
}

impl Add for &CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl AddAssign<&CMatrix> for CMatrix {
    fn add_assign(&mut self, rhs: &CMatrix) {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl Sub for &CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self[(i, j)];
                write!(f, "{:+.6}{:+.6}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

pub fn pauli_x() -> CMatrix {
    CMatrix::from_real(2, 2, &[0.0, 1.0, 1.0, 0.0])
}

pub fn pauli_y() -> CMatrix {
    CMatrix::from_vec(2, 2, vec![ZERO, -I, I, ZERO])
}

pub fn pauli_z() -> CMatrix {
    CMatrix::from_real(2, 2, &[1.0, 0.0, 0.0, -1.0])
}

/// `<a|b>`
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Returns `v / |v|`, or `None` for a zero vector.
pub fn normalized(v: &[C64]) -> Option<Vec<C64>> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    Some(v.iter().map(|x| x / n).collect())
}

pub fn kron_vec(a: &[C64], b: &[C64]) -> Vec<C64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            out.push(x * y);
        }
    }
    out
}

/// Eigen-decomposition of a Hermitian matrix.
#[derive(Clone, Debug)]
pub struct Eigh {
    /// Ascending.
    pub values: Vec<f64>,
    /// Column `i` is the eigenvector of `values[i]`.
    pub vectors: CMatrix,
}

impl Eigh {
    pub fn vector(&self, i: usize) -> Vec<C64> {
        self.vectors.column(i)
    }

    pub fn max_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }
}

/// Hermitian eigendecomposition with ascending eigenvalues.
///
/// Each eigenvector is rephased so that its largest-magnitude component
/// (lowest index among near-ties) is real and positive.
pub fn hermitian_eig(m: &CMatrix) -> Result<Eigh> {
    if !m.is_square() {
        return Err(Error::NotSquare { rows: m.rows, cols: m.cols });
    }
    let n = m.rows;
    if n == 0 {
        return Ok(Eigh { values: vec![], vectors: CMatrix::zeros(0, 0) });
    }
    let defect = m.hermitian_defect();
    if defect > HERMITIAN_TOL * m.max_abs().max(f64::MIN_POSITIVE) {
        return Err(Error::NonHermitianInput { asymmetry: defect });
    }

    let (values, mut vectors) = if m.is_real() {
        let a = faer::Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (m[(i, j)].re + m[(j, i)].re));
        let evd = a
            .self_adjoint_eigen(faer::Side::Lower)
            .map_err(|_| Error::NonHermitianInput { asymmetry: defect })?;
        let values: Vec<f64> = (0..n).map(|i| evd.S()[i]).collect();
        let u = evd.U();
        (values, CMatrix::from_fn(n, n, |i, j| C64::new(u[(i, j)], 0.0)))
    } else {
        let a = faer::Mat::<C64>::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)].conj()));
        let evd = a
            .self_adjoint_eigen(faer::Side::Lower)
            .map_err(|_| Error::NonHermitianInput { asymmetry: defect })?;
        let values: Vec<f64> = (0..n).map(|i| evd.S()[i].re).collect();
        let u = evd.U();
        (values, CMatrix::from_fn(n, n, |i, j| u[(i, j)]))
    };

    for j in 0..n {
        let mags: Vec<f64> = (0..n).map(|i| vectors[(i, j)].norm()).collect();
        let max = mags.iter().copied().fold(0.0, f64::max);
        let pivot = mags.iter().position(|&x| x >= max * (1.0 - 1e-10)).unwrap_or(0);
        let p = vectors[(pivot, j)];
        if p.norm() > 0.0 {
            let phase = p.conj() / p.norm();
            for i in 0..n {
                vectors[(i, j)] *= phase;
            }
        }
    }
    Ok(Eigh { values, vectors })
}

/// Orthonormal basis (as columns) of the numerical kernel of a PSD matrix.
///
/// Eigenvalues below `tol * λ_max` count as zero; a matrix with no positive
/// eigenvalue has the whole space as kernel.
pub fn kernel_basis(m: &CMatrix, tol: f64) -> Result<CMatrix> {
    let eig = hermitian_eig(m)?;
    let n = m.rows();
    let lmax = eig.max_value();
    if lmax <= 0.0 || m.max_abs() == 0.0 {
        return Ok(CMatrix::identity(n));
    }
    let cols: Vec<Vec<C64>> = eig
        .values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v < tol * lmax)
        .map(|(i, _)| eig.vector(i))
        .collect();
    Ok(CMatrix::from_columns(n, &cols))
}

/// Number of eigenvalues above `tol * λ_max`.
pub fn numerical_rank(m: &CMatrix, tol: f64) -> Result<usize> {
    let eig = hermitian_eig(m)?;
    let lmax = eig.max_value();
    if lmax <= 0.0 {
        return Ok(0);
    }
    Ok(eig.values.iter().filter(|&&v| v >= tol * lmax).count())
}

/// Spectral orthonormalizer of a PSD Gram matrix `B = U Δ U†`, keeping
/// eigenvalues at or above `cutoff · λ_max`.
#[derive(Clone, Debug)]
pub struct Orthonormalizer {
    /// `Δ_r^{-1/2} U_r†`, shape `r × d`.
    pub transform: CMatrix,
    /// Retained eigenvalues of `B`, ascending.
    pub retained: Vec<f64>,
    /// Retained eigenvectors of `B` as columns, shape `d × r`.
    pub basis: CMatrix,
}

impl Orthonormalizer {
    pub fn new(b: &CMatrix, cutoff: f64) -> Result<Self> {
        let eig = hermitian_eig(b)?;
        let lmax = eig.max_value();
        if lmax <= ABSOLUTE_FLOOR {
            return Err(Error::ZeroMatrix);
        }
        let keep: Vec<usize> = (0..eig.values.len()).filter(|&i| eig.values[i] >= cutoff * lmax).collect();
        let d = b.rows();
        let cols: Vec<Vec<C64>> = keep.iter().map(|&i| eig.vector(i)).collect();
        let basis = CMatrix::from_columns(d, &cols);
        let retained: Vec<f64> = keep.iter().map(|&i| eig.values[i]).collect();
        let transform = CMatrix::from_fn(keep.len(), d, |r, c| basis[(c, r)].conj() / retained[r].sqrt());
        Ok(Self { transform, retained, basis })
    }

    pub fn rank(&self) -> usize {
        self.retained.len()
    }

    /// `T W T†` for an operator given in the original (skew) basis.
    pub fn apply(&self, w: &CMatrix) -> CMatrix {
        &(&self.transform * w) * &self.transform.adjoint()
    }
}

/// `U Δ_r^{-1/2} U†` and the retained rank, where `Δ_r` drops eigenvalues
/// below `cutoff · λ_max`.
pub fn pinv_sqrt(b: &CMatrix, cutoff: f64) -> Result<(CMatrix, usize)> {
    let o = Orthonormalizer::new(b, cutoff)?;
    let full = &o.basis * &o.transform;
    Ok((full, o.rank()))
}

/// Singular values in non-increasing order.
pub fn singular_values(m: &CMatrix) -> Vec<f64> {
    if m.rows() == 0 || m.cols() == 0 {
        return vec![];
    }
    let a = faer::Mat::<C64>::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)]);
    a.singular_values().expect("svd failed to converge")
}

/// A complex number in log-polar form; exact zero is a separate flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogComplex {
    pub zero: bool,
    pub log_magnitude: f64,
    /// Radians in (-π, π].
    pub phase: f64,
}

pub fn wrap_phase(p: f64) -> f64 {
    let mut x = p % (2.0 * PI);
    if x <= -PI {
        x += 2.0 * PI;
    } else if x > PI {
        x -= 2.0 * PI;
    }
    x
}

impl LogComplex {
    pub const ZERO: Self = Self { zero: true, log_magnitude: 0.0, phase: 0.0 };
    pub const ONE: Self = Self { zero: false, log_magnitude: 0.0, phase: 0.0 };

    pub fn from_complex(z: C64) -> Self {
        if z == ZERO {
            return Self::ZERO;
        }
        Self { zero: false, log_magnitude: z.norm().ln(), phase: wrap_phase(z.arg()) }
    }

    pub fn to_complex(self) -> C64 {
        if self.zero {
            return ZERO;
        }
        C64::from_polar(self.log_magnitude.exp(), self.phase)
    }

    pub fn powi(self, n: u64) -> Self {
        if n == 0 {
            return Self::ONE;
        }
        if self.zero {
            return Self::ZERO;
        }
        Self {
            zero: false,
            log_magnitude: self.log_magnitude * n as f64,
            phase: wrap_phase(self.phase * n as f64),
        }
    }
}

impl Mul for LogComplex {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        if self.zero || rhs.zero {
            return Self::ZERO;
        }
        Self {
            zero: false,
            log_magnitude: self.log_magnitude + rhs.log_magnitude,
            phase: wrap_phase(self.phase + rhs.phase),
        }
    }
}

/// Product of complex factors accumulated in log form.
pub fn stable_product<I: IntoIterator<Item = C64>>(factors: I) -> LogComplex {
    let mut zero = false;
    let mut log_magnitude = 0.0;
    let mut phase = 0.0;
    for z in factors {
        if z == ZERO {
            zero = true;
            continue;
        }
        log_magnitude += z.norm().ln();
        phase = wrap_phase(phase + z.arg());
    }
    if zero {
        return LogComplex::ZERO;
    }
    LogComplex { zero: false, log_magnitude, phase }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_hermitian(n: usize, rng: &mut impl Rng) -> CMatrix {
        let mut m = CMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(rng.random_range(-1.0..1.0), 0.0);
            for j in 0..i {
                let z = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                m[(i, j)] = z;
                m[(j, i)] = z.conj();
            }
        }
        m
    }

    fn singlet() -> Vec<C64> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        vec![ZERO, C64::new(s, 0.0), C64::new(-s, 0.0), ZERO]
    }

    #[test]
    fn pauli_z_spectrum() {
        let e = hermitian_eig(&pauli_z()).unwrap();
        assert_eq!(e.values, vec![-1.0, 1.0]);
    }

    #[test]
    fn singlet_projector_spectrum() {
        let p = CMatrix::projector(&singlet());
        let e = hermitian_eig(&p).unwrap();
        let expect = [0.0, 0.0, 0.0, 1.0];
        for (a, b) in e.values.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn rejects_non_hermitian() {
        let m = CMatrix::from_real(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(hermitian_eig(&m), Err(Error::NonHermitianInput { .. })));
    }

    #[test]
    fn eigenvectors_have_positive_pivot() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_hermitian(6, &mut rng);
        let e = hermitian_eig(&m).unwrap();
        for j in 0..6 {
            let v = e.vector(j);
            let max = v.iter().map(|x| x.norm()).fold(0.0, f64::max);
            let p = v.iter().find(|x| x.norm() >= max * (1.0 - 1e-10)).unwrap();
            assert!(p.im.abs() < 1e-14 && p.re > 0.0);
        }
    }

    #[test]
    fn reconstruction_random_8() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_hermitian(8, &mut rng);
        let e = hermitian_eig(&m).unwrap();
        let lam = CMatrix::diag(&e.values);
        let rec = &(&e.vectors * &lam) * &e.vectors.adjoint();
        assert!((&rec - &m).max_abs() < 1e-10 * m.max_abs());
        let gram = &e.vectors.adjoint() * &e.vectors;
        assert!((&gram - &CMatrix::identity(8)).max_abs() < 1e-12);
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn kernel_of_singlet_projector_is_triplet() {
        let p = CMatrix::projector(&singlet());
        let k = kernel_basis(&p, 1e-9).unwrap();
        assert_eq!(k.cols(), 3);
        for j in 0..3 {
            assert!(inner(&singlet(), &k.column(j)).norm() < 1e-12);
        }
    }

    #[test]
    fn kernel_of_zero_is_everything() {
        let k = kernel_basis(&CMatrix::zeros(4, 4), 1e-9).unwrap();
        assert_eq!(k.cols(), 4);
    }

    #[test]
    fn kernel_of_shifted_ising() {
        let zz = pauli_z().kron(&pauli_z());
        let h = &CMatrix::identity(4) - &zz;
        let k = kernel_basis(&h, 1e-9).unwrap();
        assert_eq!(k.cols(), 2);
        // span{|00>, |11>}: no weight on |01>, |10>
        for j in 0..2 {
            assert!(k[(1, j)].norm() < 1e-12 && k[(2, j)].norm() < 1e-12);
        }
    }

    #[test]
    fn pinv_sqrt_identity() {
        let (r, rank) = pinv_sqrt(&CMatrix::identity(5), 1e-6).unwrap();
        assert_eq!(rank, 5);
        assert!((&r - &CMatrix::identity(5)).max_abs() < 1e-14);
    }

    #[test]
    fn pinv_sqrt_diag() {
        let (r, rank) = pinv_sqrt(&CMatrix::diag(&[4.0, 1.0, 0.0]), 1e-6).unwrap();
        assert_eq!(rank, 2);
        assert!((&r - &CMatrix::diag(&[0.5, 1.0, 0.0])).max_abs() < 1e-14);
    }

    #[test]
    fn pinv_sqrt_zero_matrix() {
        assert_eq!(pinv_sqrt(&CMatrix::zeros(3, 3), 1e-6).unwrap_err(), Error::ZeroMatrix);
    }

    #[test]
    fn pinv_sqrt_product_state_gram() {
        // Four Bloch-circle product states on three spins.
        let states: Vec<Vec<C64>> = (0..4)
            .map(|j| {
                let t = j as f64 * PI / 4.0;
                let a = vec![C64::new(t.cos(), 0.0), C64::new(t.sin(), 0.0)];
                kron_vec(&kron_vec(&a, &a), &a)
            })
            .collect();
        let b = CMatrix::from_fn(4, 4, |i, j| inner(&states[i], &states[j]));
        let (r, rank) = pinv_sqrt(&b, 1e-12).unwrap();
        assert_eq!(rank, 4);
        let rbr = &(&r * &b) * &r;
        assert!((&rbr - &CMatrix::identity(4)).max_abs() < 1e-9);
    }

    #[test]
    fn stable_product_examples() {
        let p = stable_product([C64::new(2.0, 0.0), C64::new(3.0, 0.0), C64::new(0.5, 0.0)]);
        assert!((p.log_magnitude - 3f64.ln()).abs() < 1e-15);
        assert!(p.phase.abs() < 1e-15 && !p.zero);

        let p = stable_product(std::iter::repeat_n(C64::new(0.9, 0.0), 1000));
        assert!((p.log_magnitude - 1000.0 * 0.9f64.ln()).abs() < 1e-10);

        let p = stable_product([I, I]);
        assert!(p.log_magnitude.abs() < 1e-15);
        assert!((p.phase - PI).abs() < 1e-12);

        assert!(stable_product([ONE, ZERO, C64::new(5.0, 1.0)]).zero);
    }

    #[test]
    fn wrap_phase_range() {
        assert!((wrap_phase(-PI) - PI).abs() < 1e-15);
        assert!((wrap_phase(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_phase(0.5) - 0.5).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn reconstruction_up_to_64(n in 1usize..=64, seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = random_hermitian(n, &mut rng);
                let e = hermitian_eig(&m).unwrap();
                let rec = &(&e.vectors * &CMatrix::diag(&e.values)) * &e.vectors.adjoint();
                prop_assert!((&rec - &m).max_abs() < 1e-10 * m.max_abs().max(1.0));
            }

            #[test]
            fn kernel_plus_rank_is_dimension(n in 1usize..=12, r in 0usize..=12, seed in any::<u64>()) {
                let r = r.min(n);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut m = CMatrix::zeros(n, n);
                for _ in 0..r {
                    let v: Vec<C64> = (0..n).map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
                    m += &CMatrix::projector(&v);
                }
                let k = kernel_basis(&m, 1e-9).unwrap();
                let rank = numerical_rank(&m, 1e-9).unwrap();
                prop_assert_eq!(k.cols() + rank, n);
            }

            #[test]
            fn stable_product_matches_naive(factors in prop::collection::vec((0.1f64..3.0, -3.0f64..3.0), 0..40)) {
                let zs: Vec<C64> = factors.iter().map(|&(r, t)| C64::from_polar(r, t)).collect();
                let naive: C64 = zs.iter().product();
                let p = stable_product(zs.iter().copied()).to_complex();
                prop_assert!((p - naive).norm() <= 1e-12 * naive.norm().max(1e-300));
            }
        }
    }
}
