//! Dense complex matrices and the handful of kernels the rest of the crate
//! needs: LU factorization (determinant, solve, inverse), adjugate,
//! Hermitian eigenvalues and operator norms.
//!
//! Storage is row-major. All matrices in this crate are small (the pencil
//! size `m`) or moderately sized (`N` up to a couple of thousand), so
//! everything is plain dense code with no external BLAS.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Maximum implicit QL sweeps spent on a single eigenvalue.
pub const QL_MAX_SWEEPS: usize = 64;

/// Absolute Hermiticity residual accepted by [`HermitianMatrix::new`],
/// scaled by `max(1, max |entry|)`.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Condition number above which [`adjugate`] switches from `det(M) M^{-1}`
/// to explicit cofactors.
const ADJUGATE_COND_LIMIT: f64 = 1e8;

#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = ONE;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting NaN and infinities.
    pub fn try_new(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {}x{} matrix",
                data.len(),
                rows,
                cols
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::DimensionMismatch("ragged rows".into()));
        }
        Self::try_new(r, c, rows.iter().flatten().copied().collect())
    }

    /// Real-valued rows; convenient for fixtures.
    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let rows: Vec<Vec<Complex64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| Complex64::new(x, 0.0)).collect())
            .collect();
        Self::from_rows(&rows)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_diagonal(diag: &[Complex64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let d: Vec<Complex64> = diag.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        Self::from_diagonal(&d)
    }

    /// The matrix unit `e_{pq}` of size `n`.
    pub fn unit(n: usize, p: usize, q: usize) -> Self {
        let mut m = Self::zeros(n, n);
        m[(p, q)] = ONE;
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn require_square(&self, what: &str) -> Result<usize> {
        if self.is_square() {
            Ok(self.rows)
        } else {
            Err(Error::DimensionMismatch(format!(
                "{what} needs a square matrix, got {}x{}",
                self.rows, self.cols
            )))
        }
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| z * c).collect(),
        }
    }

    pub fn scale_real(&self, c: f64) -> Self {
        self.scale(Complex64::new(c, 0.0))
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    /// Entrywise complex conjugate.
    pub fn conj(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| self[(i, j)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn diagonal(&self) -> Vec<Complex64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Induced 1-norm (max column sum).
    pub fn norm_1(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)].norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// `max |A_ij - conj(A_ji)|`.
    pub fn hermitian_residual(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows;
        let mut r = 0.0_f64;
        for i in 0..n {
            for j in i..n {
                r = r.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        r
    }

    /// `(A + A*) / 2`.
    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| {
            (self[(i, j)] + self[(j, i)].conj()) * 0.5
        })
    }

    /// `(A - A*) / 2i`.
    pub fn imaginary_part(&self) -> Self {
        let minus_half_i = Complex64::new(0.0, -0.5);
        Self::from_fn(self.rows, self.cols, |i, j| {
            (self[(i, j)] - self[(j, i)].conj()) * minus_half_i
        })
    }

    pub fn is_diagonal(&self) -> bool {
        self.data
            .iter()
            .enumerate()
            .all(|(k, z)| k / self.cols == k % self.cols || *z == ZERO)
    }

    /// Kronecker product `self ⊗ other`; entry `((p*n+i),(q*n+j)) = A_pq B_ij`.
    pub fn kron(&self, other: &Self) -> Self {
        let (r, c) = (self.rows * other.rows, self.cols * other.cols);
        let mut out = Self::zeros(r, c);
        for p in 0..self.rows {
            for q in 0..self.cols {
                let a = self[(p, q)];
                if a == ZERO {
                    continue;
                }
                for i in 0..other.rows {
                    let dst = (p * other.rows + i) * c + q * other.cols;
                    let src = &other.data[i * other.cols..(i + 1) * other.cols];
                    for (d, &s) in out.data[dst..dst + other.cols].iter_mut().zip(src) {
                        *d += a * s;
                    }
                }
            }
        }
        out
    }

    pub fn block(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Self {
        Self::from_fn(nr, nc, |i, j| self[(r0 + i, c0 + j)])
    }

    /// Adds `c * block` into the sub-matrix starting at `(r0, c0)`.
    pub fn add_block(&mut self, r0: usize, c0: usize, block: &Self, c: Complex64) {
        for i in 0..block.rows {
            for j in 0..block.cols {
                self[(r0 + i, c0 + j)] += c * block[(i, j)];
            }
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(
            self.cols, other.rows,
            "matmul: {}x{} times {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let (n, k, m) = (self.rows, self.cols, other.cols);
        // Diagonal factors are common (the spiked matrix A_N): O(n^2) path.
        if self.is_square() && self.is_diagonal() {
            return Self::from_fn(n, m, |i, j| self.data[i * k + i] * other[(i, j)]);
        }
        if other.is_square() && other.is_diagonal() {
            return Self::from_fn(n, m, |i, j| self[(i, j)] * other.data[j * m + j]);
        }
        let mut out = Self::zeros(n, m);
        for i in 0..n {
            let out_row = &mut out.data[i * m..(i + 1) * m];
            for l in 0..k {
                let a = self.data[i * k + l];
                if a == ZERO {
                    continue;
                }
                let b_row = &other.data[l * m..(l + 1) * m];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    fn zip_with(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Self {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "elementwise op on mismatched shapes"
        );
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Max-abs distance to `other`.
    pub fn distance(&self, other: &Self) -> f64 {
        (self - other).max_abs()
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.matmul(rhs)
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, " ")?;
            for j in 0..self.cols {
                let z = self[(i, j)];
                write!(f, " {:+.6}{:+.6}i", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

// JSON form: array of rows, each entry `[re, im]`.
impl Serialize for ComplexMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<[f64; 2]>> = (0..self.rows)
            .map(|i| self.row(i).iter().map(|z| [z.re, z.im]).collect())
            .collect();
        rows.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ComplexMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<[f64; 2]>> = Vec::deserialize(d)?;
        let rows: Vec<Vec<Complex64>> = rows
            .into_iter()
            .map(|r| r.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
            .collect();
        ComplexMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// A complex matrix known to satisfy `A = A*`.
///
/// The constructor checks the residual and then stores the exact Hermitian
/// part, so downstream code never sees round-off skew.
#[derive(Clone, PartialEq, Debug)]
pub struct HermitianMatrix(ComplexMatrix);

impl HermitianMatrix {
    pub fn new(m: ComplexMatrix) -> Result<Self> {
        m.require_square("HermitianMatrix")?;
        let res = m.hermitian_residual();
        if res > HERMITIAN_TOL * m.max_abs().max(1.0) {
            return Err(Error::NotHermitian(res));
        }
        Ok(Self(m.hermitian_part()))
    }

    /// Takes the Hermitian part without checking the residual.
    pub fn symmetrize(m: &ComplexMatrix) -> Result<Self> {
        m.require_square("HermitianMatrix")?;
        Ok(Self(m.hermitian_part()))
    }

    pub fn from_real_diagonal(d: &[f64]) -> Self {
        Self(ComplexMatrix::from_real_diagonal(d))
    }

    pub fn zeros(n: usize) -> Self {
        Self(ComplexMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Self(ComplexMatrix::identity(n))
    }

    pub fn dim(&self) -> usize {
        self.0.rows
    }

    pub fn as_matrix(&self) -> &ComplexMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.0
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        hermitian_eigenvalues(self)
    }
}

impl std::ops::Deref for HermitianMatrix {
    type Target = ComplexMatrix;
    fn deref(&self) -> &ComplexMatrix {
        &self.0
    }
}

impl Serialize for HermitianMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> Deserialize<'de> for HermitianMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = ComplexMatrix::deserialize(d)?;
        HermitianMatrix::new(m).map_err(serde::de::Error::custom)
    }
}

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Clone, Debug)]
pub struct Lu {
    n: usize,
    lu: Vec<Complex64>,
    perm: Vec<usize>,
    sign: f64,
    singular: bool,
    norm_1: f64,
}

impl Lu {
    pub fn factor(m: &ComplexMatrix) -> Result<Self> {
        let n = m.require_square("LU")?;
        let norm_1 = m.norm_1();
        let mut lu = m.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        let mut singular = false;
        for k in 0..n {
            let (piv, best) = (k..n)
                .map(|i| (i, lu[i * n + k].norm()))
                .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best == 0.0 {
                singular = true;
                continue;
            }
            if piv != k {
                for j in 0..n {
                    lu.swap(k * n + j, piv * n + j);
                }
                perm.swap(k, piv);
                sign = -sign;
            }
            let pivot = lu[k * n + k];
            for i in k + 1..n {
                let f = lu[i * n + k] / pivot;
                lu[i * n + k] = f;
                if f == ZERO {
                    continue;
                }
                let (top, bottom) = lu.split_at_mut(i * n);
                let row_k = &top[k * n + k + 1..k * n + n];
                for (dst, &src) in bottom[k + 1..n].iter_mut().zip(row_k) {
                    *dst -= f * src;
                }
            }
        }
        Ok(Self {
            n,
            lu,
            perm,
            sign,
            singular,
            norm_1,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn determinant(&self) -> Complex64 {
        if self.singular {
            return ZERO;
        }
        (0..self.n).map(|i| self.lu[i * self.n + i]).product::<Complex64>() * self.sign
    }

    fn check_invertible(&self) -> Result<()> {
        if self.singular {
            return Err(Error::Singular);
        }
        let n = self.n;
        let diag = (0..n).map(|i| self.lu[i * n + i].norm());
        let (lo, hi) = diag.fold((f64::INFINITY, 0.0_f64), |(lo, hi), x| (lo.min(x), hi.max(x)));
        if lo <= hi * f64::EPSILON * n as f64 {
            return Err(Error::Singular);
        }
        Ok(())
    }

    /// Solves `A x = b` in place for one right-hand side.
    fn solve_vec(&self, b: &mut [Complex64]) {
        let n = self.n;
        let mut x: Vec<Complex64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            let s: Complex64 = row.iter().zip(&x[..i]).map(|(&l, &xj)| l * xj).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n + i + 1..(i + 1) * n];
            let s: Complex64 = row.iter().zip(&x[i + 1..]).map(|(&u, &xj)| u * xj).sum();
            x[i] = (x[i] - s) / self.lu[i * n + i];
        }
        b.copy_from_slice(&x);
    }

    /// Solves `A^H x = b` in place.
    fn solve_adjoint_vec(&self, b: &mut [Complex64]) {
        let n = self.n;
        let mut y = b.to_vec();
        // U^H y = b
        for i in 0..n {
            let mut s = y[i];
            for j in 0..i {
                s -= self.lu[j * n + i].conj() * y[j];
            }
            y[i] = s / self.lu[i * n + i].conj();
        }
        // L^H w = y
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..n {
                s -= self.lu[j * n + i].conj() * y[j];
            }
            y[i] = s;
        }
        for (i, &p) in self.perm.iter().enumerate() {
            b[p] = y[i];
        }
    }

    pub fn solve(&self, b: &ComplexMatrix) -> Result<ComplexMatrix> {
        if b.rows != self.n {
            return Err(Error::DimensionMismatch(format!(
                "solve: system of size {} with rhs of {} rows",
                self.n, b.rows
            )));
        }
        self.check_invertible()?;
        let mut out = ComplexMatrix::zeros(b.rows, b.cols);
        let mut col = vec![ZERO; self.n];
        for j in 0..b.cols {
            for i in 0..self.n {
                col[i] = b[(i, j)];
            }
            self.solve_vec(&mut col);
            for i in 0..self.n {
                out[(i, j)] = col[i];
            }
        }
        Ok(out)
    }

    pub fn inverse(&self) -> Result<ComplexMatrix> {
        self.solve(&ComplexMatrix::identity(self.n))
    }

    /// Hager–Higham estimate of the 1-norm condition number.
    pub fn condition_estimate(&self) -> f64 {
        if self.check_invertible().is_err() {
            return f64::INFINITY;
        }
        let n = self.n;
        if n == 0 {
            return 1.0;
        }
        let mut x = vec![Complex64::new(1.0 / n as f64, 0.0); n];
        let mut est = 0.0;
        for _ in 0..5 {
            let mut y = x.clone();
            self.solve_vec(&mut y);
            let new_est: f64 = y.iter().map(|z| z.norm()).sum();
            let mut xi: Vec<Complex64> = y
                .iter()
                .map(|z| if z.norm() > 0.0 { z / z.norm() } else { ONE })
                .collect();
            self.solve_adjoint_vec(&mut xi);
            let (j, zmax) = xi
                .iter()
                .enumerate()
                .map(|(j, z)| (j, z.norm()))
                .fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a });
            let ztx: f64 = xi.iter().zip(&x).map(|(a, b)| (a.conj() * b).re).sum();
            if new_est <= est || zmax <= ztx {
                est = est.max(new_est);
                break;
            }
            est = new_est;
            x = vec![ZERO; n];
            x[j] = ONE;
        }
        est * self.norm_1
    }
}

pub fn determinant(m: &ComplexMatrix) -> Result<Complex64> {
    Ok(Lu::factor(m)?.determinant())
}

pub fn inverse(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    Lu::factor(m)?.inverse()
}

/// Result of [`solve`]: the solution plus a 1-norm condition estimate.
#[derive(Clone, Debug)]
pub struct Solution {
    pub x: ComplexMatrix,
    pub condition: f64,
}

pub fn solve(m: &ComplexMatrix, b: &ComplexMatrix) -> Result<Solution> {
    let lu = Lu::factor(m)?;
    let x = lu.solve(b)?;
    Ok(Solution {
        x,
        condition: lu.condition_estimate(),
    })
}

fn minor(m: &ComplexMatrix, row: usize, col: usize) -> ComplexMatrix {
    let n = m.rows;
    let mut data = Vec::with_capacity((n - 1) * (n - 1));
    for i in (0..n).filter(|&i| i != row) {
        for j in (0..n).filter(|&j| j != col) {
            data.push(m[(i, j)]);
        }
    }
    ComplexMatrix {
        rows: n - 1,
        cols: n - 1,
        data,
    }
}

/// Transpose of the cofactor matrix, so that `M adj(M) = det(M) I`.
///
/// Well-conditioned input goes through `det(M) M^{-1}`; near-singular input
/// (the usual case here, since the outlier coefficients are evaluated at a
/// zero of the determinant) uses cofactors computed from minors.
pub fn adjugate(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n = m.require_square("adjugate")?;
    match n {
        0 => return Ok(ComplexMatrix::zeros(0, 0)),
        1 => return Ok(ComplexMatrix::identity(1)),
        _ => {}
    }
    let lu = Lu::factor(m)?;
    if lu.condition_estimate() < ADJUGATE_COND_LIMIT {
        return Ok(lu.inverse()?.scale(lu.determinant()));
    }
    Ok(cofactor_adjugate(m))
}

pub(crate) fn cofactor_adjugate(m: &ComplexMatrix) -> ComplexMatrix {
    let n = m.rows;
    let mut adj = ComplexMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let det = Lu::factor(&minor(m, i, j))
                .map(|lu| lu.determinant())
                .unwrap_or(ZERO);
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            adj[(j, i)] = det * sign;
        }
    }
    adj
}

/// `|det(A+H) - det(A) - Tr(adj(A) H)|`: the second-order remainder of the
/// determinant's first-order expansion.
pub fn det_expansion_residual(a: &ComplexMatrix, h: &ComplexMatrix) -> Result<f64> {
    if a.rows != h.rows || a.cols != h.cols {
        return Err(Error::DimensionMismatch("det expansion: A and H differ in shape".into()));
    }
    let lhs = determinant(&(a + h))?;
    let first = determinant(a)? + (&adjugate(a)? * h).trace();
    Ok((lhs - first).norm())
}

/// Eigenvalues of a Hermitian matrix in ascending order.
///
/// Householder reduction to a real symmetric tridiagonal matrix (the complex
/// sub-diagonal phases are removed by a diagonal unitary similarity),
/// followed by implicit-shift QL.
pub fn hermitian_eigenvalues(h: &HermitianMatrix) -> Result<Vec<f64>> {
    let n = h.dim();
    if n == 0 {
        return Ok(Vec::new());
    }
    if h.is_diagonal() {
        let mut d: Vec<f64> = h.diagonal().iter().map(|z| z.re).collect();
        d.sort_by(|a, b| a.total_cmp(b));
        return Ok(d);
    }
    let (mut d, mut e) = tridiagonalize(h.as_matrix());
    tridiagonal_ql(&mut d, &mut e)?;
    d.sort_by(|a, b| a.total_cmp(b));
    Ok(d)
}

/// Returns the diagonal and the (real, non-negative) off-diagonal of a
/// tridiagonal matrix unitarily similar to `a`. `e[k]` couples `k` and `k+1`;
/// `e[n-1] = 0`.
fn tridiagonalize(a: &ComplexMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = a.rows;
    let mut a = a.data.clone();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    let mut v = vec![ZERO; n];
    let mut p = vec![ZERO; n];
    for k in 0..n {
        d[k] = a[k * n + k].re;
        if k + 1 >= n {
            break;
        }
        let len = n - k - 1;
        // Column k below the diagonal is the conjugate of row k to its right.
        let c: Vec<Complex64> = (0..len).map(|i| a[k * n + k + 1 + i].conj()).collect();
        let tail_sq: f64 = c[1..].iter().map(|z| z.norm_sqr()).sum();
        let norm = (c[0].norm_sqr() + tail_sq).sqrt();
        e[k] = norm;
        if tail_sq == 0.0 {
            continue;
        }
        let phase = if c[0].norm() > 0.0 { c[0] / c[0].norm() } else { ONE };
        let alpha = -phase * norm;
        let v = &mut v[..len];
        v.copy_from_slice(&c);
        v[0] -= alpha;
        let vnorm_sq: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        let tau = 2.0 / vnorm_sq;
        // p = tau * A22 v
        let p = &mut p[..len];
        for i in 0..len {
            let row = &a[(k + 1 + i) * n + k + 1..(k + 2 + i) * n];
            let s: Complex64 = row.iter().zip(v.iter()).map(|(&x, &y)| x * y).sum();
            p[i] = s * tau;
        }
        // K = tau (v* p) / 2 is real for Hermitian A22.
        let vp: Complex64 = v.iter().zip(p.iter()).map(|(x, y)| x.conj() * y).sum();
        let kk = 0.5 * tau * vp.re;
        for i in 0..len {
            p[i] -= v[i] * kk;
        }
        // A22 -= v w* + w v*, with w = p.
        for i in 0..len {
            let (vi, wi) = (v[i], p[i]);
            let row = &mut a[(k + 1 + i) * n + k + 1..(k + 2 + i) * n];
            for (j, x) in row.iter_mut().enumerate() {
                *x -= vi * p[j].conj() + wi * v[j].conj();
            }
        }
    }
    (d, e)
}

fn tridiagonal_ql(d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > QL_MAX_SWEEPS {
                return Err(Error::NoConvergence {
                    what: "implicit QL",
                    iterations: iter,
                    residual: e[l].abs(),
                });
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Largest singular value.
pub fn operator_norm(m: &ComplexMatrix) -> Result<f64> {
    let gram = HermitianMatrix::symmetrize(&(&m.adjoint() * m))?;
    let eig = hermitian_eigenvalues(&gram)?;
    Ok(eig.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}

/// Smallest singular value (through the Gram matrix, so only accurate down
/// to about `sqrt(eps) * ||M||`).
pub fn smallest_singular_value(m: &ComplexMatrix) -> Result<f64> {
    let gram = HermitianMatrix::symmetrize(&(&m.adjoint() * m))?;
    let eig = hermitian_eigenvalues(&gram)?;
    Ok(eig.first().copied().unwrap_or(0.0).max(0.0).sqrt())
}

/// Singular values in descending order.
pub fn singular_values(m: &ComplexMatrix) -> Result<Vec<f64>> {
    let gram = HermitianMatrix::symmetrize(&(&m.adjoint() * m))?;
    let mut s: Vec<f64> = hermitian_eigenvalues(&gram)?
        .into_iter()
        .map(|x| x.max(0.0).sqrt())
        .collect();
    s.reverse();
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn lcg_matrix(n: usize, seed: u64) -> ComplexMatrix {
        let mut s = seed;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        ComplexMatrix::from_fn(n, n, |_, _| c(next(), next()))
    }

    fn random_hermitian(n: usize, seed: u64) -> HermitianMatrix {
        HermitianMatrix::symmetrize(&lcg_matrix(n, seed)).unwrap()
    }

    #[test]
    fn pauli_x_eigenvalues() {
        let h = HermitianMatrix::new(
            ComplexMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap(),
        )
        .unwrap();
        let eig = h.eigenvalues().unwrap();
        assert!((eig[0] + 1.0).abs() < 1e-14 && (eig[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn diagonal_eigenvalues_are_sorted_diagonal() {
        let h = HermitianMatrix::from_real_diagonal(&[3.0, -2.0, 5.0]);
        assert_eq!(h.eigenvalues().unwrap(), vec![-2.0, 3.0, 5.0]);
        let d = [2.0, 0.0, 0.0, -1.5, 0.7];
        let mut sorted = d.to_vec();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(HermitianMatrix::from_real_diagonal(&d).eigenvalues().unwrap(), sorted);
    }

    #[test]
    fn eigenvalue_trace_identities() {
        for (n, seed) in [(1, 1), (2, 2), (7, 3), (40, 4), (120, 5)] {
            let h = random_hermitian(n, seed);
            let eig = h.eigenvalues().unwrap();
            let tr = h.trace().re;
            let tr2 = (h.as_matrix() * h.as_matrix()).trace().re;
            let s1: f64 = eig.iter().sum();
            let s2: f64 = eig.iter().map(|x| x * x).sum();
            assert!((s1 - tr).abs() <= 1e-10 * tr.abs().max(1.0), "n={n}");
            assert!((s2 - tr2).abs() <= 1e-10 * tr2, "n={n}");
        }
    }

    #[test]
    fn direct_sum_eigenvalues_merge() {
        let a = random_hermitian(5, 11);
        let b = random_hermitian(4, 12);
        let mut sum = ComplexMatrix::zeros(9, 9);
        sum.add_block(0, 0, &a, ONE);
        sum.add_block(5, 5, &b, ONE);
        let eig = HermitianMatrix::new(sum).unwrap().eigenvalues().unwrap();
        let mut merged = a.eigenvalues().unwrap();
        merged.extend(b.eigenvalues().unwrap());
        merged.sort_by(f64::total_cmp);
        for (x, y) in eig.iter().zip(&merged) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn hermitian_constructor_rejects_skew() {
        let m = ComplexMatrix::from_rows(&[vec![c(1.0, 0.0), c(0.0, 1.0)], vec![c(0.0, 1.0), c(1.0, 0.0)]])
            .unwrap();
        assert!(matches!(HermitianMatrix::new(m), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            ComplexMatrix::try_new(1, 1, vec![c(f64::NAN, 0.0)]),
            Err(Error::NonFinite)
        ));
    }

    #[test]
    fn determinant_examples() {
        assert!((determinant(&ComplexMatrix::identity(4)).unwrap() - ONE).norm() < 1e-15);
        let d = ComplexMatrix::from_diagonal(&[c(2.0, 0.0), c(0.0, 3.0)]);
        assert!((determinant(&d).unwrap() - c(0.0, 6.0)).norm() < 1e-14);
        let singular = ComplexMatrix::from_real_rows(&[&[1.0, 2.0], &[2.0, 4.0]]).unwrap();
        assert!(determinant(&singular).unwrap().norm() < 1e-14);
    }

    #[test]
    fn determinant_is_multiplicative() {
        for seed in 0..10 {
            let a = lcg_matrix(5, 100 + seed);
            let b = lcg_matrix(5, 200 + seed);
            let lhs = determinant(&(&a * &b)).unwrap();
            let rhs = determinant(&a).unwrap() * determinant(&b).unwrap();
            assert!((lhs - rhs).norm() / rhs.norm() < 1e-9);
        }
    }

    #[test]
    fn adjugate_examples() {
        assert!(adjugate(&ComplexMatrix::identity(3)).unwrap().distance(&ComplexMatrix::identity(3)) < 1e-15);
        let (a, b, cc) = (c(2.0, 1.0), c(-3.0, 0.0), c(0.5, -0.5));
        let adj = adjugate(&ComplexMatrix::from_diagonal(&[a, b, cc])).unwrap();
        let expect = ComplexMatrix::from_diagonal(&[b * cc, a * cc, a * b]);
        assert!(adj.distance(&expect) < 1e-14);
    }

    #[test]
    fn adjugate_identity_random_and_singular() {
        for seed in 0..10 {
            let m = lcg_matrix(4, 300 + seed);
            let adj = adjugate(&m).unwrap();
            let det = determinant(&m).unwrap();
            let r = (&m * &adj).distance(&ComplexMatrix::identity(4).scale(det));
            assert!(r < 1e-9 * det.norm().max(1.0));
        }
        // rank-deficient: rows 0 and 2 equal
        let mut m = lcg_matrix(4, 7);
        for j in 0..4 {
            m[(2, j)] = m[(0, j)];
        }
        let adj = adjugate(&m).unwrap();
        assert!((&m * &adj).max_abs() < 1e-9);
        assert!(adj.max_abs() > 1e-3, "rank n-1 matrix has a nonzero adjugate");
    }

    #[test]
    fn solve_examples() {
        let b = lcg_matrix(3, 9);
        let x = solve(&ComplexMatrix::identity(3), &b).unwrap().x;
        assert!(x.distance(&b) < 1e-15);
        let m = ComplexMatrix::from_real_diagonal(&[2.0, 4.0]);
        let x = solve(&m, &ComplexMatrix::identity(2)).unwrap().x;
        assert!(x.distance(&ComplexMatrix::from_real_diagonal(&[0.5, 0.25])) < 1e-15);
    }

    #[test]
    fn solve_round_trip_and_condition() {
        for seed in 0..5 {
            let m = lcg_matrix(8, 400 + seed);
            let x0 = lcg_matrix(8, 500 + seed);
            let sol = solve(&m, &(&m * &x0)).unwrap();
            assert!(sol.x.distance(&x0) / x0.max_abs() < 1e-9);
            assert!(sol.condition >= 1.0 && sol.condition.is_finite());
            let resid = (&(&m * &sol.x) - &(&m * &x0)).frobenius_norm() / (&m * &x0).frobenius_norm();
            assert!(resid < 1e-10);
        }
    }

    #[test]
    fn singular_solve_errors() {
        let m = ComplexMatrix::from_real_rows(&[&[1.0, 2.0], &[2.0, 4.0]]).unwrap();
        assert!(matches!(solve(&m, &ComplexMatrix::identity(2)), Err(Error::Singular)));
    }

    #[test]
    fn condition_estimate_tracks_scaling() {
        let m = ComplexMatrix::from_real_diagonal(&[1.0, 1e-6]);
        let cond = Lu::factor(&m).unwrap().condition_estimate();
        assert!((cond - 1e6).abs() / 1e6 < 1e-9);
    }

    #[test]
    fn operator_norm_examples() {
        assert!((operator_norm(&ComplexMatrix::identity(3)).unwrap() - 1.0).abs() < 1e-14);
        let d = ComplexMatrix::from_real_diagonal(&[3.0, -7.0]);
        assert!((operator_norm(&d).unwrap() - 7.0).abs() < 1e-13);
    }

    #[test]
    fn det_expansion_small_cases() {
        let a = lcg_matrix(3, 21);
        assert!(det_expansion_residual(&a, &ComplexMatrix::zeros(3, 3)).unwrap() < 1e-14);
        let h = ComplexMatrix::from_diagonal(&[c(0.3, 0.0), ZERO]);
        assert!(det_expansion_residual(&ComplexMatrix::identity(2), &h).unwrap() < 1e-15);
    }

    #[test]
    fn kron_layout() {
        let a = ComplexMatrix::from_real_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap();
        let b = ComplexMatrix::identity(2);
        let k = a.kron(&b);
        // pencil index = p * n + i
        assert_eq!(k[(0, 2)], c(2.0, 0.0));
        assert_eq!(k[(3, 1)], c(3.0, 0.0));
        assert_eq!(k[(1, 0)], ZERO);
    }

    #[test]
    fn json_round_trip() {
        let m = lcg_matrix(3, 77);
        let s = serde_json::to_string(&m).unwrap();
        let back: ComplexMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }

    fn reflector(v: &[Complex64]) -> ComplexMatrix {
        let n = v.len();
        let nn: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        ComplexMatrix::from_fn(n, n, |i, j| {
            let id = if i == j { ONE } else { ZERO };
            id - v[i] * v[j].conj() * (2.0 / nn)
        })
    }

    #[test]
    fn det_expansion_is_second_order() {
        let a = lcg_matrix(3, 31);
        let h = lcg_matrix(3, 32);
        let r1 = det_expansion_residual(&a, &h.scale_real(1e-2)).unwrap();
        let r2 = det_expansion_residual(&a, &h.scale_real(5e-3)).unwrap();
        let ratio = r1 / r2;
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
    }

    proptest::proptest! {
        #[test]
        fn spectrum_and_norm_are_unitarily_invariant(
            seed in 0u64..10_000,
            raw in proptest::collection::vec(-1.0f64..1.0, 12),
        ) {
            let v: Vec<Complex64> = raw.chunks(2).map(|p| c(p[0] + 1e-3, p[1])).collect();
            let u = reflector(&v);
            let h = random_hermitian(6, seed);
            let conj = HermitianMatrix::symmetrize(&(&(&u * h.as_matrix()) * &u.adjoint())).unwrap();
            let e1 = h.eigenvalues().unwrap();
            let e2 = conj.eigenvalues().unwrap();
            for (x, y) in e1.iter().zip(&e2) {
                proptest::prop_assert!((x - y).abs() < 1e-12);
            }
            let m = lcg_matrix(6, seed + 1);
            let n1 = operator_norm(&m).unwrap();
            let n2 = operator_norm(&(&u * &m)).unwrap();
            proptest::prop_assert!((n1 - n2).abs() / n1 < 1e-8);
        }

        #[test]
        fn adjugate_defining_identity(seed in 0u64..10_000, n in 1usize..6) {
            let m = lcg_matrix(n, seed);
            let det = determinant(&m).unwrap();
            let r = (&m * &adjugate(&m).unwrap()).distance(&ComplexMatrix::identity(n).scale(det));
            proptest::prop_assert!(r < 1e-9 * det.norm().max(1.0));
        }
    }
}
