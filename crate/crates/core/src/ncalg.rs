//! Noncommutative polynomials in `k` self-adjoint indeterminates.
//!
//! Generators are 0-based in code (`X_1` is index 0). The JSON encoding uses
//! the usual 1-based indices.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linmat::{ComplexMatrix, HermitianMatrix};

/// Hermiticity residual (relative to the result's magnitude) tolerated when
/// evaluating a self-adjoint polynomial on Hermitian arguments.
pub const EVAL_HERMITIAN_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Monomial {
    pub coeff: Complex64,
    /// 0-based generator indices; empty for the constant term.
    pub word: Vec<usize>,
}

impl Monomial {
    pub fn new(coeff: Complex64, word: Vec<usize>) -> Self {
        Self { coeff, word }
    }

    pub fn real(coeff: f64, word: Vec<usize>) -> Self {
        Self::new(Complex64::new(coeff, 0.0), word)
    }

    pub fn degree(&self) -> usize {
        self.word.len()
    }
}

/// A polynomial kept in canonical form: one coefficient per word, no exact
/// zeros, words in lexicographic order.
#[derive(Clone, PartialEq, Debug)]
pub struct NCPolynomial {
    num_generators: usize,
    terms: BTreeMap<Vec<usize>, Complex64>,
}

/// Merges duplicate words and drops zero coefficients.
pub fn normalize(num_generators: usize, monomials: &[Monomial]) -> Result<NCPolynomial> {
    let mut p = NCPolynomial::zero(num_generators);
    for m in monomials {
        if let Some(&bad) = m.word.iter().find(|&&i| i >= num_generators) {
            return Err(Error::InvalidInput(format!(
                "generator X{} out of range (k = {num_generators})",
                bad + 1
            )));
        }
        if !m.coeff.re.is_finite() || !m.coeff.im.is_finite() {
            return Err(Error::NonFinite);
        }
        p.add_term(m.word.clone(), m.coeff);
    }
    Ok(p)
}

impl NCPolynomial {
    pub fn zero(num_generators: usize) -> Self {
        Self {
            num_generators,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(num_generators: usize, c: Complex64) -> Self {
        let mut p = Self::zero(num_generators);
        p.add_term(Vec::new(), c);
        p
    }

    /// The generator `X_{i+1}`.
    pub fn generator(num_generators: usize, i: usize) -> Result<Self> {
        normalize(num_generators, &[Monomial::real(1.0, vec![i])])
    }

    fn add_term(&mut self, word: Vec<usize>, c: Complex64) {
        let sum = self.coefficient(&word) + c;
        if sum == Complex64::new(0.0, 0.0) {
            self.terms.remove(&word);
        } else {
            self.terms.insert(word, sum);
        }
    }

    /// Canonical form; the identity on an already constructed polynomial.
    pub fn normalize(&self) -> Self {
        let mut out = Self::zero(self.num_generators);
        for (w, &c) in &self.terms {
            out.add_term(w.clone(), c);
        }
        out
    }

    pub fn num_generators(&self) -> usize {
        self.num_generators
    }

    /// Same polynomial viewed in `k >= num_generators` indeterminates.
    pub fn with_generators(mut self, k: usize) -> Result<Self> {
        if k < self.max_generator().map_or(0, |g| g + 1) {
            return Err(Error::InvalidInput(format!(
                "polynomial uses more than {k} generators"
            )));
        }
        self.num_generators = k;
        Ok(self)
    }

    fn max_generator(&self) -> Option<usize> {
        self.terms.keys().flatten().copied().max()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> usize {
        self.terms.keys().map(Vec::len).max().unwrap_or(0)
    }

    pub fn coefficient(&self, word: &[usize]) -> Complex64 {
        self.terms.get(word).copied().unwrap_or_default()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[usize], Complex64)> {
        self.terms.iter().map(|(w, &c)| (w.as_slice(), c))
    }

    pub fn monomials(&self) -> Vec<Monomial> {
        self.terms()
            .map(|(w, c)| Monomial::new(c, w.to_vec()))
            .collect()
    }

    pub fn scale(&self, c: Complex64) -> Self {
        let mut out = Self::zero(self.num_generators);
        for (w, &v) in &self.terms {
            out.add_term(w.clone(), v * c);
        }
        out
    }

    /// Reverses every word and conjugates every coefficient.
    pub fn adjoint(&self) -> Self {
        let mut out = Self::zero(self.num_generators);
        for (w, &c) in &self.terms {
            let rev: Vec<usize> = w.iter().rev().copied().collect();
            out.add_term(rev, c.conj());
        }
        out
    }

    pub fn is_self_adjoint(&self) -> bool {
        self.adjoint() == *self
    }

    /// Sum over monomials of `coeff * args[i_1] ... args[i_l]`.
    pub fn evaluate(&self, args: &[ComplexMatrix]) -> Result<ComplexMatrix> {
        if args.len() != self.num_generators {
            return Err(Error::DimensionMismatch(format!(
                "{} arguments for {} generators",
                args.len(),
                self.num_generators
            )));
        }
        let n = args.first().map_or(0, ComplexMatrix::rows);
        if let Some(bad) = args.iter().find(|a| a.rows() != n || a.cols() != n) {
            return Err(Error::DimensionMismatch(format!(
                "argument of shape {}x{} among {n}x{n} arguments",
                bad.rows(),
                bad.cols()
            )));
        }
        let mut out = ComplexMatrix::zeros(n, n);
        for (w, &c) in &self.terms {
            match w.split_first() {
                None => out = &out + &ComplexMatrix::identity(n).scale(c),
                Some((&first, rest)) => {
                    let prod = rest
                        .iter()
                        .fold(args[first].clone(), |acc, &i| &acc * &args[i]);
                    out = &out + &prod.scale(c);
                }
            }
        }
        Ok(out)
    }

    /// Evaluates a self-adjoint polynomial on Hermitian arguments and returns
    /// the (symmetrized) Hermitian result.
    pub fn evaluate_hermitian(&self, args: &[HermitianMatrix]) -> Result<HermitianMatrix> {
        if !self.is_self_adjoint() {
            return Err(Error::NotSelfAdjoint);
        }
        let args: Vec<ComplexMatrix> = args.iter().map(|a| a.as_matrix().clone()).collect();
        let m = self.evaluate(&args)?;
        let res = m.hermitian_residual();
        if res > EVAL_HERMITIAN_TOL * m.max_abs().max(1.0) * (self.degree().max(1) as f64) {
            return Err(Error::NotHermitian(res));
        }
        HermitianMatrix::symmetrize(&m)
    }

    fn check_compatible(&self, other: &Self) -> usize {
        self.num_generators.max(other.num_generators)
    }
}

impl Add for &NCPolynomial {
    type Output = NCPolynomial;
    fn add(self, rhs: &NCPolynomial) -> NCPolynomial {
        let mut out = self.clone();
        out.num_generators = self.check_compatible(rhs);
        for (w, &c) in &rhs.terms {
            out.add_term(w.clone(), c);
        }
        out
    }
}

impl Neg for &NCPolynomial {
    type Output = NCPolynomial;
    fn neg(self) -> NCPolynomial {
        self.scale(Complex64::new(-1.0, 0.0))
    }
}

impl Sub for &NCPolynomial {
    type Output = NCPolynomial;
    fn sub(self, rhs: &NCPolynomial) -> NCPolynomial {
        self + &(-rhs)
    }
}

impl Mul for &NCPolynomial {
    type Output = NCPolynomial;
    fn mul(self, rhs: &NCPolynomial) -> NCPolynomial {
        let mut out = NCPolynomial::zero(self.check_compatible(rhs));
        for (w1, &c1) in &self.terms {
            for (w2, &c2) in &rhs.terms {
                let mut w = w1.clone();
                w.extend_from_slice(w2);
                out.add_term(w, c1 * c2);
            }
        }
        out
    }
}

impl fmt::Display for NCPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, (w, c)) in self.terms.iter().enumerate() {
            if k > 0 {
                write!(f, " + ")?;
            }
            if c.im == 0.0 {
                write!(f, "{}", c.re)?;
            } else {
                write!(f, "({}{:+}i)", c.re, c.im)?;
            }
            for i in w {
                write!(f, "*X{}", i + 1)?;
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonMonomial {
    coeff: [f64; 2],
    word: Vec<usize>,
}

impl Serialize for NCPolynomial {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let terms: Vec<JsonMonomial> = self
            .terms
            .iter()
            .map(|(w, c)| JsonMonomial {
                coeff: [c.re, c.im],
                word: w.iter().map(|i| i + 1).collect(),
            })
            .collect();
        terms.serialize(s)
    }
}

/// The number of generators is inferred as `max(2, largest index used)`,
/// since every model in this crate has two indeterminates.
impl<'de> Deserialize<'de> for NCPolynomial {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw: Vec<JsonMonomial> = Vec::deserialize(d)?;
        let mut monomials = Vec::with_capacity(raw.len());
        for m in raw {
            if m.word.contains(&0) {
                return Err(serde::de::Error::custom("generator indices are 1-based"));
            }
            monomials.push(Monomial::new(
                Complex64::new(m.coeff[0], m.coeff[1]),
                m.word.iter().map(|i| i - 1).collect(),
            ));
        }
        let k = monomials
            .iter()
            .flat_map(|m| m.word.iter().map(|i| i + 1))
            .max()
            .unwrap_or(0)
            .max(2);
        normalize(k, &monomials).map_err(serde::de::Error::custom)
    }
}

/// `X_2 X_1 + X_1 X_2 + X_1^2`.
pub fn example_polynomial() -> NCPolynomial {
    normalize(
        2,
        &[
            Monomial::real(1.0, vec![1, 0]),
            Monomial::real(1.0, vec![0, 1]),
            Monomial::real(1.0, vec![0, 0]),
        ],
    )
    .expect("static polynomial")
}

/// `X_1 + X_2`.
pub fn additive_polynomial() -> NCPolynomial {
    normalize(
        2,
        &[Monomial::real(1.0, vec![0]), Monomial::real(1.0, vec![1])],
    )
    .expect("static polynomial")
}
