//! Self-adjoint linear pencils `L = γ⊗1 + Σ_j α_j⊗X_j` for self-adjoint
//! polynomials, and the Schur-complement check that certifies them.
//!
//! Pencil layout: the matrix `A⊗B` (A of size m, B of size n) has entry
//! `A_pq B_ij` at row `p*n + i`, column `q*n + j`. The first pencil row is the
//! distinguished one, so `P(args)` lives in the top-left `n×n` block.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linmat::{ComplexMatrix, HermitianMatrix, Lu};
use crate::ncalg::NCPolynomial;

impl AsRef<ComplexMatrix> for ComplexMatrix {
    fn as_ref(&self) -> &ComplexMatrix {
        self
    }
}

impl AsRef<ComplexMatrix> for HermitianMatrix {
    fn as_ref(&self) -> &ComplexMatrix {
        self.as_matrix()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LinearizationJson", into = "LinearizationJson")]
pub struct Linearization {
    gamma: HermitianMatrix,
    coeffs: Vec<HermitianMatrix>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinearizationJson {
    m: usize,
    gamma: HermitianMatrix,
    coeffs: Vec<HermitianMatrix>,
}

impl TryFrom<LinearizationJson> for Linearization {
    type Error = Error;
    fn try_from(j: LinearizationJson) -> Result<Self> {
        let l = Linearization::new(j.gamma, j.coeffs)?;
        if l.m() != j.m {
            return Err(Error::DimensionMismatch(format!(
                "declared m = {} but blocks are {}x{}",
                j.m,
                l.m(),
                l.m()
            )));
        }
        Ok(l)
    }
}

impl From<Linearization> for LinearizationJson {
    fn from(l: Linearization) -> Self {
        Self {
            m: l.m(),
            gamma: l.gamma,
            coeffs: l.coeffs,
        }
    }
}

impl Linearization {
    pub fn new(gamma: HermitianMatrix, coeffs: Vec<HermitianMatrix>) -> Result<Self> {
        let m = gamma.dim();
        if m == 0 {
            return Err(Error::InvalidInput("empty linearization".into()));
        }
        if let Some(c) = coeffs.iter().find(|c| c.dim() != m) {
            return Err(Error::DimensionMismatch(format!(
                "coefficient of size {} in a pencil of size {m}",
                c.dim()
            )));
        }
        Ok(Self { gamma, coeffs })
    }

    pub fn m(&self) -> usize {
        self.gamma.dim()
    }

    pub fn num_generators(&self) -> usize {
        self.coeffs.len()
    }

    pub fn gamma(&self) -> &HermitianMatrix {
        &self.gamma
    }

    pub fn coeffs(&self) -> &[HermitianMatrix] {
        &self.coeffs
    }

    /// Coefficient of the Wigner generator `X_1`.
    pub fn alpha(&self) -> &HermitianMatrix {
        &self.coeffs[0]
    }

    /// Coefficient of the deterministic generator `X_2`.
    pub fn beta(&self) -> &HermitianMatrix {
        &self.coeffs[1]
    }

    /// Two-generator pencil in the model's convention; errors otherwise.
    pub fn require_two_generators(&self) -> Result<()> {
        if self.coeffs.len() == 2 {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "the spiked model needs a pencil in 2 generators, got {}",
                self.coeffs.len()
            )))
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.m() == 1
    }
}

/// The economical `m = 3` pencil for `X_2 X_1 + X_1 X_2 + X_1^2`.
pub fn example_fixture() -> Linearization {
    let h = |rows: &[&[f64]]| {
        HermitianMatrix::new(ComplexMatrix::from_real_rows(rows).expect("static")).expect("static")
    };
    let gamma = h(&[&[0.0, 0.0, 0.0], &[0.0, 0.0, -1.0], &[0.0, -1.0, 0.0]]);
    let alpha = h(&[&[0.0, 1.0, 0.5], &[1.0, 0.0, 0.0], &[0.5, 0.0, 0.0]]);
    let beta = h(&[&[0.0, 0.0, 1.0], &[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0]]);
    Linearization::new(gamma, vec![alpha, beta]).expect("static")
}

/// Affine-linear entries of a pencil under construction: a constant plus one
/// scalar per generator.
struct Builder {
    k: usize,
    gamma: ComplexMatrix,
    coeffs: Vec<ComplexMatrix>,
}

impl Builder {
    fn new(m: usize, k: usize) -> Self {
        Self {
            k,
            gamma: ComplexMatrix::zeros(m, m),
            coeffs: vec![ComplexMatrix::zeros(m, m); k],
        }
    }

    /// Places `c` (on generator `g`, or the constant if `None`) at `(i, j)`
    /// and its conjugate at `(j, i)`.
    fn set_sym(&mut self, i: usize, j: usize, g: Option<usize>, c: Complex64) {
        let target = match g {
            Some(g) => &mut self.coeffs[g],
            None => &mut self.gamma,
        };
        target[(i, j)] += c;
        if i != j {
            target[(j, i)] += c.conj();
        }
    }

    fn finish(self) -> Result<Linearization> {
        let gamma = HermitianMatrix::new(self.gamma)?;
        let coeffs = self
            .coeffs
            .into_iter()
            .map(HermitianMatrix::new)
            .collect::<Result<Vec<_>>>()?;
        debug_assert_eq!(coeffs.len(), self.k);
        Linearization::new(gamma, coeffs)
    }
}

/// Builds a self-adjoint pencil for `p`.
///
/// The constant and linear terms sit in the corner entry. Every remaining
/// word `w` is paired with its reversal: for one representative `c·w` of the
/// pair, a chain block `(u, Q, v)` of size `deg w - 1` with `c·w = -u Q^{-1} v`
/// is built, and the pair contributes the hermitized block
/// `[[u, v*]; [[0, Q*], [Q, 0]]]`. Palindromic words contribute half their
/// coefficient through the same route, except `c·X_i^2` which gets a single
/// row with `Q = -1/c`.
pub fn linearize(p: &NCPolynomial) -> Result<Linearization> {
    if !p.is_self_adjoint() {
        return Err(Error::NotSelfAdjoint);
    }
    let k = p.num_generators();
    let mut chains: Vec<(Complex64, Vec<usize>)> = Vec::new();
    let mut squares: Vec<(f64, usize)> = Vec::new();
    for (w, c) in p.terms().filter(|(w, _)| w.len() >= 2) {
        let rev: Vec<usize> = w.iter().rev().copied().collect();
        if rev == w {
            if w.len() == 2 {
                squares.push((c.re, w[0]));
            } else {
                chains.push((c * 0.5, w.to_vec()));
            }
        } else if w < rev.as_slice() {
            chains.push((c, w.to_vec()));
        }
    }
    let m = 1 + squares.len() + chains.iter().map(|(_, w)| 2 * (w.len() - 1)).sum::<usize>();
    let mut b = Builder::new(m, k);

    for (w, c) in p.terms().filter(|(w, _)| w.len() <= 1) {
        b.set_sym(0, 0, w.first().copied(), c);
    }

    let mut next = 1;
    for &(c, g) in &squares {
        b.set_sym(0, next, Some(g), Complex64::new(1.0, 0.0));
        b.set_sym(next, next, None, Complex64::new(-1.0 / c, 0.0));
        next += 1;
    }
    let one = Complex64::new(1.0, 0.0);
    for (c, w) in &chains {
        let r = w.len() - 1;
        let u0 = next; // columns carrying u (rows of Q*)
        let q0 = next + r; // rows of Q
        // u = (c X_{w0}, 0, ...) and v* = (0, ..., X_{w_last})
        b.set_sym(0, u0, Some(w[0]), *c);
        b.set_sym(0, q0 + r - 1, Some(w[r]), one);
        // Q = -I + N with N_{j,j+1} = X_{w[j+1]}; placed at (q0 + j, u0 + j').
        for j in 0..r {
            b.set_sym(q0 + j, u0 + j, None, -one);
            if j + 1 < r {
                b.set_sym(q0 + j, u0 + j + 1, Some(w[j + 1]), one);
            }
        }
        next += 2 * r;
    }
    debug_assert_eq!(next, m);
    b.finish()
}

/// `z (e_11⊗I) - γ⊗I - Σ_j α_j⊗args_j`.
pub fn evaluate_pencil<M: AsRef<ComplexMatrix>>(
    l: &Linearization,
    args: &[M],
    z: Complex64,
) -> Result<ComplexMatrix> {
    if args.len() != l.num_generators() {
        return Err(Error::DimensionMismatch(format!(
            "{} arguments for a pencil in {} generators",
            args.len(),
            l.num_generators()
        )));
    }
    let n = args.first().map_or(0, |a| a.as_ref().rows());
    if args.iter().any(|a| a.as_ref().rows() != n || a.as_ref().cols() != n) {
        return Err(Error::DimensionMismatch("pencil arguments differ in size".into()));
    }
    let id = ComplexMatrix::identity(n);
    let m = l.m();
    let mut corner = ComplexMatrix::zeros(m, m);
    corner[(0, 0)] = z;
    let mut out = (&corner - l.gamma.as_matrix()).kron(&id);
    for (a, x) in l.coeffs.iter().zip(args) {
        out = &out - &a.as_matrix().kron(x.as_ref());
    }
    Ok(out)
}

/// Max-abs difference between the top-left `n×n` block of
/// `(z e_11⊗I - L(args))^{-1}` and `(zI - P(args))^{-1}`.
pub fn schur_check<M: AsRef<ComplexMatrix>>(
    l: &Linearization,
    p: &NCPolynomial,
    args: &[M],
    z: Complex64,
) -> Result<f64> {
    let pencil = evaluate_pencil(l, args, z)?;
    let n = args.first().map_or(0, |a| a.as_ref().rows());
    let mn = pencil.rows();
    let rhs = ComplexMatrix::from_fn(mn, n, |i, j| {
        if i == j {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let cols = Lu::factor(&pencil)?.solve(&rhs)?;
    let top = cols.block(0, 0, n, n);

    let owned: Vec<ComplexMatrix> = args.iter().map(|a| a.as_ref().clone()).collect();
    let pm = p.evaluate(&owned)?;
    let resolvent = Lu::factor(&(&ComplexMatrix::identity(n).scale(z) - &pm))?.inverse()?;
    Ok(top.distance(&resolvent))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ncalg::{additive_polynomial, example_polynomial, normalize, Monomial};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn hermitian_from(v: &[f64], n: usize) -> HermitianMatrix {
        let m = ComplexMatrix::from_fn(n, n, |i, j| c(v[2 * (i * n + j)], v[2 * (i * n + j) + 1]));
        HermitianMatrix::symmetrize(&m).unwrap()
    }

    fn lcg(seed: u64, len: usize) -> Vec<f64> {
        let mut s = seed.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
        (0..len)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    fn probes(n: usize, seed: u64) -> Vec<HermitianMatrix> {
        vec![
            hermitian_from(&lcg(seed, 2 * n * n), n),
            hermitian_from(&lcg(seed + 1, 2 * n * n), n),
        ]
    }

    #[test]
    fn degree_one_is_direct() {
        let l = linearize(&additive_polynomial()).unwrap();
        assert_eq!(l.m(), 1);
        assert_eq!(l.gamma()[(0, 0)], c(0.0, 0.0));
        assert_eq!(l.alpha()[(0, 0)], c(1.0, 0.0));
        assert_eq!(l.beta()[(0, 0)], c(1.0, 0.0));
        assert!(l.is_degenerate());
        let r = schur_check(&l, &additive_polynomial(), &probes(5, 3), c(0.0, 1.0)).unwrap();
        assert!(r < 1e-14);
    }

    #[test]
    fn square_uses_two_rows() {
        let p = normalize(2, &[Monomial::real(1.0, vec![0, 0])]).unwrap();
        let l = linearize(&p).unwrap();
        assert_eq!(l.m(), 2);
        assert_eq!(l.gamma()[(1, 1)], c(-1.0, 0.0));
        assert_eq!(l.alpha()[(0, 1)], c(1.0, 0.0));
        let r = schur_check(&l, &p, &probes(6, 9), c(0.3, 2.0)).unwrap();
        assert!(r < 1e-12, "{r}");
    }

    #[test]
    fn non_self_adjoint_rejected() {
        let p = normalize(2, &[Monomial::real(1.0, vec![0, 1])]).unwrap();
        assert!(matches!(linearize(&p), Err(Error::NotSelfAdjoint)));
    }

    #[test]
    fn fixture_schur_identity() {
        let r = schur_check(&example_fixture(), &example_polynomial(), &probes(8, 1), c(0.0, 10.0)).unwrap();
        assert!(r < 1e-10, "{r}");
    }

    #[test]
    fn constructed_example_schur_identity() {
        let p = example_polynomial();
        let l = linearize(&p).unwrap();
        for z in [c(0.0, 10.0), c(1.5, 0.2), c(-3.0, 1.0)] {
            assert!(schur_check(&l, &p, &probes(6, 4), z).unwrap() < 1e-10);
        }
    }

    #[test]
    fn pencil_with_zero_arguments() {
        let l = example_fixture();
        let zero = ComplexMatrix::zeros(4, 4);
        let t = c(1.7, 0.0);
        let got = evaluate_pencil(&l, &[zero.clone(), zero], t).unwrap();
        let mut corner = ComplexMatrix::zeros(3, 3);
        corner[(0, 0)] = t;
        let expect = (&corner - l.gamma().as_matrix()).kron(&ComplexMatrix::identity(4));
        assert_eq!(got, expect);

        let single = linearize(&NCPolynomial::generator(1, 0).unwrap()).unwrap();
        let got = evaluate_pencil(&single, &[ComplexMatrix::zeros(3, 3)], c(5.0, 0.0)).unwrap();
        assert_eq!(got, ComplexMatrix::identity(3).scale_real(5.0));
    }

    #[test]
    fn pencil_dimension_mismatch() {
        let l = example_fixture();
        assert!(evaluate_pencil(&l, &[ComplexMatrix::identity(2)], c(1.0, 0.0)).is_err());
    }

    #[test]
    fn json_round_trip() {
        let l = linearize(&example_polynomial()).unwrap();
        let s = serde_json::to_string(&l).unwrap();
        let back: Linearization = serde_json::from_str(&s).unwrap();
        assert_eq!(back, l);
        let bad = s.replacen(&format!("\"m\":{}", l.m()), "\"m\":2", 1);
        assert!(serde_json::from_str::<Linearization>(&bad).is_err());
    }

    fn arb_self_adjoint() -> impl Strategy<Value = NCPolynomial> {
        let mono = (
            -2.0f64..2.0,
            -2.0f64..2.0,
            proptest::collection::vec(0usize..2, 0..4),
        )
            .prop_map(|(re, im, w)| Monomial::new(c(re, im), w));
        proptest::collection::vec(mono, 1..6).prop_map(|m| {
            let p = normalize(2, &m).unwrap();
            (&p + &p.adjoint()).scale(c(0.5, 0.0))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn constructed_pencils_certify(p in arb_self_adjoint(), seed in 0u64..1000) {
            prop_assume!(!p.is_zero());
            let l = linearize(&p).unwrap();
            let args = probes(6, seed);
            let r = schur_check(&l, &p, &args, c(0.0, 10.0)).unwrap();
            prop_assert!(r < 1e-9, "residual {}", r);
        }

        #[test]
        fn pencil_is_hermitian_at_real_z(p in arb_self_adjoint(), seed in 0u64..1000, t in -5.0f64..5.0) {
            prop_assume!(!p.is_zero());
            let l = linearize(&p).unwrap();
            let pencil = evaluate_pencil(&l, &probes(4, seed), c(t, 0.0)).unwrap();
            prop_assert!(pencil.hermitian_residual() < 1e-12);
        }
    }
}
