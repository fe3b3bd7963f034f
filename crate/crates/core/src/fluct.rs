//! Second-order coefficients of an outlier and its predicted fluctuation law.
//!
//! For a simple outlier `ρ` the rescaled eigenvalue `C1 √N (λ - ρ_N)`
//! converges to `C2 W_11 + Z`, with `Z ~ N(0, v)` independent of the
//! diagonal entry `W_11`.

use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::freeprob::{dyson_continue_real, DysonConfig, DysonDerivative, SpectralMeasure, SubordinationSolution};
use crate::linearize::Linearization;
use crate::linmat::{adjugate, ComplexMatrix};

/// Imaginary parts above this (relative to `max(1, |re|)`) mean the
/// continuation went wrong.
pub const IMAG_TOL: f64 = 1e-8;

const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// Law `μ` of the real variables building the Wigner matrix: `W_ii ~ μ` and
/// `W_ij = (ξ + iη)/√2` with `ξ, η ~ μ` for `i < j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EntryLaw {
    /// Standard Gaussian; the Wigner matrix is then a GUE matrix.
    GueComplex,
    /// Uniform on `[-√3, √3]`.
    UniformSqrt3,
    /// Finitely many atoms `[x, p]`; must be centered with unit variance.
    CustomAtoms { atoms: Vec<[f64; 2]> },
}

impl EntryLaw {
    pub fn validate(&self) -> Result<()> {
        if let EntryLaw::CustomAtoms { atoms } = self {
            if atoms.is_empty() || atoms.iter().any(|a| !a[0].is_finite() || !(a[1] > 0.0)) {
                return Err(Error::InvalidInput("entry atoms need finite points and positive weights".into()));
            }
            let total: f64 = atoms.iter().map(|a| a[1]).sum();
            let mean: f64 = atoms.iter().map(|a| a[0] * a[1]).sum();
            let var: f64 = atoms.iter().map(|a| a[0] * a[0] * a[1]).sum();
            if (total - 1.0).abs() > 1e-12 || mean.abs() > 1e-12 || (var - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "entry law must be a centered unit-variance probability (mass {total}, mean {mean}, variance {var})"
                )));
            }
        }
        Ok(())
    }

    /// `E ξ^4` for `ξ ~ μ`.
    pub fn fourth_moment(&self) -> f64 {
        match self {
            EntryLaw::GueComplex => 3.0,
            EntryLaw::UniformSqrt3 => 9.0 / 5.0,
            EntryLaw::CustomAtoms { atoms } => atoms.iter().map(|a| a[0].powi(4) * a[1]).sum(),
        }
    }

    /// `E|W_21|^4 = (E ξ^4 + 1) / 2`.
    pub fn offdiag_fourth_moment(&self) -> f64 {
        0.5 * (self.fourth_moment() + 1.0)
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, EntryLaw::GueComplex)
    }

    /// Discrete laws have no Poincaré inequality.
    pub fn is_discrete(&self) -> bool {
        matches!(self, EntryLaw::CustomAtoms { .. })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            EntryLaw::GueComplex => StandardNormal.sample(rng),
            EntryLaw::UniformSqrt3 => Uniform::new_inclusive(-SQRT_3, SQRT_3)
                .expect("finite bounds")
                .sample(rng),
            EntryLaw::CustomAtoms { atoms } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for a in atoms {
                    acc += a[1];
                    if u < acc {
                        return a[0];
                    }
                }
                atoms.last().map_or(0.0, |a| a[0])
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EntryLaw::GueComplex => "gue_complex",
            EntryLaw::UniformSqrt3 => "uniform_sqrt3",
            EntryLaw::CustomAtoms { .. } => "custom_atoms",
        }
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Antiderivative of the standard normal CDF.
fn std_normal_cdf_integral(x: f64) -> f64 {
    x * std_normal_cdf(x) + std_normal_pdf(x)
}

/// Anything with a distribution function; `cdf_left` is the left limit.
pub trait Cdf {
    fn cdf(&self, x: f64) -> f64;
    fn cdf_left(&self, x: f64) -> f64 {
        self.cdf(x)
    }
}

/// Law of `a · W_11 + σ Z` with `Z` standard normal.
#[derive(Clone, Debug, PartialEq)]
pub struct LimitLaw {
    pub atom_scale: f64,
    pub sigma: f64,
    pub entry: EntryLaw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum LimitLawJson {
    Gaussian { variance: f64 },
    /// The density `(1/(2√(6π) C σ)) ∫_{-√3C}^{√3C} exp(-(x-t)^2/2σ^2) dt`.
    UniformConvolution { c: f64, sigma: f64 },
    AtomConvolution { scale: f64, sigma: f64, atoms: Vec<[f64; 2]> },
}

impl LimitLaw {
    /// The law of `√N (λ - ρ_N)`: `(C2/C1) W_11 + N(0, v/C1^2)`.
    pub fn new(c1: f64, c2: f64, v: f64, entry: EntryLaw) -> Result<Self> {
        if c1 == 0.0 || !c1.is_finite() {
            return Err(Error::InvalidInput("C1 must be nonzero".into()));
        }
        if v < 0.0 {
            return Err(Error::NegativeVariance { term1: f64::NAN, term2: v });
        }
        Ok(Self {
            atom_scale: c2 / c1,
            sigma: v.sqrt() / c1.abs(),
            entry,
        })
    }

    /// Law of `c · X` for `X` distributed according to `self`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            atom_scale: self.atom_scale * c,
            sigma: self.sigma * c.abs(),
            entry: self.entry.clone(),
        }
    }

    pub fn variance(&self) -> f64 {
        self.atom_scale * self.atom_scale + self.sigma * self.sigma
    }

    pub fn is_gaussian(&self) -> bool {
        self.atom_scale == 0.0 || self.entry.is_gaussian()
    }

    pub fn density(&self, x: f64) -> f64 {
        let a = self.atom_scale.abs();
        let s = self.sigma;
        if self.is_gaussian() {
            let sd = self.variance().sqrt();
            return if sd > 0.0 { std_normal_pdf(x / sd) / sd } else { 0.0 };
        }
        match &self.entry {
            EntryLaw::UniformSqrt3 => {
                let h = SQRT_3 * a;
                if s == 0.0 {
                    return if x.abs() <= h { 0.5 / h } else { 0.0 };
                }
                (std_normal_cdf((x + h) / s) - std_normal_cdf((x - h) / s)) / (2.0 * h)
            }
            EntryLaw::CustomAtoms { atoms } => {
                if s == 0.0 {
                    return 0.0;
                }
                atoms
                    .iter()
                    .map(|p| p[1] * std_normal_pdf((x - self.atom_scale * p[0]) / s) / s)
                    .sum()
            }
            EntryLaw::GueComplex => unreachable!(),
        }
    }

    pub fn to_json(&self) -> LimitLawJson {
        if self.is_gaussian() {
            return LimitLawJson::Gaussian { variance: self.variance() };
        }
        match &self.entry {
            EntryLaw::UniformSqrt3 => LimitLawJson::UniformConvolution {
                c: self.atom_scale.abs(),
                sigma: self.sigma,
            },
            EntryLaw::CustomAtoms { atoms } => LimitLawJson::AtomConvolution {
                scale: self.atom_scale,
                sigma: self.sigma,
                atoms: atoms.clone(),
            },
            EntryLaw::GueComplex => unreachable!(),
        }
    }

    /// Draws from the law; used by tests of the goodness-of-fit machinery.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.atom_scale * self.entry.sample(rng) + self.sigma * z
    }
}

impl Cdf for LimitLaw {
    fn cdf(&self, x: f64) -> f64 {
        let a = self.atom_scale.abs();
        let s = self.sigma;
        if self.is_gaussian() {
            let sd = self.variance().sqrt();
            return if sd > 0.0 {
                std_normal_cdf(x / sd)
            } else if x >= 0.0 {
                1.0
            } else {
                0.0
            };
        }
        match &self.entry {
            EntryLaw::UniformSqrt3 => {
                let h = SQRT_3 * a;
                if s == 0.0 {
                    return ((x + h) / (2.0 * h)).clamp(0.0, 1.0);
                }
                let v = s / (2.0 * h)
                    * (std_normal_cdf_integral((x + h) / s) - std_normal_cdf_integral((x - h) / s));
                v.clamp(0.0, 1.0)
            }
            EntryLaw::CustomAtoms { atoms } => atoms
                .iter()
                .map(|p| {
                    let loc = self.atom_scale * p[0];
                    let f = if s > 0.0 {
                        std_normal_cdf((x - loc) / s)
                    } else if x >= loc {
                        1.0
                    } else {
                        0.0
                    };
                    p[1] * f
                })
                .sum(),
            EntryLaw::GueComplex => unreachable!(),
        }
    }

    fn cdf_left(&self, x: f64) -> f64 {
        match &self.entry {
            EntryLaw::CustomAtoms { atoms } if self.sigma == 0.0 && !self.is_gaussian() => atoms
                .iter()
                .filter(|p| self.atom_scale * p[0] < x)
                .map(|p| p[1])
                .sum(),
            _ if self.variance() == 0.0 => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            _ => self.cdf(x),
        }
    }
}

/// The two pieces of `v_ρ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VParts {
    /// Fourth-moment (non-universal) part.
    pub term1: f64,
    /// Trace-state part; also the non-`C2` part of `ṽ_ρ`.
    pub term2: f64,
}

impl VParts {
    pub fn total(&self) -> f64 {
        self.term1 + self.term2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FluctuationCoefficients {
    pub rho: f64,
    pub rho_n: f64,
    pub theta: f64,
    pub c_m: ComplexMatrix,
    pub c1: f64,
    pub c2: f64,
    pub term1: f64,
    pub term2: f64,
    pub v: f64,
    pub v_tilde: f64,
    pub entry_law: EntryLaw,
    pub m: usize,
}

impl FluctuationCoefficients {
    /// Law of `√N (λ - ρ_N)`.
    pub fn limit_law(&self) -> Result<LimitLaw> {
        LimitLaw::new(self.c1, self.c2, self.v, self.entry_law.clone())
    }

    /// Law of the statistic `C1 √N (λ - ρ_N)`.
    pub fn scaled_limit_law(&self) -> Result<LimitLaw> {
        Ok(self.limit_law()?.scaled(self.c1))
    }
}

fn real_part(what: &'static str, z: Complex64) -> Result<f64> {
    if z.im.abs() > IMAG_TOL * z.re.abs().max(1.0) {
        return Err(Error::ImaginaryResidue { what, value: z.im });
    }
    Ok(z.re)
}

/// `adj(ω - θβ)` at a solved real point.
pub fn c_matrix(sol: &SubordinationSolution, theta: f64, beta: &ComplexMatrix) -> Result<ComplexMatrix> {
    adjugate(&(&sol.omega - &beta.scale_real(theta)))
}

/// `Tr(C_m (e_11 - α DG[e_11] α))`.
pub fn c1(deriv: &DysonDerivative, l: &Linearization, c_m: &ComplexMatrix) -> Result<f64> {
    let m = l.m();
    let alpha = l.alpha().as_matrix();
    let dg = deriv.apply(&ComplexMatrix::unit(m, 0, 0))?;
    let inner = &ComplexMatrix::unit(m, 0, 0) - &(&(alpha * &dg) * alpha);
    real_part("C1", (c_m * &inner).trace())
}

/// `Tr(C_m α)`.
pub fn c2(c_m: &ComplexMatrix, alpha: &ComplexMatrix) -> Result<f64> {
    real_part("C2", (c_m * alpha).trace())
}

/// Both terms of `v_ρ`.
pub fn v_rho(
    sol: &SubordinationSolution,
    deriv: &DysonDerivative,
    l: &Linearization,
    mu: &SpectralMeasure,
    c_m: &ComplexMatrix,
    entry: &EntryLaw,
) -> Result<VParts> {
    let m = l.m();
    let alpha = l.alpha().as_matrix();
    let beta = l.beta().as_matrix();
    let mm = &(alpha * c_m) * alpha;

    let mut quad = Complex64::new(0.0, 0.0);
    for &(t, w) in mu.atoms() {
        let k = crate::linmat::inverse(&(&sol.omega - &beta.scale_real(t)))?;
        let tr = (&mm * &k).trace();
        quad += tr * tr * w;
    }
    let term1 = real_part("v (fourth-moment term)", quad * (entry.offdiag_fourth_moment() - 2.0))?;

    // Σ M_qp M_q'p' φ(R_pq R_p'q'), with φ(R_pq R_p'q') = -DG[e_qp']_pq'.
    let mut t2 = Complex64::new(0.0, 0.0);
    for q in 0..m {
        for pp in 0..m {
            let d = deriv.apply(&ComplexMatrix::unit(m, q, pp))?;
            for p in 0..m {
                if mm[(q, p)] == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for qq in 0..m {
                    t2 -= mm[(q, p)] * mm[(qq, pp)] * d[(p, qq)];
                }
            }
        }
    }
    let term2 = real_part("v (trace-state term)", t2)?;
    Ok(VParts { term1, term2 })
}

/// `ṽ_ρ = C2^2 + term2`, the variance numerator for GUE entries.
pub fn v_tilde(c2: f64, term2: f64) -> f64 {
    c2 * c2 + term2
}

/// Full coefficient set for the outlier at `rho`, centered at `rho_n`.
pub fn fluctuation_coefficients(
    l: &Linearization,
    mu: &SpectralMeasure,
    theta: f64,
    rho: f64,
    rho_n: f64,
    entry: &EntryLaw,
    cfg: &DysonConfig,
) -> Result<FluctuationCoefficients> {
    entry.validate()?;
    let sol = dyson_continue_real(l, mu, rho, cfg)?;
    let deriv = DysonDerivative::new(&sol, l, mu)?;
    let c_m = c_matrix(&sol, theta, l.beta().as_matrix())?;
    let c1v = c1(&deriv, l, &c_m)?;
    let c2v = c2(&c_m, l.alpha().as_matrix())?;
    let parts = v_rho(&sol, &deriv, l, mu, &c_m, entry)?;
    let v = parts.total();
    let scale = parts.term1.abs().max(parts.term2.abs()).max(1.0);
    if v < -1e-10 * scale {
        return Err(Error::NegativeVariance {
            term1: parts.term1,
            term2: parts.term2,
        });
    }
    Ok(FluctuationCoefficients {
        rho,
        rho_n,
        theta,
        c_m,
        c1: c1v,
        c2: c2v,
        term1: parts.term1,
        term2: parts.term2,
        v: v.max(0.0),
        v_tilde: v_tilde(c2v, parts.term2),
        entry_law: entry.clone(),
        m: l.m(),
    })
}

/// One branch `ρ^±` of the worked example `X_2X_1 + X_1X_2 + X_1^2` with
/// `μ_a = δ_0` and uniform entries.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleBranch {
    pub rho: f64,
    pub g: f64,
    pub g_prime: f64,
    pub c1: f64,
    pub c2: f64,
    pub v: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleClosedForms {
    pub theta: f64,
    /// Present only for `|θ| > √2`.
    pub plus: Option<ExampleBranch>,
    pub minus: ExampleBranch,
    /// Set when `θ^2 = 2` (up to round-off): `ρ^+` sits on the support edge.
    pub degenerate_plus: bool,
}

fn example_branch(theta: f64, sign: f64) -> ExampleBranch {
    let t2 = theta * theta;
    let root = (4.0 * t2 + 1.0).sqrt();
    let rho = 2.0 * t2 * t2 / (-(3.0 * t2 + 1.0) + sign * root * (t2 + 1.0));
    let g = 0.5 + (-(t2 + 1.0) + sign * root) / (2.0 * t2);
    let g_prime = g * (1.0 - g) / (rho * (2.0 * g - 1.0));
    let c1 = -t2 * t2 * g.powi(4) + g_prime / (g * g) * (g + 1.0);
    let c2 = -2.0 * theta;
    let v = -0.6 * (t2 * g + 2.0).powi(2) - g_prime / (g * g) * (1.0 + 7.0 / g + t2) - 4.0 * t2 * g;
    ExampleBranch {
        rho,
        g,
        g_prime,
        c1,
        c2,
        v,
    }
}

pub fn example_closed_forms(theta: f64) -> Result<ExampleClosedForms> {
    if theta == 0.0 || !theta.is_finite() {
        return Err(Error::InvalidInput("θ must be finite and nonzero".into()));
    }
    let t2 = theta * theta;
    let degenerate_plus = (t2 - 2.0).abs() <= 1e-12;
    let plus = (t2 > 2.0 && !degenerate_plus).then(|| example_branch(theta, 1.0));
    Ok(ExampleClosedForms {
        theta,
        plus,
        minus: example_branch(theta, -1.0),
        degenerate_plus,
    })
}
