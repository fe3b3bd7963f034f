//! Spectral measures, scalar Cauchy transforms and the operator-valued
//! subordination equation
//!
//! ```text
//! G = ∫ (ω - tβ)^{-1} dμ_a(t),    ω = b - α G α
//! ```
//!
//! for a two-generator pencil whose first generator is semicircular.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linearize::Linearization;
use crate::linmat::{ComplexMatrix, HermitianMatrix, Lu};

const I: Complex64 = Complex64::new(0.0, 1.0);

pub const DEFAULT_NODES: usize = 256;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 1.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j - 1) as f64 * z * p2 - (j - 1) as f64 * p3) / j as f64;
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

fn default_nodes() -> usize {
    DEFAULT_NODES
}

fn default_radius() -> f64 {
    2.0
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SemicircleParams {
    #[serde(default)]
    pub center: f64,
    #[serde(default = "default_radius")]
    pub radius: f64,
}

impl Default for SemicircleParams {
    fn default() -> Self {
        Self {
            center: 0.0,
            radius: 2.0,
        }
    }
}

/// Marchenko–Pastur law with ratio 1, dilated by `scale` (support `[0, 4·scale]`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarchenkoPasturParams {
    #[serde(default = "default_scale")]
    pub scale: f64,
}

impl Default for MarchenkoPasturParams {
    fn default() -> Self {
        Self { scale: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformParams {
    pub lo: f64,
    pub hi: f64,
}

/// How a measure was specified; this is also its JSON form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeasureSpec {
    Atoms {
        atoms: Vec<[f64; 2]>,
    },
    Semicircle {
        #[serde(default = "default_nodes")]
        nodes: usize,
        #[serde(default)]
        params: SemicircleParams,
    },
    MarchenkoPastur {
        #[serde(default = "default_nodes")]
        nodes: usize,
        #[serde(default)]
        params: MarchenkoPasturParams,
    },
    Uniform {
        #[serde(default = "default_nodes")]
        nodes: usize,
        params: UniformParams,
    },
}

/// A probability measure stored as weighted atoms. Continuous laws are
/// discretized by Gauss–Legendre quadrature in a variable that makes the
/// density smooth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureSpec", into = "MeasureSpec")]
pub struct SpectralMeasure {
    spec: MeasureSpec,
    atoms: Vec<(f64, f64)>,
}

impl From<SpectralMeasure> for MeasureSpec {
    fn from(m: SpectralMeasure) -> Self {
        m.spec
    }
}

impl TryFrom<MeasureSpec> for SpectralMeasure {
    type Error = Error;
    fn try_from(spec: MeasureSpec) -> Result<Self> {
        SpectralMeasure::from_spec(spec)
    }
}

fn normalize_weights(atoms: &mut [(f64, f64)]) {
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    for a in atoms.iter_mut() {
        a.1 /= total;
    }
}

/// Quadrature on `φ ∈ [-π/2, π/2]` with `t = t(φ)` and density weight `f(φ)`.
fn angular_quadrature(n: usize, t: impl Fn(f64) -> f64, f: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut atoms: Vec<(f64, f64)> = x
        .iter()
        .zip(&w)
        .map(|(&xi, &wi)| {
            let phi = half_pi * xi;
            (t(phi), wi * half_pi * f(phi))
        })
        .collect();
    normalize_weights(&mut atoms);
    atoms
}

impl SpectralMeasure {
    pub fn from_spec(spec: MeasureSpec) -> Result<Self> {
        use std::f64::consts::PI;
        let atoms = match &spec {
            MeasureSpec::Atoms { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::InvalidInput("measure with no atoms".into()));
                }
                if atoms.iter().any(|a| !a[0].is_finite() || !(a[1] > 0.0) || !a[1].is_finite()) {
                    return Err(Error::InvalidInput(
                        "atoms need finite locations and positive weights".into(),
                    ));
                }
                let total: f64 = atoms.iter().map(|a| a[1]).sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidInput(format!("atom weights sum to {total}, not 1")));
                }
                atoms.iter().map(|a| (a[0], a[1])).collect()
            }
            MeasureSpec::Semicircle { nodes, params } => {
                check_nodes(*nodes)?;
                let SemicircleParams { center, radius } = *params;
                if !(radius > 0.0) || !center.is_finite() || !radius.is_finite() {
                    return Err(Error::InvalidInput("semicircle needs a positive radius".into()));
                }
                angular_quadrature(
                    *nodes,
                    |phi| center + radius * phi.sin(),
                    |phi| 2.0 / PI * phi.cos().powi(2),
                )
            }
            MeasureSpec::MarchenkoPastur { nodes, params } => {
                check_nodes(*nodes)?;
                let s = params.scale;
                if !(s > 0.0) || !s.is_finite() {
                    return Err(Error::InvalidInput("Marchenko–Pastur needs a positive scale".into()));
                }
                angular_quadrature(
                    *nodes,
                    |phi| 2.0 * s * (1.0 + phi.sin()),
                    |phi| (1.0 - phi.sin()) / PI,
                )
            }
            MeasureSpec::Uniform { nodes, params } => {
                check_nodes(*nodes)?;
                let UniformParams { lo, hi } = *params;
                if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::InvalidInput("uniform law needs lo < hi".into()));
                }
                let (x, w) = gauss_legendre(*nodes);
                let mut atoms: Vec<(f64, f64)> = x
                    .iter()
                    .zip(&w)
                    .map(|(&xi, &wi)| (0.5 * (lo + hi) + 0.5 * (hi - lo) * xi, 0.5 * wi))
                    .collect();
                normalize_weights(&mut atoms);
                atoms
            }
        };
        Ok(Self { spec, atoms })
    }

    pub fn point_mass(t: f64) -> Self {
        Self::from_spec(MeasureSpec::Atoms {
            atoms: vec![[t, 1.0]],
        })
        .expect("finite point mass")
    }

    pub fn semicircle(nodes: usize) -> Result<Self> {
        Self::from_spec(MeasureSpec::Semicircle {
            nodes,
            params: SemicircleParams::default(),
        })
    }

    pub fn marchenko_pastur(nodes: usize) -> Result<Self> {
        Self::from_spec(MeasureSpec::MarchenkoPastur {
            nodes,
            params: MarchenkoPasturParams::default(),
        })
    }

    pub fn uniform(lo: f64, hi: f64, nodes: usize) -> Result<Self> {
        Self::from_spec(MeasureSpec::Uniform {
            nodes,
            params: UniformParams { lo, hi },
        })
    }

    /// Empirical measure of a diagonal (equal weights, exact duplicates merged).
    pub fn empirical(diag: &[f64]) -> Result<Self> {
        if diag.is_empty() {
            return Err(Error::InvalidInput("empirical measure of nothing".into()));
        }
        if diag.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let mut sorted = diag.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mut atoms: Vec<(f64, f64)> = Vec::new();
        let mut count = 0usize;
        for (i, &t) in sorted.iter().enumerate() {
            count += 1;
            if i + 1 == sorted.len() || sorted[i + 1] != t {
                atoms.push((t, count as f64));
                count = 0;
            }
        }
        normalize_weights(&mut atoms);
        let spec = MeasureSpec::Atoms {
            atoms: atoms.iter().map(|&(t, w)| [t, w]).collect(),
        };
        Ok(Self { spec, atoms })
    }

    pub fn spec(&self) -> &MeasureSpec {
        &self.spec
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    /// Quadrature node count, or `None` for an atomic measure.
    pub fn nodes(&self) -> Option<usize> {
        match self.spec {
            MeasureSpec::Atoms { .. } => None,
            MeasureSpec::Semicircle { nodes, .. }
            | MeasureSpec::MarchenkoPastur { nodes, .. }
            | MeasureSpec::Uniform { nodes, .. } => Some(nodes),
        }
    }

    /// Closed convex hull of the support.
    pub fn support(&self) -> (f64, f64) {
        match self.spec {
            MeasureSpec::Semicircle { params, .. } => {
                (params.center - params.radius, params.center + params.radius)
            }
            MeasureSpec::MarchenkoPastur { params, .. } => (0.0, 4.0 * params.scale),
            MeasureSpec::Uniform { params, .. } => (params.lo, params.hi),
            MeasureSpec::Atoms { .. } => self.atoms.iter().fold(
                (f64::INFINITY, f64::NEG_INFINITY),
                |(lo, hi), &(t, _)| (lo.min(t), hi.max(t)),
            ),
        }
    }

    pub fn max_abs(&self) -> f64 {
        let (lo, hi) = self.support();
        lo.abs().max(hi.abs())
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|&(t, w)| t * w).sum()
    }

    pub fn cauchy(&self, z: Complex64) -> Complex64 {
        self.atoms.iter().map(|&(t, w)| w / (z - t)).sum()
    }

    /// Distribution function of the underlying law (exact for named laws).
    pub fn cdf(&self, x: f64) -> f64 {
        use std::f64::consts::PI;
        let (lo, hi) = self.support();
        match self.spec {
            MeasureSpec::Atoms { .. } => self.atoms.iter().filter(|a| a.0 <= x).map(|a| a.1).sum(),
            _ if x <= lo => 0.0,
            _ if x >= hi => 1.0,
            MeasureSpec::Semicircle { params, .. } => {
                let u = (x - params.center) / params.radius;
                0.5 + (u * (1.0 - u * u).sqrt() + u.asin()) / PI
            }
            MeasureSpec::MarchenkoPastur { params, .. } => {
                let phi = (x / (2.0 * params.scale) - 1.0).clamp(-1.0, 1.0).asin();
                (phi + PI / 2.0 + phi.cos()) / PI
            }
            MeasureSpec::Uniform { params, .. } => (x - params.lo) / (params.hi - params.lo),
        }
    }

    /// Generalized inverse `inf { x : F(x) >= p }`.
    pub fn quantile(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        if let MeasureSpec::Atoms { .. } = self.spec {
            let mut sorted = self.atoms.clone();
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut acc = 0.0;
            for &(t, w) in &sorted {
                acc += w;
                if acc >= p - 1e-15 {
                    return t;
                }
            }
            return sorted.last().map_or(0.0, |a| a.0);
        }
        let (mut lo, mut hi) = self.support();
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi.abs().max(1.0) {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

fn check_nodes(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::InvalidInput("quadrature needs at least one node".into()))
    } else {
        Ok(())
    }
}

/// Cauchy transform of the standard semicircle law on `[-2, 2]`.
pub fn semicircle_g(z: Complex64) -> Result<Complex64> {
    if z.im == 0.0 && z.re.abs() < 2.0 {
        return Err(Error::OnSupport(z));
    }
    // The product of principal roots has its cut exactly on [-2, 2] and
    // behaves like z at infinity.
    Ok((z - (z - 2.0).sqrt() * (z + 2.0).sqrt()) * 0.5)
}

/// Cauchy transform of the Marchenko–Pastur law with ratio 1 on `[0, 4]`.
pub fn mp_g(z: Complex64) -> Result<Complex64> {
    if z.im == 0.0 && z.re >= 0.0 && z.re < 4.0 {
        return Err(Error::OnSupport(z));
    }
    Ok((z - z.sqrt() * (z - 4.0).sqrt()) / (2.0 * z))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarSubordination {
    pub omega1: Complex64,
    pub omega2: Complex64,
    /// Cauchy transform of `μ ⊞ ν` at `z`.
    pub g: Complex64,
    pub iterations: usize,
}

/// Subordination functions of `μ ⊞ ν` by iterating
/// `w ↦ F_ν(F_μ(w) - w + z) - (F_μ(w) - w)`.
pub fn scalar_subordination(
    mu: &SpectralMeasure,
    nu: &SpectralMeasure,
    z: Complex64,
    tol: f64,
    max_iter: usize,
) -> Result<ScalarSubordination> {
    if !(z.im > 0.0) {
        return Err(Error::NonPositiveImaginary);
    }
    let f = |m: &SpectralMeasure, w: Complex64| 1.0 / m.cauchy(w);
    let mut w = z;
    for it in 1..=max_iter {
        let h = f(mu, w) - w;
        let next = f(nu, h + z) - h;
        let delta = (next - w).norm();
        w = next;
        if delta < tol {
            let h = f(mu, w) - w;
            return Ok(ScalarSubordination {
                omega1: w,
                omega2: h + z,
                g: mu.cauchy(w),
                iterations: it,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "scalar subordination",
        iterations: max_iter,
        residual: f64::NAN,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DysonConfig {
    /// Self-consistency tolerance, relative to `max(1, max|ω|)`.
    pub tol: f64,
    pub max_iter: usize,
    pub eta_start: f64,
    pub eta_factor: f64,
    pub eta_floor: f64,
    /// Initial damping of the fixed-point step; halved whenever the
    /// residual grows.
    pub damping: f64,
    /// Allowed `λ_max(Im ω - η)` at the bottom of the η-ladder for a real
    /// point to count as off the support.
    pub support_threshold: f64,
    /// Residual below which Newton steps are attempted.
    pub newton_switch: f64,
}

impl Default for DysonConfig {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 10_000,
            eta_start: 0.1,
            eta_factor: 0.5,
            eta_floor: 1e-10,
            damping: 0.5,
            support_threshold: 1e-6,
            newton_switch: 1e-2,
        }
    }
}

impl DysonConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tol > 0.0
            && self.eta_floor > 0.0
            && self.eta_start >= self.eta_floor
            && self.eta_factor > 0.0
            && self.eta_factor < 1.0
            && self.damping > 0.0
            && self.damping <= 1.0
            && self.max_iter > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid solver configuration {self:?}")))
        }
    }

    /// The η values visited by the continuation ladder, descending.
    pub fn eta_ladder(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut eta = self.eta_start;
        while eta >= self.eta_floor {
            out.push(eta);
            eta *= self.eta_factor;
        }
        if out.last().is_none_or(|&e| e > self.eta_floor) {
            out.push(self.eta_floor);
        }
        out
    }
}

/// A solved Dyson state.
#[derive(Clone, Debug, PartialEq)]
pub struct SubordinationSolution {
    pub b: ComplexMatrix,
    pub omega: ComplexMatrix,
    pub g: ComplexMatrix,
    /// Imaginary shift `η` of the base point (0 once continued to the axis).
    pub eta: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// `z e_11 - γ + iη I`.
pub fn base_point(l: &Linearization, z: Complex64, eta: f64) -> ComplexMatrix {
    let m = l.m();
    let mut b = l.gamma().as_matrix().scale_real(-1.0);
    b[(0, 0)] += z;
    for i in 0..m {
        b[(i, i)] += I * eta;
    }
    b
}

/// The pieces of the Dyson map at a given `ω`.
struct Evaluation {
    g: ComplexMatrix,
    /// `(ω - t β)^{-1}` for every atom.
    k: Vec<ComplexMatrix>,
    /// `ω - b + α G α`.
    f: ComplexMatrix,
    residual: f64,
}

struct Dyson<'a> {
    alpha: &'a ComplexMatrix,
    beta: &'a ComplexMatrix,
    atoms: &'a [(f64, f64)],
    m: usize,
}

impl<'a> Dyson<'a> {
    fn new(l: &'a Linearization, mu: &'a SpectralMeasure) -> Result<Self> {
        l.require_two_generators()?;
        Ok(Self {
            alpha: l.alpha().as_matrix(),
            beta: l.beta().as_matrix(),
            atoms: mu.atoms(),
            m: l.m(),
        })
    }

    fn evaluate(&self, omega: &ComplexMatrix, b: &ComplexMatrix) -> Result<Evaluation> {
        let mut g = ComplexMatrix::zeros(self.m, self.m);
        let mut k = Vec::with_capacity(self.atoms.len());
        if self.m == 1 {
            let (o, b1) = (omega[(0, 0)], self.beta[(0, 0)]);
            let mut acc = Complex64::new(0.0, 0.0);
            for &(t, w) in self.atoms {
                let d = o - b1 * t;
                if d == Complex64::new(0.0, 0.0) {
                    return Err(Error::Singular);
                }
                let kt = d.inv();
                acc += kt * w;
                k.push(ComplexMatrix::from_diagonal(&[kt]));
            }
            g[(0, 0)] = acc;
        } else {
            for &(t, w) in self.atoms {
                let kt = Lu::factor(&(omega - &self.beta.scale_real(t)))?.inverse()?;
                g.add_block(0, 0, &kt, Complex64::new(w, 0.0));
                k.push(kt);
            }
        }
        let f = &(omega - b) + &(&(self.alpha * &g) * self.alpha);
        let residual = f.max_abs();
        if !residual.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(Evaluation { g, k, f, residual })
    }

    /// Matrix of `Σ_t w_t A_t ⊗ B_t^T`, the row-major vectorization of
    /// `X ↦ Σ_t w_t A_t X B_t`.
    fn kron_sum(&self, pairs: impl Iterator<Item = (f64, ComplexMatrix, ComplexMatrix)>) -> ComplexMatrix {
        let m = self.m;
        let mut out = ComplexMatrix::zeros(m * m, m * m);
        for (w, a, b) in pairs {
            for i in 0..m {
                for j in 0..m {
                    let aij = a[(i, j)] * w;
                    if aij == Complex64::new(0.0, 0.0) {
                        continue;
                    }
                    for k in 0..m {
                        for l in 0..m {
                            out[(i * m + k, j * m + l)] += aij * b[(l, k)];
                        }
                    }
                }
            }
        }
        out
    }

    /// Newton step `δ` solving `J δ = -F` with `J = I - Σ w (αK) ⊗ (Kα)^T`.
    fn newton_step(&self, ev: &Evaluation) -> Result<ComplexMatrix> {
        let m = self.m;
        let terms = self.atoms.iter().zip(&ev.k).map(|(&(_, w), kt)| {
            (w, self.alpha * kt, kt * self.alpha)
        });
        let j = &ComplexMatrix::identity(m * m) - &self.kron_sum(terms);
        let rhs = ComplexMatrix::try_new(m * m, 1, ev.f.data().iter().map(|z| -z).collect())?;
        let delta = Lu::factor(&j)?.solve(&rhs)?;
        ComplexMatrix::try_new(m, m, delta.data().to_vec())
    }

    fn scale(omega: &ComplexMatrix) -> f64 {
        omega.max_abs().max(1.0)
    }

    /// Hybrid damped fixed point / Newton iteration from `omega`.
    fn iterate(
        &self,
        b: &ComplexMatrix,
        mut omega: ComplexMatrix,
        cfg: &DysonConfig,
    ) -> Result<(ComplexMatrix, Evaluation, usize)> {
        let mut ev = self.evaluate(&omega, b)?;
        let mut damping = cfg.damping;
        for it in 0..cfg.max_iter {
            let scale = Self::scale(&omega);
            if ev.residual <= cfg.tol * scale {
                return Ok((omega, ev, it));
            }
            if ev.residual < cfg.newton_switch * scale {
                if let Ok(delta) = self.newton_step(&ev) {
                    let trial = &omega + &delta;
                    if let Ok(tev) = self.evaluate(&trial, b) {
                        if tev.residual < ev.residual {
                            omega = trial;
                            ev = tev;
                            continue;
                        }
                    }
                }
            }
            let trial = &omega - &ev.f.scale_real(damping);
            let tev = self.evaluate(&trial, b)?;
            if tev.residual > ev.residual {
                damping = (damping * 0.5).max(1.0 / 1024.0);
            }
            omega = trial;
            ev = tev;
        }
        Err(Error::NoConvergence {
            what: "Dyson fixed point",
            iterations: cfg.max_iter,
            residual: ev.residual,
        })
    }

    /// Pure Newton from a nearby solution; used on and near the real axis
    /// where the fixed point map is no longer a contraction.
    fn newton(
        &self,
        b: &ComplexMatrix,
        mut omega: ComplexMatrix,
        cfg: &DysonConfig,
    ) -> Result<(ComplexMatrix, Evaluation, usize)> {
        let mut ev = self.evaluate(&omega, b)?;
        for it in 0..50 {
            if ev.residual <= cfg.tol * Self::scale(&omega) {
                return Ok((omega, ev, it));
            }
            let delta = self.newton_step(&ev)?;
            omega = &omega + &delta;
            ev = self.evaluate(&omega, b)?;
        }
        if ev.residual <= 1e3 * cfg.tol * Self::scale(&omega) {
            return Ok((omega, ev, 50));
        }
        Err(Error::NoConvergence {
            what: "Dyson Newton continuation",
            iterations: 50,
            residual: ev.residual,
        })
    }
}

fn min_eigenvalue_of_imaginary_part(b: &ComplexMatrix) -> Result<f64> {
    let h = HermitianMatrix::symmetrize(&b.imaginary_part())?;
    Ok(h.eigenvalues()?.first().copied().unwrap_or(0.0))
}

fn max_eigenvalue(h: &ComplexMatrix) -> Result<f64> {
    let h = HermitianMatrix::symmetrize(h)?;
    Ok(h.eigenvalues()?.last().copied().unwrap_or(0.0))
}

/// Solves the Dyson equation at a base point with `Im b ≻ 0`, starting from
/// `ω = b`.
pub fn dyson_solve(
    l: &Linearization,
    mu: &SpectralMeasure,
    b: &ComplexMatrix,
    cfg: &DysonConfig,
) -> Result<SubordinationSolution> {
    dyson_solve_from(l, mu, b, b.clone(), cfg)
}

/// As [`dyson_solve`], warm-started from `omega0`.
pub fn dyson_solve_from(
    l: &Linearization,
    mu: &SpectralMeasure,
    b: &ComplexMatrix,
    omega0: ComplexMatrix,
    cfg: &DysonConfig,
) -> Result<SubordinationSolution> {
    cfg.validate()?;
    if b.rows() != l.m() || b.cols() != l.m() {
        return Err(Error::DimensionMismatch(format!(
            "base point {}x{} for a pencil of size {}",
            b.rows(),
            b.cols(),
            l.m()
        )));
    }
    let eta = min_eigenvalue_of_imaginary_part(b)?;
    if !(eta > 0.0) {
        return Err(Error::NonPositiveImaginary);
    }
    let solver = Dyson::new(l, mu)?;
    let (omega, ev, iterations) = solver.iterate(b, omega0, cfg)?;
    Ok(SubordinationSolution {
        b: b.clone(),
        omega,
        g: ev.g,
        eta,
        residual: ev.residual,
        iterations,
    })
}

/// `max|ω - b + α G(ω) α|` for a candidate `ω` at base point `b`.
pub fn dyson_residual(
    l: &Linearization,
    mu: &SpectralMeasure,
    b: &ComplexMatrix,
    omega: &ComplexMatrix,
) -> Result<f64> {
    Ok(Dyson::new(l, mu)?.evaluate(omega, b)?.residual)
}

/// Newton solve at an arbitrary base point (no positivity requirement) from
/// a nearby solution. This is the analytic-continuation step.
pub fn dyson_newton(
    l: &Linearization,
    mu: &SpectralMeasure,
    b: &ComplexMatrix,
    omega0: ComplexMatrix,
    cfg: &DysonConfig,
) -> Result<SubordinationSolution> {
    let solver = Dyson::new(l, mu)?;
    let (omega, ev, iterations) = solver.newton(b, omega0, cfg)?;
    Ok(SubordinationSolution {
        b: b.clone(),
        omega,
        g: ev.g,
        eta: 0.0,
        residual: ev.residual,
        iterations,
    })
}

/// `ω_m(z e_11 - γ)` for `Im z >= 0`, reached by descending the η-ladder
/// with warm starts and finishing with a Newton solve at `η = 0`.
///
/// For real `z`, a residual `Im ω` at the bottom of the ladder means `z` is
/// in the support; that is reported as [`Error::InSupport`]. The returned
/// `ω` is then Hermitian.
pub fn dyson_continue(
    l: &Linearization,
    mu: &SpectralMeasure,
    z: Complex64,
    cfg: &DysonConfig,
) -> Result<SubordinationSolution> {
    cfg.validate()?;
    if z.im < 0.0 {
        return Err(Error::NonPositiveImaginary);
    }
    let solver = Dyson::new(l, mu)?;
    let mut omega = base_point(l, z, cfg.eta_start);
    let mut total = 0;
    let mut eta = cfg.eta_start;
    for e in cfg.eta_ladder() {
        eta = e;
        let b = base_point(l, z, e);
        let (w, _, it) = solver.iterate(&b, omega, cfg)?;
        omega = w;
        total += it;
    }
    let real = z.im == 0.0;
    if real {
        let mut excess = omega.imaginary_part();
        for i in 0..l.m() {
            excess[(i, i)] -= eta;
        }
        let excess = max_eigenvalue(&excess)?;
        if excess > cfg.support_threshold {
            return Err(Error::InSupport { z: z.re, excess });
        }
    }
    let b = base_point(l, z, 0.0);
    let floor = omega.clone();
    let (mut omega, ev, it) = match solver.newton(&b, omega, cfg) {
        Ok(r) => r,
        Err(_) => {
            let ev = solver.evaluate(&floor, &b)?;
            (floor, ev, 0)
        }
    };
    let mut g = ev.g;
    if real {
        omega = omega.hermitian_part();
        g = g.hermitian_part();
    }
    Ok(SubordinationSolution {
        b,
        omega,
        g,
        eta: 0.0,
        residual: ev.residual,
        iterations: total + it,
    })
}

/// Real-axis specialization of [`dyson_continue`].
pub fn dyson_continue_real(
    l: &Linearization,
    mu: &SpectralMeasure,
    z: f64,
    cfg: &DysonConfig,
) -> Result<SubordinationSolution> {
    dyson_continue(l, mu, Complex64::new(z, 0.0), cfg)
}

/// The Fréchet derivative `Σ ↦ DG[Σ]` of `b ↦ G(b)` at a solved state,
/// factored once so that many directions are cheap.
pub struct DysonDerivative {
    m: usize,
    lu: Lu,
    k: Vec<(f64, ComplexMatrix)>,
}

impl DysonDerivative {
    pub fn new(sol: &SubordinationSolution, l: &Linearization, mu: &SpectralMeasure) -> Result<Self> {
        let solver = Dyson::new(l, mu)?;
        let ev = solver.evaluate(&sol.omega, &sol.b)?;
        let m = solver.m;
        let alpha = solver.alpha;
        let terms = mu
            .atoms()
            .iter()
            .zip(&ev.k)
            .map(|(&(_, w), kt)| (w, kt * alpha, alpha * kt));
        let op = &ComplexMatrix::identity(m * m) - &solver.kron_sum(terms);
        let lu = Lu::factor(&op)?;
        let k = mu.atoms().iter().map(|a| a.1).zip(ev.k).collect();
        Ok(Self { m, lu, k })
    }

    /// Solves `DG - Σ_t w K_t α DG α K_t = -Σ_t w K_t Σ K_t`.
    pub fn apply(&self, sigma: &ComplexMatrix) -> Result<ComplexMatrix> {
        let m = self.m;
        if sigma.rows() != m || sigma.cols() != m {
            return Err(Error::DimensionMismatch("direction has the wrong size".into()));
        }
        let mut rhs = ComplexMatrix::zeros(m, m);
        for (w, kt) in &self.k {
            rhs.add_block(0, 0, &(&(kt * sigma) * kt), Complex64::new(-w, 0.0));
        }
        let rhs = ComplexMatrix::try_new(m * m, 1, rhs.data().to_vec())?;
        let x = self.lu.solve(&rhs)?;
        ComplexMatrix::try_new(m, m, x.data().to_vec())
    }
}

/// `DG[Σ]`; note `(id⊗φ)[R (Σ⊗1) R] = -DG[Σ]`.
pub fn dyson_derivative(
    sol: &SubordinationSolution,
    l: &Linearization,
    mu: &SpectralMeasure,
    sigma: &ComplexMatrix,
) -> Result<ComplexMatrix> {
    DysonDerivative::new(sol, l, mu)?.apply(sigma)
}

/// Scalar Cauchy transform of the limiting spectral law of the model at
/// `Im z > 0`: the corner entry of `G(z e_11 - γ)`.
pub fn model_cauchy_transform(
    l: &Linearization,
    mu: &SpectralMeasure,
    z: Complex64,
    cfg: &DysonConfig,
) -> Result<Complex64> {
    if !(z.im > 0.0) {
        return Err(Error::NonPositiveImaginary);
    }
    Ok(dyson_continue(l, mu, z, cfg)?.g[(0, 0)])
}

/// Expressions that [`free_surrogate_phi`] can estimate.
#[derive(Clone, Debug, PartialEq)]
pub enum SurrogateExpr {
    /// `φ(1)`.
    Unit,
    /// `φ((z - P)^{-1})`, read off the pencil's corner block.
    CornerResolvent { z: Complex64 },
    /// `φ(S^2)` with `S = Σ_{p,q} c_{qp} R_{pq}` and `R = (z e_11⊗1 - L)^{-1}`
    /// split into `m×m` blocks.
    SquaredTraceForm { z: Complex64, weights: ComplexMatrix },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurrogateEstimate {
    pub value: Complex64,
    /// Jackknife standard error over the normalized-trace summands.
    pub std_error: f64,
}

/// Monte Carlo stand-in for the trace state: one `M×M` GUE matrix divided
/// by `√M` for `X_1` and a deterministic diagonal of `μ_a` quantiles for
/// `X_2`. Meant as an independent cross-check of the analytic machinery.
pub fn free_surrogate_phi(
    l: &Linearization,
    mu: &SpectralMeasure,
    expr: &SurrogateExpr,
    size: usize,
    seed: u64,
) -> Result<SurrogateEstimate> {
    l.require_two_generators()?;
    if size == 0 {
        return Err(Error::InvalidInput("surrogate size must be positive".into()));
    }
    let z = match expr {
        SurrogateExpr::Unit => {
            return Ok(SurrogateEstimate {
                value: Complex64::new(1.0, 0.0),
                std_error: 0.0,
            })
        }
        SurrogateExpr::CornerResolvent { z } | SurrogateExpr::SquaredTraceForm { z, .. } => *z,
    };
    let x = crate::simulate::sample_gue(size, seed).scale_real(1.0 / (size as f64).sqrt());
    let d: Vec<f64> = (0..size)
        .map(|i| mu.quantile((i as f64 + 0.5) / size as f64))
        .collect();
    let dm = ComplexMatrix::from_real_diagonal(&d);
    let m = l.m();

    let summands: Vec<Complex64> = match expr {
        SurrogateExpr::CornerResolvent { .. } if m == 1 => {
            // P = γ + αX + βD; diagonalize instead of inverting the pencil.
            let a = l.alpha()[(0, 0)];
            let bcoef = l.beta()[(0, 0)];
            let mut p = &x.scale(a) + &dm.scale(bcoef);
            for i in 0..size {
                p[(i, i)] += l.gamma()[(0, 0)];
            }
            let eig = HermitianMatrix::symmetrize(&p)?.eigenvalues()?;
            eig.iter().map(|&lam| 1.0 / (z - lam)).collect()
        }
        SurrogateExpr::CornerResolvent { .. } => {
            let r = crate::linearize::evaluate_pencil(l, &[x, dm], z)?;
            let r = Lu::factor(&r)?.inverse()?;
            (0..size).map(|i| r[(i, i)]).collect()
        }
        SurrogateExpr::SquaredTraceForm { weights, .. } => {
            if weights.rows() != m || weights.cols() != m {
                return Err(Error::DimensionMismatch("weights must be m×m".into()));
            }
            let r = crate::linearize::evaluate_pencil(l, &[x, dm], z)?;
            let r = Lu::factor(&r)?.inverse()?;
            let mut s = ComplexMatrix::zeros(size, size);
            for p in 0..m {
                for q in 0..m {
                    let c = weights[(q, p)];
                    if c != Complex64::new(0.0, 0.0) {
                        s.add_block(0, 0, &r.block(p * size, q * size, size, size), c);
                    }
                }
            }
            let s2 = &s * &s;
            (0..size).map(|i| s2[(i, i)]).collect()
        }
        SurrogateExpr::Unit => unreachable!(),
    };
    let n = summands.len() as f64;
    let mean: Complex64 = summands.iter().sum::<Complex64>() / n;
    // Leave-one-out means are affine in the summands, so the jackknife
    // variance reduces to the sample variance over n.
    let var: f64 = summands.iter().map(|s| (s - mean).norm_sqr()).sum::<f64>() / (n - 1.0).max(1.0);
    Ok(SurrogateEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
    })
}
