//! Support of the limiting spectral law, the outlier determinant equation
//! and outlier multiplicities.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluct::IMAG_TOL;
use crate::freeprob::{
    base_point, dyson_continue, dyson_continue_real, dyson_newton, DysonConfig, SpectralMeasure,
    SubordinationSolution,
};
use crate::linearize::Linearization;
use crate::linmat::{determinant, ComplexMatrix, HermitianMatrix};
use crate::ncalg::NCPolynomial;

/// Operator-norm bound of the semicircular generator.
const SEMICIRCLE_NORM: f64 = 2.0;

const SCAN_CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanOptions {
    pub grid_points: usize,
    pub eta: f64,
    pub threshold: f64,
    /// Move every support edge to where real-axis continuation starts to
    /// fail, which removes the `η` smearing of the density.
    pub refine_edges: bool,
    pub dyson: DysonConfig,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            grid_points: 2000,
            eta: 1e-4,
            threshold: 1e-3,
            refine_edges: true,
            dyson: DysonConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportScan {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub support_intervals: Vec<[f64; 2]>,
    pub gap_intervals: Vec<[f64; 2]>,
    pub eta: f64,
    pub threshold: f64,
    pub range: [f64; 2],
    /// Grid indices where the solver failed; their density is reported as 0.
    pub failed: Vec<usize>,
}

impl SupportScan {
    /// Trapezoid integral of the sampled density.
    pub fn mass(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
            .sum()
    }

    pub fn gap_containing(&self, x: f64) -> Option<[f64; 2]> {
        self.gap_intervals.iter().copied().find(|g| g[0] <= x && x <= g[1])
    }

    pub fn distance_to_support(&self, x: f64) -> f64 {
        self.support_intervals
            .iter()
            .map(|s| {
                if x < s[0] {
                    s[0] - x
                } else if x > s[1] {
                    x - s[1]
                } else {
                    0.0
                }
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// `±(B + 1)` with `B = Σ |c_w| Π ‖X_i‖`, a bound on the spectrum of the
/// model for every `N`.
pub fn default_range(p: &NCPolynomial, mu: &SpectralMeasure, theta: f64) -> (f64, f64) {
    let norms = [SEMICIRCLE_NORM, theta.abs().max(mu.max_abs())];
    let b: f64 = p
        .terms()
        .map(|(w, c)| c.norm() * w.iter().map(|&i| norms.get(i).copied().unwrap_or(1.0)).product::<f64>())
        .sum();
    (-(b + 1.0), b + 1.0)
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn is_physical(sol: &SubordinationSolution) -> Result<bool> {
    let excess = &sol.omega.imaginary_part() - &sol.b.imaginary_part();
    let h = HermitianMatrix::symmetrize(&excess)?;
    let min = h.eigenvalues()?.first().copied().unwrap_or(0.0);
    Ok(min >= -1e-9 * sol.omega.max_abs().max(1.0) && sol.g[(0, 0)].im <= 1e-12)
}

/// Corner Cauchy transform along `u + iη` for a run of grid points, warm
/// started from the previous point and falling back to a full continuation.
fn scan_chunk(
    l: &Linearization,
    mu: &SpectralMeasure,
    xs: &[f64],
    eta: f64,
    cfg: &DysonConfig,
) -> Vec<Option<f64>> {
    let mut prev: Option<ComplexMatrix> = None;
    xs.iter()
        .map(|&u| {
            let z = Complex64::new(u, eta);
            let warm = prev.take().and_then(|w| {
                let b = base_point(l, z, 0.0);
                dyson_newton(l, mu, &b, w, cfg)
                    .ok()
                    .filter(|s| is_physical(s).unwrap_or(false))
            });
            let sol = warm.or_else(|| dyson_continue(l, mu, z, cfg).ok());
            sol.map(|s| {
                let d = -s.g[(0, 0)].im / PI;
                prev = Some(s.omega);
                d.max(0.0)
            })
        })
        .collect()
}

/// Whether `u` is off the support, judged by real-axis continuation.
fn off_support(l: &Linearization, mu: &SpectralMeasure, u: f64, cfg: &DysonConfig) -> bool {
    dyson_continue_real(l, mu, u, cfg).is_ok()
}

/// Bisects between an outside point and an inside point to the place where
/// continuation starts to fail.
fn refine_edge(
    l: &Linearization,
    mu: &SpectralMeasure,
    mut outside: f64,
    mut inside: f64,
    cfg: &DysonConfig,
) -> f64 {
    while (outside - inside).abs() > 1e-7 * outside.abs().max(1.0) {
        let mid = 0.5 * (outside + inside);
        if off_support(l, mu, mid, cfg) {
            outside = mid;
        } else {
            inside = mid;
        }
    }
    0.5 * (outside + inside)
}

/// Moves an apparent edge inwards. `dir` is +1 for a left edge, -1 for a
/// right edge; `limit` is the opposite end of the apparent interval.
fn true_edge(
    l: &Linearization,
    mu: &SpectralMeasure,
    edge: f64,
    dir: f64,
    limit: f64,
    step: f64,
    cfg: &DysonConfig,
) -> Option<f64> {
    let mut outside = edge - dir * step;
    if !off_support(l, mu, outside, cfg) {
        return Some(edge);
    }
    let mut x = edge;
    while dir * (limit - x) >= 0.0 {
        if !off_support(l, mu, x, cfg) {
            return Some(refine_edge(l, mu, outside, x, cfg));
        }
        outside = x;
        x += dir * step;
    }
    None
}

/// Samples the limiting density on `range` and splits it into support and
/// gap intervals.
pub fn scan_support(
    l: &Linearization,
    mu: &SpectralMeasure,
    range: (f64, f64),
    opts: &ScanOptions,
) -> Result<SupportScan> {
    let (lo, hi) = range;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidInput(format!("scan range [{lo}, {hi}]")));
    }
    if opts.grid_points < 100 {
        return Err(Error::InvalidInput("a scan needs at least 100 grid points".into()));
    }
    if !(opts.eta > 0.0) {
        return Err(Error::NonPositiveImaginary);
    }
    opts.dyson.validate()?;
    l.require_two_generators()?;

    let grid = linspace(lo, hi, opts.grid_points);
    let values: Vec<Option<f64>> = grid
        .par_chunks(SCAN_CHUNK)
        .map(|xs| scan_chunk(l, mu, xs, opts.eta, &opts.dyson))
        .flatten_iter()
        .collect();
    let failed: Vec<usize> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.is_none().then_some(i))
        .collect();
    let density: Vec<f64> = values.iter().map(|v| v.unwrap_or(0.0)).collect();

    let mut support = Vec::new();
    let mut start: Option<usize> = None;
    for (i, &d) in density.iter().enumerate() {
        let inside = d > opts.threshold;
        match (inside, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                support.push([grid[s], grid[i - 1]]);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        support.push([grid[s], hi]);
    }

    if opts.refine_edges {
        let step = grid[1] - grid[0];
        let cfg = &opts.dyson;
        let refined: Vec<Option<[f64; 2]>> = support
            .par_iter()
            .map(|&[a, b]| {
                let left = if a > lo { true_edge(l, mu, a, 1.0, b, step, cfg) } else { Some(a) };
                let right = if b < hi { true_edge(l, mu, b, -1.0, a, step, cfg) } else { Some(b) };
                match (left, right) {
                    (Some(x), Some(y)) if x <= y => Some([x, y]),
                    // Continuation never failed: the interval is smearing
                    // around an isolated point or numerical noise.
                    _ => None,
                }
            })
            .collect();
        support = refined.into_iter().flatten().collect();
    }

    let mut gaps = Vec::new();
    let mut cursor = lo;
    for s in &support {
        if s[0] > cursor {
            gaps.push([cursor, s[0]]);
        }
        cursor = cursor.max(s[1]);
    }
    if cursor < hi {
        gaps.push([cursor, hi]);
    }

    Ok(SupportScan {
        grid,
        density,
        support_intervals: support,
        gap_intervals: gaps,
        eta: opts.eta,
        threshold: opts.threshold,
        range: [lo, hi],
        failed,
    })
}

fn det_of(sol: &SubordinationSolution, theta: f64, beta: &ComplexMatrix) -> Result<Complex64> {
    determinant(&(&sol.omega - &beta.scale_real(theta)))
}

/// `det(ω(z e_11 - γ) - θβ)` at a real point `z` off the support.
pub fn outlier_equation(
    l: &Linearization,
    mu: &SpectralMeasure,
    theta: f64,
    z: f64,
    cfg: &DysonConfig,
) -> Result<f64> {
    let sol = dyson_continue_real(l, mu, z, cfg)?;
    let d = det_of(&sol, theta, l.beta())?;
    if d.im.abs() > IMAG_TOL * d.norm().max(1.0) {
        return Err(Error::ImaginaryResidue {
            what: "outlier determinant",
            value: d.im,
        });
    }
    Ok(d.re)
}

/// The same determinant at a complex point; the lower half-plane is reached
/// by conjugation.
fn complex_det(
    l: &Linearization,
    mu: &SpectralMeasure,
    theta: f64,
    z: Complex64,
    cfg: &DysonConfig,
) -> Result<Complex64> {
    let upper = if z.im >= 0.0 { z } else { z.conj() };
    let sol = dyson_continue(l, mu, upper, cfg)?;
    let d = det_of(&sol, theta, l.beta())?;
    Ok(if z.im >= 0.0 { d } else { d.conj() })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OutlierOptions {
    pub subgrid: usize,
    pub root_tol: f64,
    pub radius: f64,
    pub contour_points: usize,
    /// Attempts at halving the contour radius before giving up.
    pub max_halvings: usize,
    pub dyson: DysonConfig,
}

impl Default for OutlierOptions {
    fn default() -> Self {
        Self {
            subgrid: 400,
            root_tol: 1e-12,
            radius: 1e-3,
            contour_points: 64,
            max_halvings: 6,
            dyson: DysonConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outlier {
    pub rho: f64,
    pub multiplicity: usize,
    /// `|det|` at the returned root.
    pub residual: f64,
    pub gap: [f64; 2],
    #[serde(skip)]
    pub bracket: [f64; 2],
    /// Half-width of the window in which the matching eigenvalue is sought:
    /// the smaller of the distance to the support and half the distance to
    /// the nearest other outlier.
    #[serde(skip)]
    pub window: f64,
}

/// Bisects a sign change of `f` on `[a, b]`.
fn bisect(
    mut a: f64,
    mut fa: f64,
    mut b: f64,
    tol: f64,
    mut f: impl FnMut(f64) -> Result<f64>,
) -> Result<(f64, [f64; 2])> {
    if fa == 0.0 {
        return Ok((a, [a, a]));
    }
    while (b - a).abs() > tol * a.abs().max(1.0) {
        let mid = 0.5 * (a + b);
        if mid == a || mid == b {
            break;
        }
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok((mid, [mid, mid]));
        }
        if (fm > 0.0) == (fa > 0.0) {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    Ok((0.5 * (a + b), [a.min(b), a.max(b)]))
}

/// Winding number of `det` around the circle of radius `r` about `rho`.
pub fn winding_number(
    l: &Linearization,
    mu: &SpectralMeasure,
    theta: f64,
    rho: f64,
    r: f64,
    points: usize,
    cfg: &DysonConfig,
) -> Result<f64> {
    let vals: Vec<Complex64> = (0..points)
        .into_par_iter()
        .map(|k| {
            let phi = 2.0 * PI * (k as f64 + 0.5) / points as f64;
            complex_det(l, mu, theta, Complex64::new(rho, 0.0) + Complex64::from_polar(r, phi), cfg)
        })
        .collect::<Result<_>>()?;
    let total: f64 = (0..points).map(|k| (vals[(k + 1) % points] / vals[k]).arg()).sum();
    Ok(total / (2.0 * PI))
}

fn multiplicity(
    l: &Linearization,
    mu: &SpectralMeasure,
    theta: f64,
    rho: f64,
    r0: f64,
    opts: &OutlierOptions,
) -> Result<usize> {
    let mut r = r0;
    let mut last = f64::NAN;
    for _ in 0..=opts.max_halvings {
        match winding_number(l, mu, theta, rho, r, opts.contour_points, &opts.dyson) {
            Ok(w) => {
                let k = w.round();
                if (w - k).abs() < 0.1 && k >= 1.0 {
                    return Ok(k as usize);
                }
                last = w;
            }
            Err(Error::InSupport { .. }) | Err(Error::NoConvergence { .. }) | Err(Error::Singular) => {}
            Err(e) => return Err(e),
        }
        r *= 0.5;
    }
    Err(Error::WindingNotIntegral { rho, winding: last })
}

/// Chebyshev points of the open interval `(a, b)`, ascending.
fn chebyshev(a: f64, b: f64, n: usize) -> Vec<f64> {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (0..n)
        .rev()
        .map(|k| mid + half * (PI * (k as f64 + 0.5) / n as f64).cos())
        .collect()
}

/// Zeros of the outlier equation in every gap of `scan`, with their
/// multiplicities.
pub fn find_outliers(
    l: &Linearization,
    mu: &SpectralMeasure,
    theta: f64,
    scan: &SupportScan,
    opts: &OutlierOptions,
) -> Result<Vec<Outlier>> {
    if !theta.is_finite() {
        return Err(Error::NonFinite);
    }
    let cfg = &opts.dyson;
    let eq = |z: f64| outlier_equation(l, mu, theta, z, cfg);

    let mut roots: Vec<(f64, [f64; 2], [f64; 2])> = Vec::new();
    for &gap in &scan.gap_intervals {
        let xs = chebyshev(gap[0], gap[1], opts.subgrid);
        // Points too close to an edge may fail to continue; they are skipped.
        let vals: Vec<Option<f64>> = xs.par_iter().map(|&x| eq(x).ok()).collect();
        let pts: Vec<(f64, f64)> = xs
            .iter()
            .zip(&vals)
            .filter_map(|(&x, v)| v.map(|v| (x, v)))
            .collect();
        for w in pts.windows(2) {
            let ((a, fa), (b, fb)) = (w[0], w[1]);
            if fa == 0.0 || (fa > 0.0) != (fb > 0.0) {
                let (rho, bracket) = bisect(a, fa, b, opts.root_tol, eq)?;
                if roots.last().is_none_or(|r| (r.0 - rho).abs() > opts.root_tol * 10.0) {
                    roots.push((rho, bracket, gap));
                }
            }
        }
    }

    let mut out = Vec::with_capacity(roots.len());
    for (i, &(rho, bracket, gap)) in roots.iter().enumerate() {
        let nearest = roots
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, r)| (r.0 - rho).abs())
            .fold(f64::INFINITY, f64::min);
        let edge = scan.distance_to_support(rho).min(rho - scan.range[0]).min(scan.range[1] - rho);
        let r0 = opts.radius.min(0.25 * nearest).min(0.25 * edge);
        let multiplicity = multiplicity(l, mu, theta, rho, r0, opts)?;
        out.push(Outlier {
            rho,
            multiplicity,
            residual: eq(rho)?.abs(),
            gap,
            bracket,
            window: scan.distance_to_support(rho).min(0.5 * nearest),
        });
    }
    Ok(out)
}

/// The finite-`N` outlier location: the root of the outlier equation with
/// the limiting measure replaced by the empirical measure of `tail`,
/// searched in `[near - window, near + window]`.
pub fn find_rho_n(
    l: &Linearization,
    tail: &[f64],
    theta: f64,
    near: f64,
    window: f64,
    cfg: &DysonConfig,
) -> Result<f64> {
    let mu = SpectralMeasure::empirical(tail)?;
    find_root_near(l, &mu, theta, near, window, cfg)
}

/// Bisection for a root of the outlier equation near `near`.
pub fn find_root_near(
    l: &Linearization,
    mu: &SpectralMeasure,
    theta: f64,
    near: f64,
    window: f64,
    cfg: &DysonConfig,
) -> Result<f64> {
    let eq = |z: f64| outlier_equation(l, mu, theta, z, cfg);
    let f0 = eq(near)?;
    if f0 == 0.0 {
        return Ok(near);
    }
    // Expand outwards from `near` so that the closest sign change wins.
    let mut h = (window * 1e-6).max(1e-12);
    while h <= window {
        for x in [near - h, near + h] {
            if let Ok(fx) = eq(x) {
                if fx == 0.0 || (fx > 0.0) != (f0 > 0.0) {
                    let (a, b) = if x < near { (x, near) } else { (near, x) };
                    let fa = if x < near { fx } else { f0 };
                    return Ok(bisect(a, fa, b, 1e-13, eq)?.0);
                }
            }
        }
        if h == window {
            break;
        }
        h = (h * 2.0).min(window);
    }
    Err(Error::NoSignChange {
        lo: near - window,
        hi: near + window,
    })
}
