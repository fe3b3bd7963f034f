//! Monte Carlo sampling of the spiked polynomial model and goodness-of-fit
//! statistics.
//!
//! Random streams: the master seed initializes a ChaCha8 generator and trial
//! `k` uses stream `k` of that key (`set_stream(k)`), so every trial is
//! reproducible on its own and results do not depend on the worker count.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluct::{Cdf, EntryLaw, LimitLaw};
use crate::freeprob::{DysonConfig, SpectralMeasure};
use crate::linearize::Linearization;
use crate::linmat::{ComplexMatrix, HermitianMatrix};
use crate::ncalg::NCPolynomial;
use crate::outlier::{scan_support, ScanOptions};

pub const MIN_N: usize = 16;

/// Abort threshold for the fraction of trials without exactly one
/// eigenvalue in the window.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.2;

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WignerSpec {
    pub n: usize,
    pub entry: EntryLaw,
    pub seed: u64,
}

impl WignerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n < MIN_N {
            return Err(Error::InvalidInput(format!("N = {} is below {MIN_N}", self.n)));
        }
        self.entry.validate()
    }
}

/// Generator for trial `index` under `master`.
pub fn trial_rng(master: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// Fills an `n×n` Wigner matrix: the diagonal first, then the strict upper
/// triangle row by row, each entry `(ξ + iη)/√2`.
pub fn wigner_from_rng<R: Rng + ?Sized>(rng: &mut R, n: usize, entry: &EntryLaw) -> ComplexMatrix {
    let mut w = ComplexMatrix::zeros(n, n);
    for i in 0..n {
        w[(i, i)] = Complex64::new(entry.sample(rng), 0.0);
    }
    for i in 0..n {
        for j in i + 1..n {
            let xi = entry.sample(rng);
            let eta = entry.sample(rng);
            let z = Complex64::new(xi, eta) * FRAC_1_SQRT_2;
            w[(i, j)] = z;
            w[(j, i)] = z.conj();
        }
    }
    w
}

pub fn sample_wigner(spec: &WignerSpec) -> Result<HermitianMatrix> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    HermitianMatrix::new(wigner_from_rng(&mut rng, spec.n, &spec.entry))
}

/// Unnormalized GUE matrix (any size, no minimum).
pub fn sample_gue(n: usize, seed: u64) -> ComplexMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = ComplexMatrix::zeros(n, n);
    for i in 0..n {
        w[(i, i)] = Complex64::new(StandardNormal.sample(&mut rng), 0.0);
    }
    for i in 0..n {
        for j in i + 1..n {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            let z = Complex64::new(re, im) * FRAC_1_SQRT_2;
            w[(i, j)] = z;
            w[(j, i)] = z.conj();
        }
    }
    w
}

/// How the `N - 1` non-spike diagonal entries of `A_N` are chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum TailRule {
    /// `d_i = F^{-1}((i - 1/2)/(N - 1))` for the base measure's distribution
    /// function `F`.
    Quantile,
    /// Fixed values; the model then only exists for `N = len + 1`.
    Explicit { values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub polynomial: NCPolynomial,
    pub theta: f64,
    pub base_measure: SpectralMeasure,
    pub tail: TailRule,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.polynomial.num_generators() != 2 {
            return Err(Error::InvalidInput("the model polynomial must be in X1, X2".into()));
        }
        if !self.polynomial.is_self_adjoint() {
            return Err(Error::NotSelfAdjoint);
        }
        if !self.theta.is_finite() {
            return Err(Error::NonFinite);
        }
        let (lo, hi) = match &self.tail {
            TailRule::Quantile => self.base_measure.support(),
            TailRule::Explicit { values } => values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x))),
        };
        if self.theta >= lo && self.theta <= hi {
            return Err(Error::InvalidInput(format!(
                "θ = {} lies inside the tail's range [{lo}, {hi}]",
                self.theta
            )));
        }
        Ok(())
    }

    /// `d_1, ..., d_{N-1}`.
    pub fn tail_values(&self, n: usize) -> Result<Vec<f64>> {
        match &self.tail {
            TailRule::Quantile => {
                let k = n - 1;
                Ok((1..=k)
                    .map(|i| self.base_measure.quantile((i as f64 - 0.5) / k as f64))
                    .collect())
            }
            TailRule::Explicit { values } => {
                if values.len() + 1 != n {
                    return Err(Error::DimensionMismatch(format!(
                        "explicit tail of length {} for N = {n}",
                        values.len()
                    )));
                }
                Ok(values.clone())
            }
        }
    }

    /// Diagonal of `A_N = diag(θ, d_1, ..., d_{N-1})`.
    pub fn a_diagonal(&self, n: usize) -> Result<Vec<f64>> {
        let mut d = Vec::with_capacity(n);
        d.push(self.theta);
        d.extend(self.tail_values(n)?);
        Ok(d)
    }
}

/// `M_N = P(W/√N, A_N)`.
pub fn build_model(w: &HermitianMatrix, model: &ModelSpec) -> Result<HermitianMatrix> {
    let n = w.dim();
    let a = HermitianMatrix::from_real_diagonal(&model.a_diagonal(n)?);
    let x = HermitianMatrix::symmetrize(&w.as_matrix().scale_real(1.0 / (n as f64).sqrt()))?;
    model.polynomial.evaluate_hermitian(&[x, a])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    /// Largest eigenvalue in the window, if any.
    pub lambda: Option<f64>,
    pub count: usize,
    pub trial: u64,
}

/// Counts eigenvalues in `(ρ - window, ρ + window)` and keeps the largest.
pub fn extract_outlier(eigs: &[f64], rho: f64, window: f64) -> TrialResult {
    let inside = eigs.iter().filter(|&&x| x > rho - window && x < rho + window);
    let (count, lambda) = inside.fold((0, None), |(c, m): (usize, Option<f64>), &x| {
        (c + 1, Some(m.map_or(x, |m| m.max(x))))
    });
    TrialResult {
        lambda,
        count,
        trial: 0,
    }
}

/// An outlier to track across trials.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub rho: f64,
    pub rho_n: f64,
    pub c1: f64,
    pub window: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSamples {
    pub target: Target,
    /// `C1 √N (λ - ρ_N)` for every retained trial, in trial order.
    pub samples: Vec<f64>,
    pub excluded: usize,
    pub trials: usize,
}

impl TargetSamples {
    pub fn excluded_fraction(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.excluded as f64 / self.trials as f64
        }
    }
}

/// Eigenvalues of one draw of `M_N` for trial `index`.
pub fn trial_eigenvalues(model: &ModelSpec, entry: &EntryLaw, n: usize, master: u64, index: u64) -> Result<Vec<f64>> {
    let mut rng = trial_rng(master, index);
    let w = HermitianMatrix::new(wigner_from_rng(&mut rng, n, entry))?;
    build_model(&w, model)?.eigenvalues()
}

/// Runs `trials` independent draws and collects the normalized statistic
/// for every target. Fails if more than 20% of the trials have to be
/// excluded for any target.
pub fn run_trials(
    model: &ModelSpec,
    entry: &EntryLaw,
    n: usize,
    trials: usize,
    seed: u64,
    targets: &[Target],
) -> Result<Vec<TargetSamples>> {
    model.validate()?;
    WignerSpec {
        n,
        entry: entry.clone(),
        seed,
    }
    .validate()?;
    let per_trial: Vec<Vec<TrialResult>> = (0..trials as u64)
        .into_par_iter()
        .map(|k| {
            let eigs = trial_eigenvalues(model, entry, n, seed, k)?;
            Ok(targets
                .iter()
                .map(|t| TrialResult {
                    trial: k,
                    ..extract_outlier(&eigs, t.rho, t.window)
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let sqrt_n = (n as f64).sqrt();
    let mut out = Vec::with_capacity(targets.len());
    for (j, t) in targets.iter().enumerate() {
        let mut samples = Vec::with_capacity(trials);
        let mut excluded = 0;
        for r in per_trial.iter().map(|row| row[j]) {
            match (r.count, r.lambda) {
                (1, Some(l)) => samples.push(t.c1 * sqrt_n * (l - t.rho_n)),
                _ => excluded += 1,
            }
        }
        if trials > 0 && excluded as f64 > MAX_EXCLUDED_FRACTION * trials as f64 {
            return Err(Error::ExcludedFraction { excluded, trials });
        }
        out.push(TargetSamples {
            target: *t,
            samples,
            excluded,
            trials,
        });
    }
    Ok(out)
}

/// Empirical distribution function of a sample.
#[derive(Clone, Debug)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(samples: &[f64]) -> Self {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self { sorted }
    }
}

impl Cdf for Ecdf {
    fn cdf(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&s| s <= x) as f64 / self.sorted.len() as f64
    }

    fn cdf_left(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&s| s < x) as f64 / self.sorted.len() as f64
    }
}

/// Kolmogorov–Smirnov distance `sup_x |F_n(x) - F(x)|`.
pub fn ks_statistic(samples: &[f64], law: &dyn Cdf) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("KS statistic of an empty sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let x = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == x {
            j += 1;
        }
        d = d
            .max((j as f64 / n - law.cdf(x)).abs())
            .max((law.cdf_left(x) - i as f64 / n).abs());
        i = j;
    }
    Ok(d)
}

/// Asymptotic Kolmogorov critical value `c_α / √n` at level 5%.
pub fn ks_critical_5pct(n: usize) -> f64 {
    1.358 / (n as f64).sqrt()
}

/// 5% critical value of the KS distance to a normal law whose mean and
/// variance were estimated from the same sample (Lilliefors).
pub fn lilliefors_critical_5pct(n: usize) -> f64 {
    0.886 / (n as f64).sqrt()
}

/// KS distance to the normal law with the sample's own mean and variance.
pub fn ks_matched_gaussian(samples: &[f64]) -> Result<f64> {
    let m = Moments::of(samples);
    let law = LimitLaw::new(1.0, 0.0, m.variance, EntryLaw::GueComplex)?;
    let centered: Vec<f64> = samples.iter().map(|x| x - m.mean).collect();
    ks_statistic(&centered, &law)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
}

impl Moments {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                count: 0,
                mean: f64::NAN,
                variance: f64::NAN,
                skewness: f64::NAN,
                excess_kurtosis: f64::NAN,
            };
        }
        let nf = n as f64;
        let mean = xs.iter().sum::<f64>() / nf;
        let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
        let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / nf;
        let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / nf;
        Self {
            count: n,
            mean,
            variance: if n > 1 { m2 * nf / (nf - 1.0) } else { 0.0 },
            skewness: if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 },
            excess_kurtosis: if m2 > 0.0 { m4 / (m2 * m2) - 3.0 } else { 0.0 },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlobalLawOptions {
    pub eta: f64,
    pub grid_points: usize,
    pub dyson: DysonConfig,
}

impl Default for GlobalLawOptions {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            grid_points: 4000,
            dyson: DysonConfig::default(),
        }
    }
}

/// Predicted distribution function obtained by integrating a sampled density.
#[derive(Clone, Debug)]
pub struct GridCdf {
    grid: Vec<f64>,
    cum: Vec<f64>,
}

impl GridCdf {
    /// Trapezoid-integrates `density` over `grid` and normalizes to mass 1.
    pub fn from_density(grid: &[f64], density: &[f64]) -> Result<Self> {
        if grid.len() < 2 || grid.len() != density.len() {
            return Err(Error::DimensionMismatch("density grid".into()));
        }
        let mut cum = vec![0.0; grid.len()];
        for i in 1..grid.len() {
            let h = grid[i] - grid[i - 1];
            cum[i] = cum[i - 1] + 0.5 * h * (density[i].max(0.0) + density[i - 1].max(0.0));
        }
        let total = *cum.last().expect("nonempty");
        if !(total > 0.0) {
            return Err(Error::InvalidInput("density has no mass on the grid".into()));
        }
        for c in &mut cum {
            *c /= total;
        }
        Ok(Self {
            grid: grid.to_vec(),
            cum,
        })
    }
}

impl Cdf for GridCdf {
    fn cdf(&self, x: f64) -> f64 {
        let k = self.grid.partition_point(|&g| g <= x);
        if k == 0 {
            return 0.0;
        }
        if k == self.grid.len() {
            return 1.0;
        }
        let (x0, x1) = (self.grid[k - 1], self.grid[k]);
        let t = (x - x0) / (x1 - x0);
        self.cum[k - 1] + t * (self.cum[k] - self.cum[k - 1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalLawReport {
    pub n: usize,
    pub seed: u64,
    pub distance: f64,
    pub eta: f64,
    pub grid_points: usize,
}

/// Sup-distance between the spectral distribution of one draw of `M_N` and
/// the limiting law obtained from the model's Cauchy transform.
pub fn global_law_check(
    model: &ModelSpec,
    l: &Linearization,
    entry: &EntryLaw,
    n: usize,
    seed: u64,
    opts: &GlobalLawOptions,
) -> Result<GlobalLawReport> {
    model.validate()?;
    let spec = WignerSpec {
        n,
        entry: entry.clone(),
        seed,
    };
    let eigs = build_model(&sample_wigner(&spec)?, model)?.eigenvalues()?;
    let lo = eigs[0] - 1.0;
    let hi = eigs[n - 1] + 1.0;
    let scan = scan_support(
        l,
        &model.base_measure,
        (lo, hi),
        &ScanOptions {
            grid_points: opts.grid_points,
            eta: opts.eta,
            refine_edges: false,
            dyson: opts.dyson,
            ..ScanOptions::default()
        },
    )?;
    let predicted = GridCdf::from_density(&scan.grid, &scan.density)?;
    Ok(GlobalLawReport {
        n,
        seed,
        distance: ks_statistic(&eigs, &predicted)?,
        eta: opts.eta,
        grid_points: opts.grid_points,
    })
}
