//! Model files and the prediction pipeline: outliers, `ρ_N`, coefficients.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluct::{
    example_closed_forms, fluctuation_coefficients, EntryLaw, ExampleBranch, FluctuationCoefficients,
    LimitLawJson,
};
use crate::freeprob::{dyson_continue_real, DysonConfig, SpectralMeasure};
use crate::linearize::{example_fixture, linearize, schur_check, Linearization};
use crate::ncalg::NCPolynomial;
use crate::outlier::{
    default_range, find_outliers, find_rho_n, scan_support, Outlier, OutlierOptions, ScanOptions,
    SupportScan,
};
use crate::simulate::{sample_gue, ModelSpec, TailRule, Target};

/// Cap on the default eigenvalue window.
pub const MAX_WINDOW: f64 = 0.5;

/// Contents of `model.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub polynomial: NCPolynomial,
    pub theta: f64,
    pub base_measure: SpectralMeasure,
    #[serde(default = "quantile_rule")]
    pub tail: TailRule,
    pub entry_law: EntryLaw,
    /// A hand-built pencil for `polynomial`; constructed automatically when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linearization: Option<Linearization>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
}

fn quantile_rule() -> TailRule {
    TailRule::Quantile
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.entry_law.validate()?;
        if let Some(w) = self.window {
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::InvalidInput(format!("window {w} must be positive")));
            }
        }
        self.model_spec().validate()
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            polynomial: self.polynomial.clone(),
            theta: self.theta,
            base_measure: self.base_measure.clone(),
            tail: self.tail.clone(),
        }
    }

    /// The configured pencil, certified against the polynomial, or an
    /// automatically constructed one.
    pub fn linearization(&self) -> Result<Linearization> {
        match &self.linearization {
            None => linearize(&self.polynomial),
            Some(l) => {
                let r = certify(l, &self.polynomial, 4, 0x5eed)?;
                if r > 1e-9 {
                    return Err(Error::InvalidInput(format!(
                        "the given linearization does not represent the polynomial (residual {r:.3e})"
                    )));
                }
                Ok(l.clone())
            }
        }
    }
}

/// Largest Schur-complement residual over a few random Hermitian probes of
/// size `n` at a few spectral points.
pub fn certify(l: &Linearization, p: &NCPolynomial, n: usize, seed: u64) -> Result<f64> {
    let k = p.num_generators().max(l.num_generators());
    let probes: Vec<_> = (0..k)
        .map(|i| sample_gue(n, seed.wrapping_add(i as u64)).scale_real(1.0 / (n as f64).sqrt()))
        .collect();
    let mut worst: f64 = 0.0;
    for z in [Complex64::new(0.3, 1.0), Complex64::new(-2.0, 0.5), Complex64::new(5.0, 2.0)] {
        worst = worst.max(schur_check(l, p, &probes, z)?);
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PipelineOptions {
    pub scan: ScanOptions,
    pub outliers: OutlierOptions,
}

impl PipelineOptions {
    /// Uses the same solver settings everywhere.
    pub fn with_dyson(mut self, dyson: DysonConfig) -> Self {
        self.scan.dyson = dyson;
        self.outliers.dyson = dyson;
        self
    }

    pub fn dyson(&self) -> &DysonConfig {
        &self.outliers.dyson
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutlierPrediction {
    pub scan: SupportScan,
    pub outliers: Vec<Outlier>,
}

/// Support scan over the default range and all outliers.
pub fn predict_outliers(cfg: &ModelConfig, l: &Linearization, opts: &PipelineOptions) -> Result<OutlierPrediction> {
    let range = default_range(&cfg.polynomial, &cfg.base_measure, cfg.theta);
    let scan = scan_support(l, &cfg.base_measure, range, &opts.scan)?;
    let outliers = find_outliers(l, &cfg.base_measure, cfg.theta, &scan, &opts.outliers)?;
    Ok(OutlierPrediction { scan, outliers })
}

/// Default eigenvalue window: half the distance to the support and to the
/// nearest other outlier, capped at 0.5.
pub fn default_window(o: &Outlier, scan: &SupportScan, all: &[Outlier]) -> f64 {
    let nearest = all
        .iter()
        .filter(|x| x.rho != o.rho)
        .map(|x| (x.rho - o.rho).abs())
        .fold(f64::INFINITY, f64::min);
    (0.5 * scan.distance_to_support(o.rho)).min(0.5 * nearest).min(MAX_WINDOW)
}

/// `ρ_N` for the tail used at size `n`.
pub fn rho_n_for(cfg: &ModelConfig, l: &Linearization, o: &Outlier, n: usize, window: f64, dyson: &DysonConfig) -> Result<f64> {
    let tail = cfg.model_spec().tail_values(n)?;
    find_rho_n(l, &tail, cfg.theta, o.rho, window, dyson)
}

/// Coefficients of a simple outlier.
pub fn coefficients_for(
    cfg: &ModelConfig,
    l: &Linearization,
    o: &Outlier,
    rho_n: f64,
    dyson: &DysonConfig,
) -> Result<FluctuationCoefficients> {
    if o.multiplicity != 1 {
        return Err(Error::Multiplicity {
            rho: o.rho,
            multiplicity: o.multiplicity,
        });
    }
    fluctuation_coefficients(l, &cfg.base_measure, cfg.theta, o.rho, rho_n, &cfg.entry_law, dyson)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientsReport {
    pub rho: f64,
    #[serde(rename = "rho_N")]
    pub rho_n: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    pub v: f64,
    pub v_tilde: f64,
    pub entry_law: EntryLaw,
    /// Law of `C1 √N (λ - ρ_N)`.
    pub limit_law: LimitLawJson,
}

impl CoefficientsReport {
    pub fn new(c: &FluctuationCoefficients) -> Result<Self> {
        Ok(Self {
            rho: c.rho,
            rho_n: c.rho_n,
            c1: c.c1,
            c2: c.c2,
            v: c.v,
            v_tilde: c.v_tilde,
            entry_law: c.entry_law.clone(),
            limit_law: c.scaled_limit_law()?.to_json(),
        })
    }
}

/// Everything needed to simulate one outlier.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedTarget {
    pub outlier: Outlier,
    pub coefficients: FluctuationCoefficients,
    pub target: Target,
}

/// Computes `ρ_N` and the coefficients for every outlier at size `n`.
pub fn prepare_targets(
    cfg: &ModelConfig,
    l: &Linearization,
    pred: &OutlierPrediction,
    n: usize,
    window: Option<f64>,
    dyson: &DysonConfig,
) -> Result<Vec<PreparedTarget>> {
    pred.outliers
        .iter()
        .map(|o| {
            let w = window
                .or(cfg.window)
                .unwrap_or_else(|| default_window(o, &pred.scan, &pred.outliers));
            let rho_n = rho_n_for(cfg, l, o, n, w, dyson)?;
            let coefficients = coefficients_for(cfg, l, o, rho_n, dyson)?;
            Ok(PreparedTarget {
                outlier: *o,
                target: Target {
                    rho: o.rho,
                    rho_n,
                    c1: coefficients.c1,
                    window: w,
                },
                coefficients,
            })
        })
        .collect()
}

/// `model.json` for the worked example.
pub fn example_config(theta: f64) -> ModelConfig {
    ModelConfig {
        polynomial: crate::ncalg::example_polynomial(),
        theta,
        base_measure: SpectralMeasure::point_mass(0.0),
        tail: TailRule::Quantile,
        entry_law: EntryLaw::UniformSqrt3,
        linearization: None,
        window: None,
    }
}

/// Relative tolerance of [`verify_example`].
pub const VERIFY_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationRow {
    pub branch: String,
    pub quantity: String,
    pub computed: f64,
    pub expected: f64,
    pub rel_error: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub theta: f64,
    pub rows: Vec<VerificationRow>,
    pub diagnostics: Vec<String>,
    pub passed: bool,
}

fn row(branch: &str, quantity: &str, computed: f64, expected: f64) -> VerificationRow {
    let rel_error = (computed - expected).abs() / expected.abs().max(f64::MIN_POSITIVE);
    VerificationRow {
        branch: branch.into(),
        quantity: quantity.into(),
        computed,
        expected,
        rel_error,
        pass: rel_error < VERIFY_TOL,
    }
}

/// Runs the general machinery on the worked example (fixture pencil, `a = 0`,
/// uniform entries) and compares with the closed forms.
pub fn verify_example(theta: f64, opts: &PipelineOptions) -> Result<VerificationReport> {
    let cf = example_closed_forms(theta)?;
    let mut cfg = example_config(theta);
    cfg.linearization = Some(example_fixture());
    let l = cfg.linearization()?;
    let pred = predict_outliers(&cfg, &l, opts)?;
    let dyson = opts.dyson();

    let mut rows = Vec::new();
    let mut diagnostics = Vec::new();
    if cf.degenerate_plus {
        diagnostics.push(
            "θ² = 2: the positive root of the reduced equation sits on the support edge 4 and is not an outlier".to_string(),
        );
    }
    let expected: Vec<(&str, ExampleBranch)> = [("-", Some(cf.minus)), ("+", cf.plus)]
        .into_iter()
        .filter_map(|(b, x)| x.map(|x| (b, x)))
        .collect();
    rows.push(row(
        "all",
        "outlier count",
        pred.outliers.len() as f64,
        expected.len() as f64,
    ));
    for (name, br) in &expected {
        let Some(o) = pred.outliers.iter().find(|o| (o.rho < 0.0) == (br.rho < 0.0)) else {
            diagnostics.push(format!("no outlier found for branch {name}"));
            continue;
        };
        let sol = dyson_continue_real(&l, &cfg.base_measure, o.rho, dyson)?;
        let c = coefficients_for(&cfg, &l, o, o.rho, dyson)?;
        rows.push(row(name, "rho", o.rho, br.rho));
        rows.push(row(name, "g", sol.g[(0, 0)].re, br.g));
        rows.push(row(name, "C1", c.c1, br.c1));
        rows.push(row(name, "C2", c.c2, br.c2));
        rows.push(row(name, "v", c.v, br.v));
    }
    let passed = rows.iter().all(|r| r.pass) && diagnostics.iter().all(|d| !d.starts_with("no outlier"));
    Ok(VerificationReport {
        theta,
        rows,
        diagnostics,
        passed,
    })
}
