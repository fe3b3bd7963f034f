//! Python bindings. Models are passed as `model.json` text; results come
//! back as JSON strings or plain lists.

use ::polyspike::pipeline::{
    coefficients_for, predict_outliers, prepare_targets, verify_example as verify, CoefficientsReport, ModelConfig,
    PipelineOptions,
};
use ::polyspike::simulate::run_trials;
use ::polyspike::Error;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Json(_)
        | Error::InvalidInput(_)
        | Error::NotSelfAdjoint
        | Error::DimensionMismatch(_)
        | Error::NonFinite
        | Error::NotHermitian(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json<T: Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Linearization of the model polynomial as JSON.
#[pyfunction]
fn linearize(config: &str) -> PyResult<String> {
    let cfg = ModelConfig::from_json(config).map_err(to_py)?;
    json(&cfg.linearization().map_err(to_py)?)
}

/// Outliers of the limiting model as a JSON array.
#[pyfunction]
fn outliers(py: Python<'_>, config: &str) -> PyResult<String> {
    let cfg = ModelConfig::from_json(config).map_err(to_py)?;
    let pred = py
        .detach(|| {
            let l = cfg.linearization()?;
            predict_outliers(&cfg, &l, &PipelineOptions::default())
        })
        .map_err(to_py)?;
    json(&pred.outliers)
}

/// Fluctuation coefficients of every outlier. With `n`, `rho_N` uses the
/// tail at that size; otherwise `rho_N = rho`.
#[pyfunction]
#[pyo3(signature = (config, n=None))]
fn coefficients(py: Python<'_>, config: &str, n: Option<usize>) -> PyResult<String> {
    let cfg = ModelConfig::from_json(config).map_err(to_py)?;
    let reports = py
        .detach(|| -> ::polyspike::Result<Vec<CoefficientsReport>> {
            let l = cfg.linearization()?;
            let opts = PipelineOptions::default();
            let pred = predict_outliers(&cfg, &l, &opts)?;
            match n {
                Some(n) => prepare_targets(&cfg, &l, &pred, n, None, opts.dyson())?
                    .iter()
                    .map(|t| CoefficientsReport::new(&t.coefficients))
                    .collect(),
                None => pred
                    .outliers
                    .iter()
                    .map(|o| CoefficientsReport::new(&coefficients_for(&cfg, &l, o, o.rho, opts.dyson())?))
                    .collect(),
            }
        })
        .map_err(to_py)?;
    json(&reports)
}

/// Normalized samples `C1 √N (λ - ρ_N)` for outlier `index`.
#[pyfunction]
#[pyo3(signature = (config, n, trials, seed=0, index=0))]
fn simulate(py: Python<'_>, config: &str, n: usize, trials: usize, seed: u64, index: usize) -> PyResult<Vec<f64>> {
    let cfg = ModelConfig::from_json(config).map_err(to_py)?;
    py.detach(|| {
        let l = cfg.linearization()?;
        let opts = PipelineOptions::default();
        let pred = predict_outliers(&cfg, &l, &opts)?;
        let targets = prepare_targets(&cfg, &l, &pred, n, None, opts.dyson())?;
        let t = targets
            .get(index)
            .ok_or_else(|| Error::InvalidInput(format!("outlier {index} out of range ({} found)", targets.len())))?;
        let mut runs = run_trials(&cfg.model_spec(), &cfg.entry_law, n, trials, seed, &[t.target])?;
        Ok(runs.remove(0).samples)
    })
    .map_err(to_py)
}

/// Closed-form check of the worked example at `theta`, as JSON.
#[pyfunction]
fn verify_example(py: Python<'_>, theta: f64) -> PyResult<String> {
    let report = py.detach(|| verify(theta, &PipelineOptions::default())).map_err(to_py)?;
    json(&report)
}

#[pymodule(name = "polyspike")]
fn py_polyspike(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(linearize, m)?)?;
    m.add_function(wrap_pyfunction!(outliers, m)?)?;
    m.add_function(wrap_pyfunction!(coefficients, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(verify_example, m)?)?;
    Ok(())
}
