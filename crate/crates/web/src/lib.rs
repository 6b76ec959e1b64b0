//! Browser bindings: simulate a config, probe a compressor's moments and
//! tabulate maximal learning rates. Every entry point takes and returns JSON
//! or TOML text so the page needs no generated type glue.

use mcm_core::algorithms::gamma_bounds;
use mcm_core::compressors::{CompressorKind, CompressorSpec};
use mcm_core::experiment::{run_on, ExperimentConfig, RunOptions};
use mcm_core::validation::check_compressor_moments;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Longest run the page accepts, in algorithm-seed-iterations.
const WORK_LIMIT: u64 = 5_000_000;

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

/// Runs an experiment given as TOML and returns the per-algorithm mean
/// `log10` excess-loss curves.
pub fn simulate_toml(config: &str) -> Result<String, String> {
    let cfg = ExperimentConfig::from_toml_str(config).map_err(|e| e.to_string())?;
    let work = cfg.iterations * cfg.seeds.len() as u64 * cfg.algorithms.len() as u64 * cfg.problem.workers as u64;
    if work > WORK_LIMIT {
        return Err(format!("run too large for the browser ({work} worker-rounds, limit {WORK_LIMIT})"));
    }
    let problem = cfg.problem.build().map_err(|e| e.to_string())?;
    let result = run_on(&cfg, &problem, &RunOptions::default()).map_err(|e| e.to_string())?;
    let curves: Vec<Value> = result
        .algorithms
        .iter()
        .map(|a| {
            json!({
                "label": a.label,
                "gamma_max": finite_or_null(a.gamma_max),
                "saturation": a.summary.saturation_level,
                "diverged": a.traces.iter().filter(|t| t.status == mcm_core::RunStatus::Diverged).count(),
                "mean_log10": a.summary.mean_log10,
                "std_log10": a.summary.std_log10,
            })
        })
        .collect();
    Ok(json!({ "l": problem.l, "mu": problem.mu, "curves": curves }).to_string())
}

/// Monte-Carlo moments of a compressor, e.g. `{"kind":"quantize","s":1}`.
pub fn moments_json(kind: &str, d: usize, trials: usize, seed: u64) -> Result<String, String> {
    let kind: CompressorKind = serde_json::from_str(kind).map_err(|e| e.to_string())?;
    let spec = CompressorSpec::new(kind, d).map_err(|e| e.to_string())?;
    let report = check_compressor_moments(&spec, d, trials, seed).map_err(|e| e.to_string())?;
    let bits = spec.bit_cost().0;
    Ok(json!({ "omega": spec.omega, "bits": bits, "dense_bits": 32 * d as u64, "report": report }).to_string())
}

/// The individual learning-rate limits and their minimum.
pub fn gamma_table_json(l: f64, omega_up: f64, omega_dwn: f64, workers: usize) -> Result<String, String> {
    let nonnegative = |x: f64| x >= 0.0;
    if l.is_nan() || l <= 0.0 || !nonnegative(omega_up) || !nonnegative(omega_dwn) || workers == 0 {
        return Err("need L > 0, ω ≥ 0 and at least one worker".into());
    }
    let b = gamma_bounds(l, omega_up, omega_dwn, workers);
    Ok(json!({
        "up": finite_or_null(b.up),
        "dwn": finite_or_null(b.dwn),
        "upsilon": finite_or_null(b.upsilon),
        "degraded": finite_or_null(b.degraded),
        "gamma_max": finite_or_null(b.non_degraded_max()),
    })
    .to_string())
}

#[wasm_bindgen]
pub fn simulate(config: &str) -> Result<String, JsError> {
    simulate_toml(config).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn compressor_moments(kind: &str, d: usize, trials: usize, seed: u32) -> Result<String, JsError> {
    moments_json(kind, d, trials, u64::from(seed)).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn gamma_table(l: f64, omega_up: f64, omega_dwn: f64, workers: usize) -> Result<String, JsError> {
    gamma_table_json(l, omega_up, omega_dwn, workers).map_err(|e| JsError::new(&e))
}
