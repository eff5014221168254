//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each export takes plain numbers and returns a JSON string, so the page
//! needs no bundler or serialization glue beyond `JSON.parse`.

use qrisk_core::ae_sim::Decision;
use qrisk_core::qae_sim;
use qrisk_core::risk_engine::{var_classical, var_qae, var_qsp, BisectionOptions, QspParams};
use qrisk_core::scenario_gen::sample_normal_scenarios;
use qrisk_core::threshold_fit::{FitCache, ThresholdSpec};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

#[derive(Debug, Serialize)]
pub struct Profile {
    pub xs: Vec<f64>,
    pub poly: Vec<f64>,
    pub ideal: Vec<f64>,
    pub objective: f64,
    pub gap: (f64, f64),
}

/// Fitted step polynomial and its target sampled on `points` amplitudes.
pub fn threshold_profile(mu: f64, delta: f64, degree: usize, points: usize) -> qrisk_core::Result<Profile> {
    let spec = ThresholdSpec::step(mu, delta, 1e-3, degree)?;
    let fit = FitCache::in_memory().get_or_fit(&spec)?;
    let ideal = spec.ideal();
    let n = points.max(2);
    let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let poly = xs.iter().map(|&x| fit.series.eval(x)).collect::<qrisk_core::Result<_>>()?;
    Ok(Profile {
        ideal: xs.iter().map(|&x| ideal.value(x)).collect(),
        xs,
        poly,
        objective: fit.objective,
        gap: spec.gap(),
    })
}

#[derive(Debug, Serialize)]
pub struct Round {
    pub mu: f64,
    pub probability: f64,
    pub decision: Decision,
    pub ae_calls: u64,
}

#[derive(Debug, Serialize)]
pub struct Trace {
    pub method: &'static str,
    pub classical: f64,
    pub threshold_value: f64,
    pub error: f64,
    pub total_oracle_calls: u64,
    pub rounds: Vec<Round>,
}

/// One VaR bisection on a sampled normal scenario set. `method` is `qsp`
/// (with `param` the degree) or `qae` (with `param` the qubit count).
#[allow(clippy::too_many_arguments)]
pub fn var_trace(
    method: &str,
    param: u32,
    n: usize,
    mean: f64,
    sd: f64,
    seed: u64,
    alpha: f64,
    eps_a: f64,
) -> qrisk_core::Result<Trace> {
    let set = sample_normal_scenarios(n, mean, sd, seed)?;
    let classical = var_classical(&set, alpha)?;
    let opts = BisectionOptions::new(eps_a, 0.95)?;
    let (method, r) = match method {
        "qae" => ("qae", var_qae(&set, alpha, param, &opts)?),
        _ => {
            let d = param as usize;
            let params = QspParams::new(d, 8.0 / d as f64);
            ("qsp", var_qsp(&set, alpha, &params, &opts, &FitCache::in_memory())?)
        }
    };
    Ok(Trace {
        method,
        classical,
        threshold_value: r.threshold_value,
        error: (r.threshold_value - classical).abs(),
        total_oracle_calls: r.total_oracle_calls,
        rounds: r
            .trace
            .iter()
            .map(|t| Round {
                mu: t.mu,
                probability: t.probability,
                decision: t.decision,
                ae_calls: t.intervals.iter().map(|i| i.oracle_calls).sum(),
            })
            .collect(),
    })
}

#[wasm_bindgen(js_name = thresholdProfile)]
pub fn threshold_profile_js(mu: f64, delta: f64, degree: usize, points: usize) -> Result<String, JsError> {
    let p = threshold_profile(mu, delta, degree, points).map_err(js_err)?;
    serde_json::to_string(&p).map_err(js_err)
}

#[wasm_bindgen(js_name = qaePmf)]
pub fn qae_pmf_js(value: f64, m: u32) -> Result<Vec<f64>, JsError> {
    qae_sim::qae_pmf(value, m).map_err(js_err)
}

#[wasm_bindgen(js_name = varTrace)]
#[allow(clippy::too_many_arguments)]
pub fn var_trace_js(
    method: &str,
    param: u32,
    n: usize,
    mean: f64,
    sd: f64,
    seed: u32,
    alpha: f64,
    eps_a: f64,
) -> Result<String, JsError> {
    let t = var_trace(method, param, n, mean, sd, u64::from(seed), alpha, eps_a).map_err(js_err)?;
    serde_json::to_string(&t).map_err(js_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_tracks_the_step() {
        let p = threshold_profile(0.5, 0.1, 60, 101).unwrap();
        assert_eq!(p.xs.len(), 101);
        assert!(p.poly.iter().all(|v| v.abs() <= 1.0));
        assert!((p.poly[20] - p.ideal[20]).abs() <= 2.0 * p.objective + 1e-6);
    }

    #[test]
    fn trace_ends_near_classical() {
        let t = var_trace("qae", 9, 2000, 0.5, 0.09, 1, 0.99, 1e-3).unwrap();
        assert!(!t.rounds.is_empty());
        assert!(t.error < 0.02);
        let t = var_trace("qsp", 100, 2000, 0.5, 0.09, 1, 0.99, 1e-3).unwrap();
        assert!(t.error < 0.02);
    }
}
