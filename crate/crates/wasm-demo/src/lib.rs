//! Browser bindings for three small interactive views: the alpha-epsilon
//! curve, a single perturbed conditional, and PeGS vs PeGS.rs marginals on
//! the bundled hospital data.
//!
//! The plain functions work natively so they can be tested without a
//! browser; the `#[wasm_bindgen]` wrappers only serialise to JSON.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use pegs_core::blocks::perturbed_distribution;
use pegs_core::generator::generate_hospital;
use pegs_core::{alpha_for_epsilon, disintegrate, synthesize, PrivacySpec, SeedPool};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub epsilon: f64,
    pub alpha: f64,
}

/// `points` log-spaced epsilons in `[eps_min, eps_max]` with their alpha.
pub fn alpha_curve_points(n_features: usize, eps_min: f64, eps_max: f64, points: usize) -> Result<Vec<CurvePoint>, String> {
    if !(eps_min > 0.0 && eps_max >= eps_min) || points < 2 {
        return Err("need 0 < eps_min <= eps_max and at least two points".into());
    }
    let (lo, hi) = (eps_min.ln(), eps_max.ln());
    (0..points)
        .map(|k| {
            let epsilon = (lo + (hi - lo) * k as f64 / (points - 1) as f64).exp();
            let alpha = alpha_for_epsilon(epsilon, n_features).map_err(|e| e.to_string())?;
            Ok(CurvePoint { epsilon, alpha })
        })
        .collect()
}

pub fn perturbed(counts: &[u32], alpha: f64) -> Result<Vec<f64>, String> {
    if counts.is_empty() {
        return Err("no categories".into());
    }
    if !alpha.is_finite() || alpha < 0.0 {
        return Err("alpha must be finite and non-negative".into());
    }
    let total: u64 = counts.iter().map(|&c| c as u64).sum();
    let mut out = Vec::new();
    perturbed_distribution(counts, total, alpha, &mut out).ok_or("empty row with alpha = 0 is undefined")?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct Histograms {
    pub feature: String,
    pub labels: Vec<String>,
    pub original: Vec<f64>,
    pub pegs: Vec<f64>,
    pub pegs_rs: Vec<f64>,
    pub alpha_pegs: f64,
    pub alpha_pegs_rs: f64,
}

fn frequencies(ds: &pegs_core::Dataset, i: usize) -> Vec<f64> {
    let counts = ds.counts(i);
    let n = ds.n_rows().max(1) as f64;
    counts.iter().map(|&c| c as f64 / n).collect()
}

/// Marginal of `feature` in the original data and in one synthetic set from
/// each sampler. Both samplers get the same alpha: per-record `epsilon` for
/// PeGS and `epsilon` for the whole block in PeGS.rs.
pub fn compare(rows: usize, epsilon: f64, block_size: usize, n: usize, feature: &str, seed: u64) -> Result<Histograms, String> {
    let err = |e: pegs_core::PegsError| e.to_string();
    if rows == 0 || n == 0 {
        return Err("rows and n must be positive".into());
    }
    let data = generate_hospital(rows, seed);
    let schema = data.schema_arc().clone();
    let i = schema.require(feature).map_err(err)?;
    let blocks = disintegrate(&data, 2).map_err(err)?;
    let pool = SeedPool::new(data.clone()).map_err(err)?;
    let m = schema.len();
    let single = PrivacySpec::dp_per_sample(epsilon, m).map_err(err)?;
    let block = PrivacySpec::dp_per_block(epsilon, block_size, m).map_err(err)?;
    let a = synthesize(&blocks, &single, &pool, n, 1, seed).map_err(err)?;
    let b = synthesize(&blocks, &block, &pool, n, 1, seed).map_err(err)?;
    Ok(Histograms {
        feature: feature.to_string(),
        labels: schema.feature(i).categories.clone(),
        original: frequencies(&data, i),
        pegs: frequencies(&a[0], i),
        pegs_rs: frequencies(&b[0], i),
        alpha_pegs: single.derived_alpha.unwrap_or(f64::NAN),
        alpha_pegs_rs: block.derived_alpha.unwrap_or(f64::NAN),
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn alpha_curve(n_features: usize, eps_min: f64, eps_max: f64, points: usize) -> Result<String, JsError> {
    to_js(alpha_curve_points(n_features, eps_min, eps_max, points))
}

#[wasm_bindgen]
pub fn perturbed_conditional(counts: Vec<u32>, alpha: f64) -> Result<Vec<f64>, JsError> {
    perturbed(&counts, alpha).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn histograms(rows: usize, epsilon: f64, block_size: usize, n: usize, feature: &str, seed: u64) -> Result<String, JsError> {
    to_js(compare(rows, epsilon, block_size, n, feature, seed))
}

#[wasm_bindgen]
pub fn feature_names() -> String {
    let schema = pegs_core::generator::hospital_schema();
    serde_json::to_string(&schema.features().iter().map(|f| &f.name).collect::<Vec<_>>()).unwrap_or_default()
}
