//! Browser bindings for the demo page in `www/`. Every export takes plain
//! numbers or JSON text and returns JSON text.

use serde::Serialize;
use serde_json::json;
use shiftweigh::bounds::BoundInputs;
use shiftweigh::estimators::kmm_estimate_with_weights;
use shiftweigh::kmm::SolverOptions;
use shiftweigh::scenarios::{builtin_scenarios, compare_estimators, scenario_by_id, EstimatorConfig, HarnessOptions};
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json(v: &impl Serialize) -> Result<String, JsError> {
    serde_json::to_string(v).map_err(js_err)
}

/// `[{id, description, dim, b_true, ey_te}]` for the builtin scenarios.
#[wasm_bindgen]
pub fn scenarios() -> Result<String, JsError> {
    let list: Vec<_> = builtin_scenarios()
        .iter()
        .map(|s| json!({ "id": s.id(), "description": s.description(), "dim": s.dim(), "b_true": s.b_true(), "ey_te": s.ey_te() }))
        .collect();
    to_json(&list)
}

/// Bound totals for `n_tr = n_te = n` at `points` log-spaced sizes in `[n_min, n_max]`.
///
/// `inputs_json` is a full bound-input object; its `n_tr` and `n_te` are
/// overwritten. Sizes where the bound is undefined get `total: null`.
#[wasm_bindgen]
pub fn bound_curve(inputs_json: &str, n_min: u32, n_max: u32, points: u32) -> Result<String, JsError> {
    let base: BoundInputs = serde_json::from_str(inputs_json).map_err(js_err)?;
    if n_min < 1 || n_max < n_min || points < 2 {
        return Err(JsError::new("need 1 <= n_min <= n_max and at least two points"));
    }
    let (lo, hi) = (f64::from(n_min).ln(), f64::from(n_max).ln());
    let mut rows = Vec::with_capacity(points as usize);
    let mut last = 0;
    for k in 0..points {
        let n = (lo + (hi - lo) * f64::from(k) / f64::from(points - 1)).exp().round() as u64;
        if n == last {
            continue;
        }
        last = n;
        let inputs = BoundInputs { n_tr: n, n_te: n, ..base.clone() };
        rows.push(match inputs.evaluate() {
            Ok(v) => json!({ "n": n, "total": v.total, "terms": v.terms }),
            Err(e) => json!({ "n": n, "total": null, "error": e.to_string() }),
        });
    }
    to_json(&rows)
}

/// KMM weights on a seeded sample of a one-dimensional scenario, alongside the
/// true density ratio at the same points and on a plotting grid.
///
/// `box_upper <= 0` selects the scenario's true bound.
#[wasm_bindgen]
pub fn kmm_weights(scenario: &str, n_tr: u32, n_te: u32, seed: u64, box_upper: f64) -> Result<String, JsError> {
    let s = scenario_by_id(scenario).map_err(js_err)?;
    if s.dim() != 1 {
        return Err(JsError::new("the weights plot needs a one-dimensional scenario"));
    }
    let b = if box_upper > 0.0 { box_upper } else { s.b_true() };
    let sample = s.sample_seeded(seed, n_tr as usize, n_te as usize);
    let (report, w) =
        kmm_estimate_with_weights(&sample.train, &sample.test, s.kernel(), b, &SolverOptions::default()).map_err(js_err)?;
    let x: Vec<f64> = sample.train.features().rows().map(|r| r[0]).collect();
    let grid: Vec<f64> = (0..=200).map(|i| f64::from(i) / 200.0).collect();
    let ratio: Vec<f64> = grid.iter().map(|g| s.beta(&[*g])).collect();
    to_json(&json!({
        "x": x,
        "beta_hat": w.beta,
        "beta_true": sample.beta_true,
        "grid": grid,
        "ratio": ratio,
        "box_upper": b,
        "lhat": w.objective_value,
        "converged": w.converged,
        "estimate": report.point,
        "ey_te": s.ey_te(),
    }))
}

/// Median and mean absolute error of every estimator on shared seeded samples.
#[wasm_bindgen]
pub fn compare(scenario: &str, n_tr: u32, n_te: u32, reps: u32, seed: u64) -> Result<String, JsError> {
    let s = scenario_by_id(scenario).map_err(js_err)?;
    let configs =
        [EstimatorConfig::kmm(), EstimatorConfig::plugin(), EstimatorConfig::kde_ratio(), EstimatorConfig::oracle()];
    let c = compare_estimators(
        &s,
        &configs,
        &[n_tr as usize],
        reps as usize,
        Some(n_te as usize),
        &HarnessOptions::seeded(seed),
    )
    .map_err(js_err)?;
    to_json(&c.rows)
}
