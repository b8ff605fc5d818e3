//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every export takes plain numbers and returns a JSON string, so the page
//! needs no generated type glue beyond `wasm-bindgen`'s string passing.
//! The plain `*_json` functions are the same operations without the binding
//! layer and are what the native tests exercise.

use fifm::analytics::{normalizing_constant, NormalizationOptions, DEFAULT_TRUNCATION};
use fifm::cftp::{sample_many, sample_stationary_with, CftpOptions};
use fifm::euclid::decay_experiment;
use fifm::{ModelParams, Result, Space};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Importance-sampling paths for the analytic marginal; enough for a plot.
const DEMO_PATHS: usize = 20_000;

fn to_js(r: Result<serde_json::Value>) -> std::result::Result<String, JsValue> {
    r.map(|v| v.to_string()).map_err(|e| JsValue::from_str(&e.to_string()))
}

/// One exact stationary sample on a circle of the given length.
pub fn cftp_snapshot_json(length: f64, intensity: f64, mu: f64, seed: u64) -> Result<serde_json::Value> {
    let space = Space::circle(length)?;
    let params = ModelParams::new(intensity, mu)?;
    let s = sample_stationary_with(&space, &params, seed, 0, &CftpOptions::default())?;
    let particles: Vec<_> = s
        .config
        .items
        .iter()
        .map(|p| json!({ "x": p.pos.x, "color": p.color.to_string(), "birth": p.birth }))
        .collect();
    Ok(json!({
        "length": length,
        "radius": space.radius(),
        "regeneration_time": s.regeneration_time,
        "events_replayed": s.events_replayed,
        "particles": particles,
    }))
}

/// Particle-count histogram of `samples` perfect samples beside the analytic marginal.
pub fn count_marginal_json(length: f64, intensity: f64, mu: f64, samples: usize, seed: u64) -> Result<serde_json::Value> {
    let space = Space::circle(length)?;
    let params = ModelParams::new(intensity, mu)?;
    let opts = NormalizationOptions { paths: DEMO_PATHS, seed, ..NormalizationOptions::default() };
    let nc = normalizing_constant(&space, &params, DEFAULT_TRUNCATION, &opts)?;
    let draws = sample_many(&space, &params, samples, seed, &CftpOptions::default())?;
    let bins = nc.count_probs.len();
    let mut hist = vec![0usize; bins];
    let mut overflow = 0usize;
    for d in &draws {
        match hist.get_mut(d.config.len()) {
            Some(h) => *h += 1,
            None => overflow += 1,
        }
    }
    let n = samples.max(1) as f64;
    Ok(json!({
        "analytic": nc.count_probs,
        "empirical": hist.iter().map(|&h| h as f64 / n).collect::<Vec<_>>(),
        "overflow": overflow as f64 / n,
        "tail_bound": nc.tail_bound,
        "samples": samples,
    }))
}

/// Mean special-particle count of two coupled processes on a torus against `beta_S(0) exp(-mu t)`.
pub fn decay_curve_json(side: f64, mu: f64, t_end: f64, replicas: usize, seed: u64) -> Result<serde_json::Value> {
    let space = Space::torus2d(side)?;
    let params = ModelParams::new(1.0, mu)?;
    let curve = decay_experiment(&space, &params, 1.0, t_end, replicas, seed, t_end / 20.0)?;
    let rows: Vec<_> = curve
        .rows
        .iter()
        .map(|r| json!({ "t": r.t, "mean": r.beta_s_mean, "lo": r.beta_s_ci_lo, "hi": r.beta_s_ci_hi, "bound": r.bound }))
        .collect();
    Ok(json!({ "rows": rows, "within_bound": curve.within_bound(), "specials_increased": curve.specials_increased }))
}

#[wasm_bindgen]
pub fn cftp_snapshot(length: f64, intensity: f64, mu: f64, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(cftp_snapshot_json(length, intensity, mu, seed.into()))
}

#[wasm_bindgen]
pub fn count_marginal(length: f64, intensity: f64, mu: f64, samples: u32, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(count_marginal_json(length, intensity, mu, samples as usize, seed.into()))
}

#[wasm_bindgen]
pub fn decay_curve(side: f64, mu: f64, t_end: f64, replicas: u32, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(decay_curve_json(side, mu, t_end, replicas as usize, seed.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_points_lie_on_the_circle() {
        let v = cftp_snapshot_json(3.0, 1.0, 1.0, 7).unwrap();
        for p in v["particles"].as_array().unwrap() {
            let x = p["x"].as_f64().unwrap();
            assert!((0.0..3.0).contains(&x));
        }
        assert!(v["regeneration_time"].as_f64().unwrap() <= 0.0);
    }

    #[test]
    fn marginal_histograms_sum_to_one() {
        let v = count_marginal_json(3.0, 1.0, 1.0, 500, 1).unwrap();
        let emp: f64 = v["empirical"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum::<f64>()
            + v["overflow"].as_f64().unwrap();
        assert!((emp - 1.0).abs() < 1e-12);
        let ana: f64 = v["analytic"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
        assert!((ana - 1.0).abs() < 1e-3, "{ana}");
    }

    #[test]
    fn decay_curve_has_rows() {
        let v = decay_curve_json(6.0, 1.0, 2.0, 4, 0).unwrap();
        assert_eq!(v["rows"].as_array().unwrap().len(), 21);
    }

    #[test]
    fn invalid_input_is_an_error() {
        assert!(cftp_snapshot_json(-1.0, 1.0, 1.0, 0).is_err());
        assert!(decay_curve_json(6.0, 0.0, 2.0, 4, 0).is_err());
    }
}
