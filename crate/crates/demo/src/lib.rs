//! Browser bindings: each call runs a short simulated pass and returns JSON.

use qstt::estimator::{normal_points, scatter};
use qstt::geometry::C;
use qstt::scenario::Scenario;
use qstt::session;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const CLEAN: &str = include_str!("../../core/scenarios/clean_pass.toml");

fn base(seed: u64, duration: f64) -> Result<Scenario, String> {
    let mut s = Scenario::from_toml(CLEAN).map_err(|e| e.to_string())?;
    s.seed = seed;
    s.duration = duration;
    Ok(s)
}

/// Offset and range shifts produced by holding photons for the given
/// delays (picoseconds), and whether the alert check caught it.
pub fn attack_response(delay_down_ps: f64, delay_up_ps: f64, seed: u64) -> Result<Value, String> {
    let s = base(seed, 1.0)?;
    let (dd, du) = (delay_down_ps * 1e-12, delay_up_ps * 1e-12);
    let rows = session::attack_sweep(&s, &[0.0, dd], &[0.0, du]).map_err(|e| e.to_string())?;
    let row = rows.last().ok_or("empty sweep")?;
    Ok(json!({
        "delta_offset_ps": row.delta_offset * 1e12,
        "expected_delta_offset_ps": row.expected_delta_offset * 1e12,
        "delta_range_mm": row.delta_range * 1e3,
        "expected_delta_range_mm": row.expected_delta_range * 1e3,
        "alert_limit_m": s.policy.alert_limit,
        "offset_bound_ps": s.policy.alert_limit / C * 1e12,
        "verdict": row.verdict,
    }))
}

/// QBER per block when a fraction of downlink photons is intercepted
/// and resent.
pub fn intercept_qber(fraction: f64, seed: u64) -> Result<Value, String> {
    let mut s = base(seed, 1.0)?;
    s.analysis.qber_block = 0.25;
    s.attack.intercept_resend_fraction = fraction;
    let out = session::run(&s).map_err(|e| e.to_string())?;
    let blocks: Vec<Value> = out.blocks.iter().map(|b| json!({ "qber": b.qber, "kept": b.kept })).collect();
    Ok(json!({
        "threshold": s.policy.qber_threshold,
        "qber_mean": out.report.qber_mean,
        "blocks": blocks,
        "verdict": out.report.session.verdict,
    }))
}

/// Offset and range scatter of normal points against block size.
pub fn averaging_curve(seed: u64) -> Result<Value, String> {
    let s = base(seed, 2.0)?;
    let out = session::run(&s).map_err(|e| e.to_string())?;
    let rows: Vec<Value> = [1usize, 3, 10, 30, 100, 300]
        .iter()
        .filter(|&&n| out.raw_points.len() / n >= 3)
        .map(|&n| {
            let np = normal_points(&out.raw_points, n);
            json!({
                "n": n,
                "offset_ps": scatter(np.points.iter().map(|p| p.offset)) * 1e12,
                "range_cm": scatter(np.points.iter().map(|p| p.range)) * 1e2,
            })
        })
        .collect();
    Ok(json!({ "events": out.raw_points.len(), "curve": rows }))
}

fn to_js(r: Result<Value, String>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = attackResponse)]
pub fn attack_response_js(delay_down_ps: f64, delay_up_ps: f64, seed: u32) -> Result<String, JsError> {
    to_js(attack_response(delay_down_ps, delay_up_ps, seed.into()))
}

#[wasm_bindgen(js_name = interceptQber)]
pub fn intercept_qber_js(fraction: f64, seed: u32) -> Result<String, JsError> {
    to_js(intercept_qber(fraction, seed.into()))
}

#[wasm_bindgen(js_name = averagingCurve)]
pub fn averaging_curve_js(seed: u32) -> Result<String, JsError> {
    to_js(averaging_curve(seed.into()))
}
