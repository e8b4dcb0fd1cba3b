//! Browser bindings for the demo page: canonical tokens, a solver heatmap,
//! and particle clouds from coefficient refinement. Every export returns a
//! JSON string.

use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::*;

use pdesym::datagen::{generate_sample, Family};
use pdesym::expr::{from_tokens, parse_infix, to_canonical_tokens, Equation};
use pdesym::filter::{refine_observed, FilterConfig, LawTemplate, ObservationSeq};
use pdesym::perturb::{swap_branches, PerturbConfig};

fn family(name: &str) -> Result<Family, String> {
    name.parse()
        .map_err(|e: pdesym::datagen::DatagenError| e.to_string())
}

/// Canonical tokens of `src` and of a randomly reordered copy.
pub fn canonical_report(src: &str, seed: u64) -> Result<serde_json::Value, String> {
    let eq = parse_infix(src).map_err(|e| e.to_string())?;
    let tokens = to_canonical_tokens(&eq).map_err(|e| e.to_string())?;
    let cfg = PerturbConfig {
        swap_prob: 0.5,
        seed,
        ..PerturbConfig::default()
    };
    let shuffled = Equation::new(swap_branches(&eq.residual, &cfg));
    let shuffled_tokens = to_canonical_tokens(&shuffled).map_err(|e| e.to_string())?;
    Ok(json!({
        "input": eq.to_string(),
        "canonical": from_tokens(&tokens).map_err(|e| e.to_string())?.to_string(),
        "tokens": tokens.to_strings(),
        "shuffled": shuffled.to_string(),
        "shuffled_tokens": shuffled_tokens.to_strings(),
    }))
}

#[derive(Serialize)]
struct Heatmap {
    family: Family,
    coefficients: [f64; 2],
    nx: usize,
    nt: usize,
    times: Vec<f64>,
    values: Vec<f64>,
    mass_drift: f64,
}

/// One generated trajectory for `family` with jittered coefficients.
pub fn simulation(name: &str, seed: u64) -> Result<serde_json::Value, String> {
    let family = family(name)?;
    let sample = generate_sample(&family.spec(), seed, 0, 0, 0).map_err(|e| e.to_string())?;
    let field = &sample.field;
    let m0 = field.grid.integral(field.frame(0));
    let heatmap = Heatmap {
        family,
        coefficients: [sample.law.q1, sample.law.q2],
        nx: field.grid.nx,
        nt: field.nt(),
        times: field.times.clone(),
        values: field.values.clone(),
        mass_drift: field
            .frames()
            .map(|f| (field.grid.integral(f) - m0).abs())
            .fold(0.0, f64::max),
    };
    serde_json::to_value(heatmap).map_err(|e| e.to_string())
}

/// Refine coefficients that start `rel_error` above the truth, recording the
/// particle cloud after every step.
pub fn refinement(
    name: &str,
    rel_error: f64,
    particles: usize,
    seed: u64,
) -> Result<serde_json::Value, String> {
    let family = family(name)?;
    let sample = generate_sample(&family.spec(), seed, 0, 0, 0).map_err(|e| e.to_string())?;
    let template = LawTemplate::of(&sample.law);
    let truth = template.coefficients(&sample.law);
    let start: Vec<f64> = truth.iter().map(|q| q * (1.0 + rel_error)).collect();
    let cfg = FilterConfig {
        particles,
        seed,
        ..FilterConfig::default()
    };
    let obs = ObservationSeq::from_field(&sample.field, cfg.steps + 1);
    let mut clouds = Vec::new();
    let refined = refine_observed(&start, &obs, &template, &cfg, |_, ens| {
        clouds.push(ens.particles.clone());
    })
    .map_err(|e| e.to_string())?;
    Ok(json!({
        "family": family,
        "truth": truth,
        "initial": start,
        "refined": refined.coefficients,
        "ess_per_step": refined.ess_per_step,
        "clouds": clouds,
    }))
}

fn to_js(result: Result<serde_json::Value, String>) -> Result<String, JsValue> {
    result
        .map(|v| v.to_string())
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn canonicalize(src: &str, seed: u32) -> Result<String, JsValue> {
    to_js(canonical_report(src, seed.into()))
}

#[wasm_bindgen]
pub fn simulate(family: &str, seed: u32) -> Result<String, JsValue> {
    to_js(simulation(family, seed.into()))
}

#[wasm_bindgen]
pub fn refine_demo(
    family: &str,
    rel_error: f64,
    particles: u32,
    seed: u32,
) -> Result<String, JsValue> {
    to_js(refinement(
        family,
        rel_error,
        particles as usize,
        seed.into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shuffled_copy_has_the_same_tokens() {
        let r = canonical_report("u_t + u*u_x - 0.05*u_xx = 0", 3).unwrap();
        assert_eq!(r["tokens"], r["shuffled_tokens"]);
        assert!(canonical_report("u_t +", 0).is_err());
    }

    #[test]
    fn heatmap_shape() {
        let r = simulation("icl_sine", 1).unwrap();
        let (nx, nt) = (r["nx"].as_u64().unwrap(), r["nt"].as_u64().unwrap());
        assert_eq!(r["values"].as_array().unwrap().len() as u64, nx * nt);
        assert!(r["mass_drift"].as_f64().unwrap() < 1e-12);
        assert!(simulation("kdv", 1).is_err());
    }

    #[test]
    fn clouds_per_step() {
        let r = refinement("inviscid_burgers", 0.05, 100, 2).unwrap();
        assert_eq!(r["clouds"].as_array().unwrap().len(), 11);
        let truth = r["truth"][0].as_f64().unwrap();
        let refined = r["refined"][0].as_f64().unwrap();
        assert!((refined - truth).abs() < (r["initial"][0].as_f64().unwrap() - truth).abs());
    }
}
