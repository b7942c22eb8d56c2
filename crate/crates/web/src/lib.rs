//! WebAssembly bindings for the static demo page in `www/`.
//!
//! The computations live in plain functions returning `Result<_, String>` so
//! they run natively too; the exported wrappers only convert errors.

use calodiff::diffusion::schedule::{schedule_at, DiffusionSchedule};
use calodiff::diffusion::{sample, FnField};
use calodiff::eval::{deviation_band, emd_1d, BandFlag, Histogram};
use calodiff::repr::voxelize;
use calodiff::showergen::generate_shower;
use calodiff::{rng, GeometrySpec, IncidentParticle, ShowerModelParams};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// One toy shower as an 11x11x11 voxel image, flattened with x fastest.
pub fn shower_voxels(momentum: f64, phi_deg: f64, seed: u64) -> Result<Vec<f64>, String> {
    let g = GeometrySpec::default();
    let inc = IncidentParticle::new(momentum, phi_deg);
    let ev = generate_shower(&g, &ShowerModelParams::default(), &inc, &mut rng::seeded(seed))
        .map_err(|e| e.to_string())?;
    Ok(voxelize(&g, &ev).energies)
}

/// Exact velocity of data distributed as N(mu, s^2).
pub fn gaussian_velocity(x_t: f64, t: f64, mu: f64, s: f64) -> f64 {
    let (a, sg) = schedule_at(t).expect("t in [0, 1]");
    let x0 = mu + a * s * s * (x_t - a * mu) / (a * a * s * s + sg * sg);
    let eps = (x_t - a * x0) / sg;
    a * eps - sg * x0
}

/// `n` DDIM samples of N(mu, s^2) using the exact velocity field.
pub fn gaussian_samples(mu: f64, s: f64, steps: usize, n: usize, seed: u64) -> Result<Vec<f64>, String> {
    if !(s > 0.0) || steps == 0 {
        return Err("need s > 0 and at least one step".into());
    }
    let field = FnField(move |x: &[f64], t: f64| vec![gaussian_velocity(x[0], t, mu, s)]);
    let sched = DiffusionSchedule { n_steps: steps };
    let mut r = rng::seeded(seed);
    (0..n)
        .map(|_| sample(&field, &sched, 1, &[], None, &mut r).map(|v| v[0]).map_err(|e| e.to_string()))
        .collect()
}

/// EMD between two samples and the deviation band of `a` against `b` over
/// `bins` equal bins on `[lo, hi]`, as JSON.
pub fn comparison_json(a: &[f64], b: &[f64], lo: f64, hi: f64, bins: usize) -> Result<String, String> {
    let emd = emd_1d(a, b).map_err(|e| e.to_string())?;
    let mut ha = Histogram::linear(lo, hi, bins).map_err(|e| e.to_string())?;
    let mut hb = ha.clone();
    ha.fill_all(a);
    hb.fill_all(b);
    let band = deviation_band(&ha, &hb).map_err(|e| e.to_string())?;
    let flags: Vec<&str> = band
        .flags
        .iter()
        .map(|f| match f {
            BandFlag::Inside => "inside",
            BandFlag::Outside => "outside",
            BandFlag::Undefined => "undefined",
        })
        .collect();
    Ok(json!({
        "emd": emd,
        "edges": ha.edges,
        "a": ha.density().counts,
        "b": hb.density().counts,
        "ratios": band.ratios,
        "flags": flags,
        "inside_fraction": band.inside_fraction(),
    })
    .to_string())
}

#[wasm_bindgen]
pub fn shower_image(momentum: f64, phi_deg: f64, seed: u64) -> Result<Vec<f64>, JsValue> {
    shower_voxels(momentum, phi_deg, seed).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn ddim_gaussian(mu: f64, s: f64, steps: usize, n: usize, seed: u64) -> Result<Vec<f64>, JsValue> {
    gaussian_samples(mu, s, steps, n, seed).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn compare_samples(a: Vec<f64>, b: Vec<f64>, lo: f64, hi: f64, bins: usize) -> Result<String, JsValue> {
    comparison_json(&a, &b, lo, hi, bins).map_err(|e| JsValue::from_str(&e))
}
