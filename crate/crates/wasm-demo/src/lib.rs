//! wasm-bindgen entry points for `www/index.html`. Every function returns a
//! JSON string; errors come back as `{"error": "..."}`.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use fpgm_core::analysis::{
    check_requirements, kde_estimate, NormStats, DEFAULT_DEVIATION_THRESHOLD, DEFAULT_MINIMUM_THRESHOLD,
};
use fpgm_core::criteria::{select_gm, weiszfeld_gm, DistanceKind};
use fpgm_core::flops::{flops_pruned, resnet20_cifar, PruneRates};
use fpgm_core::FilterMatrix;

fn respond(result: Result<Value, String>) -> String {
    match result {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

fn distance_kind(name: &str) -> Result<DistanceKind, String> {
    match name {
        "l1" => Ok(DistanceKind::L1),
        "l2" => Ok(DistanceKind::L2),
        "cosine" => Ok(DistanceKind::Cosine),
        other => Err(format!("unknown distance `{other}`")),
    }
}

/// Norm statistics, requirement flags and density curve of a list of norms.
pub fn norm_density_json(norms: &[f64], grid_points: usize) -> Result<Value, String> {
    let curve = kde_estimate(norms, grid_points, None).map_err(|e| e.to_string())?;
    let stats = NormStats::from_norms("input", norms.to_vec());
    let requirements = check_requirements(&stats, DEFAULT_DEVIATION_THRESHOLD, DEFAULT_MINIMUM_THRESHOLD);
    Ok(json!({ "stats": stats, "requirements": requirements, "curve": curve, "integral": curve.integral() }))
}

/// GM selection over 2-D points plus the continuous geometric median.
pub fn gm_points_json(xs: &[f64], ys: &[f64], count: usize, distance: &str) -> Result<Value, String> {
    if xs.len() != ys.len() {
        return Err("x and y lengths differ".into());
    }
    let values: Vec<f64> = xs.iter().zip(ys).flat_map(|(&x, &y)| [x, y]).collect();
    let m = FilterMatrix::new(xs.len(), 2, values).map_err(|e| e.to_string())?;
    let selection = select_gm(&m, count, distance_kind(distance)?).map_err(|e| e.to_string())?;
    let median = weiszfeld_gm(&m, 1e-10, 10_000).map_err(|e| e.to_string())?;
    Ok(json!({ "selection": selection, "median": median.coords, "iterations": median.iterations }))
}

/// FLOPs report of ResNet-20 (CIFAR) at a uniform rate.
pub fn resnet_flops_json(rate: f64) -> Result<Value, String> {
    let graph = resnet20_cifar();
    let report = flops_pruned(&graph, &PruneRates::uniform(&graph, rate)).map_err(|e| e.to_string())?;
    serde_json::to_value(report).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn norm_density(norms: &[f64], grid_points: usize) -> String {
    respond(norm_density_json(norms, grid_points))
}

#[wasm_bindgen]
pub fn gm_points(xs: &[f64], ys: &[f64], count: usize, distance: &str) -> String {
    respond(gm_points_json(xs, ys, count, distance))
}

#[wasm_bindgen]
pub fn resnet_flops(rate: f64) -> String {
    respond(resnet_flops_json(rate))
}
