//! Browser bindings for three small lazywalk demos. Each binding is a thin
//! wrapper over a plain function so the numerics can be tested natively.

use lazywalk::bridge::BridgeFields;
use lazywalk::ctmc::{bridge_marginal, Generator};
use lazywalk::displacement::{limit_plan, unit_grid, Interpolation};
use lazywalk::geodesy::geodesic_dag;
use lazywalk::graph::{build_simple_walk, intrinsic_distance, Graph};
use lazywalk::schrodinger::total_variation;
use wasm_bindgen::prelude::*;

/// Largest graphs the page will ask for; keeps the browser responsive.
pub const MAX_PATH: usize = 40;
pub const MAX_DIM: usize = 8;

fn normalise(name: &str, weights: &[f64]) -> Result<Vec<f64>, String> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(format!("{name} has a negative or non-finite weight"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(format!("{name} has no mass"));
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// Displacement interpolation between two (unnormalised) histograms on the
/// path `0 - 1 - ... - n-1`. Returns `points` rows of `n` masses, row-major,
/// at the evenly spaced times `0, ..., 1`.
pub fn path_flow(mu0: &[f64], mu1: &[f64], points: usize) -> Result<Vec<f64>, String> {
    let n = mu0.len();
    if n < 2 || n > MAX_PATH || mu1.len() != n {
        return Err(format!("need two histograms of equal length between 2 and {MAX_PATH}"));
    }
    if points < 2 {
        return Err("need at least two time points".into());
    }
    let (mu0, mu1) = (normalise("start", mu0)?, normalise("end", mu1)?);
    let graph = Graph::path(n);
    let metric = intrinsic_distance(&graph).map_err(|e| e.to_string())?;
    let (kernel, measure) = build_simple_walk(&graph);
    let plan = limit_plan(&graph, &metric, &kernel, &measure, &mu0, &mu1).map_err(|e| e.to_string())?;
    let interp = Interpolation::from_coupling(&graph, &metric, &kernel, &plan.coupling);
    Ok(unit_grid(points).iter().flat_map(|t| interp.marginal(t)).collect())
}

/// Law at time `t` of the geodesic bridge between opposite corners of the
/// cube `{0,1}^dim`, indexed by the integer whose bits are the coordinates.
pub fn hypercube_marginal(dim: usize, t: f64) -> Result<Vec<f64>, String> {
    if dim == 0 || dim > MAX_DIM {
        return Err(format!("dimension must be between 1 and {MAX_DIM}"));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err("time must lie in [0, 1]".into());
    }
    let graph = Graph::hypercube(dim);
    let metric = intrinsic_distance(&graph).map_err(|e| e.to_string())?;
    let (kernel, _) = build_simple_walk(&graph);
    let fields = BridgeFields::new(geodesic_dag(0, (1 << dim) - 1, &graph, &metric), &kernel);
    Ok(fields.marginal(&t))
}

/// Total variation at time 1/2 between the bridge of the walk slowed by
/// each `k` and the limit geodesic bridge. `graph` is `"complete"` (ends are
/// neighbours) or `"path"` (ends are `n-1` apart).
pub fn bridge_gap(graph: &str, n: usize, ks: &[f64]) -> Result<Vec<f64>, String> {
    if !(2..=12).contains(&n) {
        return Err("use between 2 and 12 vertices".into());
    }
    let (g, target) = match graph {
        "complete" => (Graph::complete(n), 1),
        "path" => (Graph::path(n), n - 1),
        other => return Err(format!("unknown graph {other:?}")),
    };
    let metric = intrinsic_distance(&g).map_err(|e| e.to_string())?;
    let (kernel, _) = build_simple_walk(&g);
    let limit = BridgeFields::new(geodesic_dag(0, target, &g, &metric), &kernel).marginal(&0.5);
    ks.iter()
        .map(|&k| {
            let gen = Generator::new(&kernel, &metric, k).map_err(|e| e.to_string())?;
            let finite = bridge_marginal(&gen, 0, target, 0.5).map_err(|e| e.to_string())?;
            Ok(total_variation(&finite, &limit))
        })
        .collect()
}

#[wasm_bindgen(js_name = pathFlow)]
pub fn path_flow_js(mu0: Vec<f64>, mu1: Vec<f64>, points: usize) -> Result<Vec<f64>, JsError> {
    path_flow(&mu0, &mu1, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = hypercubeMarginal)]
pub fn hypercube_marginal_js(dim: usize, t: f64) -> Result<Vec<f64>, JsError> {
    hypercube_marginal(dim, t).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = bridgeGap)]
pub fn bridge_gap_js(graph: &str, n: usize, ks: Vec<f64>) -> Result<Vec<f64>, JsError> {
    bridge_gap(graph, n, &ks).map_err(|e| JsError::new(&e))
}
