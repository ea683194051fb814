//! Browser bindings for the demo page in `www/`.
//!
//! Every entry point builds a ring graph `C_n` with unit weights and measure,
//! runs one solver, and returns a JSON string. Failures come back as
//! `{"error": "..."}` so the page never has to catch exceptions.

use graph_vortex::{
    critical_lambda, monotone_solve, AbelianOptions, AbelianProblem, CartanPreset, MinimizeOptions, VortexProblem,
    WeightedGraph,
};
use serde::Serialize;
use serde_json::json;
use wasm_bindgen::prelude::wasm_bindgen;

/// Largest ring the page offers; dense factorizations stay instant below it.
pub const MAX_RING: usize = 64;

fn ring(n: usize) -> Result<WeightedGraph, String> {
    if !(3..=MAX_RING).contains(&n) {
        return Err(format!("ring size must be between 3 and {MAX_RING}, got {n}"));
    }
    WeightedGraph::cycle(n).map_err(|e| e.to_string())
}

fn respond<T: Serialize>(result: Result<T, String>) -> String {
    match result {
        Ok(v) => serde_json::to_string(&v).expect("demo results serialise"),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

#[derive(Serialize)]
struct ScalarResult {
    u: Vec<f64>,
    iterations: usize,
    residual_inf: f64,
    integral_check: f64,
    lower_bound: f64,
}

/// Maximal solution of the scalar equation on `C_n` with `m` vortices at vertex 0.
#[wasm_bindgen]
pub fn abelian_ring(n: usize, m: usize, lambda: f64) -> String {
    respond((|| {
        let g = ring(n)?;
        let points = vec![0; m];
        let p = AbelianProblem::new(&g, &points, lambda).map_err(|e| e.to_string())?;
        let sol = monotone_solve(&p, &AbelianOptions::default()).map_err(|e| e.to_string())?;
        Ok(ScalarResult {
            u: sol.u.values().to_vec(),
            iterations: sol.iterations,
            residual_inf: sol.residual_inf,
            integral_check: sol.integral_check,
            lower_bound: p.lower_bound(),
        })
    })())
}

/// Bracket `[lo, hi]` around the critical coupling on `C_n` with `m` vortices at vertex 0.
#[wasm_bindgen]
pub fn critical_ring(n: usize, m: usize) -> String {
    respond((|| {
        let g = ring(n)?;
        let b = critical_lambda(&g, &vec![0; m.max(1)], 1e-4, &AbelianOptions::default()).map_err(|e| e.to_string())?;
        Ok(json!({ "lo": b.lo, "hi": b.hi, "lower_bound": b.lower_bound }))
    })())
}

#[derive(Serialize)]
struct SystemResult {
    converged: bool,
    message: Option<String>,
    lambda0: f64,
    admissibility_threshold: f64,
    iterations: usize,
    #[serde(rename = "J")]
    j: f64,
    residual_inf: f64,
    u_orig: Vec<Vec<f64>>,
}

/// Non-Abelian system for a Cartan preset on `C_n`. `counts` lists the
/// vortex number of each component, comma separated; component `i` puts its
/// vortices at vertex `i·n/rank`.
#[wasm_bindgen]
pub fn system_ring(preset: &str, n: usize, counts: &str, lambda: f64) -> String {
    respond((|| {
        let g = ring(n)?;
        let sys = CartanPreset::parse(preset).map_err(|e| e.to_string())?.system();
        let rank = sys.rank();
        let counts: Vec<usize> = counts
            .split(',')
            .map(|c| c.trim().parse().map_err(|_| format!("bad vortex count `{c}`")))
            .collect::<Result<_, _>>()?;
        if counts.len() != rank {
            return Err(format!("{preset} has rank {rank}, got {} counts", counts.len()));
        }
        let points: Vec<Vec<String>> = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| vec![format!("v{}", i * n / rank); c])
            .collect();
        let vp = VortexProblem::from_points(g, sys, &points).map_err(|e| e.to_string())?;
        let result = vp
            .at(lambda)
            .and_then(|inst| inst.minimize(&MinimizeOptions::default()));
        let (report, message) = match result {
            Ok(r) => (Some(r), None),
            Err(e) => (e.report().cloned(), Some(e.to_string())),
        };
        Ok(match report {
            Some(r) => SystemResult {
                converged: r.converged,
                message,
                lambda0: vp.lambda0(),
                admissibility_threshold: vp.admissibility_threshold(),
                iterations: r.iterations,
                j: r.j_value,
                residual_inf: r.residual_inf,
                u_orig: r.u_orig.components().iter().map(|c| c.values().to_vec()).collect(),
            },
            None => SystemResult {
                converged: false,
                message,
                lambda0: vp.lambda0(),
                admissibility_threshold: vp.admissibility_threshold(),
                iterations: 0,
                j: f64::NAN,
                residual_inf: f64::NAN,
                u_orig: Vec::new(),
            },
        })
    })())
}
