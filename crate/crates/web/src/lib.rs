//! Browser bindings for a common/private source `X = P₁ + C`, `Y = C + P₂`.
//! Every function returns a flat `Float64Array`; layouts are documented on
//! the plain Rust functions, which are what the bindings call.

use mamp::coupling::{build_weight_matrix, coupled_se_run, CoupledParams, CoupledSeOptions};
use mamp::se::{distortion, se_trajectory, SeParams};
use mamp::source::rid_summary;
use mamp::{McBudget, MmseEvaluator, SourceSpec};
use wasm_bindgen::prelude::*;

const DEMO_SEED: u64 = 1;

fn evaluator(private_alpha: f64, common_alpha: f64, samples: usize) -> mamp::Result<MmseEvaluator> {
    let spec = SourceSpec::common_private(private_alpha, common_alpha)?;
    MmseEvaluator::new(&spec, McBudget::new(samples.max(100), DEMO_SEED))
}

/// `[d(X), d(Y), d(X,Y), d(X|Y), d(Y|X)]`
pub fn dimensions(private_alpha: f64, common_alpha: f64) -> mamp::Result<Vec<f64>> {
    let d = rid_summary(&SourceSpec::common_private(private_alpha, common_alpha)?)?;
    Ok(vec![d.d_x, d.d_y, d.d_joint, d.d_x_given_y, d.d_y_given_x])
}

/// Per iteration `[τ_x, τ_y, distortion]`, flattened.
pub fn trajectory(
    private_alpha: f64,
    common_alpha: f64,
    rho_x: f64,
    rho_y: f64,
    iterations: usize,
    samples: usize,
) -> mamp::Result<Vec<f64>> {
    let ev = evaluator(private_alpha, common_alpha, samples)?;
    let params = SeParams::noiseless(rho_x, rho_y);
    let traj = se_trajectory(&ev, &params, iterations)?;
    Ok(traj
        .iter()
        .flat_map(|s| [s.tau_x, s.tau_y, distortion(&params, s)])
        .collect())
}

/// Block MSEs `ψ` after every iteration `t ≥ 1`: `L_c` values for X then
/// `L_c` for Y, repeated per iteration. Stops early once every block is
/// recovered.
pub fn wave(
    private_alpha: f64,
    common_alpha: f64,
    delta_x: f64,
    delta_y: f64,
    l_c: usize,
    iterations: usize,
    samples: usize,
) -> mamp::Result<Vec<f64>> {
    let ev = evaluator(private_alpha, common_alpha, samples)?;
    let w = build_weight_matrix(l_c, 2, 3.min(l_c / 2), 1.0)?;
    let opts = CoupledSeOptions {
        max_iter: iterations,
        ..Default::default()
    };
    let run = coupled_se_run(&ev, &w, &CoupledParams::noiseless(delta_x, delta_y), &opts)?;
    Ok(run.states[1..]
        .iter()
        .flat_map(|s| s.psi_x.iter().chain(&s.psi_y).copied())
        .collect())
}

fn js(r: mamp::Result<Vec<f64>>) -> Result<Vec<f64>, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = dimensions)]
pub fn dimensions_js(private_alpha: f64, common_alpha: f64) -> Result<Vec<f64>, JsError> {
    js(dimensions(private_alpha, common_alpha))
}

#[wasm_bindgen(js_name = trajectory)]
pub fn trajectory_js(
    private_alpha: f64,
    common_alpha: f64,
    rho_x: f64,
    rho_y: f64,
    iterations: usize,
    samples: usize,
) -> Result<Vec<f64>, JsError> {
    js(trajectory(private_alpha, common_alpha, rho_x, rho_y, iterations, samples))
}

#[wasm_bindgen(js_name = wave)]
pub fn wave_js(
    private_alpha: f64,
    common_alpha: f64,
    delta_x: f64,
    delta_y: f64,
    l_c: usize,
    iterations: usize,
    samples: usize,
) -> Result<Vec<f64>, JsError> {
    js(wave(private_alpha, common_alpha, delta_x, delta_y, l_c, iterations, samples))
}
