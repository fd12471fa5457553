//! Experiment drivers: one function per kind, each producing tables and a
//! JSON summary that end up in the output directory.

use std::fmt;
use std::fs;
use std::path::Path;
use std::time::Instant;

use mamp::coupling::{
    build_weight_matrix, coupled_mamp_run, coupled_se_run, flag_non_monotone, make_coupled_problem,
    pentagon, boundary_point, BoundaryOptions, CoupledMampOptions, CoupledParams, CoupledSeOptions,
    WeightMatrix,
};
use mamp::mamp::{make_problem, mamp_run, MampOptions, TauSchedule};
use mamp::rng::derive_seed;
use mamp::se::{fresh_matrix_se_check, grid_cell, se_trajectory, FixedPointOptions, SeParams};
use mamp::source::rid_summary;
use mamp::{Error, McBudget, MmseEvaluator};
use rayon::prelude::*;
use serde_json::{json, Value as Json};

use crate::config::{CouplingConfig, Diagnostic, Experiment, ExperimentConfig};
use crate::output::{write_atomic, Cell, Table};

/// Label under which per-run seeds are derived from the master seed.
const RUN_SEED_LABEL: u64 = 16;

#[derive(Debug, Clone, PartialEq)]
pub enum RunError {
    Config(Vec<Diagnostic>),
    Numerical(String),
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Io(_) => 1,
            RunError::Config(_) => 2,
            RunError::Numerical(_) => 3,
        }
    }

    pub fn to_json(&self) -> Json {
        match self {
            RunError::Config(d) => json!({ "error": "config", "diagnostics": d }),
            RunError::Numerical(m) => json!({ "error": "numerical", "message": m }),
            RunError::Io(m) => json!({ "error": "io", "message": m }),
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(d) => {
                let lines: Vec<String> = d.iter().map(|d| d.to_string()).collect();
                write!(f, "invalid configuration: {}", lines.join("; "))
            }
            RunError::Numerical(m) => write!(f, "numerical failure: {m}"),
            RunError::Io(m) => write!(f, "i/o failure: {m}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidSpec(_) | Error::EnumerationCap { .. } => RunError::Config(vec![Diagnostic {
                field: "source".into(),
                message: e.to_string(),
            }]),
            other => RunError::Numerical(other.to_string()),
        }
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

/// Files and summary numbers of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub tables: Vec<(&'static str, Table)>,
    pub results: Json,
    pub seeds: Json,
}

/// Runs the configured experiment and writes its tables plus
/// `manifest.json` into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Json, RunError> {
    let start = Instant::now();
    let outcome = compute(cfg)?;
    fs::create_dir_all(out_dir)?;
    let mut outputs = Vec::new();
    for (name, table) in &outcome.tables {
        write_atomic(&out_dir.join(name), table.to_csv().as_bytes())?;
        outputs.push(*name);
    }
    let manifest = json!({
        "kind": cfg.kind.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg.echo(),
        "seeds": outcome.seeds,
        "outputs": outputs,
        "results": outcome.results,
        "wall_time_seconds": start.elapsed().as_secs_f64(),
    });
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| RunError::Io(e.to_string()))?;
    write_atomic(&out_dir.join("manifest.json"), text.as_bytes())?;
    Ok(manifest)
}

/// The experiment's tables without touching the file system.
pub fn compute(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let sigma2 = (cfg.sigma2_x, cfg.sigma2_y);
    let evaluator = || MmseEvaluator::new(&cfg.source, McBudget::new(cfg.mc_samples, cfg.mc_seed));
    let base_seeds = json!({ "seed": cfg.seed, "mc_seed": cfg.mc_seed });
    match &cfg.experiment {
        Experiment::Rid => rid(cfg),
        Experiment::SeSweep {
            rho_x,
            rho_y,
            tol,
            max_iter,
        } => {
            let ev = evaluator()?;
            let opts = FixedPointOptions {
                tol: *tol,
                max_iter: *max_iter,
            };
            let pairs: Vec<(f64, f64)> = rho_x
                .iter()
                .flat_map(|&rx| rho_y.iter().map(move |&ry| (rx, ry)))
                .collect();
            let cells = pairs
                .par_iter()
                .map(|&(rx, ry)| grid_cell(&ev, rx, ry, sigma2, opts))
                .collect::<mamp::Result<Vec<_>>>()?;
            let mut t = Table::new(&["rho_x", "rho_y", "tau_x", "tau_y", "distortion", "converged", "iterations"]);
            for c in &cells {
                t.push(vec![
                    c.rho_x.into(),
                    c.rho_y.into(),
                    c.tau_x.into(),
                    c.tau_y.into(),
                    c.distortion.into(),
                    c.converged.into(),
                    c.iterations.into(),
                ]);
            }
            Ok(Outcome {
                tables: vec![("se_grid.csv", t)],
                results: json!({
                    "cells": cells.len(),
                    "recovered": cells.iter().filter(|c| c.recovered()).count(),
                    "converged": cells.iter().filter(|c| c.converged).count(),
                }),
                seeds: base_seeds,
            })
        }
        Experiment::MampRun {
            rho_x,
            rho_y,
            n,
            seeds,
            max_iter,
            stop_tol,
            empirical_tau,
        } => {
            let ev = evaluator()?;
            let params = SeParams {
                rho_x: *rho_x,
                rho_y: *rho_y,
                sigma2_x: sigma2.0,
                sigma2_y: sigma2.1,
            };
            let traj = se_trajectory(&ev, &params, max_iter + 1)?;
            let schedule = if *empirical_tau {
                TauSchedule::Empirical
            } else {
                TauSchedule::Oracle(traj.clone())
            };
            let options = MampOptions {
                schedule,
                max_iter: *max_iter,
                stop_tol: *stop_tol,
            };
            let run_seeds: Vec<u64> = (0..*seeds as u64).map(|i| derive_seed(cfg.seed, RUN_SEED_LABEL, i)).collect();
            let runs = run_seeds
                .par_iter()
                .map(|&s| {
                    let p = make_problem(&cfg.source, *rho_x, *rho_y, *n, sigma2, s)?;
                    mamp_run(&p.a, &p.b, &p.u, &p.v, &cfg.source, &options, Some((&p.x0, &p.y0)))
                })
                .collect::<mamp::Result<Vec<_>>>()?;
            // the MSE of x^{t+1} is predicted by ρ (τ^{t+1} − σ²)
            let predicted = |t: usize| {
                traj.get(t + 1).map(|s| {
                    (
                        params.rho_x * (s.tau_x - params.sigma2_x),
                        params.rho_y * (s.tau_y - params.sigma2_y),
                    )
                })
            };
            let mut trace = Table::new(&[
                "run", "iteration", "tau_x", "tau_y", "mse_x", "mse_y", "se_mse_x", "se_mse_y",
                "residual_var_x", "residual_var_y", "eff_var_x", "eff_var_y", "onsager_x", "onsager_y",
            ]);
            for (i, out) in runs.iter().enumerate() {
                for r in &out.trace.records {
                    let p = predicted(r.iteration);
                    trace.push(vec![
                        i.into(),
                        r.iteration.into(),
                        r.tau_x.into(),
                        r.tau_y.into(),
                        Cell::opt(r.mse_x),
                        Cell::opt(r.mse_y),
                        Cell::opt(p.map(|p| p.0)),
                        Cell::opt(p.map(|p| p.1)),
                        r.residual_var_x.into(),
                        r.residual_var_y.into(),
                        Cell::opt(r.eff_var_x),
                        Cell::opt(r.eff_var_y),
                        r.onsager_x.into(),
                        r.onsager_y.into(),
                    ]);
                }
            }
            let mut summary = Table::new(&[
                "iteration", "runs", "mean_mse_x", "sd_mse_x", "mean_mse_y", "sd_mse_y", "se_mse_x", "se_mse_y",
            ]);
            let longest = runs.iter().map(|r| r.trace.records.len()).max().unwrap_or(0);
            for t in 0..longest {
                let present: Vec<(f64, f64)> = runs
                    .iter()
                    .filter_map(|r| r.trace.records.get(t))
                    .map(|r| (r.mse_x.unwrap_or(f64::NAN), r.mse_y.unwrap_or(f64::NAN)))
                    .collect();
                let (mx, sx) = mean_sd(present.iter().map(|p| p.0));
                let (my, sy) = mean_sd(present.iter().map(|p| p.1));
                let p = predicted(t);
                summary.push(vec![
                    t.into(),
                    present.len().into(),
                    mx.into(),
                    sx.into(),
                    my.into(),
                    sy.into(),
                    Cell::opt(p.map(|p| p.0)),
                    Cell::opt(p.map(|p| p.1)),
                ]);
            }
            let finals: Vec<Json> = runs
                .iter()
                .map(|r| {
                    let last = r.trace.records.last();
                    json!({
                        "iterations": r.trace.iterations,
                        "converged": r.trace.converged,
                        "mse_x": last.and_then(|l| l.mse_x),
                        "mse_y": last.and_then(|l| l.mse_y),
                    })
                })
                .collect();
            Ok(Outcome {
                tables: vec![("mamp_trace.csv", trace), ("mamp_summary.csv", summary)],
                results: json!({ "runs": finals }),
                seeds: json!({ "seed": cfg.seed, "mc_seed": cfg.mc_seed, "runs": run_seeds }),
            })
        }
        Experiment::FreshSeCheck {
            rho_x,
            rho_y,
            n,
            iterations,
            seeds,
        } => {
            let ev = evaluator()?;
            let params = SeParams {
                rho_x: *rho_x,
                rho_y: *rho_y,
                sigma2_x: sigma2.0,
                sigma2_y: sigma2.1,
            };
            let run_seeds: Vec<u64> = (0..*seeds as u64).map(|i| derive_seed(cfg.seed, RUN_SEED_LABEL, i)).collect();
            let runs = run_seeds
                .par_iter()
                .map(|&s| fresh_matrix_se_check(&ev, &params, *n, *iterations, s))
                .collect::<mamp::Result<Vec<_>>>()?;
            let mut t = Table::new(&[
                "run", "iteration", "tau_x_empirical", "tau_y_empirical", "tau_x_se", "tau_y_se",
            ]);
            let mut worst: f64 = 0.0;
            for (i, recs) in runs.iter().enumerate() {
                for r in recs {
                    worst = worst
                        .max((r.tau_x_empirical / r.tau_x_se - 1.0).abs())
                        .max((r.tau_y_empirical / r.tau_y_se - 1.0).abs());
                    t.push(vec![
                        i.into(),
                        r.iteration.into(),
                        r.tau_x_empirical.into(),
                        r.tau_y_empirical.into(),
                        r.tau_x_se.into(),
                        r.tau_y_se.into(),
                    ]);
                }
            }
            Ok(Outcome {
                tables: vec![("fresh_se.csv", t)],
                results: json!({ "max_relative_deviation": worst }),
                seeds: json!({ "seed": cfg.seed, "mc_seed": cfg.mc_seed, "runs": run_seeds }),
            })
        }
        Experiment::CoupledRun {
            coupling,
            delta_x,
            delta_y,
            n_block,
            runs,
            max_iter,
            empirical_phi,
        } => {
            let ev = evaluator()?;
            let w = weight(coupling)?;
            let params = CoupledParams {
                delta_x: *delta_x,
                delta_y: *delta_y,
                sigma2_x: sigma2.0,
                sigma2_y: sigma2.1,
            };
            let se = coupled_se_run(&ev, &w, &params, &se_options(coupling))?;
            let run_seeds: Vec<u64> = if *n_block > 0 {
                (0..*runs as u64).map(|i| derive_seed(cfg.seed, RUN_SEED_LABEL, i)).collect()
            } else {
                Vec::new()
            };
            let options = CoupledMampOptions {
                max_iter: *max_iter,
                stop_tol: 0.0,
                empirical: *empirical_phi,
            };
            let amp = run_seeds
                .par_iter()
                .map(|&s| {
                    let p = make_coupled_problem(&cfg.source, &w, *delta_x, *delta_y, *n_block, sigma2, s)?;
                    coupled_mamp_run(&p.a, &p.b, &p.u, &p.v, &cfg.source, &se.states, &options, Some((&p.x0, &p.y0)))
                })
                .collect::<mamp::Result<Vec<_>>>()?;
            // ψ(t) predicts the block MSE of the estimate produced at step t − 2
            let empirical = |t: usize, terminal: usize, block: usize| -> Cell {
                if amp.is_empty() || t < 2 {
                    return Cell::Empty;
                }
                let vals: Vec<f64> = amp
                    .iter()
                    .filter_map(|o| o.trace.records.get(t - 2))
                    .map(|r| if terminal == 0 { r.block_mse_x[block] } else { r.block_mse_y[block] })
                    .collect();
                if vals.len() < amp.len() {
                    Cell::Empty
                } else {
                    Cell::Float(vals.iter().sum::<f64>() / vals.len() as f64)
                }
            };
            let mut wave = Table::new(&["t", "terminal", "block", "psi", "empirical_mse"]);
            let mut recovered_x = Vec::new();
            let mut recovered_y = Vec::new();
            for s in &se.states {
                for (term, psi) in [(0, &s.psi_x), (1, &s.psi_y)] {
                    for (b, &p) in psi.iter().enumerate() {
                        wave.push(vec![
                            s.t.into(),
                            if term == 0 { "x" } else { "y" }.into(),
                            b.into(),
                            p.into(),
                            empirical(s.t, term, b),
                        ]);
                    }
                }
                recovered_x.push(s.psi_x.iter().filter(|&&p| p < coupling.threshold).count());
                recovered_y.push(s.psi_y.iter().filter(|&&p| p < coupling.threshold).count());
            }
            Ok(Outcome {
                tables: vec![("wave.csv", wave)],
                results: json!({
                    "outcome": format!("{:?}", se.outcome),
                    "recovered_at": se.recovered_at,
                    "iterations": se.states.len() - 1,
                    "recovered_blocks_x": recovered_x.last(),
                    "recovered_blocks_y": recovered_y.last(),
                    "overall_rate_x": w.overall_rate(*delta_x),
                    "overall_rate_y": w.overall_rate(*delta_y),
                }),
                seeds: json!({ "seed": cfg.seed, "mc_seed": cfg.mc_seed, "runs": run_seeds }),
            })
        }
        Experiment::PhaseBoundary {
            coupling,
            delta_x,
            lo,
            hi,
            tol,
        } => {
            let ev = evaluator()?;
            let w = weight(coupling)?;
            let opts = BoundaryOptions {
                lo: *lo,
                hi: *hi,
                tol: *tol,
                sigma2_x: sigma2.0,
                sigma2_y: sigma2.1,
                se: CoupledSeOptions {
                    stop_on_stall: true,
                    ..se_options(coupling)
                },
            };
            let mut points = delta_x
                .par_iter()
                .map(|&dx| boundary_point(&ev, &w, dx, &opts))
                .collect::<mamp::Result<Vec<_>>>()?;
            flag_non_monotone(&mut points, *tol);
            let extent = hi.max(delta_x.iter().cloned().fold(0.0, f64::max));
            let corners = pentagon(&ev, extent)?;
            let mut b = Table::new(&["delta_x", "delta_y_boundary", "converged_T", "delta_y_failing", "anomaly"]);
            for p in &points {
                b.push(vec![
                    p.delta_x.into(),
                    p.delta_y.into(),
                    p.converged_t.map_or(Cell::Empty, Cell::from),
                    p.delta_y_failing.into(),
                    p.anomaly.as_deref().map_or(Cell::Empty, Cell::from),
                ]);
            }
            let mut pt = Table::new(&["rho_x", "rho_y"]);
            for &(x, y) in &corners {
                pt.push(vec![x.into(), y.into()]);
            }
            Ok(Outcome {
                tables: vec![("boundary.csv", b), ("pentagon.csv", pt)],
                results: json!({
                    "points": points.len(),
                    "anomalies": points.iter().filter(|p| p.anomaly.is_some()).count(),
                }),
                seeds: base_seeds,
            })
        }
    }
}

fn rid(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let d = rid_summary(&cfg.source)?;
    let values = [
        ("d_x", d.d_x),
        ("d_y", d.d_y),
        ("d_joint", d.d_joint),
        ("d_x_given_y", d.d_x_given_y),
        ("d_y_given_x", d.d_y_given_x),
    ];
    let mut t = Table::new(&["quantity", "value"]);
    let mut results = serde_json::Map::new();
    for (name, v) in values {
        t.push(vec![name.into(), v.into()]);
        results.insert(name.into(), json!(v));
    }
    Ok(Outcome {
        tables: vec![("rid.csv", t)],
        results: Json::Object(results),
        seeds: json!({ "seed": cfg.seed }),
    })
}

fn weight(c: &CouplingConfig) -> Result<WeightMatrix, RunError> {
    build_weight_matrix(c.l_c, c.w, c.seed_blocks, c.seed_boost).map_err(|e| {
        RunError::Config(vec![Diagnostic {
            field: "coupling".into(),
            message: e.to_string(),
        }])
    })
}

fn se_options(c: &CouplingConfig) -> CoupledSeOptions {
    CoupledSeOptions {
        max_iter: c.iterations,
        threshold: c.threshold,
        ..Default::default()
    }
}

fn mean_sd(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = vals.collect();
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}
