//! Degenerate configurations that must collapse onto simpler algorithms.

use mamp::coupling::{
    coupled_mamp_run, coupled_se_run, make_coupled_problem, CoupledMampOptions, CoupledParams,
    CoupledSeOptions, WeightMatrix,
};
use mamp::mamp::{make_problem, mamp_run, MampOptions, TauSchedule};
use mamp::se::{se_trajectory, ScalarState, SeParams};
use mamp::{McBudget, MmseEvaluator, SourceSpec};
use nalgebra::{DMatrix, DVector};

fn normal_pdf(x: f64, var: f64) -> f64 {
    (-0.5 * x * x / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Posterior mean and its derivative for `X ~ (1−α) δ₀ + α N(0, 1/α)` seen
/// through `g = X + N(0, τ)`.
fn bg_denoiser(g: f64, alpha: f64, tau: f64) -> (f64, f64) {
    let v = 1.0 / alpha;
    let p1 = alpha * normal_pdf(g, v + tau);
    let p0 = (1.0 - alpha) * normal_pdf(g, tau);
    let pi = p1 / (p0 + p1);
    let k = v / (v + tau);
    let dlog = g * (1.0 / tau - 1.0 / (v + tau));
    (pi * k * g, k * (pi + g * pi * (1.0 - pi) * dlog))
}

/// Single-terminal AMP, written without any of the library's machinery.
fn scalar_amp(a: &DMatrix<f64>, u: &[f64], alpha: f64, taus: &[f64]) -> Vec<Vec<f64>> {
    let (m, n) = a.shape();
    let rho = m as f64 / n as f64;
    let u = DVector::from_column_slice(u);
    let mut x = DVector::zeros(n);
    let mut r_prev = DVector::zeros(m);
    let mut onsager = 0.0;
    let mut out = Vec::new();
    for &tau in taus {
        let r = &u - a * &x + &r_prev * onsager;
        let g = a.tr_mul(&r) + &x;
        let mut jac = 0.0;
        let next = DVector::from_iterator(
            n,
            g.iter().map(|&gi| {
                let (e, d) = bg_denoiser(gi, alpha, tau);
                jac += d;
                e
            }),
        );
        onsager = jac / n as f64 / rho;
        x = next;
        r_prev = r;
        out.push(x.as_slice().to_vec());
    }
    out
}

#[test]
fn block_diagonal_source_splits_into_scalar_amp() {
    let spec = SourceSpec::new(DMatrix::identity(2, 2), vec![0.2, 0.35]).unwrap();
    let ev = MmseEvaluator::new(&spec, McBudget::new(20_000, 3)).unwrap();
    let (rho_x, rho_y, n, iters) = (0.6, 0.8, 800, 12);
    let traj = se_trajectory(&ev, &SeParams::noiseless(rho_x, rho_y), iters).unwrap();
    let p = make_problem(&spec, rho_x, rho_y, n, (0.0, 0.0), 21).unwrap();
    let mut opts = MampOptions::new(TauSchedule::Oracle(traj.clone()));
    opts.max_iter = iters;
    opts.stop_tol = 0.0;

    let mut xs = Vec::new();
    for k in 1..=iters {
        let o = MampOptions { max_iter: k, ..opts.clone() };
        xs.push(mamp_run(&p.a, &p.b, &p.u, &p.v, &spec, &o, None).unwrap().x);
    }
    let taus: Vec<f64> = traj.iter().map(|s| s.tau_x).collect();
    let oracle = scalar_amp(p.a.matrix(), &p.u, 0.2, &taus);
    for (t, (got, want)) in xs.iter().zip(&oracle).enumerate() {
        let err = got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "iteration {t}: max deviation {err:e}");
    }
    let mse = oracle.last().unwrap().iter().zip(&p.x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64;
    assert!(mse < 0.05, "the comparison should cover a run that makes progress, mse {mse}");
}

#[test]
fn single_block_coupling_is_plain_mamp() {
    let spec = SourceSpec::reference();
    let ev = MmseEvaluator::new(&spec, McBudget::new(20_000, 5)).unwrap();
    let w = WeightMatrix::from_entries(DMatrix::from_element(1, 1, 1.0)).unwrap();
    let (dx, dy, n, iters) = (0.5, 0.7, 600, 25);
    let se_opts = CoupledSeOptions {
        max_iter: iters + 1,
        stop_on_recovery: false,
        ..Default::default()
    };
    let se = coupled_se_run(&ev, &w, &CoupledParams::noiseless(dx, dy), &se_opts).unwrap();
    let cp = make_coupled_problem(&spec, &w, dx, dy, n, (0.0, 0.0), 8).unwrap();
    let coupled = coupled_mamp_run(
        &cp.a,
        &cp.b,
        &cp.u,
        &cp.v,
        &spec,
        &se.states,
        &CoupledMampOptions { max_iter: iters, stop_tol: 0.0, empirical: false },
        Some((&cp.x0, &cp.y0)),
    )
    .unwrap();

    // coupled step t runs on φ(t+1), the uncoupled τ^t
    let sched: Vec<ScalarState> = se.states[1..]
        .iter()
        .map(|s| ScalarState { tau_x: s.phi_x[0], tau_y: s.phi_y[0] })
        .collect();
    let p = make_problem(&spec, dx, dy, n, (0.0, 0.0), 8).unwrap();
    let plain = mamp_run(
        &p.a,
        &p.b,
        &p.u,
        &p.v,
        &spec,
        &MampOptions { schedule: TauSchedule::Oracle(sched), max_iter: iters, stop_tol: 0.0 },
        Some((&p.x0, &p.y0)),
    )
    .unwrap();

    assert_eq!(coupled.trace.records.len(), plain.trace.records.len());
    for (c, u) in coupled.trace.records.iter().zip(&plain.trace.records) {
        for (a, b) in [(c.mse_x, u.mse_x), (c.mse_y, u.mse_y)] {
            let (a, b) = (a.unwrap(), b.unwrap());
            assert!((a - b).abs() <= 1e-10 * b.max(1e-300).max(1.0), "iteration {}: {a} vs {b}", c.iteration);
        }
        assert!((c.residual_var_x - u.residual_var_x).abs() < 1e-10);
    }
    for (a, b) in coupled.x.iter().zip(&plain.x).chain(coupled.y.iter().zip(&plain.y)) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
    let (first, last) = (&plain.trace.records[0], plain.trace.records.last().unwrap());
    assert!(last.mse_y.unwrap() < 0.5 * first.mse_y.unwrap(), "run should make progress, {last:?}");
}
