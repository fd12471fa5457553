use mamp::coupling::{
    boundary_point, build_weight_matrix, coupled_mamp_run, coupled_se_run, make_coupled_problem, BoundaryOptions,
    CoupledMampOptions, CoupledParams, CoupledSeOptions, Outcome, WeightMatrix,
};
use mamp::rng::derive_seed;
use mamp::{McBudget, MmseEvaluator, SourceSpec};

fn small_chain() -> WeightMatrix {
    build_weight_matrix(8, 1, 1, 1.0).unwrap()
}

#[test]
fn psi_is_non_increasing_in_t() {
    let ev = MmseEvaluator::new(&SourceSpec::reference(), McBudget::new(5000, 1)).unwrap();
    for (dx, dy) in [(0.6, 0.6), (0.5, 0.2), (0.3, 0.3)] {
        let opts = CoupledSeOptions { max_iter: 80, stop_on_recovery: false, ..Default::default() };
        let run = coupled_se_run(&ev, &small_chain(), &CoupledParams::noiseless(dx, dy), &opts).unwrap();
        for pair in run.states.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            for (p, q) in a.psi_x.iter().zip(&b.psi_x).chain(a.psi_y.iter().zip(&b.psi_y)) {
                assert!(*q <= p * (1.0 + 1e-6) + 1e-10, "({dx}, {dy}) t = {}: {p} -> {q}", b.t);
            }
        }
    }
}

#[test]
fn low_y_rate_stalls_while_x_recovers() {
    let ev = MmseEvaluator::new(&SourceSpec::reference(), McBudget::new(5000, 2)).unwrap();
    let opts = CoupledSeOptions { max_iter: 300, stop_on_stall: true, ..Default::default() };
    let run = coupled_se_run(&ev, &small_chain(), &CoupledParams::noiseless(0.7, 0.15), &opts).unwrap();
    assert!(!run.recovered());
    assert_eq!(run.outcome, Outcome::Stalled);
    let last = run.last();
    assert!(last.psi_x.iter().all(|&p| p < opts.threshold), "{:?}", last.psi_x);
    assert!(last.psi_y.iter().any(|&p| p >= opts.threshold));
}

/// First iteration at which each block falls below `level`.
fn crossing(series: &[Vec<f64>], level: f64) -> Vec<Option<usize>> {
    let blocks = series.first().map_or(0, Vec::len);
    (0..blocks).map(|b| series.iter().position(|v| v[b] < level)).collect()
}

/// Seed-averaged per-block MSE of the x-track next to the SE prediction for
/// the same iterate.
fn block_mse_x(
    w: &WeightMatrix,
    (dx, dy): (f64, f64),
    n_block: usize,
    iters: usize,
    empirical: bool,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let spec = SourceSpec::reference();
    let ev = MmseEvaluator::new(&spec, McBudget::new(20_000, 3)).unwrap();
    let se_opts = CoupledSeOptions { max_iter: iters + 2, stop_on_recovery: false, ..Default::default() };
    let se = coupled_se_run(&ev, w, &CoupledParams::noiseless(dx, dy), &se_opts).unwrap();
    let seeds = 5;
    let mut mean = vec![vec![0.0; w.col_blocks()]; iters];
    for s in 0..seeds {
        let p = make_coupled_problem(&spec, w, dx, dy, n_block, (0.0, 0.0), derive_seed(77, 0, s)).unwrap();
        let opts = CoupledMampOptions { max_iter: iters, stop_tol: 0.0, empirical };
        let out = coupled_mamp_run(&p.a, &p.b, &p.u, &p.v, &spec, &se.states, &opts, Some((&p.x0, &p.y0))).unwrap();
        for (m, r) in mean.iter_mut().zip(&out.trace.records) {
            for (v, e) in m.iter_mut().zip(&r.block_mse_x) {
                *v += e / seeds as f64;
            }
        }
    }
    let predicted = (0..iters).map(|t| se.states[t + 2].psi_x.clone()).collect();
    (mean, predicted)
}

#[test]
fn block_mse_tracks_psi() {
    for empirical in [false, true] {
        let (mean, predicted) = block_mse_x(&small_chain(), (0.6, 0.6), 400, 8, empirical);
        for t in 2..8 {
            for (b, (m, p)) in mean[t].iter().zip(&predicted[t]).enumerate() {
                assert!((m / p - 1.0).abs() < 0.2, "empirical {empirical}, t = {t}, block {b}: {m} vs {p}");
            }
        }
    }
}

#[test]
fn recovery_order_follows_the_wave() {
    let w = build_weight_matrix(16, 2, 3, 1.0).unwrap();
    let (mean, predicted) = block_mse_x(&w, (1.1 * 0.44, 1.1 * 0.248), 400, 130, true);
    let level = 1e-2;
    let (emp, th) = (crossing(&mean, level), crossing(&predicted, level));
    assert!(th.iter().all(Option::is_some), "{th:?}");
    let (mut agree, mut pairs) = (0, 0);
    for i in 0..emp.len() {
        for j in i + 1..emp.len() {
            let (ti, tj) = (th[i].unwrap(), th[j].unwrap());
            if ti == tj {
                continue;
            }
            pairs += 1;
            if let (Some(ei), Some(ej)) = (emp[i], emp[j]) {
                if (ei as i64 - ej as i64).signum() == (ti as i64 - tj as i64).signum() {
                    agree += 1;
                }
            }
        }
    }
    assert!(agree as f64 >= 0.9 * pairs as f64, "{agree}/{pairs}: {emp:?} vs {th:?}");
}

#[test]
fn boundary_is_symmetric_under_swapping_terminals() {
    let spec = SourceSpec::from_rows(&[vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0]], &[0.15, 0.3, 0.25]).unwrap();
    let swapped = spec.permute_terminals(&[1, 0]).unwrap();
    let budget = McBudget::new(5000, 4);
    let (ev, ev_swapped) = (MmseEvaluator::new(&spec, budget).unwrap(), MmseEvaluator::new(&swapped, budget).unwrap());
    let w = small_chain();
    let opts = BoundaryOptions { lo: 0.05, hi: 1.0, tol: 0.01, ..Default::default() };
    let p = boundary_point(&ev, &w, 0.7, &opts).unwrap();
    assert!(p.anomaly.is_none());
    let margin = 0.03;
    let run = |dx: f64, dy: f64| {
        coupled_se_run(&ev_swapped, &w, &CoupledParams::noiseless(dx, dy), &opts.se).unwrap().recovered()
    };
    assert!(run(p.delta_y + margin, 0.7), "swapped source fails above {}", p.delta_y);
    assert!(!run(p.delta_y_failing - margin, 0.7), "swapped source recovers below {}", p.delta_y_failing);
}
