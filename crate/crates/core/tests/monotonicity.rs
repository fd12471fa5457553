//! Order properties of state evolution on random sources. One evaluator per
//! case, so every comparison uses common random numbers.

use mamp::se::{distortion, se_fixed_point, se_step, se_trajectory, FixedPointOptions, ScalarState, SeParams};
use mamp::{McBudget, MmseEvaluator, SourceSpec};
use nalgebra::DMatrix;
use proptest::prelude::*;

const REL: f64 = 1e-9;
// Monte-Carlo jitter once the iteration has converged to zero
const FLOOR: f64 = 1e-10;

fn arb_spec() -> impl Strategy<Value = SourceSpec> {
    (2usize..=3)
        .prop_flat_map(|k| {
            (
                proptest::collection::vec(-2i32..=2, 2 * k),
                proptest::collection::vec(0.05f64..=1.0, k),
                Just(k),
            )
        })
        .prop_filter_map("rows must be nonzero", |(m, alphas, k)| {
            let mixing = DMatrix::from_fn(2, k, |r, c| m[r * k + c] as f64);
            if mixing.row_iter().any(|r| r.iter().all(|&v| v == 0.0)) {
                return None;
            }
            SourceSpec::new(mixing, alphas).ok()
        })
}

fn evaluator(spec: &SourceSpec, seed: u64) -> MmseEvaluator {
    MmseEvaluator::new(spec, McBudget::new(2000, seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trajectories_never_increase(
        spec in arb_spec(),
        rho_x in 0.1f64..=1.0,
        rho_y in 0.1f64..=1.0,
        sigma2 in prop_oneof![Just(0.0), 1e-4f64..0.1],
        seed in 0u64..1000,
    ) {
        let ev = evaluator(&spec, seed);
        let params = SeParams { rho_x, rho_y, sigma2_x: sigma2, sigma2_y: sigma2 };
        let traj = se_trajectory(&ev, &params, 40).unwrap();
        for (t, w) in traj.windows(2).enumerate() {
            prop_assert!(w[1].tau_x <= w[0].tau_x * (1.0 + REL) + FLOOR, "x at {}: {:?}", t, w);
            prop_assert!(w[1].tau_y <= w[0].tau_y * (1.0 + REL) + FLOOR, "y at {}: {:?}", t, w);
        }
    }

    #[test]
    fn step_is_monotone_in_the_state(
        spec in arb_spec(),
        rho_x in 0.1f64..=1.0,
        rho_y in 0.1f64..=1.0,
        tau in (1e-4f64..10.0, 1e-4f64..10.0),
        scale in (1.0f64..5.0, 1.0f64..5.0),
        seed in 0u64..1000,
    ) {
        let ev = evaluator(&spec, seed);
        let params = SeParams::noiseless(rho_x, rho_y);
        let small = ScalarState::new(tau.0, tau.1).unwrap();
        let large = ScalarState::new(tau.0 * scale.0, tau.1 * scale.1).unwrap();
        let a = se_step(&ev, &params, small).unwrap();
        let b = se_step(&ev, &params, large).unwrap();
        prop_assert!(a.tau_x <= b.tau_x * (1.0 + REL), "{:?} vs {:?}", a, b);
        prop_assert!(a.tau_y <= b.tau_y * (1.0 + REL), "{:?} vs {:?}", a, b);
    }

    #[test]
    fn distortion_never_increases_with_rate(
        spec in arb_spec(),
        rho in (0.1f64..=0.9, 0.1f64..=0.9),
        bump in 0.01f64..0.3,
        which in 0usize..2,
        seed in 0u64..1000,
    ) {
        let ev = evaluator(&spec, seed);
        let opts = FixedPointOptions { tol: 1e-10, max_iter: 300 };
        let low = SeParams::noiseless(rho.0, rho.1);
        let mut high = low;
        if which == 0 {
            high.rho_x = (rho.0 + bump).min(1.0);
        } else {
            high.rho_y = (rho.1 + bump).min(1.0);
        }
        let dl = distortion(&low, &se_fixed_point(&ev, &low, opts).unwrap().state);
        let dh = distortion(&high, &se_fixed_point(&ev, &high, opts).unwrap().state);
        prop_assert!(dh <= dl + 1e-6, "{:?}: {} vs {:?}: {}", low, dl, high, dh);
    }
}
