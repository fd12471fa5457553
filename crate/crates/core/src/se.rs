//! Two-terminal state evolution.
//!
//! The effective noise of the MAMP iterates follows
//! `τ_o' = σ_o² + mmse_o(1/τ_x, 1/τ_y) / ρ_o`, started from `τ = (∞, ∞)`.
//! An infinite `τ` means the channel carries no information; the estimator
//! drops it instead of working with a huge variance.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{Denoiser, MmseEvaluator, NoiseModel, Scratch};
use crate::mamp::{make_ensemble, measure};
use crate::rng::derive_seed;
use crate::source::{sample_source, SourceSpec};

/// Fixed-point distortion below which a rate pair counts as recovered.
pub const RECOVERY_THRESHOLD: f64 = 1e-4;

/// Effective noise variances `(τ_x, τ_y)` of the two terminals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarState {
    pub tau_x: f64,
    pub tau_y: f64,
}

impl ScalarState {
    /// `τ⁻¹ = (∞, ∞)`: nothing has been observed yet.
    pub const INITIAL: Self = Self {
        tau_x: f64::INFINITY,
        tau_y: f64::INFINITY,
    };

    pub fn new(tau_x: f64, tau_y: f64) -> Result<Self> {
        for (name, t) in [("tau_x", tau_x), ("tau_y", tau_y)] {
            if t.is_nan() || t <= 0.0 {
                return Err(Error::InvalidArgument(format!("{name} = {t} must be positive")));
            }
        }
        Ok(Self { tau_x, tau_y })
    }

    /// Channel SNRs `1/τ`, with `1/∞ = 0`.
    pub fn snr(&self) -> [f64; 2] {
        [self.tau_x, self.tau_y].map(|t| if t.is_infinite() { 0.0 } else { 1.0 / t })
    }

    pub fn noise(&self) -> Result<NoiseModel> {
        NoiseModel::diagonal(&[self.tau_x, self.tau_y])
    }

    fn max_change(&self, other: &Self) -> f64 {
        let d = |a: f64, b: f64| if a == b { 0.0 } else { (a - b).abs() };
        d(self.tau_x, other.tau_x).max(d(self.tau_y, other.tau_y))
    }
}

/// Rates and measurement-noise variances of one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeParams {
    pub rho_x: f64,
    pub rho_y: f64,
    pub sigma2_x: f64,
    pub sigma2_y: f64,
}

impl SeParams {
    pub fn noiseless(rho_x: f64, rho_y: f64) -> Self {
        Self {
            rho_x,
            rho_y,
            sigma2_x: 0.0,
            sigma2_y: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("rho_x", self.rho_x), ("rho_y", self.rho_y)] {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::InvalidArgument(format!("{name} = {r} must lie in (0, 1]")));
            }
        }
        for (name, s) in [("sigma2_x", self.sigma2_x), ("sigma2_y", self.sigma2_y)] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} = {s} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// One state-evolution step.
pub fn se_step(ev: &MmseEvaluator, params: &SeParams, state: ScalarState) -> Result<ScalarState> {
    params.validate()?;
    let m = ev.mmse(&state.snr())?;
    Ok(ScalarState {
        tau_x: params.sigma2_x + m[0] / params.rho_x,
        tau_y: params.sigma2_y + m[1] / params.rho_y,
    })
}

/// `τ⁰, τ¹, ..` for `iterations` steps from `(∞, ∞)`.
pub fn se_trajectory(
    ev: &MmseEvaluator,
    params: &SeParams,
    iterations: usize,
) -> Result<Vec<ScalarState>> {
    let mut out = Vec::with_capacity(iterations);
    let mut state = ScalarState::INITIAL;
    for _ in 0..iterations {
        state = se_step(ev, params, state)?;
        out.push(state);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub state: ScalarState,
    pub iterations: usize,
    pub converged: bool,
    /// `τ⁰ ..` up to and including `state`
    pub trajectory: Vec<ScalarState>,
}

/// Iterates [`se_step`] from `(∞, ∞)` until the largest change of `τ`
/// drops below `tol`. Non-convergence is flagged, not an error.
pub fn se_fixed_point(
    ev: &MmseEvaluator,
    params: &SeParams,
    opts: FixedPointOptions,
) -> Result<FixedPoint> {
    let mut state = ScalarState::INITIAL;
    let mut trajectory = Vec::new();
    for it in 1..=opts.max_iter {
        let next = se_step(ev, params, state)?;
        if !next.tau_x.is_finite() || !next.tau_y.is_finite() {
            return Err(Error::NonFinite { iteration: it });
        }
        trajectory.push(next);
        let change = next.max_change(&state);
        state = next;
        if change < opts.tol {
            return Ok(FixedPoint {
                state,
                iterations: it,
                converged: true,
                trajectory,
            });
        }
    }
    Ok(FixedPoint {
        state,
        iterations: opts.max_iter,
        converged: false,
        trajectory,
    })
}

/// Average per-terminal MSE `(ρ_x (τ_x − σ_x²) + ρ_y (τ_y − σ_y²)) / 2`
/// of the estimates produced from `state`'s predecessor.
pub fn distortion(params: &SeParams, state: &ScalarState) -> f64 {
    0.5 * (params.rho_x * (state.tau_x - params.sigma2_x)
        + params.rho_y * (state.tau_y - params.sigma2_y))
}

/// One cell of a rate-distortion sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub rho_x: f64,
    pub rho_y: f64,
    pub tau_x: f64,
    pub tau_y: f64,
    pub distortion: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl GridCell {
    pub fn recovered(&self) -> bool {
        self.distortion < RECOVERY_THRESHOLD
    }
}

/// Fixed-point distortion on the grid `rho_x × rho_y`, row-major in `rho_x`.
pub fn grid_cell(
    ev: &MmseEvaluator,
    rho_x: f64,
    rho_y: f64,
    sigma2: (f64, f64),
    opts: FixedPointOptions,
) -> Result<GridCell> {
    let params = SeParams {
        rho_x,
        rho_y,
        sigma2_x: sigma2.0,
        sigma2_y: sigma2.1,
    };
    let fp = se_fixed_point(ev, &params, opts)?;
    Ok(GridCell {
        rho_x,
        rho_y,
        tau_x: fp.state.tau_x,
        tau_y: fp.state.tau_y,
        distortion: distortion(&params, &fp.state),
        converged: fp.converged,
        iterations: fp.iterations,
    })
}

pub fn rate_distortion_grid(
    ev: &MmseEvaluator,
    rho_grid_x: &[f64],
    rho_grid_y: &[f64],
    sigma2: (f64, f64),
    opts: FixedPointOptions,
) -> Result<Vec<GridCell>> {
    let mut cells = Vec::with_capacity(rho_grid_x.len() * rho_grid_y.len());
    for &rx in rho_grid_x {
        for &ry in rho_grid_y {
            cells.push(grid_cell(ev, rx, ry, sigma2, opts)?);
        }
    }
    Ok(cells)
}

/// Empirical against predicted effective noise of one fresh-matrix iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreshRecord {
    pub iteration: usize,
    pub tau_x_empirical: f64,
    pub tau_y_empirical: f64,
    pub tau_x_se: f64,
    pub tau_y_se: f64,
}

/// Runs the Onsager-free iteration in which `A` and `B` are redrawn at every
/// step and reports the variance of `Aᵀ r + x − x₀` next to the SE
/// prediction. The denoiser is fed the SE variances.
pub fn fresh_matrix_se_check(
    ev: &MmseEvaluator,
    params: &SeParams,
    n: usize,
    iterations: usize,
    seed: u64,
) -> Result<Vec<FreshRecord>> {
    params.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    let spec: &SourceSpec = ev.spec();
    if spec.terminals() != 2 {
        return Err(Error::InvalidArgument("state evolution needs two terminals".into()));
    }
    let mx = ((params.rho_x * n as f64).round() as usize).max(1);
    let my = ((params.rho_y * n as f64).round() as usize).max(1);
    let s = sample_source(spec, n, derive_seed(seed, 0, 0))?;
    let x0 = DVector::from_iterator(n, s.row(0).iter().copied());
    let y0 = DVector::from_iterator(n, s.row(1).iter().copied());
    let tau = se_trajectory(ev, params, iterations)?;

    let mut x = DVector::zeros(n);
    let mut y = DVector::zeros(n);
    let mut scratch = Scratch::default();
    let mut out = Vec::with_capacity(iterations);
    for (t, state) in tau.iter().enumerate() {
        let a = make_ensemble(mx, n, derive_seed(seed, 1, t as u64))?;
        let b = make_ensemble(my, n, derive_seed(seed, 2, t as u64))?;
        let u = measure(&a, x0.as_slice(), params.sigma2_x, derive_seed(seed, 3, t as u64))?;
        let v = measure(&b, y0.as_slice(), params.sigma2_y, derive_seed(seed, 4, t as u64))?;
        let r = DVector::from_vec(u) - a.matrix() * &x;
        let q = DVector::from_vec(v) - b.matrix() * &y;
        let g = a.matrix().tr_mul(&r) + &x;
        let h = b.matrix().tr_mul(&q) + &y;
        let var = |e: DVector<f64>| e.norm_squared() / n as f64;
        out.push(FreshRecord {
            iteration: t,
            tau_x_empirical: var(&g - &x0),
            tau_y_empirical: var(&h - &y0),
            tau_x_se: state.tau_x,
            tau_y_se: state.tau_y,
        });
        let den = Denoiser::new(spec, &state.noise()?)?;
        let mut m = [0.0; 2];
        for j in 0..n {
            den.mean_into(&[g[j], h[j]], &mut scratch, &mut m);
            x[j] = m[0];
            y[j] = m[1];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::McBudget;

    fn reference_ev(samples: usize) -> MmseEvaluator {
        MmseEvaluator::new(&SourceSpec::reference(), McBudget::new(samples, 1)).unwrap()
    }

    fn gaussian_ev() -> MmseEvaluator {
        // two independent unit Gaussians
        let spec = SourceSpec::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[1.0, 1.0]).unwrap();
        MmseEvaluator::new(&spec, McBudget::new(1000, 0)).unwrap()
    }

    #[test]
    fn first_step_is_prior_variance_over_rate() {
        let ev = reference_ev(2000);
        let p = SeParams::noiseless(0.5, 0.8);
        let s = se_step(&ev, &p, ScalarState::INITIAL).unwrap();
        assert!((s.tau_x - 2.0 / 0.5).abs() < 1e-12);
        assert!((s.tau_y - 2.0 / 0.8).abs() < 1e-12);
    }

    #[test]
    fn gaussian_se_matches_wiener_recursion() {
        let ev = gaussian_ev();
        let p = SeParams {
            rho_x: 0.6,
            rho_y: 0.3,
            sigma2_x: 0.05,
            sigma2_y: 0.1,
        };
        let traj = se_trajectory(&ev, &p, 30).unwrap();
        let step = |tau: f64, rho: f64, s2: f64| s2 + tau / (1.0 + tau) / rho;
        let (mut tx, mut ty) = (1.0 / 0.6 + 0.05, 1.0 / 0.3 + 0.1);
        for s in &traj {
            assert!((s.tau_x - tx).abs() < 1e-9 * tx, "{} vs {tx}", s.tau_x);
            assert!((s.tau_y - ty).abs() < 1e-9 * ty);
            tx = step(tx, 0.6, 0.05);
            ty = step(ty, 0.3, 0.1);
        }
        // analytic fixed point of τ = σ² + τ/((1+τ)ρ)
        let fixed = |rho: f64, s2: f64| {
            let b = 1.0 - s2 - 1.0 / rho;
            (-b + (b * b + 4.0 * s2).sqrt()) / 2.0
        };
        let fp = se_fixed_point(&ev, &p, FixedPointOptions::default()).unwrap();
        assert!(fp.converged);
        assert!((fp.state.tau_x - fixed(0.6, 0.05)).abs() < 1e-6);
        assert!((fp.state.tau_y - fixed(0.3, 0.1)).abs() < 1e-6);
    }

    #[test]
    fn noise_floor_bounds_fixed_point() {
        let ev = reference_ev(4000);
        let p = SeParams {
            rho_x: 0.99,
            rho_y: 0.99,
            sigma2_x: 0.01,
            sigma2_y: 0.01,
        };
        let fp = se_fixed_point(&ev, &p, FixedPointOptions::default()).unwrap();
        assert!(fp.converged);
        assert!(fp.state.tau_x >= 0.01 && fp.state.tau_y >= 0.01);
    }

    #[test]
    fn full_rate_recovers() {
        let ev = reference_ev(4000);
        let cell = grid_cell(&ev, 1.0, 1.0, (0.0, 0.0), FixedPointOptions::default()).unwrap();
        assert!(cell.distortion < 1e-6, "{cell:?}");
        assert!(cell.recovered());
    }

    #[test]
    fn grid_is_row_major_and_flags_every_cell() {
        let ev = reference_ev(1000);
        let opts = FixedPointOptions {
            tol: 1e-8,
            max_iter: 5,
        };
        let cells = rate_distortion_grid(&ev, &[0.3, 0.9], &[0.4, 0.5, 0.6], (0.0, 0.0), opts).unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!((cells[1].rho_x, cells[1].rho_y), (0.3, 0.5));
        assert_eq!((cells[3].rho_x, cells[3].rho_y), (0.9, 0.4));
        assert!(cells.iter().all(|c| !c.converged && c.iterations == 5));
    }

    #[test]
    fn rejects_bad_rates() {
        let ev = reference_ev(100);
        assert!(se_step(&ev, &SeParams::noiseless(0.0, 0.5), ScalarState::INITIAL).is_err());
        assert!(se_step(&ev, &SeParams::noiseless(0.5, 1.5), ScalarState::INITIAL).is_err());
        assert!(ScalarState::new(0.0, 1.0).is_err());
    }

    #[test]
    fn fresh_matrix_iteration_zero_matches_prior() {
        let ev = reference_ev(5000);
        let p = SeParams {
            rho_x: 0.5,
            rho_y: 0.7,
            sigma2_x: 0.01,
            sigma2_y: 0.0,
        };
        let recs = fresh_matrix_se_check(&ev, &p, 1500, 3, 4).unwrap();
        let r0 = recs[0];
        assert!((r0.tau_x_empirical / r0.tau_x_se - 1.0).abs() < 0.1, "{r0:?}");
        assert!((r0.tau_y_empirical / r0.tau_y_se - 1.0).abs() < 0.1, "{r0:?}");
    }

    #[test]
    fn fresh_matrix_gaussian_matches_se() {
        let ev = gaussian_ev();
        let p = SeParams {
            rho_x: 0.5,
            rho_y: 0.8,
            sigma2_x: 0.01,
            sigma2_y: 0.02,
        };
        let seeds = 8;
        let mut avg = vec![(0.0, 0.0); 6];
        let mut se = Vec::new();
        for seed in 0..seeds {
            let recs = fresh_matrix_se_check(&ev, &p, 2000, 6, seed).unwrap();
            for (a, r) in avg.iter_mut().zip(&recs) {
                a.0 += r.tau_x_empirical / seeds as f64;
                a.1 += r.tau_y_empirical / seeds as f64;
            }
            se = recs.iter().map(|r| (r.tau_x_se, r.tau_y_se)).collect();
        }
        for (a, s) in avg.iter().zip(&se) {
            assert!((a.0 / s.0 - 1.0).abs() < 0.1, "{a:?} vs {s:?}");
            assert!((a.1 / s.1 - 1.0).abs() < 0.1, "{a:?} vs {s:?}");
        }
    }
}
