//! I.i.d. Gaussian measurement ensembles and the two-terminal AMP recursion.
//!
//! With `η = (η^x, η^y)` the joint MMSE denoiser at effective noise `τ^t`,
//!
//! ```text
//! r^t     = u − A x^t + (⟨∂₁η^x_{t−1}⟩ / ρ_x) r^{t−1}
//! s^t     = v − B y^t + (⟨∂₂η^y_{t−1}⟩ / ρ_y) s^{t−1}
//! x^{t+1} = η^x_t(Aᵀ r^t + x^t, Bᵀ s^t + y^t)
//! y^{t+1} = η^y_t(Aᵀ r^t + x^t, Bᵀ s^t + y^t)
//! ```
//!
//! started from `x⁰ = y⁰ = 0`, `r⁻¹ = s⁻¹ = 0`. The terminals only interact
//! through the denoiser.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{Denoiser, NoiseModel, Scratch};
use crate::rng::{derive_seed, stream_rng, Purpose, StreamId};
use crate::se::ScalarState;
use crate::source::{sample_source, SourceSpec};

/// An `m × n` matrix with i.i.d. `N(0, 1/m)` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianEnsemble {
    matrix: DMatrix<f64>,
    seed: u64,
}

/// Column-major Gaussian fill with entry variance `var`, from `id`'s stream.
pub(crate) fn gaussian_block(rows: usize, cols: usize, var: f64, seed: u64, id: StreamId) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, id);
    let sd = var.sqrt();
    DMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * sd
    })
}

pub fn make_ensemble(m: usize, n: usize, seed: u64) -> Result<GaussianEnsemble> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("ensemble dimensions must be positive".into()));
    }
    Ok(GaussianEnsemble {
        matrix: gaussian_block(m, n, 1.0 / m as f64, seed, StreamId::new(Purpose::Matrix)),
        seed,
    })
}

impl GaussianEnsemble {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// `ρ = m / n`
    pub fn rate(&self) -> f64 {
        self.rows() as f64 / self.cols() as f64
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Adds i.i.d. `N(0, noise_var)` draws to `y`.
pub(crate) fn add_noise(y: &mut [f64], noise_var: f64, seed: u64) -> Result<()> {
    if !(noise_var >= 0.0 && noise_var.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise variance {noise_var} must be >= 0")));
    }
    if noise_var > 0.0 {
        let mut rng = stream_rng(seed, StreamId::new(Purpose::MeasurementNoise));
        let sd = noise_var.sqrt();
        for v in y.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += sd * z;
        }
    }
    Ok(())
}

/// `A · signal + w` with `w ~ N(0, noise_var I)`.
pub fn measure(ens: &GaussianEnsemble, signal: &[f64], noise_var: f64, seed: u64) -> Result<Vec<f64>> {
    if signal.len() != ens.cols() {
        return Err(Error::DimensionMismatch {
            what: "signal",
            expected: ens.cols(),
            found: signal.len(),
        });
    }
    let mut y: Vec<f64> = (ens.matrix() * DVector::from_column_slice(signal)).data.into();
    add_noise(&mut y, noise_var, seed)?;
    Ok(y)
}

/// One synthetic two-terminal instance: source, matrices and measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub a: GaussianEnsemble,
    pub b: GaussianEnsemble,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Draws a source of length `n`, ensembles with `m_o = round(ρ_o n)` rows
/// and noisy measurements, all from child seeds of `seed`.
pub fn make_problem(
    spec: &SourceSpec,
    rho_x: f64,
    rho_y: f64,
    n: usize,
    sigma2: (f64, f64),
    seed: u64,
) -> Result<Problem> {
    let rows = |rho: f64| ((rho * n as f64).round() as usize).max(1);
    let s = sample_source(spec, n, derive_seed(seed, 0, 0))?;
    if s.nrows() != 2 {
        return Err(Error::InvalidArgument("MAMP needs a two-terminal source".into()));
    }
    let x0: Vec<f64> = s.row(0).iter().copied().collect();
    let y0: Vec<f64> = s.row(1).iter().copied().collect();
    let a = make_ensemble(rows(rho_x), n, derive_seed(seed, 1, 0))?;
    let b = make_ensemble(rows(rho_y), n, derive_seed(seed, 2, 0))?;
    let u = measure(&a, &x0, sigma2.0, derive_seed(seed, 3, 0))?;
    let v = measure(&b, &y0, sigma2.1, derive_seed(seed, 4, 0))?;
    Ok(Problem { x0, y0, a, b, u, v })
}

/// Where the denoiser's effective noise `τ^t` comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum TauSchedule {
    /// Precomputed state evolution `τ⁰, τ¹, ..`; the last entry is reused
    /// once the schedule runs out.
    Oracle(Vec<ScalarState>),
    /// `τ̂ = ‖r^t‖² / m` from the current residuals.
    Empirical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MampOptions {
    pub schedule: TauSchedule,
    pub max_iter: usize,
    pub stop_tol: f64,
}

impl MampOptions {
    pub fn new(schedule: TauSchedule) -> Self {
        Self {
            schedule,
            max_iter: 100,
            stop_tol: 1e-8,
        }
    }
}

/// What happened at iteration `t`, i.e. while computing `(x^{t+1}, y^{t+1})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `τ^t` handed to the denoiser
    pub tau_x: f64,
    pub tau_y: f64,
    /// `‖r^t‖² / m_x`, `‖s^t‖² / m_y`
    pub residual_var_x: f64,
    pub residual_var_y: f64,
    /// Onsager coefficients multiplying `r^{t−1}`, `s^{t−1}`
    pub onsager_x: f64,
    pub onsager_y: f64,
    /// `‖x^{t+1} − x₀‖² / n` when ground truth is supplied
    pub mse_x: Option<f64>,
    pub mse_y: Option<f64>,
    /// empirical variance of `Aᵀ r^t + x^t − x₀` when ground truth is supplied
    pub eff_var_x: Option<f64>,
    pub eff_var_y: Option<f64>,
    /// `τ^t` of an attached state-evolution prediction
    pub se_tau_x: Option<f64>,
    pub se_tau_y: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MampOutput {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub trace: RunTrace,
}

/// Mean squared difference of two equal-length vectors.
pub(crate) fn mean_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / a.len().max(1) as f64
}

/// Denoises every coordinate of `(g, h)` under `noise`, writing estimates and
/// returning the average Jacobians `(⟨∂₁η^x⟩, ⟨∂₂η^y⟩)`.
pub(crate) fn denoise_pair(
    den: &Denoiser,
    g: &[f64],
    h: &[f64],
    x: &mut [f64],
    y: &mut [f64],
    scratch: &mut Scratch,
) -> (f64, f64) {
    let (mut m, mut jac) = ([0.0; 2], [0.0; 2]);
    let (mut jx, mut jy) = (0.0, 0.0);
    for j in 0..g.len() {
        den.mean_and_jacobian_into(&[g[j], h[j]], scratch, &mut m, &mut jac);
        x[j] = m[0];
        y[j] = m[1];
        jx += jac[0];
        jy += jac[1];
    }
    let n = g.len().max(1) as f64;
    (jx / n, jy / n)
}

pub(crate) fn check_finite(v: &[f64], iteration: usize) -> Result<()> {
    if v.iter().all(|a| a.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { iteration })
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

/// Runs MAMP on `u = A x₀ + w_x`, `v = B y₀ + w_y`.
///
/// `truth` is only used to fill the MSE columns of the trace and the stopping
/// rule; without it the run stops on the mean squared change of the
/// estimates instead of the change in MSE.
pub fn mamp_run(
    a: &GaussianEnsemble,
    b: &GaussianEnsemble,
    u: &[f64],
    v: &[f64],
    spec: &SourceSpec,
    options: &MampOptions,
    truth: Option<(&[f64], &[f64])>,
) -> Result<MampOutput> {
    let n = a.cols();
    check_len("columns of B", n, b.cols())?;
    check_len("u", a.rows(), u.len())?;
    check_len("v", b.rows(), v.len())?;
    check_len("source terminals", 2, spec.terminals())?;
    if let Some((x0, y0)) = truth {
        check_len("true x", n, x0.len())?;
        check_len("true y", n, y0.len())?;
    }
    if let TauSchedule::Oracle(s) = &options.schedule {
        if s.is_empty() {
            return Err(Error::InvalidArgument("oracle schedule is empty".into()));
        }
    }
    let (am, bm) = (a.matrix(), b.matrix());
    let (rho_x, rho_y) = (a.rate(), b.rate());
    let u = DVector::from_column_slice(u);
    let v = DVector::from_column_slice(v);

    let mut x = DVector::zeros(n);
    let mut y = DVector::zeros(n);
    let mut r_prev = DVector::zeros(a.rows());
    let mut s_prev = DVector::zeros(b.rows());
    let (mut jx, mut jy) = (0.0, 0.0);
    let mut scratch = Scratch::default();
    let mut records = Vec::new();
    let mut converged = false;
    let mut last_mse: Option<(f64, f64)> = None;

    for t in 0..options.max_iter {
        let (ox, oy) = (jx / rho_x, jy / rho_y);
        let r = &u - am * &x + &r_prev * ox;
        let s = &v - bm * &y + &s_prev * oy;
        let g = am.tr_mul(&r) + &x;
        let h = bm.tr_mul(&s) + &y;
        let rvx = r.norm_squared() / a.rows() as f64;
        let rvy = s.norm_squared() / b.rows() as f64;
        let (tau, se_tau) = match &options.schedule {
            TauSchedule::Oracle(sched) => {
                let st = sched[t.min(sched.len() - 1)];
                (st, Some(st))
            }
            TauSchedule::Empirical => (ScalarState { tau_x: rvx, tau_y: rvy }, None),
        };
        check_finite(g.as_slice(), t)?;
        check_finite(h.as_slice(), t)?;
        if !(tau.tau_x > 0.0 && tau.tau_y > 0.0) {
            return Err(Error::NonFinite { iteration: t });
        }
        let den = Denoiser::new(spec, &NoiseModel::diagonal(&[tau.tau_x, tau.tau_y])?)?;
        let mut x_next = DVector::zeros(n);
        let mut y_next = DVector::zeros(n);
        (jx, jy) = denoise_pair(
            &den,
            g.as_slice(),
            h.as_slice(),
            x_next.as_mut_slice(),
            y_next.as_mut_slice(),
            &mut scratch,
        );
        check_finite(x_next.as_slice(), t)?;
        check_finite(y_next.as_slice(), t)?;

        let (mse, eff) = match truth {
            Some((x0, y0)) => (
                Some((mean_sq_diff(x_next.as_slice(), x0), mean_sq_diff(y_next.as_slice(), y0))),
                Some((mean_sq_diff(g.as_slice(), x0), mean_sq_diff(h.as_slice(), y0))),
            ),
            None => (None, None),
        };
        records.push(IterationRecord {
            iteration: t,
            tau_x: tau.tau_x,
            tau_y: tau.tau_y,
            residual_var_x: rvx,
            residual_var_y: rvy,
            onsager_x: ox,
            onsager_y: oy,
            mse_x: mse.map(|m| m.0),
            mse_y: mse.map(|m| m.1),
            eff_var_x: eff.map(|e| e.0),
            eff_var_y: eff.map(|e| e.1),
            se_tau_x: se_tau.map(|s| s.tau_x),
            se_tau_y: se_tau.map(|s| s.tau_y),
        });

        let change = match mse {
            Some((mx, my)) => {
                let c = last_mse.map(|(px, py)| (mx - px).abs().max((my - py).abs()));
                last_mse = Some((mx, my));
                c
            }
            None => Some(
                mean_sq_diff(x_next.as_slice(), x.as_slice())
                    .max(mean_sq_diff(y_next.as_slice(), y.as_slice())),
            ),
        };
        x = x_next;
        y = y_next;
        r_prev = r;
        s_prev = s;
        if change.is_some_and(|c| c < options.stop_tol) {
            converged = true;
            break;
        }
    }
    Ok(MampOutput {
        x: x.data.into(),
        y: y.data.into(),
        trace: RunTrace {
            iterations: records.len(),
            records,
            converged,
        },
    })
}
