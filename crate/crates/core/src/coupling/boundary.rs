use serde::{Deserialize, Serialize};

use super::se::{coupled_se_run, CoupledParams, CoupledSeOptions};
use super::weight::WeightMatrix;
use crate::error::{Error, Result};
use crate::estimator::MmseEvaluator;
use crate::source::rid_summary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryOptions {
    /// `δ_y` bracket searched at every `δ_x`
    pub lo: f64,
    pub hi: f64,
    /// bisection stops once the bracket is narrower than this
    pub tol: f64,
    pub sigma2_x: f64,
    pub sigma2_y: f64,
    pub se: CoupledSeOptions,
}

impl Default for BoundaryOptions {
    fn default() -> Self {
        Self {
            lo: 0.05,
            hi: 1.0,
            tol: 0.005,
            sigma2_x: 0.0,
            sigma2_y: 0.0,
            se: CoupledSeOptions {
                stop_on_stall: true,
                ..Default::default()
            },
        }
    }
}

/// Smallest recovering `δ_y` found at one `δ_x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub delta_x: f64,
    /// upper end of the final bracket: the smallest `δ_y` seen to recover
    pub delta_y: f64,
    /// lower end of the final bracket: the largest `δ_y` seen to fail
    pub delta_y_failing: f64,
    /// iteration at which the run at `delta_y` recovered
    pub converged_t: Option<usize>,
    /// bracket ends that contradict a monotone success region
    pub anomaly: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryResult {
    pub points: Vec<BoundaryPoint>,
    /// vertices of the achievable region's lower boundary, for overlay
    pub pentagon: Vec<(f64, f64)>,
}

/// Lower boundary of `{ρ_x ≥ d(X|Y), ρ_y ≥ d(Y|X), ρ_x + ρ_y ≥ d(X,Y)}`
/// as a polyline from `(d(X|Y), extent)` to `(extent, d(Y|X))`.
pub fn pentagon(ev: &MmseEvaluator, extent: f64) -> Result<Vec<(f64, f64)>> {
    let d = rid_summary(ev.spec())?;
    Ok(vec![
        (d.d_x_given_y, extent),
        (d.d_x_given_y, d.d_y),
        (d.d_x, d.d_y_given_x),
        (extent, d.d_y_given_x),
    ])
}

/// Bisects `δ_y` at fixed `δ_x` for the smallest value whose coupled state
/// evolution recovers every block within `T` iterations.
pub fn boundary_point(
    ev: &MmseEvaluator,
    w: &WeightMatrix,
    delta_x: f64,
    opts: &BoundaryOptions,
) -> Result<BoundaryPoint> {
    if !(opts.lo > 0.0 && opts.lo < opts.hi && opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "bad bisection bracket [{}, {}] with tol {}",
            opts.lo, opts.hi, opts.tol
        )));
    }
    let run = |delta_y: f64| {
        let p = CoupledParams {
            delta_x,
            delta_y,
            sigma2_x: opts.sigma2_x,
            sigma2_y: opts.sigma2_y,
        };
        coupled_se_run(ev, w, &p, &opts.se).map(|r| (r.recovered(), r.recovered_at))
    };
    let (hi_ok, hi_t) = run(opts.hi)?;
    if !hi_ok {
        return Ok(BoundaryPoint {
            delta_x,
            delta_y: f64::NAN,
            delta_y_failing: opts.hi,
            converged_t: None,
            anomaly: Some(format!("no recovery at the upper bracket delta_y = {}", opts.hi)),
        });
    }
    let (lo_ok, lo_t) = run(opts.lo)?;
    if lo_ok {
        return Ok(BoundaryPoint {
            delta_x,
            delta_y: opts.lo,
            delta_y_failing: f64::NAN,
            converged_t: lo_t,
            anomaly: Some(format!("already recovers at the lower bracket delta_y = {}", opts.lo)),
        });
    }
    let (mut lo, mut hi, mut t_hi) = (opts.lo, opts.hi, hi_t);
    while hi - lo > opts.tol {
        let mid = 0.5 * (lo + hi);
        let (ok, t) = run(mid)?;
        if ok {
            hi = mid;
            t_hi = t;
        } else {
            lo = mid;
        }
    }
    Ok(BoundaryPoint {
        delta_x,
        delta_y: hi,
        delta_y_failing: lo,
        converged_t: t_hi,
        anomaly: None,
    })
}

/// [`boundary_point`] over a grid of `δ_x`, plus the pentagon for overlay.
/// A `δ_x` whose boundary rises above that of a smaller `δ_x` by more than
/// the tolerance is flagged as non-monotone.
pub fn phase_boundary_search(
    ev: &MmseEvaluator,
    w: &WeightMatrix,
    delta_x: &[f64],
    opts: &BoundaryOptions,
) -> Result<BoundaryResult> {
    let mut points = delta_x
        .iter()
        .map(|&dx| boundary_point(ev, w, dx, opts))
        .collect::<Result<Vec<_>>>()?;
    flag_non_monotone(&mut points, opts.tol);
    Ok(BoundaryResult {
        points,
        pentagon: pentagon(ev, opts.hi.max(delta_x.iter().cloned().fold(0.0, f64::max)))?,
    })
}

/// Marks points whose boundary exceeds the boundary at a smaller `δ_x`.
pub fn flag_non_monotone(points: &mut [BoundaryPoint], tol: f64) {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| points[i].delta_x.total_cmp(&points[j].delta_x));
    let mut best = f64::INFINITY;
    for i in order {
        let p = &mut points[i];
        if p.delta_y.is_finite() {
            if p.delta_y > best + tol && p.anomaly.is_none() {
                p.anomaly = Some(format!(
                    "boundary {} exceeds {} found at a smaller delta_x",
                    p.delta_y, best
                ));
            }
            best = best.min(p.delta_y);
        }
    }
}
