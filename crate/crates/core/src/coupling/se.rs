use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::weight::WeightMatrix;
use crate::error::{Error, Result};
use crate::estimator::MmseEvaluator;

/// Per-block state evolution variables at one iteration: `φ` over row blocks
/// and `ψ` over column blocks, for each terminal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockState {
    pub t: usize,
    pub phi_x: Vec<f64>,
    pub phi_y: Vec<f64>,
    pub psi_x: Vec<f64>,
    pub psi_y: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoupledParams {
    pub delta_x: f64,
    pub delta_y: f64,
    pub sigma2_x: f64,
    pub sigma2_y: f64,
}

impl CoupledParams {
    pub fn noiseless(delta_x: f64, delta_y: f64) -> Self {
        Self {
            delta_x,
            delta_y,
            sigma2_x: 0.0,
            sigma2_y: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, d) in [("delta_x", self.delta_x), ("delta_y", self.delta_y)] {
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} = {d} must be positive")));
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

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoupledSeOptions {
    /// iterations `T`
    pub max_iter: usize,
    /// a block is recovered once `ψ` drops below this
    pub threshold: f64,
    /// stop as soon as every block of both terminals is recovered
    pub stop_on_recovery: bool,
    /// stop once no unrecovered block changes by more than `stall_tol`
    /// (relative) in one iteration
    pub stop_on_stall: bool,
    pub stall_tol: f64,
}

impl Default for CoupledSeOptions {
    fn default() -> Self {
        Self {
            max_iter: 400,
            threshold: 1e-4,
            stop_on_recovery: true,
            stop_on_stall: false,
            stall_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    /// every block below threshold
    Recovered,
    /// some block stopped moving above threshold
    Stalled,
    /// `T` iterations used without either
    Exhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledSeRun {
    /// `states[t]` for `t = 0 ..= iterations`; `states[0]` has `ψ = ∞`
    pub states: Vec<BlockState>,
    pub outcome: Outcome,
    /// first `t` with every block recovered
    pub recovered_at: Option<usize>,
}

impl CoupledSeRun {
    pub fn last(&self) -> &BlockState {
        self.states.last().expect("at least the initial state")
    }

    pub fn recovered(&self) -> bool {
        self.outcome == Outcome::Recovered
    }
}

/// `φ_a = σ² + (1/δ) Σ_i W_{a,i} ψ_i`, skipping zero weights so that
/// `0 · ∞` never occurs.
fn phi_from_psi(w: &WeightMatrix, psi: &[f64], sigma2: f64, delta: f64) -> Vec<f64> {
    (0..w.row_blocks())
        .map(|a| {
            let s: f64 = (0..w.col_blocks())
                .filter(|&i| w.get(a, i) > 0.0)
                .map(|i| w.get(a, i) * psi[i])
                .sum();
            sigma2 + s / delta
        })
        .collect()
}

/// `Σ_b W_{b,i} / φ_b` per column block, with `1/∞ = 0`.
pub(crate) fn inflow_snr(w: &WeightMatrix, phi: &[f64]) -> Vec<f64> {
    (0..w.col_blocks())
        .map(|i| {
            (0..w.row_blocks())
                .filter(|&b| w.get(b, i) > 0.0 && phi[b].is_finite())
                .map(|b| w.get(b, i) / phi[b])
                .sum()
        })
        .collect()
}

/// Block values of `Q̃_{r,c} = φ_r⁻¹ / Σ_k W_{k,c} φ_k⁻¹`. A column with no
/// finite inflow gets 0.
pub fn q_matrix(phi: &[f64], w: &WeightMatrix) -> DMatrix<f64> {
    let den = inflow_snr(w, phi);
    DMatrix::from_fn(w.row_blocks(), w.col_blocks(), |r, c| {
        if den[c] > 0.0 && phi[r].is_finite() {
            1.0 / phi[r] / den[c]
        } else {
            0.0
        }
    })
}

/// Block state evolution
/// `ψ_i(t+1) = mmse(Σ_b W_{b,i}/φ^x_b(t), Σ_b W_{b,i}/φ^y_b(t))` from
/// `ψ(0) = ∞`. Evaluations are cached by the exact SNR pair, so blocks that
/// see identical inflow cost one evaluation.
pub fn coupled_se_run(
    ev: &MmseEvaluator,
    w: &WeightMatrix,
    params: &CoupledParams,
    opts: &CoupledSeOptions,
) -> Result<CoupledSeRun> {
    params.validate()?;
    let l_c = w.col_blocks();
    let state_from = |t: usize, psi_x: Vec<f64>, psi_y: Vec<f64>| BlockState {
        t,
        phi_x: phi_from_psi(w, &psi_x, params.sigma2_x, params.delta_x),
        phi_y: phi_from_psi(w, &psi_y, params.sigma2_y, params.delta_y),
        psi_x,
        psi_y,
    };
    let mut states = vec![state_from(0, vec![f64::INFINITY; l_c], vec![f64::INFINITY; l_c])];
    let mut cache: HashMap<(u64, u64), [f64; 2]> = HashMap::new();
    let recovered = |s: &BlockState| {
        s.psi_x.iter().chain(&s.psi_y).all(|&p| p < opts.threshold)
    };
    let mut outcome = Outcome::Exhausted;
    let mut recovered_at = None;

    for t in 0..opts.max_iter {
        let cur = states.last().expect("nonempty");
        let sx = inflow_snr(w, &cur.phi_x);
        let sy = inflow_snr(w, &cur.phi_y);
        let mut psi_x = Vec::with_capacity(l_c);
        let mut psi_y = Vec::with_capacity(l_c);
        for i in 0..l_c {
            if !sx[i].is_finite() || !sy[i].is_finite() {
                return Err(Error::NonFinite { iteration: t });
            }
            let key = (sx[i].to_bits(), sy[i].to_bits());
            let m = match cache.get(&key) {
                Some(m) => *m,
                None => {
                    let v = ev.mmse(&[sx[i], sy[i]])?;
                    let m = [v[0], v[1]];
                    cache.insert(key, m);
                    m
                }
            };
            psi_x.push(m[0]);
            psi_y.push(m[1]);
        }
        let next = state_from(t + 1, psi_x, psi_y);
        let stalled = {
            let moved = |new: &[f64], old: &[f64]| {
                new.iter().zip(old).any(|(&a, &b)| {
                    a >= opts.threshold && !(b.is_finite() && (a - b).abs() <= opts.stall_tol * b)
                })
            };
            !moved(&next.psi_x, &cur.psi_x) && !moved(&next.psi_y, &cur.psi_y)
        };
        let done = recovered(&next);
        states.push(next);
        if done {
            recovered_at.get_or_insert(t + 1);
            if opts.stop_on_recovery {
                outcome = Outcome::Recovered;
                break;
            }
        } else if opts.stop_on_stall && stalled {
            outcome = Outcome::Stalled;
            break;
        }
    }
    if outcome == Outcome::Exhausted && recovered(states.last().expect("nonempty")) {
        outcome = Outcome::Recovered;
    }
    Ok(CoupledSeRun {
        states,
        outcome,
        recovered_at,
    })
}
