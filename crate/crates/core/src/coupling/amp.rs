use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ensemble::CoupledEnsemble;
use super::se::{inflow_snr, q_matrix, BlockState};
use crate::error::{Error, Result};
use crate::estimator::{Denoiser, NoiseModel, Scratch};
use crate::mamp::{check_finite, denoise_pair, mean_sq_diff};
use crate::source::SourceSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoupledMampOptions {
    pub max_iter: usize,
    pub stop_tol: f64,
    /// estimate `φ_r` per row block as `‖r_r‖² / M` from the current
    /// residuals instead of reading it from the schedule
    pub empirical: bool,
}

impl Default for CoupledMampOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            stop_tol: 1e-8,
            empirical: false,
        }
    }
}

/// Iteration `t` of a coupled run, i.e. the step producing `(x^{t+1}, y^{t+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledRecord {
    pub iteration: usize,
    pub residual_var_x: f64,
    pub residual_var_y: f64,
    /// overall MSE, when ground truth is supplied
    pub mse_x: Option<f64>,
    pub mse_y: Option<f64>,
    /// MSE per column block, when ground truth is supplied
    pub block_mse_x: Vec<f64>,
    pub block_mse_y: Vec<f64>,
    /// `ψ` predicted for `x^{t+1}`, `y^{t+1}`, if the schedule reaches that far
    pub psi_x: Vec<f64>,
    pub psi_y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledTrace {
    pub records: Vec<CoupledRecord>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledMampOutput {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub trace: CoupledTrace,
}

fn same_shape(a: &CoupledEnsemble, b: &CoupledEnsemble) -> Result<()> {
    if a.weight() != b.weight() {
        return Err(Error::InvalidArgument("both terminals must share one weight matrix".into()));
    }
    if a.n_block() != b.n_block() {
        return Err(Error::DimensionMismatch {
            what: "column block length of B",
            expected: a.n_block(),
            found: b.n_block(),
        });
    }
    Ok(())
}

/// Onsager vector at block granularity,
/// `b_r = (1/δ) Σ_c W_{r,c} Q̃_{r,c} ⟨∂η⟩_c`.
fn onsager(ens: &CoupledEnsemble, q: &DMatrix<f64>, jac: &[f64]) -> Vec<f64> {
    let w = ens.weight();
    let delta = ens.delta();
    (0..w.row_blocks())
        .map(|r| {
            (0..w.col_blocks())
                .map(|c| w.get(r, c) * q[(r, c)] * jac[c] / delta)
                .sum()
        })
        .collect()
}

/// Mean square of each of `blocks` equal row blocks of `r`.
fn block_power(r: &DVector<f64>, blocks: usize) -> Vec<f64> {
    let m = r.len() / blocks;
    (0..blocks).map(|k| r.rows(k * m, m).norm_squared() / m as f64).collect()
}

/// Coupled MAMP driven by a block state-evolution schedule.
///
/// Step `t` uses `se_states[t + 1]` (the first state whose `φ` is finite),
/// clamped to the last state: per column block `c` the denoiser sees SNRs
/// `Σ_u W_{u,c} / φ_u`, and the matched filter is weighted by
/// `Q̃_{r,c} = φ_r⁻¹ / Σ_k W_{k,c} φ_k⁻¹`. With `empirical` set the
/// schedule only supplies the recorded `ψ` predictions.
pub fn coupled_mamp_run(
    a: &CoupledEnsemble,
    b: &CoupledEnsemble,
    u: &[f64],
    v: &[f64],
    spec: &SourceSpec,
    se_states: &[BlockState],
    options: &CoupledMampOptions,
    truth: Option<(&[f64], &[f64])>,
) -> Result<CoupledMampOutput> {
    same_shape(a, b)?;
    let w = a.weight();
    let (l_r, l_c, nb) = (w.row_blocks(), w.col_blocks(), a.n_block());
    let n = a.cols();
    for (what, expected, found) in [
        ("u", a.rows(), u.len()),
        ("v", b.rows(), v.len()),
        ("source terminals", 2, spec.terminals()),
    ] {
        if expected != found {
            return Err(Error::DimensionMismatch {
                what,
                expected,
                found,
            });
        }
    }
    if let Some((x0, y0)) = truth {
        if x0.len() != n || y0.len() != n {
            return Err(Error::DimensionMismatch {
                what: "ground truth",
                expected: n,
                found: x0.len().min(y0.len()),
            });
        }
    }
    if se_states.len() < 2 {
        return Err(Error::InvalidArgument("need at least two block states".into()));
    }
    for s in se_states {
        if s.phi_x.len() != l_r || s.phi_y.len() != l_r || s.psi_x.len() != l_c || s.psi_y.len() != l_c {
            return Err(Error::InvalidArgument("block states do not match the weight matrix".into()));
        }
    }
    let state_at = |t: usize| &se_states[t.min(se_states.len() - 1)];

    let u = DVector::from_column_slice(u);
    let v = DVector::from_column_slice(v);
    let mut x = DVector::zeros(n);
    let mut y = DVector::zeros(n);
    let mut r_prev = DVector::zeros(a.rows());
    let mut s_prev = DVector::zeros(b.rows());
    let mut bx = vec![0.0; l_r];
    let mut by = vec![0.0; l_r];
    let mut scratch = Scratch::default();
    let mut records = Vec::new();
    let mut converged = false;
    let mut last: Option<(f64, f64)> = None;

    for t in 0..options.max_iter {
        let st = state_at(t + 1);
        let mut r = &u - a.mul(&x);
        let mut s = &v - b.mul(&y);
        for blk in 0..l_r {
            let (ma, mb) = (a.m_block(), b.m_block());
            r.rows_mut(blk * ma, ma).axpy(bx[blk], &r_prev.rows(blk * ma, ma), 1.0);
            s.rows_mut(blk * mb, mb).axpy(by[blk], &s_prev.rows(blk * mb, mb), 1.0);
        }
        let (phi_x, phi_y) = if options.empirical {
            (block_power(&r, l_r), block_power(&s, l_r))
        } else {
            (st.phi_x.clone(), st.phi_y.clone())
        };
        let qx = q_matrix(&phi_x, w);
        let qy = q_matrix(&phi_y, w);
        let g = a.weighted_tr_mul(&qx, &r) + &x;
        let h = b.weighted_tr_mul(&qy, &s) + &y;
        check_finite(g.as_slice(), t)?;
        check_finite(h.as_slice(), t)?;
        let snr_x = inflow_snr(w, &phi_x);
        let snr_y = inflow_snr(w, &phi_y);

        let mut x_next = DVector::zeros(n);
        let mut y_next = DVector::zeros(n);
        let mut jx = vec![0.0; l_c];
        let mut jy = vec![0.0; l_c];
        for c in 0..l_c {
            let den = Denoiser::new(spec, &NoiseModel::from_snr(&[snr_x[c], snr_y[c]])?)?;
            let range = c * nb..(c + 1) * nb;
            (jx[c], jy[c]) = denoise_pair(
                &den,
                &g.as_slice()[range.clone()],
                &h.as_slice()[range.clone()],
                &mut x_next.as_mut_slice()[range.clone()],
                &mut y_next.as_mut_slice()[range],
                &mut scratch,
            );
        }
        check_finite(x_next.as_slice(), t)?;
        check_finite(y_next.as_slice(), t)?;
        bx = onsager(a, &qx, &jx);
        by = onsager(b, &qy, &jy);

        let (mut bmx, mut bmy) = (Vec::new(), Vec::new());
        let mut mse = None;
        if let Some((x0, y0)) = truth {
            for c in 0..l_c {
                let rg = c * nb..(c + 1) * nb;
                bmx.push(mean_sq_diff(&x_next.as_slice()[rg.clone()], &x0[rg.clone()]));
                bmy.push(mean_sq_diff(&y_next.as_slice()[rg.clone()], &y0[rg]));
            }
            mse = Some((mean_sq_diff(x_next.as_slice(), x0), mean_sq_diff(y_next.as_slice(), y0)));
        }
        let pred = se_states.get(t + 2);
        records.push(CoupledRecord {
            iteration: t,
            residual_var_x: r.norm_squared() / a.rows() as f64,
            residual_var_y: s.norm_squared() / b.rows() as f64,
            mse_x: mse.map(|m| m.0),
            mse_y: mse.map(|m| m.1),
            block_mse_x: bmx,
            block_mse_y: bmy,
            psi_x: pred.map_or_else(Vec::new, |p| p.psi_x.clone()),
            psi_y: pred.map_or_else(Vec::new, |p| p.psi_y.clone()),
        });

        let change = match mse {
            Some((mx, my)) => {
                let c = last.map(|(px, py)| (mx - px).abs().max((my - py).abs()));
                last = Some((mx, my));
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
    Ok(CoupledMampOutput {
        x: x.data.into(),
        y: y.data.into(),
        trace: CoupledTrace {
            iterations: records.len(),
            records,
            converged,
        },
    })
}
