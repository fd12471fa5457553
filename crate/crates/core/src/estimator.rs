//! MMSE denoising of a linearly correlated Bernoulli-Gaussian source observed
//! through additive Gaussian noise.
//!
//! Conditioned on the support pattern `θ` the source is Gaussian with
//! covariance `K(θ) = Φ(θ) Σ Φ(θ)ᵀ`, so the posterior is a finite mixture of
//! Gaussians. A [`Denoiser`] precomputes, for one noise model, the per-pattern
//! precision of the observation, the linear gain and the conditional
//! covariance. Evaluating it at an observation then only needs quadratic
//! forms and a log-sum-exp over the patterns.
//!
//! Channels whose noise variance is infinite are treated as absent: their
//! rows are dropped from the observation instead of being approximated by a
//! large variance.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Purpose, StreamId};
use crate::source::{draw_components, mix_into, pattern_prob, SourceSpec, ENUMERATION_CAP};

/// Relative ridge added to a covariance whose Cholesky factorization fails.
pub const RIDGE: f64 = 1e-12;

/// Additive Gaussian observation noise. An infinite diagonal entry marks an
/// absent channel; its row and column must otherwise be zero.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    covariance: DMatrix<f64>,
}

impl NoiseModel {
    pub fn new(covariance: DMatrix<f64>) -> Result<Self> {
        let t = covariance.nrows();
        if covariance.ncols() != t {
            return Err(Error::InvalidArgument("noise covariance must be square".into()));
        }
        for i in 0..t {
            let d = covariance[(i, i)];
            if d.is_nan() || d < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "noise variance {d} of terminal {i} is not a non-negative number"
                )));
            }
            for j in 0..t {
                let v = covariance[(i, j)];
                if i != j && (!v.is_finite() || v != covariance[(j, i)]) {
                    return Err(Error::InvalidArgument(
                        "noise covariance must be finite off the diagonal and symmetric".into(),
                    ));
                }
                if i != j && d.is_infinite() && v != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "absent terminal {i} cannot be correlated with other channels"
                    )));
                }
            }
        }
        let observed: Vec<usize> = (0..t).filter(|&i| covariance[(i, i)].is_finite()).collect();
        if !observed.is_empty() {
            let sub = select(&covariance, &observed, &observed);
            let min_eig = sub.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
            let scale = sub.diagonal().iter().cloned().fold(0.0, f64::max);
            if min_eig < -1e-10 * scale.max(1.0) {
                return Err(Error::InvalidArgument(
                    "noise covariance is not positive semidefinite".into(),
                ));
            }
        }
        Ok(Self { covariance })
    }

    /// Independent channels with the given variances (`∞` for absent).
    pub fn diagonal(variances: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(variances)))
    }

    /// Independent channels `√s_o S_o + Z_o`, expressed as noise variance
    /// `1/s_o`; `s_o = 0` is an absent channel.
    pub fn from_snr(snr: &[f64]) -> Result<Self> {
        let mut variances = Vec::with_capacity(snr.len());
        for (o, &s) in snr.iter().enumerate() {
            if s.is_nan() || s < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "snr {s} of terminal {o} must be non-negative"
                )));
            }
            variances.push(if s == 0.0 { f64::INFINITY } else { 1.0 / s });
        }
        Self::diagonal(&variances)
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn terminals(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn observed(&self) -> Vec<usize> {
        (0..self.terminals())
            .filter(|&i| self.covariance[(i, i)].is_finite())
            .collect()
    }
}

fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

/// Cholesky factorization with a ridge fallback. Returns the inverse, the log
/// determinant and the ridge that was added (zero if none was needed).
fn inverse_logdet(c: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64, f64)> {
    let n = c.nrows();
    if n == 0 {
        return Ok((DMatrix::zeros(0, 0), 0.0, 0.0));
    }
    let try_factor = |m: DMatrix<f64>| {
        m.cholesky().and_then(|ch| {
            let l = ch.l_dirty();
            let ok = (0..n).all(|i| l[(i, i)] > 0.0 && l[(i, i)].is_finite());
            ok.then_some(ch)
        })
    };
    let mut ridge = 0.0;
    let ch = match try_factor(c.clone()) {
        Some(ch) => ch,
        None => {
            let trace = c.trace().abs();
            ridge = RIDGE * if trace > 0.0 { trace } else { 1.0 };
            let mut reg = c.clone();
            for i in 0..n {
                reg[(i, i)] += ridge;
            }
            try_factor(reg).ok_or(Error::SingularCovariance)?
        }
    };
    let l = ch.l_dirty();
    let logdet = 2.0 * (0..n).map(|i| l[(i, i)].ln()).sum::<f64>();
    Ok((ch.inverse(), logdet, ridge))
}

/// Posterior of the source given one observation vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub mean: Vec<f64>,
    pub covariance: DMatrix<f64>,
    /// `P(θ | O = x)` indexed by the bit mask of active components.
    pub pattern_posteriors: Vec<f64>,
}

/// Precomputed MMSE estimator for one source and one noise model.
#[derive(Debug, Clone)]
pub struct Denoiser {
    t: usize,
    k: usize,
    observed: Vec<usize>,
    /// position of each terminal inside `observed`, if observed
    slot: Vec<Option<usize>>,
    masks: Vec<u32>,
    log_const: Vec<f64>,
    /// per pattern `r × r` inverse observation covariance
    prec: Vec<f64>,
    /// per pattern `t × r` map from observation to conditional mean
    gain: Vec<f64>,
    /// per pattern `t × t` conditional covariance
    cov: Vec<f64>,
    /// inverse of the (regularized) noise covariance on observed rows
    noise_prec: Vec<f64>,
    diagonal_noise: bool,
    /// unrolled copy of the pattern terms when both of two terminals are observed
    pair: Vec<PairTerm>,
}

const PAIR_TERMS: usize = 16;

/// Patterns this far below the heaviest one (in log weight) are dropped.
const NEGLIGIBLE_LOG_WEIGHT: f64 = -50.0;

#[derive(Debug, Clone, Copy)]
struct PairTerm {
    log_const: f64,
    prec: [f64; 3],
    gain: [[f64; 2]; 2],
    var: [f64; 2],
}

/// Reusable buffers for [`Denoiser`] evaluations.
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    xr: Vec<f64>,
    logw: Vec<f64>,
    means: Vec<f64>,
    cov: Vec<f64>,
}

impl Denoiser {
    pub fn new(spec: &SourceSpec, noise: &NoiseModel) -> Result<Self> {
        let t = spec.terminals();
        let k = spec.components();
        if noise.terminals() != t {
            return Err(Error::DimensionMismatch {
                what: "noise model",
                expected: t,
                found: noise.terminals(),
            });
        }
        if k > ENUMERATION_CAP {
            return Err(Error::EnumerationCap { k, cap: ENUMERATION_CAP });
        }
        let observed = noise.observed();
        let unobserved: Vec<usize> = (0..t).filter(|o| !observed.contains(o)).collect();
        let r = observed.len();
        let mut slot = vec![None; t];
        for (p, &o) in observed.iter().enumerate() {
            slot[o] = Some(p);
        }
        let noise_rr = select(noise.covariance(), &observed, &observed);
        let diagonal_noise = (0..r).all(|i| (0..r).all(|j| i == j || noise_rr[(i, j)] == 0.0));

        let mixing = spec.mixing();
        let alphas = spec.alphas();
        let mut out = Self {
            t,
            k,
            observed: observed.clone(),
            slot,
            masks: Vec::new(),
            log_const: Vec::new(),
            prec: Vec::new(),
            gain: Vec::new(),
            cov: Vec::new(),
            noise_prec: Vec::new(),
            diagonal_noise,
            pair: Vec::new(),
        };
        let mut max_ridge: f64 = 0.0;
        for mask in 0..1u32 << k {
            let p = pattern_prob(alphas, mask);
            if p == 0.0 {
                continue;
            }
            // K(θ) = Σ_i θ_i φ_i φ_iᵀ / α_i
            let mut kmat = DMatrix::<f64>::zeros(t, t);
            for i in (0..k).filter(|i| mask & (1 << i) != 0) {
                let col = mixing.column(i);
                kmat += (col * col.transpose()) / alphas[i];
            }
            let k_rr = select(&kmat, &observed, &observed);
            let (cinv, logdet, ridge) = inverse_logdet(&(&k_rr + &noise_rr))?;
            max_ridge = max_ridge.max(ridge);
            let mut noise_eff = noise_rr.clone();
            for i in 0..r {
                noise_eff[(i, i)] += ridge;
            }

            // Observed rows use Σ̃-based forms; they stay accurate when the
            // noise is tiny compared to K(θ).
            let mut gain = DMatrix::<f64>::zeros(t, r);
            let mut cov = DMatrix::<f64>::zeros(t, t);
            let h_r = DMatrix::identity(r, r) - &noise_eff * &cinv;
            let p_rr = &noise_eff - &noise_eff * &cinv * &noise_eff;
            for (a, &oa) in observed.iter().enumerate() {
                for b in 0..r {
                    gain[(oa, b)] = h_r[(a, b)];
                }
                for (b, &ob) in observed.iter().enumerate() {
                    cov[(oa, ob)] = 0.5 * (p_rr[(a, b)] + p_rr[(b, a)]);
                }
            }
            if !unobserved.is_empty() {
                let k_ur = select(&kmat, &unobserved, &observed);
                let k_uu = select(&kmat, &unobserved, &unobserved);
                let h_u = &k_ur * &cinv;
                let p_ur = &h_u * &noise_eff;
                let p_uu = &k_uu - &h_u * k_ur.transpose();
                for (a, &oa) in unobserved.iter().enumerate() {
                    for b in 0..r {
                        gain[(oa, b)] = h_u[(a, b)];
                    }
                    for (b, &ob) in observed.iter().enumerate() {
                        cov[(oa, ob)] = p_ur[(a, b)];
                        cov[(ob, oa)] = p_ur[(a, b)];
                    }
                    for (b, &ob) in unobserved.iter().enumerate() {
                        cov[(oa, ob)] = 0.5 * (p_uu[(a, b)] + p_uu[(b, a)]);
                    }
                }
            }

            out.masks.push(mask);
            out.log_const.push(p.ln() - 0.5 * logdet);
            out.prec.extend(cinv.iter());
            out.gain.extend(gain.transpose().iter()); // row-major t × r
            out.cov.extend(cov.iter());
        }
        let mut noise_reg = noise_rr;
        for i in 0..r {
            noise_reg[(i, i)] += max_ridge;
        }
        if t == 2 && out.masks.len() <= PAIR_TERMS {
            // embed the observed block into terminal coordinates; absent rows
            // get zero precision and zero gain columns
            let at = |o: usize| out.slot[o];
            out.pair = (0..out.masks.len())
                .map(|p| {
                    let pr = &out.prec[p * r * r..(p + 1) * r * r];
                    let g = &out.gain[p * t * r..(p + 1) * t * r];
                    let c = &out.cov[p * 4..p * 4 + 4];
                    let prec_at = |a: usize, b: usize| match (at(a), at(b)) {
                        (Some(i), Some(j)) => pr[i + j * r],
                        _ => 0.0,
                    };
                    let gain_at = |o: usize, b: usize| at(b).map_or(0.0, |j| g[o * r + j]);
                    PairTerm {
                        log_const: out.log_const[p],
                        prec: [prec_at(0, 0), prec_at(0, 1), prec_at(1, 1)],
                        gain: [[gain_at(0, 0), gain_at(0, 1)], [gain_at(1, 0), gain_at(1, 1)]],
                        var: [c[0], c[3]],
                    }
                })
                .collect();
        }
        out.noise_prec = if r == 0 {
            Vec::new()
        } else {
            inverse_logdet(&noise_reg)?.0.iter().copied().collect()
        };
        Ok(out)
    }

    pub fn terminals(&self) -> usize {
        self.t
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    /// Fills `scratch` with normalized pattern weights and conditional means,
    /// and writes the posterior mean into `mean`.
    fn weights_and_mean(&self, x: &[f64], scratch: &mut Scratch, mean: &mut [f64]) {
        let t = self.t;
        let r = self.observed.len();
        let n = self.masks.len();
        scratch.xr.clear();
        scratch.xr.extend(self.observed.iter().map(|&o| x[o]));
        scratch.logw.resize(n, 0.0);
        scratch.means.resize(n * t, 0.0);
        let xr = &scratch.xr;
        let mut max = f64::NEG_INFINITY;
        for p in 0..n {
            let prec = &self.prec[p * r * r..(p + 1) * r * r];
            let mut q = 0.0;
            for a in 0..r {
                let mut row = 0.0;
                for b in 0..r {
                    row += prec[a + b * r] * xr[b];
                }
                q += xr[a] * row;
            }
            let lw = self.log_const[p] - 0.5 * q;
            scratch.logw[p] = lw;
            if lw > max {
                max = lw;
            }
            let gain = &self.gain[p * t * r..(p + 1) * t * r];
            for o in 0..t {
                let g = &gain[o * r..(o + 1) * r];
                scratch.means[p * t + o] = g.iter().zip(xr).map(|(a, b)| a * b).sum();
            }
        }
        let mut total = 0.0;
        for w in scratch.logw.iter_mut() {
            *w = (*w - max).exp();
            total += *w;
        }
        mean.iter_mut().for_each(|m| *m = 0.0);
        for p in 0..n {
            let w = scratch.logw[p] / total;
            scratch.logw[p] = w;
            for o in 0..t {
                mean[o] += w * scratch.means[p * t + o];
            }
        }
    }

    /// Posterior mean `E[S | O = x]`. Entries of `x` on absent channels are ignored.
    pub fn mean_into(&self, x: &[f64], scratch: &mut Scratch, mean: &mut [f64]) {
        self.weights_and_mean(x, scratch, mean);
    }

    pub fn mean(&self, x: &[f64]) -> Vec<f64> {
        let mut m = vec![0.0; self.t];
        self.mean_into(x, &mut Scratch::default(), &mut m);
        m
    }

    fn pair_mean_and_variance(&self, x: &[f64], mean: &mut [f64], var: &mut [f64]) {
        let n = self.pair.len();
        let x0 = if self.slot[0].is_some() { x[0] } else { 0.0 };
        let x1 = if self.slot[1].is_some() { x[1] } else { 0.0 };
        let mut lw = [0.0; PAIR_TERMS];
        let mut m = [[0.0; 2]; PAIR_TERMS];
        let mut max = f64::NEG_INFINITY;
        for (p, term) in self.pair.iter().enumerate() {
            let q = term.prec[0] * x0 * x0 + 2.0 * term.prec[1] * x0 * x1 + term.prec[2] * x1 * x1;
            let l = term.log_const - 0.5 * q;
            lw[p] = l;
            max = max.max(l);
            m[p] = [
                term.gain[0][0] * x0 + term.gain[0][1] * x1,
                term.gain[1][0] * x0 + term.gain[1][1] * x1,
            ];
        }
        let (mut total, mut m0, mut m1) = (0.0, 0.0, 0.0);
        for p in 0..n {
            let d = lw[p] - max;
            let w = if d < NEGLIGIBLE_LOG_WEIGHT { 0.0 } else { d.exp() };
            lw[p] = w;
            total += w;
            m0 += w * m[p][0];
            m1 += w * m[p][1];
        }
        let inv = 1.0 / total;
        m0 *= inv;
        m1 *= inv;
        let (mut v0, mut v1) = (0.0, 0.0);
        for p in 0..n {
            let term = &self.pair[p];
            let (d0, d1) = (m[p][0] - m0, m[p][1] - m1);
            v0 += lw[p] * (term.var[0] + d0 * d0);
            v1 += lw[p] * (term.var[1] + d1 * d1);
        }
        mean[0] = m0;
        mean[1] = m1;
        var[0] = v0 * inv;
        var[1] = v1 * inv;
    }

    /// Posterior mean plus the diagonal of the posterior covariance.
    pub fn mean_and_variance_into(
        &self,
        x: &[f64],
        scratch: &mut Scratch,
        mean: &mut [f64],
        var: &mut [f64],
    ) {
        if !self.pair.is_empty() {
            return self.pair_mean_and_variance(x, mean, var);
        }
        self.generic_mean_and_variance(x, scratch, mean, var);
    }

    fn generic_mean_and_variance(
        &self,
        x: &[f64],
        scratch: &mut Scratch,
        mean: &mut [f64],
        var: &mut [f64],
    ) {
        self.weights_and_mean(x, scratch, mean);
        let t = self.t;
        var.iter_mut().for_each(|v| *v = 0.0);
        for p in 0..self.masks.len() {
            let w = scratch.logw[p];
            let cov = &self.cov[p * t * t..(p + 1) * t * t];
            for o in 0..t {
                let d = scratch.means[p * t + o] - mean[o];
                var[o] += w * (cov[o + o * t] + d * d);
            }
        }
    }

    /// Full posterior covariance, column-major `t × t`, left in `scratch.cov`.
    fn covariance_into(&self, x: &[f64], scratch: &mut Scratch, mean: &mut [f64]) {
        self.weights_and_mean(x, scratch, mean);
        let t = self.t;
        scratch.cov.clear();
        scratch.cov.resize(t * t, 0.0);
        for p in 0..self.masks.len() {
            let w = scratch.logw[p];
            let cov = &self.cov[p * t * t..(p + 1) * t * t];
            for j in 0..t {
                let dj = scratch.means[p * t + j] - mean[j];
                for i in 0..t {
                    let di = scratch.means[p * t + i] - mean[i];
                    scratch.cov[i + j * t] += w * (cov[i + j * t] + di * dj);
                }
            }
        }
    }

    /// Posterior mean and the diagonal of its observation Jacobian,
    /// `∂E[S_o | x] / ∂x_o = (Cov(S | x) Σ̃⁻¹)_oo`. Absent channels get 0.
    pub fn mean_and_jacobian_into(
        &self,
        x: &[f64],
        scratch: &mut Scratch,
        mean: &mut [f64],
        jac: &mut [f64],
    ) {
        let t = self.t;
        let r = self.observed.len();
        if self.diagonal_noise {
            self.mean_and_variance_into(x, scratch, mean, jac);
            for o in 0..t {
                jac[o] = match self.slot[o] {
                    Some(a) => jac[o] * self.noise_prec[a + a * r],
                    None => 0.0,
                };
            }
            return;
        }
        self.covariance_into(x, scratch, mean);
        for o in 0..t {
            jac[o] = match self.slot[o] {
                Some(a) => self
                    .observed
                    .iter()
                    .enumerate()
                    .map(|(b, &ob)| scratch.cov[o + ob * t] * self.noise_prec[b + a * r])
                    .sum(),
                None => 0.0,
            };
        }
    }

    pub fn summary(&self, x: &[f64]) -> PosteriorSummary {
        let t = self.t;
        let mut scratch = Scratch::default();
        let mut mean = vec![0.0; t];
        self.covariance_into(x, &mut scratch, &mut mean);
        let mut pattern_posteriors = vec![0.0; 1usize << self.k];
        for (p, &mask) in self.masks.iter().enumerate() {
            pattern_posteriors[mask as usize] = scratch.logw[p];
        }
        PosteriorSummary {
            mean,
            covariance: DMatrix::from_column_slice(t, t, &scratch.cov),
            pattern_posteriors,
        }
    }
}

fn check_observation(spec: &SourceSpec, x: &[f64]) -> Result<()> {
    if x.len() != spec.terminals() {
        return Err(Error::DimensionMismatch {
            what: "observation",
            expected: spec.terminals(),
            found: x.len(),
        });
    }
    Ok(())
}

/// Posterior mean, covariance and pattern posteriors of `S` given `O = x`.
pub fn posterior(spec: &SourceSpec, noise: &NoiseModel, x: &[f64]) -> Result<PosteriorSummary> {
    check_observation(spec, x)?;
    Ok(Denoiser::new(spec, noise)?.summary(x))
}

/// Column-wise posterior mean of a `t × n` observation matrix.
pub fn denoise(
    spec: &SourceSpec,
    noise: &NoiseModel,
    observations: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if observations.nrows() != spec.terminals() {
        return Err(Error::DimensionMismatch {
            what: "observation rows",
            expected: spec.terminals(),
            found: observations.nrows(),
        });
    }
    let den = Denoiser::new(spec, noise)?;
    let mut out = DMatrix::zeros(observations.nrows(), observations.ncols());
    let mut scratch = Scratch::default();
    for j in 0..observations.ncols() {
        let x = observations.column(j);
        den.mean_into(x.as_slice(), &mut scratch, out.column_mut(j).as_mut_slice());
    }
    Ok(out)
}

/// Diagonal of the Jacobian of the posterior mean with respect to the observation.
pub fn jacobian_diag(spec: &SourceSpec, noise: &NoiseModel, x: &[f64]) -> Result<Vec<f64>> {
    check_observation(spec, x)?;
    let den = Denoiser::new(spec, noise)?;
    let (mut mean, mut jac) = (vec![0.0; x.len()], vec![0.0; x.len()]);
    den.mean_and_jacobian_into(x, &mut Scratch::default(), &mut mean, &mut jac);
    Ok(jac)
}

/// Monte-Carlo budget: number of channel draws and the seed of their bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McBudget {
    pub samples: usize,
    pub seed: u64,
}

impl McBudget {
    pub const DEFAULT_SAMPLES: usize = 100_000;

    pub fn new(samples: usize, seed: u64) -> Self {
        Self { samples, seed }
    }
}

impl Default for McBudget {
    fn default() -> Self {
        Self::new(Self::DEFAULT_SAMPLES, 0)
    }
}

/// Evaluates `mmse_o(s_1, .., s_t) = E Var(S_o | √s_1 S_1 + Z_1, ..)` by
/// averaging the closed-form posterior variance over a fixed bank of source
/// and noise draws. The bank is drawn once, so every evaluation reuses the
/// same random numbers. Noise draws are used in antithetic pairs `±Z`.
#[derive(Debug, Clone)]
pub struct MmseEvaluator {
    spec: SourceSpec,
    pairs: usize,
    signals: Vec<f64>,
    noise: Vec<f64>,
}

impl MmseEvaluator {
    pub fn new(spec: &SourceSpec, budget: McBudget) -> Result<Self> {
        if budget.samples == 0 {
            return Err(Error::InvalidArgument("Monte-Carlo budget must be positive".into()));
        }
        let t = spec.terminals();
        let pairs = budget.samples.div_ceil(2);
        let mut rng = stream_rng(budget.seed, StreamId::new(Purpose::MonteCarlo));
        let mut z = vec![0.0; spec.components()];
        let mut signals = vec![0.0; pairs * t];
        let mut noise = vec![0.0; pairs * t];
        for j in 0..pairs {
            draw_components(spec, &mut rng, &mut z);
            mix_into(spec, &z, &mut signals[j * t..(j + 1) * t]);
            for w in &mut noise[j * t..(j + 1) * t] {
                *w = StandardNormal.sample(&mut rng);
            }
        }
        Ok(Self {
            spec: spec.clone(),
            pairs,
            signals,
            noise,
        })
    }

    pub fn spec(&self) -> &SourceSpec {
        &self.spec
    }

    pub fn samples(&self) -> usize {
        2 * self.pairs
    }

    /// Per-terminal MMSE at the given channel SNRs (`0` = channel absent).
    pub fn mmse(&self, snr: &[f64]) -> Result<Vec<f64>> {
        let t = self.spec.terminals();
        if snr.len() != t {
            return Err(Error::DimensionMismatch {
                what: "snr vector",
                expected: t,
                found: snr.len(),
            });
        }
        let noise = NoiseModel::from_snr(snr)?;
        let den = Denoiser::new(&self.spec, &noise)?;
        let sd: Vec<f64> = snr
            .iter()
            .map(|&s| if s > 0.0 { 1.0 / s.sqrt() } else { 0.0 })
            .collect();
        let mut scratch = Scratch::default();
        let (mut x, mut mean, mut var) = (vec![0.0; t], vec![0.0; t], vec![0.0; t]);
        let mut acc = vec![0.0; t];
        for j in 0..self.pairs {
            let s = &self.signals[j * t..(j + 1) * t];
            let w = &self.noise[j * t..(j + 1) * t];
            for sign in [1.0, -1.0] {
                for o in 0..t {
                    x[o] = s[o] + sign * sd[o] * w[o];
                }
                den.mean_and_variance_into(&x, &mut scratch, &mut mean, &mut var);
                for o in 0..t {
                    acc[o] += var[o].max(0.0);
                }
            }
        }
        let n = self.samples() as f64;
        Ok(acc.into_iter().map(|a| a / n).collect())
    }
}

/// One-shot `(mmse_x, mmse_y, ..)` at the given SNRs.
pub fn scalar_channel_mmse(spec: &SourceSpec, snr: &[f64], budget: McBudget) -> Result<Vec<f64>> {
    MmseEvaluator::new(spec, budget)?.mmse(snr)
}
