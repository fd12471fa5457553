//! Linearly correlated Bernoulli-Gaussian sources.
//!
//! A source is `S = Φ Z` where `Z` has `k` independent coordinates,
//! `Z_i = 0` with probability `1 - α_i` and `Z_i ~ N(0, 1/α_i)` otherwise, so
//! every `Z_i` has unit variance. Row `o` of `Φ` is terminal `o`.
//!
//! The Rényi information dimension of any subset of terminals is the expected
//! rank of the selected rows of `Φ` restricted to the active columns, which is
//! evaluated here by exact enumeration of the `2^k` support patterns.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Purpose, StreamId};

/// Largest number of mixing components handled by exact pattern enumeration.
pub const ENUMERATION_CAP: usize = 24;

/// Singular values below this fraction of the largest one count as zero.
pub const RANK_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SourceSpecRepr", into = "SourceSpecRepr")]
pub struct SourceSpec {
    mixing: DMatrix<f64>,
    alphas: Vec<f64>,
}

/// Row-major form used by config files.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SourceSpecRepr {
    mixing: Vec<Vec<f64>>,
    alphas: Vec<f64>,
}

impl TryFrom<SourceSpecRepr> for SourceSpec {
    type Error = Error;

    fn try_from(repr: SourceSpecRepr) -> Result<Self> {
        SourceSpec::from_rows(&repr.mixing, &repr.alphas)
    }
}

impl From<SourceSpec> for SourceSpecRepr {
    fn from(spec: SourceSpec) -> Self {
        SourceSpecRepr {
            mixing: spec.mixing_rows(),
            alphas: spec.alphas,
        }
    }
}

impl SourceSpec {
    pub fn new(mixing: DMatrix<f64>, alphas: Vec<f64>) -> Result<Self> {
        if mixing.nrows() == 0 {
            return Err(Error::InvalidSpec("mixing matrix has no rows".into()));
        }
        if mixing.ncols() != alphas.len() {
            return Err(Error::InvalidSpec(format!(
                "mixing matrix has {} columns but {} alphas were given",
                mixing.ncols(),
                alphas.len()
            )));
        }
        if alphas.is_empty() {
            return Err(Error::InvalidSpec("no mixing components".into()));
        }
        for (i, &a) in alphas.iter().enumerate() {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::InvalidSpec(format!(
                    "alpha[{i}] = {a} is outside (0, 1]"
                )));
            }
        }
        if mixing.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("mixing matrix has non-finite entries".into()));
        }
        for (o, row) in mixing.row_iter().enumerate() {
            if row.iter().all(|&v| v == 0.0) {
                return Err(Error::InvalidSpec(format!("terminal {o} has an all-zero mixing row")));
            }
        }
        Ok(Self { mixing, alphas })
    }

    pub fn from_rows(rows: &[Vec<f64>], alphas: &[f64]) -> Result<Self> {
        let t = rows.len();
        if t == 0 {
            return Err(Error::InvalidSpec("mixing matrix has no rows".into()));
        }
        let k = rows[0].len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidSpec("mixing rows have unequal lengths".into()));
        }
        let mixing = DMatrix::from_fn(t, k, |i, j| rows[i][j]);
        Self::new(mixing, alphas.to_vec())
    }

    /// `X = Z1 + Z2`, `Y = Z2 + Z3` with a private weight on `Z1`, `Z3` and a
    /// common weight on `Z2`.
    pub fn common_private(private_alpha: f64, common_alpha: f64) -> Result<Self> {
        Self::from_rows(
            &[vec![1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0]],
            &[private_alpha, common_alpha, private_alpha],
        )
    }

    /// The common/private source with `d(X) = d(Y) = 0.44` and `d(X|Y) = 0.248`.
    pub fn reference() -> Self {
        Self::common_private(0.2, 0.3).expect("reference spec is valid")
    }

    /// Common/private source with prescribed marginal and conditional RID.
    ///
    /// With private weight `a` and common weight `c`, `d(X) = 1 - (1-a)(1-c)`
    /// and `d(X|Y) = a (1 + d(X) - a)`; the smaller root in `a` is taken.
    pub fn with_rid(marginal: f64, conditional: f64) -> Result<Self> {
        if !(marginal > 0.0 && marginal < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "marginal RID {marginal} must lie in (0, 1)"
            )));
        }
        let b = 1.0 + marginal;
        let disc = b * b - 4.0 * conditional;
        if !(conditional > 0.0) || disc < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "conditional RID {conditional} is not reachable for marginal {marginal}"
            )));
        }
        let a = 0.5 * (b - disc.sqrt());
        if !(a > 0.0 && a <= marginal) {
            return Err(Error::InvalidArgument(format!(
                "conditional RID {conditional} exceeds marginal {marginal}"
            )));
        }
        let c = 1.0 - (1.0 - marginal) / (1.0 - a);
        if c <= 0.0 {
            // no common part left: independent terminals
            return Self::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[a, a]);
        }
        Self::common_private(a, c)
    }

    pub fn terminals(&self) -> usize {
        self.mixing.nrows()
    }

    pub fn components(&self) -> usize {
        self.mixing.ncols()
    }

    pub fn mixing(&self) -> &DMatrix<f64> {
        &self.mixing
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn mixing_rows(&self) -> Vec<Vec<f64>> {
        self.mixing
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    /// Same source with terminals listed in `order`.
    pub fn permute_terminals(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.terminals() {
            return Err(Error::DimensionMismatch {
                what: "terminal permutation",
                expected: self.terminals(),
                found: order.len(),
            });
        }
        let rows: Vec<Vec<f64>> = order
            .iter()
            .map(|&o| {
                self.mixing
                    .row(o)
                    .iter()
                    .copied()
                    .collect()
            })
            .collect();
        Self::from_rows(&rows, &self.alphas)
    }

    fn check_enumerable(&self) -> Result<()> {
        let k = self.components();
        if k > ENUMERATION_CAP {
            return Err(Error::EnumerationCap {
                k,
                cap: ENUMERATION_CAP,
            });
        }
        Ok(())
    }
}

/// One support pattern `θ` of the mixing components with its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportPattern {
    pub bits: Vec<bool>,
    pub prob: f64,
}

impl SupportPattern {
    pub fn mask(&self) -> u32 {
        self.bits
            .iter()
            .enumerate()
            .fold(0, |m, (i, &b)| if b { m | (1 << i) } else { m })
    }
}

pub(crate) fn pattern_prob(alphas: &[f64], mask: u32) -> f64 {
    alphas
        .iter()
        .enumerate()
        .map(|(i, &a)| if mask & (1 << i) != 0 { a } else { 1.0 - a })
        .product()
}

/// All `2^k` support patterns, indexed by the bit mask of active components.
pub fn support_patterns(spec: &SourceSpec) -> Result<Vec<SupportPattern>> {
    spec.check_enumerable()?;
    let k = spec.components();
    Ok((0..1u32 << k)
        .map(|mask| SupportPattern {
            bits: (0..k).map(|i| mask & (1 << i) != 0).collect(),
            prob: pattern_prob(&spec.alphas, mask),
        })
        .collect())
}

/// Draws `n` i.i.d. source vectors as the columns of a `t × n` matrix.
pub fn sample_source(spec: &SourceSpec, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    let mut rng = stream_rng(seed, StreamId::new(Purpose::Source));
    let mut out = DMatrix::zeros(spec.terminals(), n);
    let mut z = vec![0.0; spec.components()];
    for j in 0..n {
        draw_components(spec, &mut rng, &mut z);
        mix_into(spec, &z, out.column_mut(j).as_mut_slice());
    }
    Ok(out)
}

pub(crate) fn draw_components<R: Rng>(spec: &SourceSpec, rng: &mut R, z: &mut [f64]) {
    for (zi, &a) in z.iter_mut().zip(&spec.alphas) {
        let active = rng.random::<f64>() < a;
        let g: f64 = rng.sample(StandardNormal);
        *zi = if active { g / a.sqrt() } else { 0.0 };
    }
}

pub(crate) fn mix_into(spec: &SourceSpec, z: &[f64], out: &mut [f64]) {
    for (o, s) in out.iter_mut().enumerate() {
        *s = z
            .iter()
            .enumerate()
            .map(|(i, zi)| spec.mixing[(o, i)] * zi)
            .sum();
    }
}

/// Covariance of the source vector, `Φ Φᵀ`.
pub fn source_covariance(spec: &SourceSpec) -> DMatrix<f64> {
    &spec.mixing * spec.mixing.transpose()
}

pub(crate) fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOLERANCE * max).count()
}

fn check_rows(spec: &SourceSpec, rows: &[usize]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("terminal subset is empty".into()));
    }
    for (i, &r) in rows.iter().enumerate() {
        if r >= spec.terminals() {
            return Err(Error::InvalidArgument(format!(
                "terminal {r} out of range for a {}-terminal source",
                spec.terminals()
            )));
        }
        if rows[..i].contains(&r) {
            return Err(Error::InvalidArgument(format!("terminal {r} listed twice")));
        }
    }
    Ok(())
}

fn submatrix(spec: &SourceSpec, rows: &[usize], mask: u32) -> DMatrix<f64> {
    let cols: Vec<usize> = (0..spec.components())
        .filter(|i| mask & (1 << i) != 0)
        .collect();
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| spec.mixing[(rows[i], cols[j])])
}

/// Joint information dimension of the terminals in `rows`.
pub fn rid(spec: &SourceSpec, rows: &[usize]) -> Result<f64> {
    check_rows(spec, rows)?;
    spec.check_enumerable()?;
    let k = spec.components();
    let mut total = 0.0;
    for mask in 0..1u32 << k {
        let p = pattern_prob(&spec.alphas, mask);
        if p == 0.0 {
            continue;
        }
        let rank = numerical_rank(&submatrix(spec, rows, mask));
        total += p * rank as f64;
    }
    Ok(total)
}

/// `d(target | given) = d(target, given) - d(given)`.
pub fn rid_conditional(spec: &SourceSpec, target: usize, given: usize) -> Result<f64> {
    if target == given {
        return Err(Error::InvalidArgument(
            "target and conditioning terminal must differ".into(),
        ));
    }
    Ok(rid(spec, &[target, given])? - rid(spec, &[given])?)
}

/// Monte-Carlo estimate of [`rid`] from sampled support patterns, returned as
/// `(mean, standard error)`.
pub fn rid_monte_carlo(
    spec: &SourceSpec,
    rows: &[usize],
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_rows(spec, rows)?;
    if samples < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let mut rng = stream_rng(seed, StreamId::new(Purpose::Pattern));
    let (mut sum, mut sum2) = (0.0, 0.0);
    for _ in 0..samples {
        let mask = spec
            .alphas
            .iter()
            .enumerate()
            .fold(0u32, |m, (i, &a)| if rng.random::<f64>() < a { m | (1 << i) } else { m });
        let r = numerical_rank(&submatrix(spec, rows, mask)) as f64;
        sum += r;
        sum2 += r * r;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum2 / n - mean * mean).max(0.0) * n / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Information dimensions of a two-terminal source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidSummary {
    pub d_x: f64,
    pub d_y: f64,
    pub d_joint: f64,
    pub d_x_given_y: f64,
    pub d_y_given_x: f64,
}

pub fn rid_summary(spec: &SourceSpec) -> Result<RidSummary> {
    if spec.terminals() != 2 {
        return Err(Error::InvalidArgument(format!(
            "two terminals expected, found {}",
            spec.terminals()
        )));
    }
    let d_x = rid(spec, &[0])?;
    let d_y = rid(spec, &[1])?;
    let d_joint = rid(spec, &[0, 1])?;
    Ok(RidSummary {
        d_x,
        d_y,
        d_joint,
        d_x_given_y: d_joint - d_y,
        d_y_given_x: d_joint - d_x,
    })
}
