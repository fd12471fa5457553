use nalgebra::{DMatrix, DVector};

use super::weight::WeightMatrix;
use crate::error::{Error, Result};
use crate::mamp::{add_noise, gaussian_block};
use crate::rng::{derive_seed, Purpose, StreamId};
use crate::source::{sample_source, SourceSpec};

/// Block matrix with `L_r × L_c` blocks of size `M × N`; zero-weight blocks
/// are not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledEnsemble {
    weight: WeightMatrix,
    m_block: usize,
    n_block: usize,
    /// row-major over `(r, c)`
    blocks: Vec<Option<DMatrix<f64>>>,
    seed: u64,
}

pub fn build_coupled_ensemble(
    weight: &WeightMatrix,
    m_block: usize,
    n_block: usize,
    seed: u64,
) -> Result<CoupledEnsemble> {
    if m_block == 0 || n_block == 0 {
        return Err(Error::InvalidArgument("block dimensions must be positive".into()));
    }
    let (l_r, l_c) = (weight.row_blocks(), weight.col_blocks());
    let mut blocks = Vec::with_capacity(l_r * l_c);
    for r in 0..l_r {
        for c in 0..l_c {
            let w = weight.get(r, c);
            blocks.push((w > 0.0).then(|| {
                let id = StreamId::new(Purpose::Matrix).iteration((r * l_c + c) as u32);
                gaussian_block(m_block, n_block, w / m_block as f64, seed, id)
            }));
        }
    }
    Ok(CoupledEnsemble {
        weight: weight.clone(),
        m_block,
        n_block,
        blocks,
        seed,
    })
}

impl CoupledEnsemble {
    pub fn weight(&self) -> &WeightMatrix {
        &self.weight
    }

    pub fn m_block(&self) -> usize {
        self.m_block
    }

    pub fn n_block(&self) -> usize {
        self.n_block
    }

    pub fn rows(&self) -> usize {
        self.m_block * self.weight.row_blocks()
    }

    pub fn cols(&self) -> usize {
        self.n_block * self.weight.col_blocks()
    }

    /// Terminal rate `δ = M / N`.
    pub fn delta(&self) -> f64 {
        self.m_block as f64 / self.n_block as f64
    }

    /// Overall rate `m / n`.
    pub fn rate(&self) -> f64 {
        self.rows() as f64 / self.cols() as f64
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn block(&self, r: usize, c: usize) -> Option<&DMatrix<f64>> {
        self.blocks[r * self.weight.col_blocks() + c].as_ref()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let (m, n) = (self.m_block, self.n_block);
        let mut out = DMatrix::zeros(self.rows(), self.cols());
        for r in 0..self.weight.row_blocks() {
            for c in 0..self.weight.col_blocks() {
                if let Some(b) = self.block(r, c) {
                    out.view_mut((r * m, c * n), (m, n)).copy_from(b);
                }
            }
        }
        out
    }

    /// `A x`
    pub fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        let (m, n) = (self.m_block, self.n_block);
        let mut out = DVector::zeros(self.rows());
        for r in 0..self.weight.row_blocks() {
            let mut part = out.rows_mut(r * m, m);
            for c in 0..self.weight.col_blocks() {
                if let Some(b) = self.block(r, c) {
                    part.gemv(1.0, b, &x.rows(c * n, n), 1.0);
                }
            }
        }
        out
    }

    /// `(Q ⊙ A)ᵀ z` for a block-constant `Q` given at block granularity.
    pub fn weighted_tr_mul(&self, q: &DMatrix<f64>, z: &DVector<f64>) -> DVector<f64> {
        let (m, n) = (self.m_block, self.n_block);
        let mut out = DVector::zeros(self.cols());
        for c in 0..self.weight.col_blocks() {
            let mut part = out.rows_mut(c * n, n);
            for r in 0..self.weight.row_blocks() {
                if let Some(b) = self.block(r, c) {
                    part.gemv_tr(q[(r, c)], b, &z.rows(r * m, m), 1.0);
                }
            }
        }
        out
    }
}

/// `A · signal + w` with `w ~ N(0, noise_var I)`.
pub fn measure_coupled(
    ens: &CoupledEnsemble,
    signal: &[f64],
    noise_var: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if signal.len() != ens.cols() {
        return Err(Error::DimensionMismatch {
            what: "signal",
            expected: ens.cols(),
            found: signal.len(),
        });
    }
    let mut y: Vec<f64> = ens.mul(&DVector::from_column_slice(signal)).data.into();
    add_noise(&mut y, noise_var, seed)?;
    Ok(y)
}

/// A synthetic coupled instance; see [`crate::mamp::make_problem`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledProblem {
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
    pub a: CoupledEnsemble,
    pub b: CoupledEnsemble,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Source of length `N L_c`, coupled ensembles with `M_o = round(δ_o N)` and
/// measurements. Uses the same child seeds as the uncoupled instance, so a
/// single block reproduces it.
pub fn make_coupled_problem(
    spec: &SourceSpec,
    weight: &WeightMatrix,
    delta_x: f64,
    delta_y: f64,
    n_block: usize,
    sigma2: (f64, f64),
    seed: u64,
) -> Result<CoupledProblem> {
    let rows = |d: f64| ((d * n_block as f64).round() as usize).max(1);
    let n = n_block * weight.col_blocks();
    let s = sample_source(spec, n, derive_seed(seed, 0, 0))?;
    if s.nrows() != 2 {
        return Err(Error::InvalidArgument("MAMP needs a two-terminal source".into()));
    }
    let x0: Vec<f64> = s.row(0).iter().copied().collect();
    let y0: Vec<f64> = s.row(1).iter().copied().collect();
    let a = build_coupled_ensemble(weight, rows(delta_x), n_block, derive_seed(seed, 1, 0))?;
    let b = build_coupled_ensemble(weight, rows(delta_y), n_block, derive_seed(seed, 2, 0))?;
    let u = measure_coupled(&a, &x0, sigma2.0, derive_seed(seed, 3, 0))?;
    let v = measure_coupled(&b, &y0, sigma2.1, derive_seed(seed, 4, 0))?;
    Ok(CoupledProblem { x0, y0, a, b, u, v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::build_weight_matrix;
    use crate::mamp::{make_ensemble, measure};

    #[test]
    fn single_block_is_the_plain_ensemble() {
        let w = WeightMatrix::from_entries(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let c = build_coupled_ensemble(&w, 100, 200, 13).unwrap();
        let p = make_ensemble(100, 200, 13).unwrap();
        assert_eq!(&c.to_dense(), p.matrix());
        assert_eq!(c.rate(), 0.5);
        let sig: Vec<f64> = (0..200).map(|i| (i as f64 * 0.37).cos()).collect();
        assert_eq!(
            measure_coupled(&c, &sig, 0.2, 5).unwrap(),
            measure(&p, &sig, 0.2, 5).unwrap()
        );
    }

    #[test]
    fn zero_weight_blocks_are_zero() {
        let w = build_weight_matrix(6, 1, 1, 1.0).unwrap();
        let c = build_coupled_ensemble(&w, 10, 20, 1).unwrap();
        let d = c.to_dense();
        assert_eq!((d.nrows(), d.ncols()), (80, 120));
        assert!(c.block(7, 5).is_some());
        assert!(c.block(0, 3).is_none());
        assert!(d.view((0, 60), (10, 20)).iter().all(|&v| v == 0.0));
        assert!(d.view((60, 20), (10, 20)).iter().all(|&v| v == 0.0));
        assert!(c.block(6, 0).is_some());
    }

    #[test]
    fn block_variance_follows_weight() {
        let w = build_weight_matrix(5, 1, 1, 1.5).unwrap();
        let c = build_coupled_ensemble(&w, 100, 200, 4).unwrap();
        for (r, col) in [(0, 0), (2, 3), (5, 0)] {
            let b = c.block(r, col).unwrap();
            let var = b.iter().map(|v| v * v).sum::<f64>() / b.len() as f64;
            let want = w.get(r, col) / 100.0;
            assert!((var / want - 1.0).abs() < 0.05, "{r},{col}: {var} vs {want}");
        }
    }

    #[test]
    fn products_match_dense() {
        let w = build_weight_matrix(5, 1, 2, 1.0).unwrap();
        let c = build_coupled_ensemble(&w, 7, 9, 2).unwrap();
        let d = c.to_dense();
        let x = DVector::from_fn(c.cols(), |i, _| (i as f64).sin());
        assert!((c.mul(&x) - &d * &x).amax() < 1e-12);
        let q = DMatrix::from_fn(9, 5, |r, col| 1.0 + 0.1 * r as f64 - 0.05 * col as f64);
        let z = DVector::from_fn(c.rows(), |i, _| (i as f64 * 0.3).cos());
        let mut qd = d.clone();
        for i in 0..qd.nrows() {
            for j in 0..qd.ncols() {
                qd[(i, j)] *= q[(i / 7, j / 9)];
            }
        }
        assert!((c.weighted_tr_mul(&q, &z) - qd.tr_mul(&z)).amax() < 1e-12);
    }
}
