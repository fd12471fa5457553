use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Non-negative `L_r × L_c` variance profile of a coupled ensemble.
///
/// Rows `0..L_c` form the band, row `r` covering the columns `c` with
/// `|r − c| ≤ w`. The remaining `2 s` rows seed both boundaries: row
/// `L_c + j` covers only column `j` and row `L_c + s + j` only column
/// `L_c − 1 − j`, for `j < s = seed_blocks`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    entries: DMatrix<f64>,
    bandwidth: usize,
    seed_blocks: usize,
    seed_boost: f64,
}

/// Row sums must stay within these bounds.
const MIN_ROW_SUM: f64 = 0.5;
const MAX_ROW_SUM: f64 = 2.0;

pub fn build_weight_matrix(
    l_c: usize,
    w: usize,
    seed_blocks: usize,
    seed_boost: f64,
) -> Result<WeightMatrix> {
    if l_c == 0 || l_c < 2 * w + 1 {
        return Err(Error::InvalidArgument(format!(
            "need L_c >= 2w + 1, got L_c = {l_c}, w = {w}"
        )));
    }
    if 2 * seed_blocks > l_c {
        return Err(Error::InvalidArgument(format!(
            "seed_blocks = {seed_blocks} per boundary exceeds half of L_c = {l_c}"
        )));
    }
    if seed_blocks > 0 && !(MIN_ROW_SUM..=MAX_ROW_SUM).contains(&seed_boost) {
        return Err(Error::InvalidArgument(format!(
            "seed_boost = {seed_boost} puts a seeding row sum outside [{MIN_ROW_SUM}, {MAX_ROW_SUM}]"
        )));
    }
    let band = 1.0 / (2 * w + 1) as f64;
    let entries = DMatrix::from_fn(l_c + 2 * seed_blocks, l_c, |r, c| {
        let seeded = if r < l_c {
            return if r.abs_diff(c) <= w { band } else { 0.0 };
        } else if r < l_c + seed_blocks {
            r - l_c
        } else {
            2 * l_c + seed_blocks - 1 - r
        };
        if c == seeded {
            seed_boost
        } else {
            0.0
        }
    });
    let out = WeightMatrix {
        entries,
        bandwidth: w,
        seed_blocks,
        seed_boost,
    };
    out.check()?;
    Ok(out)
}

impl WeightMatrix {
    /// A general weight matrix; only the row-sum and sign constraints are
    /// checked, so the band invariant is the caller's business.
    pub fn from_entries(entries: DMatrix<f64>) -> Result<Self> {
        let out = Self {
            bandwidth: entries.ncols().saturating_sub(1),
            seed_blocks: 0,
            seed_boost: 0.0,
            entries,
        };
        out.check()?;
        Ok(out)
    }

    fn check(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::InvalidArgument("weight matrix is empty".into()));
        }
        if self.entries.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
        }
        for (r, row) in self.entries.row_iter().enumerate() {
            let s = row.sum();
            if !(MIN_ROW_SUM..=MAX_ROW_SUM).contains(&s) {
                return Err(Error::InvalidArgument(format!(
                    "row {r} of the weight matrix sums to {s}, outside [{MIN_ROW_SUM}, {MAX_ROW_SUM}]"
                )));
            }
        }
        for (c, col) in self.entries.column_iter().enumerate() {
            if col.sum() == 0.0 {
                return Err(Error::InvalidArgument(format!("column block {c} is never measured")));
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.entries[(r, c)]
    }

    pub fn row_blocks(&self) -> usize {
        self.entries.nrows()
    }

    pub fn col_blocks(&self) -> usize {
        self.entries.ncols()
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn seed_blocks(&self) -> usize {
        self.seed_blocks
    }

    pub fn seed_boost(&self) -> f64 {
        self.seed_boost
    }

    /// Indices of the seeding rows.
    pub fn seeded_rows(&self) -> Vec<usize> {
        let l_c = self.col_blocks();
        (l_c..l_c + 2 * self.seed_blocks).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.entries.row_iter().map(|r| r.sum()).collect()
    }

    /// Measurement weight each column block receives; 1 for an interior
    /// block of the band.
    pub fn column_sums(&self) -> Vec<f64> {
        self.entries.column_iter().map(|c| c.sum()).collect()
    }

    /// Whether the band rows vanish outside `|r − c| ≤ w`.
    pub fn is_band(&self) -> bool {
        let w = self.bandwidth;
        let l_c = self.col_blocks();
        (0..self.row_blocks().min(l_c))
            .all(|r| (0..l_c).all(|c| r.abs_diff(c) <= w || self.entries[(r, c)] == 0.0))
    }

    /// Overall measurement rate `δ L_r / L_c` at terminal rate `δ`.
    pub fn overall_rate(&self, delta: f64) -> f64 {
        delta * self.row_blocks() as f64 / self.col_blocks() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_bandwidth_is_identity() {
        let w = build_weight_matrix(5, 0, 0, 1.0).unwrap();
        assert_eq!(w.entries(), &DMatrix::identity(5, 5));
        assert!(w.row_sums().iter().all(|&s| s == 1.0));
    }

    #[test]
    fn band_row_sums() {
        let w = build_weight_matrix(16, 2, 0, 1.0).unwrap();
        let sums = w.row_sums();
        for (r, s) in sums.iter().enumerate() {
            if (2..14).contains(&r) {
                assert!((s - 1.0).abs() < 1e-12);
            } else {
                assert!(*s >= 0.5 && *s < 1.0);
            }
        }
        assert!((sums[0] - 3.0 / 5.0).abs() < 1e-12);
        assert!((sums[1] - 4.0 / 5.0).abs() < 1e-12);
        assert!(w.is_band());
    }

    #[test]
    fn seeding_rows_oversample_both_boundaries() {
        let w = build_weight_matrix(16, 2, 2, 1.0).unwrap();
        assert_eq!(w.row_blocks(), 20);
        assert_eq!(w.seeded_rows(), vec![16, 17, 18, 19]);
        assert_eq!(w.get(17, 1), 1.0);
        assert_eq!(w.get(18, 15), 1.0);
        assert_eq!(w.get(19, 14), 1.0);
        let cols = w.column_sums();
        for c in [0, 1, 14, 15] {
            assert!(cols[c] >= 1.2, "{c}: {}", cols[c]);
        }
        assert!((cols[0] - 1.6).abs() < 1e-12 && (cols[1] - 1.8).abs() < 1e-12);
        assert!((cols[8] - 1.0).abs() < 1e-12);
        assert!(w.is_band());
        assert!(w.row_sums().iter().all(|s| (0.5..=2.0).contains(s)));
        assert!((w.overall_rate(0.5) - 0.5 * 20.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(build_weight_matrix(4, 2, 0, 1.0).is_err());
        assert!(build_weight_matrix(8, 1, 2, 3.0).is_err());
        assert!(build_weight_matrix(8, 1, 2, 0.2).is_err());
        assert!(build_weight_matrix(8, 1, 5, 1.0).is_err());
        assert!(build_weight_matrix(8, 1, 4, 1.0).is_ok());
        assert!(WeightMatrix::from_entries(DMatrix::from_element(1, 1, 3.0)).is_err());
        assert!(WeightMatrix::from_entries(DMatrix::from_element(1, 1, 1.0)).is_ok());
    }
}
