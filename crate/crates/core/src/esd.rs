//! Empirical spectral densities of weight matrices.
//!
//! The ESD of an `N x M` matrix `W` (`N >= M`) is the set of eigenvalues of
//! `X = WᵀW`, obtained here as the squared singular values of `W`.

use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::WeightMatrix;

/// Eigenvalues above `-CLAMP_TOLERANCE * lambda_max` but below zero are rounding noise.
pub const CLAMP_TOLERANCE: f64 = 1e-12;
pub const DEFAULT_BINS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Esd {
    pub matrix_name: String,
    /// Ascending, nonnegative.
    pub eigenvalues: Vec<f64>,
    pub lambda_max: f64,
    pub n_rows: usize,
    pub n_cols: usize,
    pub aspect_ratio: f64,
}

impl Esd {
    /// Wraps an externally supplied eigenvalue list (one per column).
    pub fn from_eigenvalues(name: impl Into<String>, mut eigenvalues: Vec<f64>, n_rows: usize) -> Result<Self> {
        let name = name.into();
        if eigenvalues.is_empty() {
            return Err(Error::InvalidArgument(format!("{name}: empty eigenvalue list")));
        }
        if eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{name}: non-finite eigenvalue")));
        }
        eigenvalues.sort_by(f64::total_cmp);
        let lambda_max = *eigenvalues.last().unwrap();
        let floor = -CLAMP_TOLERANCE * lambda_max.abs();
        for v in eigenvalues.iter_mut() {
            if *v < 0.0 {
                if *v > floor {
                    *v = 0.0;
                } else {
                    return Err(Error::InvalidArgument(format!("{name}: negative eigenvalue {v}")));
                }
            }
        }
        eigenvalues.sort_by(f64::total_cmp);
        let n_cols = eigenvalues.len();
        if n_rows < n_cols {
            return Err(Error::InvalidArgument(format!(
                "{name}: n_rows {n_rows} smaller than eigenvalue count {n_cols}"
            )));
        }
        Ok(Esd {
            matrix_name: name,
            lambda_max: *eigenvalues.last().unwrap(),
            eigenvalues,
            n_rows,
            n_cols,
            aspect_ratio: n_rows as f64 / n_cols as f64,
        })
    }

    /// Strictly positive eigenvalues, ascending.
    pub fn positive(&self) -> &[f64] {
        let first = self.eigenvalues.partition_point(|&v| v <= 0.0);
        &self.eigenvalues[first..]
    }

    pub fn n_zero(&self) -> usize {
        self.eigenvalues.len() - self.positive().len()
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    pub fn scaled(&self, c: f64) -> Esd {
        Esd {
            eigenvalues: self.eigenvalues.iter().map(|v| v * c).collect(),
            lambda_max: self.lambda_max * c,
            ..self.clone()
        }
    }
}

/// Singular values of `m`, descending.
pub fn singular_values(m: &DMatrix<f64>, name: &str) -> Result<Vec<f64>> {
    let svd = SVD::try_new(m.clone(), false, false, f64::EPSILON, 100_000)
        .ok_or_else(|| Error::SvdNonConvergence(name.to_string()))?;
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// Largest singular value of `m`.
pub fn spectral_norm(m: &DMatrix<f64>, name: &str) -> Result<f64> {
    Ok(singular_values(m, name)?.first().copied().unwrap_or(0.0))
}

pub fn compute_esd(matrix: &WeightMatrix) -> Result<Esd> {
    let sv = singular_values(matrix.data(), matrix.name())?;
    let eigenvalues: Vec<f64> = sv.iter().map(|s| s * s).collect();
    Esd::from_eigenvalues(matrix.name(), eigenvalues, matrix.n_rows())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub center: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub log_spaced: bool,
    pub bins: Vec<HistogramBin>,
    /// Zero eigenvalues left out of a log-spaced histogram.
    pub excluded_zeros: usize,
}

impl Histogram {
    pub fn points(&self) -> Vec<(f64, usize)> {
        self.bins.iter().map(|b| (b.center, b.count)).collect()
    }

    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }
}

/// Histogram of the spectrum. The first bin is closed on both sides, the
/// rest are `(lo, hi]`. Log-spaced bins use geometric centers and cover the
/// positive eigenvalues only.
pub fn esd_histogram(esd: &Esd, n_bins: usize, log_spaced: bool) -> Result<Histogram> {
    if n_bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let values: &[f64] = if log_spaced { esd.positive() } else { &esd.eigenvalues };
    if values.is_empty() {
        return Err(Error::DegenerateSpectrum(format!(
            "{}: no positive eigenvalues for a log-spaced histogram",
            esd.matrix_name
        )));
    }
    let lo = values[0];
    let hi = *values.last().unwrap();
    let excluded_zeros = if log_spaced { esd.n_zero() } else { 0 };

    if lo == hi {
        let bins = vec![HistogramBin {
            lo,
            hi,
            center: lo,
            count: values.len(),
        }];
        return Ok(Histogram {
            log_spaced,
            bins,
            excluded_zeros,
        });
    }

    let edge = |k: usize| -> f64 {
        if k == 0 {
            lo
        } else if k == n_bins {
            hi
        } else if log_spaced {
            lo * (hi / lo).powf(k as f64 / n_bins as f64)
        } else {
            lo + (hi - lo) * (k as f64 / n_bins as f64)
        }
    };
    let edges: Vec<f64> = (0..=n_bins).map(edge).collect();
    let mut counts = vec![0usize; n_bins];
    for &v in values {
        // first edge >= v, bins are right-closed
        let k = edges[1..].partition_point(|&e| e < v).min(n_bins - 1);
        counts[k] += 1;
    }
    let bins = (0..n_bins)
        .map(|k| {
            let (a, b) = (edges[k], edges[k + 1]);
            HistogramBin {
                lo: a,
                hi: b,
                center: if log_spaced { (a * b).sqrt() } else { 0.5 * (a + b) },
                count: counts[k],
            }
        })
        .collect();
    Ok(Histogram {
        log_spaced,
        bins,
        excluded_zeros,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wm(rows: usize, cols: usize, v: &[f64]) -> WeightMatrix {
        WeightMatrix::from_source("w", DMatrix::from_row_slice(rows, cols, v)).unwrap()
    }

    #[test]
    fn identity_spectrum() {
        let esd = compute_esd(&WeightMatrix::from_source("i", DMatrix::identity(3, 3)).unwrap()).unwrap();
        for v in &esd.eigenvalues {
            assert!((v - 1.0).abs() < 1e-14);
        }
        assert!((esd.lambda_max - 1.0).abs() < 1e-14);
    }

    #[test]
    fn two_by_two_characteristic_polynomial() {
        // WᵀW = [[2,1],[1,1]], eigenvalues (3 ∓ √5)/2
        let esd = compute_esd(&wm(2, 2, &[1.0, 0.0, 1.0, 1.0])).unwrap();
        let s5 = 5f64.sqrt();
        assert!((esd.eigenvalues[0] - (3.0 - s5) / 2.0).abs() < 1e-12);
        assert!((esd.eigenvalues[1] - (3.0 + s5) / 2.0).abs() < 1e-12);
        assert!((esd.eigenvalues[0] - 0.381966).abs() < 1e-6);
    }

    #[test]
    fn zero_matrix() {
        let esd = compute_esd(&wm(4, 2, &[0.0; 8])).unwrap();
        assert_eq!(esd.eigenvalues, vec![0.0, 0.0]);
        assert_eq!(esd.n_cols, 2);
    }

    #[test]
    fn clamps_rounding_negatives_only() {
        let esd = Esd::from_eigenvalues("x", vec![-1e-14, 1.0, 2.0], 3).unwrap();
        assert_eq!(esd.eigenvalues[0], 0.0);
        assert!(Esd::from_eigenvalues("x", vec![-1e-3, 1.0], 2).is_err());
    }

    #[test]
    fn single_bin_histogram() {
        let esd = Esd::from_eigenvalues("x", vec![1.0, 1.0, 1.0], 3).unwrap();
        let h = esd_histogram(&esd, 1, false).unwrap();
        assert_eq!(h.points(), vec![(1.0, 3)]);
    }

    #[test]
    fn log_histogram_matches_enumeration() {
        let esd = Esd::from_eigenvalues("x", vec![1.0, 10.0, 100.0], 3).unwrap();
        let h = esd_histogram(&esd, 2, true).unwrap();
        // enumerate with the same boundary rule: first bin [1, 10], second (10, 100]
        let edges = [1.0, 10.0, 100.0];
        let mut expect = [0usize; 2];
        for v in [1.0, 10.0, 100.0] {
            let k = if v <= edges[1] { 0 } else { 1 };
            expect[k] += 1;
        }
        let got: Vec<usize> = h.bins.iter().map(|b| b.count).collect();
        assert_eq!(got, expect.to_vec());
        assert_eq!(h.total(), 3);
        assert!((h.bins[0].center - 10f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_log_histogram() {
        let esd = Esd::from_eigenvalues("x", vec![0.0, 0.0], 2).unwrap();
        assert!(matches!(esd_histogram(&esd, 10, true), Err(Error::DegenerateSpectrum(_))));
    }

    #[test]
    fn zeros_reported_separately() {
        let esd = Esd::from_eigenvalues("x", vec![0.0, 1.0, 2.0, 4.0], 4).unwrap();
        let h = esd_histogram(&esd, 3, true).unwrap();
        assert_eq!(h.excluded_zeros, 1);
        assert_eq!(h.total(), 3);
    }
}
