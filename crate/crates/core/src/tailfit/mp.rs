use std::f64::consts::{FRAC_PI_2, PI};

use super::{ks_statistic, Family, QualityFlag, TailFit, XminStrategy};
use crate::error::{Error, Result};
use crate::esd::Esd;
use crate::numeric::{cumulative_integral, golden_section_max, integrate};

const MIN_POSITIVE: usize = 8;
const GRID: usize = 200;
const QUAD_TOL: f64 = 1e-10;

/// Bulk edges `(λ⁻, λ⁺) = σ²(1 ∓ √y)²` for column-to-row ratio `y <= 1`.
pub fn mp_bulk_edges(sigma: f64, y: f64) -> (f64, f64) {
    let s2 = sigma * sigma;
    let r = y.sqrt();
    (s2 * (1.0 - r).powi(2), s2 * (1.0 + r).powi(2))
}

/// Marchenko–Pastur density of the eigenvalues of `WᵀW` when `W` has i.i.d.
/// entries of variance `σ²/N` and `y = M/N`.
pub fn mp_density(x: f64, sigma: f64, y: f64) -> f64 {
    let (a, b) = mp_bulk_edges(sigma, y);
    if x <= a || x >= b || x <= 0.0 {
        return 0.0;
    }
    ((b - x) * (x - a)).sqrt() / (2.0 * PI * sigma * sigma * y * x)
}

/// MP CDF at each ascending point. Integrates in `θ` with
/// `x = λ⁻ + (λ⁺ - λ⁻) sin²θ`, which removes the square-root edges.
pub fn mp_cdf_sorted(sorted: &[f64], sigma: f64, y: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !(y > 0.0 && y <= 1.0) {
        return Err(Error::InvalidArgument(format!("MP parameters out of range: σ={sigma}, y={y}")));
    }
    let (a, b) = mp_bulk_edges(sigma, y);
    let w = b - a;
    let denom = PI * sigma * sigma * y;
    let h = |t: f64| {
        let (s, c) = t.sin_cos();
        w * w * s * s * c * c / (denom * (a + w * s * s))
    };
    let thetas: Vec<f64> = sorted
        .iter()
        .map(|&x| ((x - a) / w).clamp(0.0, 1.0).sqrt().asin())
        .collect();
    let partial = cumulative_integral(h, 0.0, &thetas, QUAD_TOL)?;
    let total = integrate(h, 0.0, FRAC_PI_2, QUAD_TOL, 0.0)?;
    Ok(partial.iter().map(|p| (p / total).min(1.0)).collect())
}

fn ks_at(pos: &[f64], sigma: f64, y: f64) -> f64 {
    let (_, edge) = mp_bulk_edges(sigma, y);
    let bulk = &pos[..pos.partition_point(|&v| v <= edge)];
    if bulk.is_empty() {
        return 1.0;
    }
    mp_cdf_sorted(bulk, sigma, y).map(|c| ks_statistic(&c)).unwrap_or(1.0)
}

/// Fits the MP scale σ by minimizing the KS distance to the eigenvalues
/// below the bulk edge: a 200-point log grid over `[1e-4, 1]·√λ_max`, then
/// golden-section refinement around the best grid point.
pub fn fit_mp(esd: &Esd) -> Result<TailFit> {
    let pos = esd.positive();
    if pos.len() < MIN_POSITIVE {
        return Err(Error::DegenerateSpectrum(format!(
            "{}: MP fit needs {MIN_POSITIVE} positive eigenvalues, found {}",
            esd.matrix_name,
            pos.len()
        )));
    }
    let y = esd.n_cols as f64 / esd.n_rows as f64;
    let hi = esd.lambda_max.sqrt();
    let lo = 1e-4 * hi;
    let grid: Vec<f64> = (0..GRID)
        .map(|i| lo * (hi / lo).powf(i as f64 / (GRID - 1) as f64))
        .collect();
    let scores: Vec<f64> = grid.iter().map(|&s| ks_at(pos, s, y)).collect();
    let mut best = 0;
    for (i, &k) in scores.iter().enumerate() {
        if k < scores[best] {
            best = i;
        }
    }
    let (mut sigma, mut ks) = (grid[best], scores[best]);
    let left = grid[best.saturating_sub(1)];
    let right = grid[(best + 1).min(GRID - 1)];
    let (s, neg) = golden_section_max(|s| -ks_at(pos, s, y), left, right, 1e-10 * hi);
    if -neg < ks {
        sigma = s;
        ks = -neg;
    }
    if !sigma.is_finite() {
        return Err(Error::NonConvergence(format!("{}: MP scale search failed", esd.matrix_name)));
    }
    let (_, edge) = mp_bulk_edges(sigma, y);
    let n_bulk = pos.partition_point(|&v| v <= edge);
    let degenerate = pos[0] == esd.lambda_max;
    Ok(TailFit {
        family: Family::MarchenkoPastur,
        alpha: None,
        beta: None,
        lambda: None,
        sigma_mp: Some(sigma),
        bulk_edge: Some(edge),
        mp_ratio: Some(y),
        x_min: pos[0],
        x_max: esd.lambda_max,
        ks_distance: ks,
        log_likelihood: None,
        n_tail: n_bulk,
        quality_flag: if degenerate { QualityFlag::DegenerateSpectrum } else { QualityFlag::Ok },
        xmin_strategy: XminStrategy::Fixed(pos[0]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_matches_density_quadrature() {
        let (sigma, y) = (1.3, 0.4);
        let (a, b) = mp_bulk_edges(sigma, y);
        let xs: Vec<f64> = (1..10).map(|i| a + (b - a) * i as f64 / 10.0).collect();
        let got = mp_cdf_sorted(&xs, sigma, y).unwrap();
        for (x, g) in xs.iter().zip(&got) {
            // plain x-space quadrature of the density, edges handled by the adaptive rule
            let direct = integrate(|t| mp_density(t, sigma, y), a, *x, 1e-9, 1e-12).unwrap();
            assert!((g - direct).abs() < 1e-6, "{g} vs {direct}");
        }
    }

    #[test]
    fn identity_is_flagged_degenerate() {
        let esd = Esd::from_eigenvalues("i", vec![1.0; 10], 10).unwrap();
        let fit = fit_mp(&esd).unwrap();
        assert_eq!(fit.quality_flag, QualityFlag::DegenerateSpectrum);
        assert!(fit.bulk_edge.unwrap() >= 1.0);
    }

    #[test]
    fn too_few_eigenvalues() {
        let esd = Esd::from_eigenvalues("s", vec![1.0, 2.0, 3.0], 3).unwrap();
        assert!(matches!(fit_mp(&esd), Err(Error::DegenerateSpectrum(_))));
    }
}
