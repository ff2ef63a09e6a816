use super::{empty_fit, ks_statistic, resolve_xmin, Family, FitConfig, QualityFlag, TailFit, XminStrategy, POOR_PL_ALPHA};
use crate::error::{Error, Result};
use crate::esd::Esd;
use crate::numeric::golden_section_max;

const ALPHA_FLOOR: f64 = 1.0 + 1e-9;
const KS_TIE: f64 = 1e-12;

/// CDF of the power law truncated to `(a, b]`.
pub fn pl_cdf(x: f64, alpha: f64, a: f64, b: f64) -> f64 {
    if x <= a {
        return 0.0;
    }
    if x >= b {
        return 1.0;
    }
    scaled_cdf((x / a).ln(), alpha - 1.0, (b / a).ln())
}

// `ln_ratio = ln(x / a)`, `s = α - 1`, `ln_range = ln(b / a)`.
#[inline]
fn scaled_cdf(ln_ratio: f64, s: f64, ln_range: f64) -> f64 {
    if s.abs() < 1e-12 {
        ln_ratio / ln_range
    } else {
        (-s * ln_ratio).exp_m1() / (-s * ln_range).exp_m1()
    }
}

/// `ln ∫_1^r u^-α du` with `ln_range = ln r`.
fn ln_normalizer(alpha: f64, ln_range: f64) -> f64 {
    let s = alpha - 1.0;
    if s.abs() < 1e-12 {
        ln_range.ln()
    } else {
        (-(-s * ln_range).exp_m1() / s).ln()
    }
}

/// Log-likelihood of a tail sample under the PL truncated to `(x_min, x_max]`,
/// from its sufficient statistic `sum_ln_ratio = Σ ln(x / x_min)`.
pub fn pl_log_likelihood(alpha: f64, sum_ln_ratio: f64, n: usize, x_min: f64, x_max: f64) -> f64 {
    let n = n as f64;
    -alpha * sum_ln_ratio - n * x_min.ln() - n * ln_normalizer(alpha, (x_max / x_min).ln())
}

/// Closed-form MLE of the untruncated continuous power law.
pub fn pl_mle_untruncated(sample: &[f64], x_min: f64) -> f64 {
    let s: f64 = sample.iter().map(|x| (x / x_min).ln()).sum();
    1.0 + sample.len() as f64 / s
}

fn maximize_alpha(sum_ln_ratio: f64, n: usize, x_min: f64, x_max: f64, alpha_max: f64) -> (f64, f64) {
    golden_section_max(
        |a| pl_log_likelihood(a, sum_ln_ratio, n, x_min, x_max),
        ALPHA_FLOOR,
        alpha_max,
        1e-10,
    )
}

fn flag(n_tail: usize, alpha: f64, config: &FitConfig) -> QualityFlag {
    if n_tail < config.min_tail {
        QualityFlag::InsufficientTail
    } else if alpha > POOR_PL_ALPHA {
        QualityFlag::PoorPlFit
    } else {
        QualityFlag::Ok
    }
}

fn fit_at(esd: &Esd, x_min: f64, strategy: XminStrategy, config: &FitConfig) -> TailFit {
    let x_max = esd.lambda_max;
    let tail = super::tail(esd, x_min);
    let n = tail.len();
    if n < 2 || x_min >= x_max || tail[0] == x_max {
        return empty_fit(Family::PowerLaw, x_min, x_max, n, strategy);
    }
    let sum_ln: f64 = tail.iter().map(|x| (x / x_min).ln()).sum();
    let (alpha, ll) = maximize_alpha(sum_ln, n, x_min, x_max, config.alpha_max);
    let cdf: Vec<f64> = tail.iter().map(|&x| pl_cdf(x, alpha, x_min, x_max)).collect();
    TailFit {
        alpha: Some(alpha),
        ks_distance: ks_statistic(&cdf),
        log_likelihood: Some(ll),
        quality_flag: flag(n, alpha, config),
        ..empty_fit(Family::PowerLaw, x_min, x_max, n, strategy)
    }
}

/// Fits `p(x) ∝ x^-α` on `(x_min, λ_max]` by golden-section maximization of
/// the truncated likelihood over `α ∈ (1, alpha_max]`.
pub fn fit_pl(esd: &Esd, strategy: XminStrategy, config: &FitConfig) -> Result<TailFit> {
    if esd.positive().is_empty() {
        return Err(Error::DegenerateSpectrum(format!("{}: no positive eigenvalues", esd.matrix_name)));
    }
    match strategy {
        XminStrategy::KsSearch => Ok(ks_search(esd, config)),
        other => {
            let x_min = resolve_xmin(esd, other, config)?;
            Ok(fit_at(esd, x_min, other, config))
        }
    }
}

struct Candidate {
    index: usize,
    ks: f64,
}

/// KS distance of the PL candidate starting at `k`, or `None` as soon as any
/// partial maximum exceeds `bound`. Points are visited coarse-to-fine so
/// hopeless candidates are rejected after a handful of evaluations.
fn candidate_ks(ln_pos: &[f64], k: usize, alpha: f64, bound: f64) -> Option<f64> {
    let ln_tail = &ln_pos[k..];
    let n = ln_tail.len();
    let nf = n as f64;
    let ln_a = ln_tail[0];
    let ln_range = ln_tail[n - 1] - ln_a;
    let s = alpha - 1.0;
    let den = (-s * ln_range).exp_m1();
    let at = |i: usize| -> f64 {
        let f = if s.abs() < 1e-12 {
            (ln_tail[i] - ln_a) / ln_range
        } else {
            (-s * (ln_tail[i] - ln_a)).exp_m1() / den
        };
        (f - i as f64 / nf).abs().max(((i + 1) as f64 / nf - f).abs())
    };
    let mut d: f64 = 0.0;
    let mut stride = (n.next_power_of_two() / 2).max(1);
    loop {
        let mut i = stride - 1;
        while i < n {
            d = d.max(at(i));
            i += stride;
        }
        if d > bound {
            return None;
        }
        if stride == 1 {
            return Some(d.min(1.0));
        }
        stride /= 2;
    }
}

fn ks_search(esd: &Esd, config: &FitConfig) -> TailFit {
    let pos = esd.positive();
    let n = pos.len();
    let x_max = esd.lambda_max;
    let ln_pos: Vec<f64> = pos.iter().map(|v| v.ln()).collect();
    // suffix[k] = Σ_{j >= k} ln x_j
    let mut suffix = vec![0.0; n + 1];
    for k in (0..n).rev() {
        suffix[k] = suffix[k + 1] + ln_pos[k];
    }
    let min_tail = config.min_tail.max(2);
    let candidates: Vec<usize> = (0..n)
        .filter(|&k| (k == 0 || pos[k] != pos[k - 1]) && n - k >= min_tail && pos[k] < x_max)
        .collect();
    if candidates.is_empty() {
        return fit_at(esd, pos[0], XminStrategy::KsSearch, config);
    }

    let alpha_at = |k: usize| -> f64 {
        let m = n - k;
        let sum_ln = suffix[k] - m as f64 * ln_pos[k];
        maximize_alpha(sum_ln, m, pos[k], x_max, config.alpha_max).0
    };

    let mut evaluated: Vec<Candidate> = Vec::new();
    let mut best = f64::INFINITY;
    let seeds = 64.min(candidates.len());
    let mut seeded = vec![false; candidates.len()];
    for s in 0..seeds {
        let c = s * (candidates.len() - 1) / (seeds - 1).max(1);
        if seeded[c] {
            continue;
        }
        seeded[c] = true;
        let k = candidates[c];
        let ks = candidate_ks(&ln_pos, k, alpha_at(k), f64::INFINITY).unwrap();
        best = best.min(ks);
        evaluated.push(Candidate { index: k, ks });
    }
    for (c, &k) in candidates.iter().enumerate() {
        if seeded[c] {
            continue;
        }
        if let Some(ks) = candidate_ks(&ln_pos, k, alpha_at(k), best + KS_TIE) {
            best = best.min(ks);
            evaluated.push(Candidate { index: k, ks });
        }
    }
    let chosen = evaluated
        .iter()
        .filter(|c| c.ks <= best + KS_TIE)
        .map(|c| c.index)
        .min()
        .unwrap();
    fit_at(esd, pos[chosen], XminStrategy::KsSearch, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn esd(v: Vec<f64>) -> Esd {
        let n = v.len();
        Esd::from_eigenvalues("t", v, n).unwrap()
    }

    #[test]
    fn cdf_endpoints_and_alpha_one() {
        assert_eq!(pl_cdf(1.0, 2.5, 1.0, 10.0), 0.0);
        assert_eq!(pl_cdf(10.0, 2.5, 1.0, 10.0), 1.0);
        let mid = pl_cdf(10f64.sqrt(), 1.0, 1.0, 10.0);
        assert!((mid - 0.5).abs() < 1e-12);
        // untruncated-like: α=2 on (1, huge], F(2) ≈ 1/2
        assert!((pl_cdf(2.0, 2.0, 1.0, 1e300) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn insufficient_tail_flag() {
        let fit = fit_pl(&esd(vec![0.0, 1.0, 2.0, 3.0]), XminStrategy::KsSearch, &FitConfig::default()).unwrap();
        assert_eq!(fit.quality_flag, QualityFlag::InsufficientTail);
        assert_eq!(fit.n_tail, 3);
    }

    #[test]
    fn all_zero_spectrum_is_an_error() {
        assert!(fit_pl(&esd(vec![0.0, 0.0]), XminStrategy::KsSearch, &FitConfig::default()).is_err());
    }

    #[test]
    fn pruned_search_matches_exhaustive_scan() {
        // deterministic heavy-ish tail
        let v: Vec<f64> = (1..=400).map(|i| (1.0 - i as f64 / 401.0).powf(-1.0 / 1.7) * (1.0 + 0.1 * ((i * 7919) % 13) as f64 / 13.0)).collect();
        let e = esd(v);
        let cfg = FitConfig::default();
        let fit = fit_pl(&e, XminStrategy::KsSearch, &cfg).unwrap();
        let pos = e.positive();
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..pos.len() {
            if (k > 0 && pos[k] == pos[k - 1]) || pos.len() - k < cfg.min_tail {
                continue;
            }
            let f = fit_pl(&e, XminStrategy::Fixed(pos[k]), &cfg).unwrap();
            if f.ks_distance < best.0 - 1e-12 {
                best = (f.ks_distance, pos[k]);
            }
        }
        assert_eq!(fit.x_min, best.1);
        assert!((fit.ks_distance - best.0).abs() < 1e-12);
    }
}
