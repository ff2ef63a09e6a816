/// One-sample KS statistic from fitted CDF values at the ascending sample
/// points. Both one-sided limits of the empirical step function are checked
/// at every point.
pub fn ks_statistic(cdf_at_sorted: &[f64]) -> f64 {
    let n = cdf_at_sorted.len() as f64;
    cdf_at_sorted
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            // gaps in count units, so grid-aligned CDFs give exact multiples of 1/n
            let nf = n * f;
            (nf - i as f64).abs().max(((i + 1) as f64 - nf).abs())
        })
        .fold(0.0, f64::max)
        .min(n)
        / n
}

/// Two-sample KS statistic; inputs need not be sorted.
pub fn two_sample_ks(a: &[f64], b: &[f64]) -> f64 {
    let sorted = |v: &[f64]| {
        let mut s = v.to_vec();
        s.sort_by(f64::total_cmp);
        s
    };
    let (a, b) = (&sorted(a)[..], &sorted(b)[..]);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic critical value `c(α) √((n + m) / (n m))`; `m = None` gives the
/// one-sample form `c(α) / √n`. Only α = 0.01 and 0.05 are tabulated.
pub fn ks_critical_value(level: f64, n: usize, m: Option<usize>) -> f64 {
    let c = if (level - 0.01).abs() < 1e-12 { 1.628 } else { 1.358 };
    match m {
        Some(m) => c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt(),
        None => c / (n as f64).sqrt(),
    }
}
