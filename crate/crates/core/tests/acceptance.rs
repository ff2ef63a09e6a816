//! One PASS/FAIL line per acceptance criterion. Run with
//! `cargo test --test acceptance`; set `ACCEPTANCE_STRICT=1`
//! to turn any FAIL into a nonzero exit.

use std::f64::consts::E;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use htsr::correlate::{best_selection_rate, correlate_slices, kendall_tau, series_by_axis, simpson_check, spearman, Method, Target, SIMPSON_THRESHOLD};
use htsr::esd::{compute_esd, Esd};
use htsr::metrics::scale::layer_mp_softrank;
use htsr::metrics::{
    alpha_weighted, dist_spec_init, fro_dist, log_alpha_norm, log_norm, log_spectral_norm, margin_metrics, margin_percentile, mp_softrank, names,
    pacbayes_metrics, pacbayes_sigma, param_norm, shape_metrics, stable_rank, LayerNorms, MetricFlag, MetricValue, PacBayesConfig, PacBayesInputs,
    ShapeOptions,
};
use htsr::netprobe::{margins, Activation, ProbeDataset, ProbeLayer, ProbeNetwork, Quadratic};
use htsr::synth::{
    gaussian_matrix, planted_series, sample_etpl, sample_mp_spectrum, sample_pareto, sample_trunc_exp, simpson_manifest, spiked_family, synth_manifest,
    ManifestSpec, Spikes, DEFAULT_SEED,
};
use htsr::tailfit::{
    fit_etpl, fit_exp, fit_mp, fit_pl, ks_statistic, pl_mle_untruncated, Family, FitConfig, QualityFlag, TailFit, XminStrategy,
};
use htsr::tensor_io::WeightMatrix;
use nalgebra::DMatrix;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn esd_of(values: Vec<f64>) -> Esd {
    let n = values.len();
    Esd::from_eigenvalues("spectrum", values, n).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn fixed1() -> XminStrategy {
    XminStrategy::Fixed(1.0)
}

fn pl_recovery() -> Outcome {
    let cfg = FitConfig::default();
    let (mut worst_truth, mut worst_oracle, mut slowest) = (0.0f64, 0.0f64, Duration::ZERO);
    for i in 0..20u64 {
        let alpha = [1.5, 2.5, 3.5][i as usize % 3];
        let v = sample_pareto(alpha, 1.0, f64::INFINITY, 50_000, 100 + i).unwrap();
        let oracle = pl_mle_untruncated(&v, 1.0);
        let e = esd_of(v);
        let t = Instant::now();
        let fit = fit_pl(&e, fixed1(), &cfg).unwrap();
        slowest = slowest.max(t.elapsed());
        let a = fit.alpha.unwrap();
        worst_truth = worst_truth.max((a - alpha).abs());
        worst_oracle = worst_oracle.max((a - oracle).abs());
    }
    outcome(
        worst_truth <= 0.05 && worst_oracle <= 0.02 && slowest < Duration::from_secs(5),
        format!("20 spectra: max |a-truth| {worst_truth:.4} (<= 0.05), max |a-oracle| {worst_oracle:.4} (<= 0.02), slowest fit {slowest:.2?} (< 5s)"),
    )
}

fn etpl_exp_recovery() -> Outcome {
    let cfg = FitConfig::default();
    let mut worst_etpl = 0.0f64;
    for (k, (beta, lambda)) in [(0.5, 0.1), (0.5, 1.0), (1.5, 0.1), (1.5, 1.0)].into_iter().enumerate() {
        let v = sample_etpl(beta, lambda, 1.0, f64::INFINITY, 50_000, 200 + k as u64).unwrap().values;
        let fit = fit_etpl(&esd_of(v), fixed1(), &cfg).unwrap();
        worst_etpl = worst_etpl.max(rel(fit.beta.unwrap(), beta)).max(rel(fit.lambda.unwrap(), lambda));
    }
    let mut worst_exp = 0.0f64;
    for (k, lambda) in [0.1, 1.0].into_iter().enumerate() {
        let v = sample_trunc_exp(lambda, 1.0, f64::INFINITY, 50_000, 300 + k as u64).unwrap();
        let fit = fit_exp(&esd_of(v), fixed1(), &cfg).unwrap();
        worst_exp = worst_exp.max(rel(fit.lambda.unwrap(), lambda));
    }

    // λ = 0: E-TPL collapses onto the PL fit
    let e = esd_of(sample_pareto(2.5, 1.0, f64::INFINITY, 50_000, 400).unwrap());
    let (pl, tpl) = (fit_pl(&e, fixed1(), &cfg).unwrap(), fit_etpl(&e, fixed1(), &cfg).unwrap());
    let pl_gap = rel(tpl.beta.unwrap(), pl.alpha.unwrap());

    // β = 0: E-TPL collapses onto the EXP fit
    let e = esd_of(sample_trunc_exp(0.5, 1.0, f64::INFINITY, 50_000, 401).unwrap());
    let (ex, tpl) = (fit_exp(&e, fixed1(), &cfg).unwrap(), fit_etpl(&e, fixed1(), &cfg).unwrap());
    let beta0 = tpl.beta.unwrap().abs();
    let exp_gap = rel(tpl.lambda.unwrap(), ex.lambda.unwrap());

    outcome(
        worst_etpl <= 0.10 && worst_exp <= 0.05 && pl_gap <= 0.10 && beta0 <= 0.15 && exp_gap <= 0.05,
        format!(
            "E-TPL max rel err {worst_etpl:.4} (<= 0.10), EXP {worst_exp:.4} (<= 0.05), lambda=0 beta vs PL alpha {pl_gap:.4} (<= 0.10), \
             beta=0 |beta| {beta0:.4} (<= 0.15) and lambda vs EXP {exp_gap:.4} (<= 0.05)"
        ),
    )
}

fn ks_checks() -> Outcome {
    // {1,...,5} against the uniform CDF on (0, 5]
    let hand = ks_statistic(&[0.2, 0.4, 0.6, 0.8, 1.0]);
    let cfg = FitConfig::default();
    let mut failures = 0;
    let mut worst_ratio = 0.0f64;
    for i in 0..50u64 {
        let seed = 500 + i;
        let e = if i % 2 == 0 {
            esd_of(sample_pareto(2.5, 1.0, f64::INFINITY, 2_000, seed).unwrap())
        } else {
            esd_of(sample_trunc_exp(0.7, 1.0, f64::INFINITY, 2_000, seed).unwrap())
        };
        let fit = if i % 2 == 0 { fit_pl(&e, fixed1(), &cfg) } else { fit_exp(&e, fixed1(), &cfg) }.unwrap();
        let crit = 1.63 / (fit.n_tail as f64).sqrt();
        worst_ratio = worst_ratio.max(fit.ks_distance / crit);
        if fit.ks_distance >= crit {
            failures += 1;
        }
    }
    outcome(
        hand == 0.2 && failures <= 2,
        format!("5-point example {hand} (== 0.2), self-fit failures {failures}/50 (<= 2), max KS/critical {worst_ratio:.3}"),
    )
}

fn mp_edge() -> Outcome {
    let w = WeightMatrix::from_source("w", gaussian_matrix(1000, 333, 1.0 / 1000f64.sqrt(), DEFAULT_SEED)).unwrap();
    let e = compute_esd(&w).unwrap();
    let fit = fit_mp(&e).unwrap();
    let edge = fit.bulk_edge.unwrap();
    let expect = (1.0 + (1.0 / 3.003f64).sqrt()).powi(2);
    let soft = layer_mp_softrank(&e, &fit).value().unwrap();
    outcome(
        rel(edge, expect) <= 0.05 && (0.90..=1.10).contains(&soft),
        format!("edge {edge:.4} vs {expect:.4} (rel {:.4} <= 0.05), mp_softrank {soft:.4} in [0.90, 1.10]", rel(edge, expect)),
    )
}

fn wm(name: &str, rows: &[&[f64]]) -> WeightMatrix {
    let m = DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j]);
    WeightMatrix::from_source(name, m).unwrap()
}

fn diag(name: &str, d: &[f64]) -> WeightMatrix {
    WeightMatrix::from_source(name, DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(d))).unwrap()
}

fn esd_of_matrix(w: &WeightMatrix) -> Esd {
    compute_esd(w).unwrap()
}

fn fit_with(family: Family, alpha: Option<f64>, bulk_edge: Option<f64>) -> TailFit {
    TailFit {
        family,
        alpha,
        beta: None,
        lambda: None,
        sigma_mp: None,
        bulk_edge,
        mp_ratio: None,
        x_min: 1.0,
        x_max: 2.0,
        ks_distance: 0.0,
        log_likelihood: None,
        n_tail: 8,
        quality_flag: QualityFlag::Ok,
        xmin_strategy: XminStrategy::Fixed(1.0),
    }
}

fn layer(w: DMatrix<f64>, activation: Activation) -> ProbeLayer {
    ProbeLayer { weight: w, bias: None, activation }
}

fn get(list: &[(&'static str, MetricValue)], name: &str) -> MetricValue {
    list.iter().find(|x| x.0 == name).unwrap().1.clone()
}

fn hand_values() -> Outcome {
    let mut checks: Vec<(&str, Option<f64>, f64)> = Vec::new();
    let mut undefined: Vec<(&str, bool)> = Vec::new();
    let mut push = |name: &'static str, got: Option<f64>, want: f64| checks.push((name, got, want));
    let id2 = || diag("a", &[1.0, 1.0]);
    let zero2 = || diag("a", &[0.0, 0.0]);

    push("param_norm two identities", Some(param_norm(&[id2(), diag("b", &[1.0, 1.0])])), 4.0);
    push("param_norm zero", Some(param_norm(&[zero2()])), 0.0);
    push("param_norm [[1,2],[3,4]]", Some(param_norm(&[wm("a", &[&[1.0, 2.0], &[3.0, 4.0]])])), 30.0);

    let layers = |d: f64| -> Vec<WeightMatrix> { ["a", "b", "c"].iter().map(|n| diag(n, &[d, d])).collect() };
    push("fro_dist equal", fro_dist(&[id2()], &[id2()]).ok(), 0.0);
    push("fro_dist identity diffs x3", fro_dist(&layers(1.0), &layers(0.0)).ok(), 6.0);
    push("fro_dist ones diff", fro_dist(&[wm("a", &[&[1.0, 1.0], &[1.0, 1.0]])], &[zero2()]).ok(), 4.0);

    let fro = |name: &'static str, f: f64| WeightMatrix::from_source(name, DMatrix::from_element(2, 2, (f / 4.0).sqrt())).unwrap();
    push("log_norm fro e", log_norm(&[fro("a", E)]).value(), 1.0);
    push("log_norm fro e^2, e^4", log_norm(&[fro("a", E * E), fro("b", E.powi(4))]).value(), 3.0);
    undefined.push(("log_norm zero matrix", !log_norm(&[id2(), zero2()]).is_defined()));

    let spec = |v: &[f64]| -> Vec<Esd> { v.iter().map(|l| esd_of(vec![l / 2.0, *l])).collect() };
    push("log_spectral_norm identity", log_spectral_norm(&[esd_of_matrix(&id2())]).value(), 0.0);
    push("log_spectral_norm e^2", log_spectral_norm(&spec(&[E * E])).value(), 2.0);
    push("log_spectral_norm 1, e^4", log_spectral_norm(&spec(&[1.0, E.powi(4)])).value(), 2.0);

    push("dist_spec_init equal", dist_spec_init(&[id2()], &[id2()]).ok(), 0.0);
    push("dist_spec_init diag(3,1)", dist_spec_init(&[diag("a", &[3.0, 1.0])], &[zero2()]).ok(), 9.0);
    push(
        "dist_spec_init diag(1), diag(2)",
        dist_spec_init(&[diag("a", &[1.0, 0.0]), diag("b", &[2.0, 0.0])], &[zero2(), diag("b", &[0.0, 0.0])]).ok(),
        5.0,
    );

    let mp = |edge: f64| fit_with(Family::MarchenkoPastur, None, Some(edge));
    push("mp_softrank lambda_max = 4 edge", mp_softrank(&[esd_of(vec![1.0, 8.0])], &[mp(2.0)]).value(), 0.25);
    push("mp_softrank ratios 1, 0.5", mp_softrank(&[esd_of(vec![1.0, 2.0]), esd_of(vec![1.0, 4.0])], &[mp(2.0), mp(2.0)]).value(), 0.75);

    push("stable_rank identity 5x5", stable_rank(&[esd_of_matrix(&diag("a", &[1.0; 5]))]).value(), 5.0);
    push("stable_rank diag(2,1,1)", stable_rank(&[esd_of_matrix(&diag("a", &[2.0, 1.0, 1.0]))]).value(), 1.5);
    push("stable_rank rank 1", stable_rank(&[esd_of_matrix(&wm("a", &[&[1.0, 2.0], &[2.0, 4.0]]))]).value(), 1.0);

    let pl = |a: f64| fit_with(Family::PowerLaw, Some(a), None);
    push("alpha_weighted lambda_max 1", alpha_weighted(&[esd_of(vec![0.5, 1.0])], &[pl(7.3)]).value(), 0.0);
    push("alpha_weighted alpha 2, e", alpha_weighted(&[esd_of(vec![1.0, E])], &[pl(2.0)]).value(), 2.0);
    push(
        "alpha_weighted two layers",
        alpha_weighted(&[esd_of(vec![1.0, E * E]), esd_of(vec![1.0, E.powi(4)])], &[pl(2.0), pl(3.0)]).value(),
        8.0,
    );

    push("log_alpha_norm identity", log_alpha_norm(&[esd_of(vec![1.0; 6])], &[pl(3.3)]).value(), 6f64.ln());
    push("log_alpha_norm {1,2} alpha 2", log_alpha_norm(&[esd_of(vec![1.0, 2.0])], &[pl(2.0)]).value(), 5f64.ln());
    undefined.push(("log_alpha_norm zero spectrum", !log_alpha_norm(&[esd_of(vec![0.0, 0.0])], &[pl(2.0)]).is_defined()));

    let net = |ls: Vec<ProbeLayer>| ProbeNetwork::new(ls).unwrap().squared_forward_allones();
    push("path_norm identity k=4", Some(net(vec![layer(DMatrix::identity(4, 4), Activation::Identity)])), 4.0);
    let chain = vec![
        layer(DMatrix::from_element(1, 1, 2.0), Activation::Relu),
        layer(DMatrix::from_element(1, 1, 3.0), Activation::None),
    ];
    push("path_norm chain 2, 3", Some(net(chain)), 36.0);
    let zeroed = vec![layer(DMatrix::identity(3, 3), Activation::Relu), layer(DMatrix::zeros(2, 3), Activation::None)];
    push("path_norm zero layer", Some(net(zeroed)), 0.0);

    let logits_net = ProbeNetwork::new(vec![layer(DMatrix::identity(2, 2), Activation::None)]).unwrap();
    let data = ProbeDataset::new(vec![vec![2.0, 0.0]], vec![0], 2).unwrap();
    push("margin of logits [2,0]", margins(&logits_net, &data).ok().map(|m| m[0]), 2.0);
    let ms: Vec<f64> = (-1..=8).map(f64::from).collect();
    push("margin 10th percentile", margin_percentile(&ms, 10.0).ok(), -0.9);
    push("margin single sample", margin_percentile(&[1.25], 10.0).ok(), 1.25);

    let norms = [LayerNorms { spectral_sq: E * E, frobenius_sq: E.powi(3) }];
    let mm = |g: f64| -> Vec<(&'static str, MetricValue)> { margin_metrics(&norms, Some(7.0), g).into_iter().map(|(n, v, _)| (n, v)).collect() };
    let unit = mm(1.0);
    push("inverse_margin gamma 1", get(&unit, names::INVERSE_MARGIN).value(), 1.0);
    push("log_prod_of_spec_over_margin", get(&unit, names::LOG_PROD_OF_SPEC_OVER_MARGIN).value(), 2.0);
    push("log_prod_of_fro_over_margin gamma 1", get(&unit, names::LOG_PROD_OF_FRO_OVER_MARGIN).value(), 3.0);
    push("path_norm_over_margin gamma 1", get(&unit, names::PATH_NORM_OVER_MARGIN).value(), 7.0);
    push("inverse_margin gamma -0.5", get(&mm(-0.5), names::INVERSE_MARGIN).value(), 4.0);
    push("log_prod_of_spec_over_margin gamma e", get(&mm(E), names::LOG_PROD_OF_SPEC_OVER_MARGIN).value(), 0.0);

    let inputs = |init: &'static [f64], params: &'static [f64]| PacBayesInputs { params, init: Some(init), sigma: 1.0, sigma_mag: 0.4, m: E, epsilon: 1e-3 };
    let pb = pacbayes_metrics(&inputs(&[0.0, 0.0], &[2.0, 0.0])).unwrap();
    push("pacbayes_init", get(&pb, names::PACBAYES_INIT).value(), 12.0);
    push("pacbayes_flatness", get(&pb, names::PACBAYES_FLATNESS).value(), 1.0);
    let same = pacbayes_metrics(&inputs(&[0.3, -1.2], &[0.3, -1.2])).unwrap();
    push("pacbayes_mag_init zero distance", get(&same, names::PACBAYES_MAG_INIT).value(), 1.0 + 10.0);

    let bad: Vec<String> = checks
        .iter()
        .filter(|(_, got, want)| !matches!(got, Some(g) if (g - want).abs() <= 1e-10))
        .map(|(n, got, want)| format!("{n}: {got:?} != {want}"))
        .chain(undefined.iter().filter(|u| !u.1).map(|u| format!("{}: defined", u.0)))
        .collect();
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            format!("{} values within 1e-10, {} undefined markers", checks.len(), undefined.len())
        } else {
            bad.join("; ")
        },
    )
}

fn pacbayes_search() -> Outcome {
    let sigma = |d: usize, point: f64, delta: f64, aware: bool| {
        let q = Quadratic { point: vec![point; d], curvature: vec![1.0; d] };
        let cfg = PacBayesConfig { delta, draws: 10_000, seed: 7, ..PacBayesConfig::default() };
        pacbayes_sigma(&q, &cfg, aware).unwrap().sigma
    };
    let mut worst = 0.0f64;
    for d in [10, 100] {
        worst = worst.max(rel(sigma(d, 0.0, 0.5, false), (1.0 / d as f64).sqrt()));
    }
    let doubling = sigma(10, 0.0, 1.0, false) / sigma(10, 0.0, 0.5, false);
    let mag = sigma(10, 1.0, 0.5, true);
    outcome(
        worst <= 0.03 && rel(doubling, 2f64.sqrt()) <= 0.03 && mag.is_finite() && mag > 0.0,
        format!("max rel err vs sqrt(1/d) {worst:.4} (<= 0.03), doubling delta ratio {doubling:.4} (~sqrt 2), magnitude-aware sigma' {mag:.4e}"),
    )
}

fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|xi| {
            let below = x.iter().filter(|v| *v < xi).count() as f64;
            let tied = x.iter().filter(|v| *v == xi).count() as f64;
            below + (tied + 1.0) / 2.0
        })
        .collect()
}

fn brute_spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    let (rx, ry) = (brute_ranks(x), brute_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

fn brute_kendall(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mut s, mut tx, mut ty, mut n0) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            n0 += 1.0;
            let (dx, dy) = (x[i] - x[j], y[i] - y[j]);
            if dx == 0.0 {
                tx += 1.0;
            }
            if dy == 0.0 {
                ty += 1.0;
            }
            s += (dx * dy).signum() * f64::from(dx != 0.0 && dy != 0.0);
        }
    }
    let denom = ((n0 - tx) * (n0 - ty)).sqrt();
    (denom > 0.0).then(|| s / denom)
}

fn sequences(n: usize) -> Vec<Vec<f64>> {
    (0..4usize.pow(n as u32))
        .map(|mut k| {
            (0..n)
                .map(|_| {
                    let v = (k % 4 + 1) as f64;
                    k /= 4;
                    v
                })
                .collect()
        })
        .collect()
}

fn rank_oracle() -> Outcome {
    let agree = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() <= 1e-12,
        (None, None) => true,
        _ => false,
    };
    let (mut pairs, mut mismatches) = (0usize, 0usize);
    let mut check = |x: &[f64], y: &[f64]| {
        pairs += 1;
        let ok = agree(spearman(x, y).unwrap(), brute_spearman(x, y)) && agree(kendall_tau(x, y).unwrap(), brute_kendall(x, y));
        if !ok {
            mismatches += 1;
        }
    };
    for n in 2..=5 {
        let all = sequences(n);
        for x in &all {
            for y in &all {
                check(x, y);
            }
        }
    }
    for n in 6..=8 {
        let patterns: Vec<Vec<f64>> = vec![
            (0..n).map(|i| (i * 4 / n + 1) as f64).collect(),
            (0..n).map(|i| (4 - i % 4) as f64).collect(),
            (0..n).map(|i| (i % 2 * 3 + 1) as f64).collect(),
            (0..n).map(|i| ((i * 7 + 3) % 4 + 1) as f64).collect(),
        ];
        let all = sequences(n);
        for y in &all {
            for x in &patterns {
                check(x, y);
            }
        }
        // both statistics are invariant under a joint reordering, so sorted x
        // against every y covers every pair up to that symmetry
        for x in all.iter().filter(|x| x.is_sorted()) {
            for y in &all {
                check(x, y);
                check(y, x);
            }
        }
    }
    let (a, b) = ([1.0, 2.0, 3.0, 4.0], [1.0, 3.0, 2.0, 4.0]);
    let (rho, tau) = (spearman(&a, &b).unwrap().unwrap(), kendall_tau(&a, &b).unwrap().unwrap());
    outcome(
        mismatches == 0 && (rho - 0.8).abs() <= 1e-12 && (tau - 2.0 / 3.0).abs() <= 1e-12,
        format!("{mismatches} mismatches over {pairs} pairs, spearman {rho:.4} (0.8), kendall {tau:.4} (0.6667)"),
    )
}

fn planted_manifests() -> Outcome {
    let grid = synth_manifest(&ManifestSpec::grid_5x8x5(), DEFAULT_SEED).unwrap();
    let (mut n, mut off) = (0, 0);
    for axis in ["depth", "lr", "samples"] {
        let g = correlate_slices(&grid, axis, "planted", Target::Quality, Method::Spearman).unwrap();
        n += g.results.len() + g.skipped;
        off += g.skipped + g.results.iter().filter(|r| r.rho.value() != Some(1.0)).count();
    }

    let simpson = simpson_manifest(20, DEFAULT_SEED).unwrap();
    let report = simpson_check(&simpson, "group", "planted", Target::Quality, Method::Spearman, SIMPSON_THRESHOLD).unwrap();

    let hits = [true, true, false, true, false, true, true, true];
    let series = planted_series(&hits, 20, DEFAULT_SEED).unwrap();
    let groups = series_by_axis(&series, "series").unwrap();
    let rate = best_selection_rate(&groups, "planted");
    let hand = hits.iter().filter(|h| **h).count();
    // independent count: argmin metric vs argmax quality per series
    let counted = groups
        .iter()
        .filter(|s| {
            let pick = s.iter().min_by(|a, b| a.metric("planted").unwrap().total_cmp(&b.metric("planted").unwrap())).unwrap();
            s.iter().all(|r| r.quality <= pick.quality)
        })
        .count();
    outcome(
        n == 105 && off == 0 && report.flagged && rate.hits == hand && counted == hand && rate.rate == Some(hand as f64 / 8.0),
        format!(
            "grid slices {n} with {off} not +1, simpson flagged {} (global {:?}), selection {}/{} (hand {hand}, recount {counted})",
            report.flagged, report.global_rho, rate.hits, rate.n_series
        ),
    )
}

fn flagging() -> Outcome {
    let cfg = FitConfig::default();
    let mut wrong = 0;
    let mut flagged = 0;
    for (k, alpha) in [2.0, 3.0, 3.8, 4.6, 5.5, 7.0].into_iter().enumerate() {
        let fit = fit_pl(&esd_of(sample_pareto(alpha, 1.0, f64::INFINITY, 5_000, 600 + k as u64).unwrap()), fixed1(), &cfg).unwrap();
        let a = fit.alpha.unwrap();
        let poor = fit.quality_flag == QualityFlag::PoorPlFit;
        flagged += usize::from(poor);
        if poor != (a > 4.0) {
            wrong += 1;
        }
    }
    let norms = [LayerNorms { spectral_sq: 2.0, frobenius_sq: 3.0 }];
    let logs = [
        names::LOG_PROD_OF_SPEC_OVER_MARGIN,
        names::LOG_SUM_OF_SPEC_OVER_MARGIN,
        names::LOG_PROD_OF_FRO_OVER_MARGIN,
        names::LOG_SUM_OF_FRO_OVER_MARGIN,
    ];
    let mut margin_ok = true;
    for gamma in [0.0, -0.5, -3.0] {
        for (name, v, flags) in margin_metrics(&norms, None, gamma) {
            if logs.contains(&name) {
                margin_ok &= !v.is_defined() && flags.contains(&MetricFlag::NegativeMargin);
            }
        }
    }
    outcome(
        wrong == 0 && flagged >= 2 && margin_ok,
        format!("{wrong} PL fits with flag disagreeing with alpha > 4 ({flagged} flagged), gamma <= 0 log-margin metrics undefined+negative_margin: {margin_ok}"),
    )
}

fn scale_response_case(seed: u64) -> Result<(), String> {
    let rows = 30 + (seed % 25) as usize;
    let cols = 12 + (seed % 17) as usize;
    let c = [0.05, 0.3, 1.7, 9.0, 20.0][(seed % 5) as usize];
    let eig = sample_mp_spectrum(rows, cols, 1.0, seed, Some(Spikes { count: 4, alpha: 2.5 })).map_err(|e| e.to_string())?;
    let w = WeightMatrix::from_source("w", htsr::synth::matrix_with_spectrum(&eig, rows, seed).map_err(|e| e.to_string())?).unwrap();
    let cw = WeightMatrix::from_source("w", w.source() * c).unwrap();
    let (e, ce) = (compute_esd(&w).unwrap(), compute_esd(&cw).unwrap());
    let v = |m: MetricValue| m.value().unwrap();
    let shift = 2.0 * c.ln();
    let checks = [
        ("param_norm", rel(param_norm(&[cw.clone()]), c * c * param_norm(&[w.clone()])) < 1e-10),
        ("log_norm", (v(log_norm(&[cw.clone()])) - v(log_norm(&[w.clone()])) - shift).abs() < 1e-9),
        ("log_spectral_norm", (v(log_spectral_norm(&[ce.clone()])) - v(log_spectral_norm(&[e.clone()])) - shift).abs() < 1e-9),
        ("stable_rank", rel(v(stable_rank(&[ce.clone()])), v(stable_rank(&[e.clone()]))) < 1e-9),
    ];
    if let Some((name, _)) = checks.iter().find(|c| !c.1) {
        return Err(format!("seed {seed}: {name}"));
    }
    let (mp, cmp) = (fit_mp(&e).unwrap(), fit_mp(&ce).unwrap());
    if rel(v(layer_mp_softrank(&ce, &cmp)), v(layer_mp_softrank(&e, &mp))) >= 1e-6 {
        return Err(format!("seed {seed}: mp_softrank"));
    }
    let cfg = FitConfig::default();
    let (pl, cpl) = (fit_pl(&e, XminStrategy::KsSearch, &cfg).unwrap(), fit_pl(&ce, XminStrategy::KsSearch, &cfg).unwrap());
    if (pl.alpha.unwrap() - cpl.alpha.unwrap()).abs() >= 1e-6 {
        return Err(format!("seed {seed}: PL_alpha"));
    }
    Ok(())
}

fn htsr_bin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_htsr")).args(args).output().expect("spawn htsr")
}

fn invariance_and_determinism() -> Outcome {
    let failures: Vec<String> = (0..200).filter_map(|s| scale_response_case(DEFAULT_SEED + s).err()).collect();

    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("w.csv");
    let spec = r#"{"family":"mp_plus_tail","n_rows":120,"n_cols":60,"sigma":1.0,"n_spikes":6,"tail_alpha":2.5}"#;
    let made = htsr_bin(&["synth", "--kind", "matrix", "--spec", spec, "--rows", "120", "--out", m.to_str().unwrap()]);
    let args = ["analyze", "--checkpoint", m.to_str().unwrap(), "--metrics", "all"];
    let (a, b) = (htsr_bin(&args), htsr_bin(&args));
    let identical = made.status.success() && a.status.success() && !a.stdout.is_empty() && a.stdout == b.stdout;
    outcome(
        failures.is_empty() && identical,
        format!(
            "scale response {}/200 cases hold{}, two analyze runs byte-identical: {identical}",
            200 - failures.len(),
            failures.first().map(|f| format!(" (first failure {f})")).unwrap_or_default()
        ),
    )
}

fn model_family() -> Outcome {
    let members = spiked_family(10, 400, 200, 60, (10.0, 1.5), DEFAULT_SEED).unwrap();
    let opts = ShapeOptions::default();
    let mut neg_alpha = Vec::new();
    let mut quality = Vec::new();
    for m in &members {
        let e = compute_esd(&WeightMatrix::from_source(&m.name, m.matrix.clone()).unwrap()).unwrap();
        let alpha = get(&shape_metrics(&[e], &opts), names::PL_ALPHA).value();
        if let Some(a) = alpha {
            neg_alpha.push(-a);
            quality.push(m.quality);
        }
    }
    let rho = spearman(&neg_alpha, &quality).unwrap();
    // diagnostics only: the spiked members alone, and the pure-bulk member's exponent
    let spiked = (neg_alpha.len() == 10).then(|| spearman(&neg_alpha[1..], &quality[1..]).unwrap()).flatten();
    let alphas: Vec<String> = neg_alpha.iter().map(|a| format!("{:.2}", -a)).collect();
    outcome(
        neg_alpha.len() == 10 && rho.is_some_and(|r| r >= 0.8),
        format!(
            "Spearman(-PL_alpha, quality) {} (>= 0.8) over {} models; spiked members only {}; PL_alpha [{}]",
            rho.map_or("undefined".into(), |r| format!("{r:.4}")),
            neg_alpha.len(),
            spiked.map_or("undefined".into(), |r| format!("{r:.4}")),
            alphas.join(", ")
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("PL estimator recovery", pl_recovery),
        ("E-TPL/EXP recovery and reductions", etpl_exp_recovery),
        ("KS correctness", ks_checks),
        ("MP bulk edge", mp_edge),
        ("metric hand values", hand_values),
        ("PAC-Bayes sigma search", pacbayes_search),
        ("rank-correlation oracle", rank_oracle),
        ("harness on planted manifests", planted_manifests),
        ("flagging", flagging),
        ("invariance and determinism", invariance_and_determinism),
        ("model-family end-to-end", model_family),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = run();
        failed += usize::from(!o.pass);
        println!("{} {:>2} {name}: {} [{:.1?}]", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail, t.elapsed());
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    // FAIL lines always print; the exit status only reflects them when strict
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed == 0 || !strict {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
