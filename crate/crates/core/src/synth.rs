//! Seeded generators for spectra, matrices and planted manifests.
//!
//! Every generator is a pure function of its arguments and seed.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::correlate::{ModelManifest, ModelRecord};
use crate::error::{Error, Result};
use crate::esd::singular_values;
use crate::metrics::MetricValue;
use crate::tailfit::{etpl_normalizer, mp_bulk_edges};

pub const DEFAULT_SEED: u64 = 20240617;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    Open01.sample(rng)
}

fn check_support(n: usize, x_min: f64, x_max: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    if !(x_min > 0.0 && x_min.is_finite()) {
        return Err(Error::InvalidArgument(format!("x_min must be positive and finite, got {x_min}")));
    }
    if x_max.is_nan() || x_max <= x_min {
        return Err(Error::InvalidArgument(format!("x_max {x_max} must exceed x_min {x_min}")));
    }
    Ok(())
}

/// Inverse CDF of `p(x) ∝ x^-α` on `[x_min, x_max]`; `x_max = ∞` needs `α > 1`.
pub fn pareto_inverse_cdf(u: f64, alpha: f64, x_min: f64, x_max: f64) -> f64 {
    if x_max.is_infinite() {
        return x_min * (1.0 - u).powf(-1.0 / (alpha - 1.0));
    }
    let r = x_max / x_min;
    if (alpha - 1.0).abs() < 1e-12 {
        return x_min * r.powf(u);
    }
    let e = 1.0 - alpha;
    // 1 - u (1 - r^e), written to stay accurate for large r
    x_min * (1.0 - u * (-(e * r.ln()).exp_m1())).powf(1.0 / e)
}

pub fn sample_pareto(alpha: f64, x_min: f64, x_max: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    check_support(n, x_min, x_max)?;
    if !(alpha > 0.0) || (x_max.is_infinite() && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} invalid for x_max {x_max}")));
    }
    let mut g = rng(seed);
    Ok((0..n).map(|_| pareto_inverse_cdf(uniform(&mut g), alpha, x_min, x_max)).collect())
}

/// Inverse CDF of `p(x) ∝ exp(-λx)` on `[x_min, x_max]`.
pub fn trunc_exp_inverse_cdf(u: f64, lambda: f64, x_min: f64, x_max: f64) -> f64 {
    if lambda == 0.0 {
        return x_min + u * (x_max - x_min);
    }
    let span = x_max - x_min;
    if span.is_infinite() {
        return x_min - (-u).ln_1p() / lambda;
    }
    x_min - (u * (-lambda * span).exp_m1()).ln_1p() / lambda
}

pub fn sample_trunc_exp(lambda: f64, x_min: f64, x_max: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    check_support(n, x_min, x_max)?;
    if !(lambda >= 0.0) || (lambda == 0.0 && x_max.is_infinite()) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} invalid for x_max {x_max}")));
    }
    let mut g = rng(seed);
    Ok((0..n).map(|_| trunc_exp_inverse_cdf(uniform(&mut g), lambda, x_min, x_max)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Proposal {
    /// Truncated Pareto(β), accepted with probability `exp(-λ(x - x_min))`.
    Pareto,
    /// Truncated exponential(λ), accepted with probability `(x/x_min)^-β`.
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtplSample {
    pub values: Vec<f64>,
    pub proposal: Proposal,
    /// Accepted over proposed draws.
    pub acceptance_rate: f64,
    pub expected_acceptance: f64,
}

/// Acceptance probability of each proposal; `None` when the proposal is improper.
pub fn etpl_acceptance(beta: f64, lambda: f64, x_min: f64, x_max: f64) -> Result<(Option<f64>, Option<f64>)> {
    let a = x_min;
    let b_eff = if lambda > 0.0 { x_max.min(a + 60.0 / lambda) } else { x_max };
    let pareto_ok = x_max.is_finite() || beta > 1.0;
    let exp_ok = (lambda > 0.0 || x_max.is_finite()) && beta >= 0.0;
    if b_eff.is_infinite() {
        // λ = 0 and β > 1: the target is the Pareto proposal itself
        return Ok((pareto_ok.then_some(1.0), None));
    }
    let z = etpl_normalizer(beta, lambda, a, b_eff, 1e-10)?;
    let pareto_mass = if x_max.is_infinite() {
        a / (beta - 1.0)
    } else if (beta - 1.0).abs() < 1e-12 {
        a * (x_max / a).ln()
    } else {
        a * ((1.0 - beta) * (x_max / a).ln()).exp_m1() / (1.0 - beta)
    };
    let exp_mass = if lambda == 0.0 { x_max - a } else { -(-lambda * (x_max - a)).exp_m1() / lambda };
    Ok((pareto_ok.then(|| z / pareto_mass), exp_ok.then(|| z / exp_mass)))
}

/// Exact draws from `p(x) ∝ x^-β exp(-λx)` on `[x_min, x_max]` by rejection,
/// using whichever proposal accepts more often.
pub fn sample_etpl(beta: f64, lambda: f64, x_min: f64, x_max: f64, n: usize, seed: u64) -> Result<EtplSample> {
    check_support(n, x_min, x_max)?;
    if !(lambda >= 0.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("need finite beta and lambda >= 0, got ({beta}, {lambda})")));
    }
    let (acc_p, acc_e) = etpl_acceptance(beta, lambda, x_min, x_max)?;
    let (proposal, expected) = match (acc_p, acc_e) {
        (Some(p), Some(e)) if e > p => (Proposal::Exponential, e),
        (Some(p), _) => (Proposal::Pareto, p),
        (None, Some(e)) => (Proposal::Exponential, e),
        (None, None) => {
            return Err(Error::InvalidArgument(format!(
                "no proper proposal for beta {beta}, lambda {lambda} on [{x_min}, {x_max}]"
            )))
        }
    };
    if !(expected > 1e-7) {
        return Err(Error::InvalidArgument(format!("acceptance rate {expected:e} too small to sample")));
    }
    let mut g = rng(seed);
    let mut values = Vec::with_capacity(n);
    let mut proposed = 0usize;
    while values.len() < n {
        proposed += 1;
        let (x, accept) = match proposal {
            Proposal::Pareto => {
                let x = pareto_inverse_cdf(uniform(&mut g), beta, x_min, x_max);
                (x, (-lambda * (x - x_min)).exp())
            }
            Proposal::Exponential => {
                let x = trunc_exp_inverse_cdf(uniform(&mut g), lambda, x_min, x_max);
                (x, (x / x_min).powf(-beta))
            }
        };
        if uniform(&mut g) < accept {
            values.push(x);
        }
    }
    Ok(EtplSample {
        values,
        proposal,
        acceptance_rate: n as f64 / proposed as f64,
        expected_acceptance: expected,
    })
}

/// `rows × cols` matrix of i.i.d. `N(0, std²)` entries.
pub fn gaussian_matrix(rows: usize, cols: usize, std: f64, seed: u64) -> DMatrix<f64> {
    let mut g = rng(seed);
    DMatrix::from_fn(rows, cols, |_, _| std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut g))
}

/// Pareto spikes planted above the MP bulk edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Spikes {
    pub count: usize,
    pub alpha: f64,
}

/// Ascending eigenvalues of `WᵀW` for `W` with i.i.d. `N(0, σ²/n_rows)`
/// entries. With spikes, the largest `count` eigenvalues are replaced by
/// untruncated Pareto draws starting at the bulk edge `σ²(1 + √y)²`.
pub fn sample_mp_spectrum(n_rows: usize, n_cols: usize, sigma: f64, seed: u64, spikes: Option<Spikes>) -> Result<Vec<f64>> {
    if n_rows == 0 || n_cols == 0 {
        return Err(Error::InvalidArgument("matrix dimensions must be positive".into()));
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be non-negative, got {sigma}")));
    }
    let w = gaussian_matrix(n_rows, n_cols, sigma / (n_rows as f64).sqrt(), seed);
    let mut eig: Vec<f64> = singular_values(&w, "synthetic")?.iter().map(|s| s * s).collect();
    eig.reverse();
    if let Some(s) = spikes.filter(|s| s.count > 0) {
        if s.count > eig.len() {
            return Err(Error::InvalidArgument(format!("{} spikes exceed {} eigenvalues", s.count, eig.len())));
        }
        // MP edge in the n_rows ≥ n_cols orientation
        let y = n_rows.min(n_cols) as f64 / n_rows.max(n_cols) as f64;
        let scale = n_rows.max(n_cols) as f64 / n_rows as f64;
        let edge = sigma * sigma * scale * mp_bulk_edges(1.0, y).1;
        if !(edge > 0.0) {
            return Err(Error::InvalidArgument("spikes need sigma > 0".into()));
        }
        let draws = sample_pareto(s.alpha, edge, f64::INFINITY, s.count, seed ^ 0x5eed)?;
        let k = eig.len() - s.count;
        eig[k..].copy_from_slice(&draws);
        eig.sort_by(f64::total_cmp);
    }
    Ok(eig)
}

fn random_orthonormal(rows: usize, cols: usize, g: &mut ChaCha8Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(rows, cols, |_, _| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, g));
    let qr = m.qr();
    let (q, r) = (qr.q(), qr.r());
    // sign fix makes the distribution Haar
    let signs = DVector::from_iterator(cols, (0..cols).map(|i| if r[(i, i)] < 0.0 { -1.0 } else { 1.0 }));
    DMatrix::from_fn(rows, cols, |i, j| q[(i, j)] * signs[j])
}

/// An `n_rows × k` matrix whose `WᵀW` has exactly the given `k` eigenvalues.
pub fn matrix_with_spectrum(eigenvalues: &[f64], n_rows: usize, seed: u64) -> Result<DMatrix<f64>> {
    let k = eigenvalues.len();
    if k == 0 || n_rows < k {
        return Err(Error::InvalidArgument(format!("need 1 <= {k} eigenvalues <= {n_rows} rows")));
    }
    if eigenvalues.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("eigenvalues must be finite and non-negative".into()));
    }
    let mut g = rng(seed);
    let u = random_orthonormal(n_rows, k, &mut g);
    let v = random_orthonormal(k, k, &mut g);
    let s = DVector::from_iterator(k, eigenvalues.iter().map(|e| e.sqrt()));
    Ok(u * DMatrix::from_diagonal(&s) * v.transpose())
}

/// One model in a synthetic family whose spectra grow heavier tails.
#[derive(Debug, Clone)]
pub struct FamilyMember {
    pub name: String,
    pub quality: f64,
    pub n_spikes: usize,
    pub tail_alpha: f64,
    pub matrix: DMatrix<f64>,
}

/// `n_models` matrices: member 0 is a pure MP bulk, every later member
/// carries `n_spikes` Pareto spikes whose exponent falls from
/// `alpha_range.0` (member 1) to `alpha_range.1` (last member). Quality is
/// the member index.
pub fn spiked_family(
    n_models: usize,
    n_rows: usize,
    n_cols: usize,
    n_spikes: usize,
    alpha_range: (f64, f64),
    seed: u64,
) -> Result<Vec<FamilyMember>> {
    if n_models < 2 {
        return Err(Error::InvalidArgument("a family needs at least 2 models".into()));
    }
    (0..n_models)
        .map(|k| {
            let t = if n_models > 2 { k.saturating_sub(1) as f64 / (n_models - 2) as f64 } else { 1.0 };
            let tail_alpha = alpha_range.0 + t * (alpha_range.1 - alpha_range.0);
            let n_spikes = if k == 0 { 0 } else { n_spikes };
            let s = seed.wrapping_add(k as u64);
            let spikes = Spikes {
                count: n_spikes,
                alpha: tail_alpha,
            };
            let eig = sample_mp_spectrum(n_rows, n_cols, 1.0, s, Some(spikes))?;
            let matrix = matrix_with_spectrum(&eig, n_rows.max(n_cols), s)?;
            Ok(FamilyMember {
                name: format!("model{k:02}"),
                quality: k as f64,
                n_spikes,
                tail_alpha,
                matrix,
            })
        })
        .collect()
}

/// Seeded 1-D spectrum description for the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpectrumSpec {
    Pareto { alpha: f64, x_min: f64, x_max: Option<f64>, n: usize },
    TruncExp { lambda: f64, x_min: f64, x_max: Option<f64>, n: usize },
    Etpl { beta: f64, lambda: f64, x_min: f64, x_max: Option<f64>, n: usize },
    MpBulk { n_rows: usize, n_cols: usize, sigma: f64 },
    MpPlusTail { n_rows: usize, n_cols: usize, sigma: f64, n_spikes: usize, tail_alpha: f64 },
}

impl SpectrumSpec {
    /// Ascending eigenvalues.
    pub fn sample(&self, seed: u64) -> Result<Vec<f64>> {
        let inf = |x: Option<f64>| x.unwrap_or(f64::INFINITY);
        let mut v = match *self {
            SpectrumSpec::Pareto { alpha, x_min, x_max, n } => sample_pareto(alpha, x_min, inf(x_max), n, seed)?,
            SpectrumSpec::TruncExp { lambda, x_min, x_max, n } => sample_trunc_exp(lambda, x_min, inf(x_max), n, seed)?,
            SpectrumSpec::Etpl { beta, lambda, x_min, x_max, n } => sample_etpl(beta, lambda, x_min, inf(x_max), n, seed)?.values,
            SpectrumSpec::MpBulk { n_rows, n_cols, sigma } => sample_mp_spectrum(n_rows, n_cols, sigma, seed, None)?,
            SpectrumSpec::MpPlusTail {
                n_rows,
                n_cols,
                sigma,
                n_spikes,
                tail_alpha,
            } => sample_mp_spectrum(
                n_rows,
                n_cols,
                sigma,
                seed,
                Some(Spikes {
                    count: n_spikes,
                    alpha: tail_alpha,
                }),
            )?,
        };
        v.sort_by(f64::total_cmp);
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Relation {
    /// `-quality`.
    NegQuality,
    /// `+quality`.
    Quality,
    /// `-quality` rounded onto `levels` equal-width levels, producing ties.
    Tied { levels: usize },
    /// Independent standard normal draws.
    Noise,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantedMetric {
    pub name: String,
    pub relation: Relation,
    /// Standard deviation of Gaussian noise added to the planted value.
    #[serde(default)]
    pub noise: f64,
}

/// Grid manifest whose quality is `Σ weightᵢ · coordᵢ` plus noise, with
/// metric columns planted relative to quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSpec {
    pub axes: Vec<GridAxis>,
    /// One weight per axis.
    pub weights: Vec<f64>,
    #[serde(default)]
    pub quality_noise: f64,
    pub metrics: Vec<PlantedMetric>,
    /// `train_quality = offset + slope · quality` when set.
    #[serde(default)]
    pub train_quality: Option<(f64, f64)>,
}

impl ManifestSpec {
    /// The `5 × 8 × 5` grid with one metric equal to `-quality`.
    pub fn grid_5x8x5() -> Self {
        let axis = |name: &str, values: Vec<f64>| GridAxis { name: name.into(), values };
        ManifestSpec {
            axes: vec![
                axis("depth", vec![2.0, 4.0, 6.0, 8.0, 10.0]),
                axis("lr", (0..8).map(|i| 0.0625 * 2f64.powi(-i)).collect()),
                axis("samples", vec![1e5, 2e5, 4e5, 8e5, 1.6e6]),
            ],
            weights: vec![0.013, 1.7, 1e-7],
            quality_noise: 0.0,
            metrics: vec![PlantedMetric {
                name: "planted".into(),
                relation: Relation::NegQuality,
                noise: 0.0,
            }],
            train_quality: Some((1.0, 0.5)),
        }
    }
}

pub fn synth_manifest(spec: &ManifestSpec, seed: u64) -> Result<ModelManifest> {
    if spec.weights.len() != spec.axes.len() {
        return Err(Error::InvalidArgument(format!("{} weights for {} axes", spec.weights.len(), spec.axes.len())));
    }
    if spec.axes.iter().any(|a| a.values.is_empty()) {
        return Err(Error::InvalidArgument("every axis needs at least one value".into()));
    }
    let mut g = rng(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let total: usize = spec.axes.iter().map(|a| a.values.len()).product();
    let mut records = Vec::with_capacity(total);
    let width = total.to_string().len();
    for flat in 0..total {
        let mut rest = flat;
        let mut rec = ModelRecord::new(format!("m{flat:0width$}"), 0.0);
        let mut latent = 0.0;
        for (axis, w) in spec.axes.iter().zip(&spec.weights).rev() {
            let v = axis.values[rest % axis.values.len()];
            rest /= axis.values.len();
            latent += w * v;
            rec = rec.with_axis(&axis.name, v);
        }
        rec.quality = latent + spec.quality_noise * normal.sample(&mut g);
        rec.train_quality = spec.train_quality.map(|(a, b)| a + b * rec.quality);
        records.push(rec);
    }
    let (qmin, qmax) = records.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), r| (l.min(r.quality), h.max(r.quality)));
    for m in &spec.metrics {
        for r in records.iter_mut() {
            let base = match m.relation {
                Relation::NegQuality => -r.quality,
                Relation::Quality => r.quality,
                Relation::Tied { levels } => {
                    let levels = levels.max(1) as f64;
                    let t = if qmax > qmin { (r.quality - qmin) / (qmax - qmin) } else { 0.0 };
                    -(t * levels).floor().min(levels - 1.0)
                }
                Relation::Noise => normal.sample(&mut g),
                Relation::Constant => 1.0,
            };
            let v = base + m.noise * normal.sample(&mut g);
            r.metrics.insert(m.name.clone(), MetricValue::from(v));
        }
    }
    ModelManifest::new(records)
}

/// Two groups on axis `group` where quality `q = 10g + t` and the metric is
/// `-q + 30g`: each group favors small metric values while the pooled data
/// favors large ones.
pub fn simpson_manifest(per_group: usize, seed: u64) -> Result<ModelManifest> {
    if per_group < 3 {
        return Err(Error::InvalidArgument("need at least 3 records per group".into()));
    }
    let mut g = rng(seed);
    let mut records = Vec::new();
    for group in 0..2 {
        for i in 0..per_group {
            let t = (i as f64 + uniform(&mut g)) / per_group as f64;
            let q = 10.0 * group as f64 + t;
            records.push(
                ModelRecord::new(format!("g{group}-{i:03}"), q)
                    .with_axis("group", group as f64)
                    .with_axis("idx", i as f64)
                    .with_metric("planted", -q + 30.0 * group as f64),
            );
        }
    }
    ModelManifest::new(records)
}

/// Series on axis `series`; in series `i` the smallest metric value marks
/// the best model exactly when `hits[i]`, otherwise it marks the runner-up.
pub fn planted_series(hits: &[bool], per_series: usize, seed: u64) -> Result<ModelManifest> {
    if per_series < 2 {
        return Err(Error::InvalidArgument("need at least 2 models per series".into()));
    }
    let mut g = rng(seed);
    let mut records = Vec::new();
    for (s, &hit) in hits.iter().enumerate() {
        // distinct qualities in random order
        let mut q: Vec<f64> = (0..per_series).map(|i| i as f64 + 0.5 * uniform(&mut g)).collect();
        for i in (1..q.len()).rev() {
            q.swap(i, g.random_range(0..=i));
        }
        let best = (0..per_series).max_by(|&a, &b| q[a].total_cmp(&q[b])).expect("non-empty");
        let second = (0..per_series).filter(|&i| i != best).max_by(|&a, &b| q[a].total_cmp(&q[b])).expect("two models");
        let mut metric: Vec<f64> = q.iter().map(|v| -v).collect();
        if !hit {
            metric.swap(best, second);
        }
        for i in 0..per_series {
            records.push(
                ModelRecord::new(format!("s{s}-{i:02}"), q[i])
                    .with_axis("series", s as f64)
                    .with_axis("idx", i as f64)
                    .with_metric("planted", metric[i]),
            );
        }
    }
    ModelManifest::new(records)
}
