use std::path::PathBuf;

use clap::Args;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{base_config, emit_json, with_jobs, Header};
use crate::error::{Error, Result};
use crate::esd::{compute_esd, esd_histogram, Esd, Histogram, DEFAULT_BINS};
use crate::metrics::{fit_layer, FitSelection, ShapeOptions};
use crate::metrics::shape::FitFailure;
use crate::tailfit::{nested_log_likelihoods, Family, TailFit};
use crate::tensor_io::{load_checkpoint_with, Format, LoadOptions};

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Checkpoint file; every matrix is fitted unless `--layer` is given.
    #[arg(long, conflicts_with = "eigenvalues")]
    pub checkpoint: Option<PathBuf>,
    /// Eigenvalue list, one value per line (as written by `synth --kind spectrum`).
    #[arg(long)]
    pub eigenvalues: Option<PathBuf>,
    /// Row count N of the matrix behind `--eigenvalues`; defaults to the value count.
    #[arg(long)]
    pub n_rows: Option<usize>,
    #[arg(long, value_enum)]
    pub format: Option<super::analyze::FormatArg>,
    /// Exact matrix name to fit.
    #[arg(long)]
    pub layer: Option<String>,
    /// Regex over matrix names.
    #[arg(long)]
    pub filter: Option<String>,
    /// Comma list of pl, etpl, exp, mp or `all`.
    #[arg(long = "fit")]
    pub families: Option<String>,
    /// x_min rule for PL: ks, fixfinger or a number.
    #[arg(long)]
    pub xmin: Option<String>,
    /// x_min rule for E-TPL and EXP (default fixfinger); `ks` reuses the PL x_min.
    #[arg(long)]
    pub tail_xmin: Option<String>,
    /// Include histogram and fitted-density samples.
    #[arg(long)]
    pub plot_data: bool,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Points on the log-spaced grid of each fitted curve.
    #[arg(long)]
    pub curve_points: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitRunConfig {
    pub checkpoint: Option<PathBuf>,
    pub eigenvalues: Option<PathBuf>,
    pub n_rows: Option<usize>,
    pub format: Option<Format>,
    pub layer: Option<String>,
    pub filter: Option<String>,
    pub families: Vec<Family>,
    pub shape: ShapeOptions,
    pub plot_data: bool,
    pub bins: usize,
    pub curve_points: usize,
    /// Recorded only; fitting is deterministic.
    pub seed: u64,
}

impl Default for FitRunConfig {
    fn default() -> Self {
        FitRunConfig {
            checkpoint: None,
            eigenvalues: None,
            n_rows: None,
            format: None,
            layer: None,
            filter: None,
            families: ALL_FAMILIES.to_vec(),
            shape: ShapeOptions::default(),
            plot_data: false,
            bins: DEFAULT_BINS,
            curve_points: 200,
            seed: 0,
        }
    }
}

const ALL_FAMILIES: [Family; 4] = [Family::PowerLaw, Family::TruncatedPowerLaw, Family::Exponential, Family::MarchenkoPastur];

pub fn parse_families(s: &str) -> Result<Vec<Family>> {
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let fams: Vec<Family> = match item.to_ascii_lowercase().as_str() {
            "all" => ALL_FAMILIES.to_vec(),
            "pl" => vec![Family::PowerLaw],
            "etpl" | "e-tpl" | "e_tpl" => vec![Family::TruncatedPowerLaw],
            "exp" => vec![Family::Exponential],
            "mp" => vec![Family::MarchenkoPastur],
            o => return Err(Error::InvalidArgument(format!("unknown family {o:?}; use pl, etpl, exp, mp or all"))),
        };
        for f in fams {
            if !out.contains(&f) {
                out.push(f);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument("empty --fit list".into()));
    }
    Ok(out)
}

impl FitRunConfig {
    pub fn resolve(args: &FitArgs, force_plot: bool) -> Result<Self> {
        let mut c: FitRunConfig = base_config(args.config.as_deref())?;
        if args.checkpoint.is_some() {
            c.checkpoint = args.checkpoint.clone();
            c.eigenvalues = None;
        }
        if args.eigenvalues.is_some() {
            c.eigenvalues = args.eigenvalues.clone();
            c.checkpoint = None;
        }
        if args.n_rows.is_some() {
            c.n_rows = args.n_rows;
        }
        if let Some(f) = args.format {
            c.format = Some(f.into());
        }
        if args.layer.is_some() {
            c.layer = args.layer.clone();
        }
        if args.filter.is_some() {
            c.filter = args.filter.clone();
        }
        if let Some(f) = &args.families {
            c.families = parse_families(f)?;
        }
        if let Some(x) = &args.xmin {
            c.shape.pl_xmin = x.parse()?;
        }
        if let Some(x) = &args.tail_xmin {
            c.shape.tail_xmin = x.parse()?;
        }
        c.plot_data |= args.plot_data || force_plot;
        if let Some(b) = args.bins {
            c.bins = b;
        }
        if let Some(p) = args.curve_points {
            c.curve_points = p;
        }
        if let Some(s) = args.seed {
            c.seed = s;
        }
        if c.checkpoint.is_none() && c.eigenvalues.is_none() {
            return Err(Error::InvalidArgument("give --checkpoint or --eigenvalues".into()));
        }
        if c.bins == 0 || c.curve_points < 2 {
            return Err(Error::InvalidArgument("--bins must be >= 1 and --curve-points >= 2".into()));
        }
        Ok(c)
    }

    fn selection(&self) -> FitSelection {
        FitSelection {
            pl: self.families.contains(&Family::PowerLaw),
            etpl: self.families.contains(&Family::TruncatedPowerLaw),
            exp: self.families.contains(&Family::Exponential),
            mp: self.families.contains(&Family::MarchenkoPastur),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub family: Family,
    pub x: Vec<f64>,
    /// Density of the fitted law on its own sample.
    pub density: Vec<f64>,
    /// `density` times the fraction of positive eigenvalues in the fitted
    /// sample, comparable with `histogram` densities.
    pub scaled_density: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramPoint {
    pub lo: f64,
    pub hi: f64,
    pub center: f64,
    pub count: usize,
    /// `count / (n_positive · width)`.
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub histogram_log: Vec<HistogramPoint>,
    pub histogram_linear: Vec<HistogramPoint>,
    pub curves: Vec<Curve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFitRecord {
    pub layer: String,
    pub n_eigenvalues: usize,
    pub n_positive: usize,
    pub lambda_max: f64,
    pub fits: Vec<TailFit>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<FitFailure>,
    /// Likelihood-ratio statistics `2(ℓ_ETPL − ℓ_nested)` on the E-TPL tail.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub etpl_lr: Option<NestedLr>,
    /// PL, E-TPL or EXP fit with the smallest KS distance, where E-TPL
    /// competes only if it beats both nested laws by the likelihood-ratio test.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_by_ks: Option<Family>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plot: Option<PlotData>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerError {
    pub layer: String,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutput {
    pub header: Header<FitRunConfig>,
    pub layers: Vec<LayerFitRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<LayerError>,
}

fn points(h: &Histogram, n_positive: usize) -> Vec<HistogramPoint> {
    h.bins
        .iter()
        .map(|b| HistogramPoint {
            lo: b.lo,
            hi: b.hi,
            center: b.center,
            count: b.count,
            density: if b.hi > b.lo && n_positive > 0 { b.count as f64 / (n_positive as f64 * (b.hi - b.lo)) } else { 0.0 },
        })
        .collect()
}

fn plot_data(esd: &Esd, fits: &[TailFit], config: &FitRunConfig) -> Result<PlotData> {
    let pos = esd.positive();
    let n_pos = pos.len();
    let (lo, hi) = (pos.first().copied().unwrap_or(0.0), esd.lambda_max);
    let grid: Vec<f64> = if lo > 0.0 && hi > lo {
        let k = config.curve_points;
        (0..k).map(|i| lo * (hi / lo).powf(i as f64 / (k - 1) as f64)).collect()
    } else {
        Vec::new()
    };
    let mut curves = Vec::new();
    for f in fits.iter().filter(|f| f.has_parameters()) {
        let density = f.density(&grid)?;
        let frac = f.sample(esd).len() as f64 / n_pos.max(1) as f64;
        curves.push(Curve {
            family: f.family,
            x: grid.clone(),
            scaled_density: density.iter().map(|d| d * frac).collect(),
            density,
        });
    }
    let histogram_log = if n_pos > 0 { points(&esd_histogram(esd, config.bins, true)?, n_pos) } else { Vec::new() };
    Ok(PlotData {
        histogram_log,
        histogram_linear: points(&esd_histogram(esd, config.bins, false)?, n_pos),
        curves,
    })
}

/// 95% point of χ² with one degree of freedom.
pub const LR_CRITICAL: f64 = 3.841_458_820_694_124;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NestedLr {
    /// Against PL refitted with the E-TPL `x_min`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vs_pl: Option<f64>,
    /// Against the EXP fit, when it shares the E-TPL `x_min`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vs_exp: Option<f64>,
}

impl NestedLr {
    /// E-TPL is retained only when both nested laws are rejected.
    pub fn etpl_significant(&self) -> bool {
        self.vs_pl.is_some_and(|v| v > LR_CRITICAL) && self.vs_exp.is_none_or(|v| v > LR_CRITICAL)
    }
}

fn nested_lr(esd: &Esd, fits: &[TailFit], config: &FitRunConfig) -> Option<NestedLr> {
    let etpl = fits.iter().find(|f| f.family == Family::TruncatedPowerLaw && f.has_parameters())?;
    let ll = etpl.log_likelihood?;
    let vs_pl = nested_log_likelihoods(esd, etpl.x_min, &config.shape.fit).ok().map(|(pl, _)| 2.0 * (ll - pl));
    let vs_exp = fits
        .iter()
        .find(|f| f.family == Family::Exponential && f.x_min == etpl.x_min)
        .and_then(|f| f.log_likelihood)
        .map(|e| 2.0 * (ll - e));
    Some(NestedLr { vs_pl, vs_exp })
}

pub fn best_by_ks(fits: &[TailFit], lr: Option<&NestedLr>) -> Option<Family> {
    let etpl_ok = lr.is_some_and(NestedLr::etpl_significant);
    fits.iter()
        .filter(|f| f.family != Family::MarchenkoPastur && f.has_parameters())
        .filter(|f| f.family != Family::TruncatedPowerLaw || etpl_ok)
        .min_by(|a, b| a.ks_distance.total_cmp(&b.ks_distance))
        .map(|f| f.family)
        .or_else(|| fits.iter().any(|f| f.family == Family::TruncatedPowerLaw && f.has_parameters()).then_some(Family::TruncatedPowerLaw))
}

fn fit_esd(esd: &Esd, config: &FitRunConfig) -> Result<LayerFitRecord> {
    let lf = fit_layer(esd, config.selection(), &config.shape);
    let plot = config.plot_data.then(|| plot_data(esd, &lf.fits, config)).transpose()?;
    let lr = nested_lr(esd, &lf.fits, config);
    Ok(LayerFitRecord {
        layer: esd.matrix_name.clone(),
        n_eigenvalues: esd.eigenvalues.len(),
        n_positive: esd.positive().len(),
        lambda_max: esd.lambda_max,
        best_by_ks: best_by_ks(&lf.fits, lr.as_ref()),
        etpl_lr: lr,
        fits: lf.fits,
        failures: lf.failures,
        plot,
    })
}

fn read_eigenvalues(path: &std::path::Path) -> Result<Vec<f64>> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        for cell in row?.iter().filter(|c| !c.is_empty()) {
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("{}: {cell:?} is not a number", path.display())))?;
            out.push(v);
        }
    }
    Ok(out)
}

pub fn execute(config: &FitRunConfig, jobs: Option<usize>) -> Result<FitOutput> {
    let esds: Vec<(String, Result<Esd>)> = if let Some(p) = &config.eigenvalues {
        let v = read_eigenvalues(p)?;
        let n_rows = config.n_rows.unwrap_or(v.len());
        vec![("eigenvalues".to_string(), Esd::from_eigenvalues("eigenvalues", v, n_rows))]
    } else {
        let path = config.checkpoint.as_ref().expect("validated");
        let filter = config
            .filter
            .as_deref()
            .map(|p| Regex::new(p).map_err(|e| Error::InvalidArgument(format!("regex {p:?}: {e}"))))
            .transpose()?;
        let ck = load_checkpoint_with(
            path,
            &LoadOptions {
                format: config.format,
                filter,
                split: Vec::new(),
            },
        )?;
        let mats: Vec<_> = ck.matrices.iter().filter(|m| config.layer.as_deref().is_none_or(|l| m.name() == l)).collect();
        if mats.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "no matrix named {:?} in {}",
                config.layer.as_deref().unwrap_or(""),
                path.display()
            )));
        }
        mats.into_iter().map(|m| (m.name().to_string(), compute_esd(m))).collect()
    };
    let results: Vec<(String, Result<LayerFitRecord>)> =
        with_jobs(jobs, || esds.into_par_iter().map(|(name, e)| (name, e.and_then(|e| fit_esd(&e, config)))).collect())?;
    let mut layers = Vec::new();
    let mut errors = Vec::new();
    for (layer, r) in results {
        match r {
            Ok(rec) => layers.push(rec),
            Err(e) => errors.push(LayerError {
                layer,
                kind: e.kind().to_string(),
                message: e.to_string(),
            }),
        }
    }
    Ok(FitOutput {
        header: Header::new("fit", config.seed, config.clone()),
        layers,
        errors,
    })
}

pub(super) fn run(args: FitArgs, force_plot: bool) -> Result<i32> {
    let config = FitRunConfig::resolve(&args, force_plot)?;
    let mut out = execute(&config, args.jobs)?;
    if force_plot {
        out.header.command = "plot-data".into();
    }
    for e in &out.errors {
        eprintln!("error [{}] {}: {}", e.kind, e.layer, e.message);
    }
    emit_json(args.out.as_deref(), &out)?;
    for l in &out.layers {
        for f in &l.failures {
            eprintln!("error [{}] {} {:?}: {}", f.kind, l.layer, f.family, f.message);
        }
    }
    let failed = !out.errors.is_empty() || out.layers.iter().any(|l| !l.failures.is_empty());
    Ok(if failed { 1 } else { 0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_lists() {
        assert_eq!(parse_families("all").unwrap().len(), 4);
        assert_eq!(parse_families("pl,mp,pl").unwrap(), vec![Family::PowerLaw, Family::MarchenkoPastur]);
        assert!(parse_families("gamma").is_err());
    }
}
