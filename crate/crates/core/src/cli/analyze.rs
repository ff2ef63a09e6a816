use std::path::{Path, PathBuf};

use clap::Args;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{base_config, emit_json, with_jobs, Header};
use crate::error::{Error, Result};
use crate::metrics::{compute_report, parse_metric_selection, MetricReport, Normalization, ProbeInputs, ReportOptions};
use crate::netprobe::{ProbeDataset, ProbeNetwork};
use crate::tailfit::XminStrategy;
use crate::tensor_io::{load_checkpoint_with, CheckpointSummary, Format, LoadOptions, QkvLayout, SplitRule};

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Checkpoint file (safetensors or CSV); repeat for several.
    #[arg(long = "checkpoint", required_unless_present = "config")]
    pub checkpoints: Vec<PathBuf>,
    /// Initial checkpoint for distance metrics.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Comma list of metric names, or `all`, `all-data-free`, `shape`.
    #[arg(long)]
    pub metrics: Option<String>,
    /// x_min rule for PL fits: ks, fixfinger or a number.
    #[arg(long)]
    pub xmin: Option<String>,
    /// x_min rule for E-TPL and EXP fits.
    #[arg(long)]
    pub tail_xmin: Option<String>,
    /// Only analyze tensors whose name matches this regex.
    #[arg(long)]
    pub filter: Option<String>,
    /// Split tensors matching this regex into q, k, v blocks along the first stored axis.
    #[arg(long)]
    pub split_qkv: Vec<String>,
    /// Probe network weights (safetensors); the architecture comes from `--probe-spec`.
    #[arg(long)]
    pub probe: Option<PathBuf>,
    /// Probe architecture JSON; defaults to the weights path with a `.json` extension.
    #[arg(long)]
    pub probe_spec: Option<PathBuf>,
    /// Probe training data CSV (features..., label).
    #[arg(long)]
    pub probe_data: Option<PathBuf>,
    /// Probe weights at initialization.
    #[arg(long)]
    pub probe_init: Option<PathBuf>,
    /// Training-sample count used by normalization and PAC-Bayes terms.
    #[arg(long)]
    pub m: Option<f64>,
    #[arg(long, value_enum)]
    pub normalize: Option<NormalizeArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; output does not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON config; flags given on the command line override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum FormatArg {
    Safetensors,
    Csv,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Safetensors => Format::Safetensors,
            FormatArg::Csv => Format::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum NormalizeArg {
    None,
    #[value(name = "sqrt_m")]
    SqrtM,
    M,
}

impl From<NormalizeArg> for Normalization {
    fn from(n: NormalizeArg) -> Self {
        match n {
            NormalizeArg::None => Normalization::None,
            NormalizeArg::SqrtM => Normalization::SqrtM,
            NormalizeArg::M => Normalization::M,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeFiles {
    pub weights: PathBuf,
    pub spec: PathBuf,
    pub data: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeConfig {
    pub checkpoints: Vec<PathBuf>,
    pub init: Option<PathBuf>,
    pub format: Option<Format>,
    pub filter: Option<String>,
    pub split_qkv: Vec<String>,
    pub probe: Option<ProbeFiles>,
    pub report: ReportOptions,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig {
            checkpoints: Vec::new(),
            init: None,
            format: None,
            filter: None,
            split_qkv: Vec::new(),
            probe: None,
            report: ReportOptions {
                metrics: parse_metric_selection("all-data-free").expect("static selection"),
                ..ReportOptions::default()
            },
        }
    }
}

impl AnalyzeConfig {
    pub fn resolve(args: &AnalyzeArgs) -> Result<Self> {
        let mut c: AnalyzeConfig = base_config(args.config.as_deref())?;
        if !args.checkpoints.is_empty() {
            c.checkpoints = args.checkpoints.clone();
        }
        if args.init.is_some() {
            c.init = args.init.clone();
        }
        if let Some(f) = args.format {
            c.format = Some(f.into());
        }
        if let Some(m) = &args.metrics {
            c.report.metrics = parse_metric_selection(m)?;
        }
        if let Some(x) = &args.xmin {
            c.report.shape.pl_xmin = x.parse::<XminStrategy>()?;
        }
        if let Some(x) = &args.tail_xmin {
            c.report.shape.tail_xmin = x.parse::<XminStrategy>()?;
        }
        if args.filter.is_some() {
            c.filter = args.filter.clone();
        }
        if !args.split_qkv.is_empty() {
            c.split_qkv = args.split_qkv.clone();
        }
        if let Some(w) = &args.probe {
            let data = args
                .probe_data
                .clone()
                .ok_or_else(|| Error::InvalidArgument("--probe needs --probe-data".into()))?;
            c.probe = Some(ProbeFiles {
                weights: w.clone(),
                spec: args.probe_spec.clone().unwrap_or_else(|| w.with_extension("json")),
                data,
                init: args.probe_init.clone(),
            });
        } else if args.probe_data.is_some() || args.probe_init.is_some() {
            return Err(Error::InvalidArgument("--probe-data and --probe-init need --probe".into()));
        }
        if args.m.is_some() {
            c.report.m = args.m;
        }
        if let Some(n) = args.normalize {
            c.report.normalization = n.into();
        }
        if let Some(s) = args.seed {
            c.report.pacbayes.seed = s;
        }
        if c.checkpoints.is_empty() {
            return Err(Error::InvalidArgument("no --checkpoint given".into()));
        }
        Ok(c)
    }

    fn load_options(&self) -> Result<LoadOptions> {
        let regex = |p: &str| Regex::new(p).map_err(|e| Error::InvalidArgument(format!("regex {p:?}: {e}")));
        Ok(LoadOptions {
            format: self.format,
            filter: self.filter.as_deref().map(regex).transpose()?,
            split: self
                .split_qkv
                .iter()
                .map(|p| {
                    Ok(SplitRule {
                        pattern: regex(p)?,
                        layout: QkvLayout::default(),
                    })
                })
                .collect::<Result<_>>()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointFailure {
    pub checkpoint: PathBuf,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeOutput {
    pub header: Header<AnalyzeConfig>,
    pub reports: Vec<MetricReport>,
    pub failures: Vec<CheckpointFailure>,
}

struct LoadedProbe {
    network: ProbeNetwork,
    dataset: ProbeDataset,
    init: Option<ProbeNetwork>,
}

fn load_probe(files: &ProbeFiles) -> Result<LoadedProbe> {
    let network = ProbeNetwork::load(&files.weights, &files.spec)?;
    let dataset = ProbeDataset::load_csv(&files.data, Some(network.output_dim()))?;
    let init = files.init.as_deref().map(|p| ProbeNetwork::load(p, &files.spec)).transpose()?;
    Ok(LoadedProbe { network, dataset, init })
}

fn analyze_one(path: &Path, config: &AnalyzeConfig, opts: &LoadOptions, init: Option<&CheckpointSummary>, probe: Option<&LoadedProbe>) -> Result<MetricReport> {
    let ck = load_checkpoint_with(path, opts)?;
    let probe_inputs = probe.map(|p| ProbeInputs {
        network: &p.network,
        dataset: &p.dataset,
        init: p.init.as_ref(),
    });
    compute_report(&ck, init, probe_inputs, &config.report)
}

pub fn execute(config: &AnalyzeConfig, jobs: Option<usize>) -> Result<AnalyzeOutput> {
    let opts = config.load_options()?;
    let init = config.init.as_deref().map(|p| load_checkpoint_with(p, &opts)).transpose()?;
    let probe = config.probe.as_ref().map(load_probe).transpose()?;
    let mut paths = config.checkpoints.clone();
    paths.sort();
    paths.dedup();
    let results: Vec<(PathBuf, Result<MetricReport>)> = with_jobs(jobs, || {
        paths
            .par_iter()
            .map(|p| (p.clone(), analyze_one(p, config, &opts, init.as_ref(), probe.as_ref())))
            .collect()
    })?;
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (path, r) in results {
        match r {
            Ok(rep) => reports.push(rep),
            Err(e) => failures.push(CheckpointFailure {
                checkpoint: path,
                kind: e.kind().to_string(),
                message: e.to_string(),
            }),
        }
    }
    Ok(AnalyzeOutput {
        header: Header::new("analyze", config.report.pacbayes.seed, config.clone()),
        reports,
        failures,
    })
}

pub(super) fn run(args: AnalyzeArgs) -> Result<i32> {
    let config = AnalyzeConfig::resolve(&args)?;
    let out = execute(&config, args.jobs)?;
    for f in &out.failures {
        eprintln!("error [{}]: {}", f.kind, f.message);
    }
    emit_json(args.out.as_deref(), &out)?;
    Ok(if out.failures.is_empty() { 0 } else { 1 })
}
