use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use super::{base_config, csv_header_line, emit_json, out_path, with_jobs, write_bytes, Header};
use crate::correlate::{
    best_selection_rate, correlate_global, correlate_optimal, correlate_slices, correlate_trajectory, optimal_subset, percentile_summary,
    series_by_axis, simpson_check, CorrelationResult, Method, ModelManifest, OptimumRule, SelectionRate, SimpsonReport, Target,
    SIMPSON_THRESHOLD,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Correlation across the best model of each group.
    One,
    /// Correlations within one-dimensional slices of the grid.
    Two,
    /// Correlations along each training trajectory.
    Three,
    /// One correlation over every record.
    Global,
    /// Best-model selection rate per series.
    Selection,
    /// Pooled-versus-grouped sign check.
    Simpson,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// Manifest (CSV or JSONL).
    #[arg(long, required_unless_present = "config")]
    pub manifest: Option<PathBuf>,
    /// Comma list; defaults to every task whose axes are present.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub task: Vec<Task>,
    /// Slice axes for task two; defaults to every grid axis.
    #[arg(long, alias = "axis", value_delimiter = ',')]
    pub axes: Vec<String>,
    /// quality or gap.
    #[arg(long)]
    pub target: Option<String>,
    /// spearman or kendall.
    #[arg(long)]
    pub method: Option<String>,
    /// Metric columns; defaults to all in the manifest.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Vec<String>,
    /// Axis that orders a trajectory.
    #[arg(long)]
    pub run_key: Option<String>,
    /// Grouping axis for tasks one and simpson.
    #[arg(long)]
    pub group_axis: Option<String>,
    /// Axes tuned away in task one.
    #[arg(long, value_delimiter = ',')]
    pub tune_axes: Vec<String>,
    #[arg(long, value_enum)]
    pub optimum: Option<OptimumArg>,
    /// Axis that splits records into series for the selection rate.
    #[arg(long)]
    pub series_axis: Option<String>,
    #[arg(long)]
    pub simpson_threshold: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory; correlations go to stdout as JSON lines when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum OptimumArg {
    Argmax,
    Cubic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelateConfig {
    pub manifest: Option<PathBuf>,
    /// Empty means every applicable task.
    pub tasks: Vec<Task>,
    pub axes: Vec<String>,
    pub targets: Vec<Target>,
    pub methods: Vec<Method>,
    pub metrics: Vec<String>,
    pub run_key: String,
    pub group_axis: Option<String>,
    pub tune_axes: Vec<String>,
    pub optimum: OptimumRule,
    pub series_axis: Option<String>,
    pub simpson_threshold: f64,
    /// Recorded only; every task is deterministic.
    pub seed: u64,
}

impl Default for CorrelateConfig {
    fn default() -> Self {
        CorrelateConfig {
            manifest: None,
            tasks: Vec::new(),
            axes: Vec::new(),
            targets: vec![Target::Quality],
            methods: vec![Method::Spearman],
            metrics: Vec::new(),
            run_key: "epoch".into(),
            group_axis: None,
            tune_axes: Vec::new(),
            optimum: OptimumRule::Argmax,
            series_axis: None,
            simpson_threshold: SIMPSON_THRESHOLD,
            seed: 0,
        }
    }
}

fn parse_list<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<Vec<T>> {
    s.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect()
}

impl CorrelateConfig {
    pub fn resolve(args: &CorrelateArgs) -> Result<Self> {
        let mut c: CorrelateConfig = base_config(args.config.as_deref())?;
        if args.manifest.is_some() {
            c.manifest = args.manifest.clone();
        }
        if !args.task.is_empty() {
            c.tasks = args.task.clone();
        }
        if !args.axes.is_empty() {
            c.axes = args.axes.clone();
        }
        if let Some(t) = &args.target {
            c.targets = parse_list(t)?;
        }
        if let Some(m) = &args.method {
            c.methods = parse_list(m)?;
        }
        if !args.metrics.is_empty() {
            c.metrics = args.metrics.clone();
        }
        if let Some(r) = &args.run_key {
            c.run_key = r.clone();
        }
        if args.group_axis.is_some() {
            c.group_axis = args.group_axis.clone();
        }
        if !args.tune_axes.is_empty() {
            c.tune_axes = args.tune_axes.clone();
        }
        if let Some(o) = args.optimum {
            c.optimum = match o {
                OptimumArg::Argmax => OptimumRule::Argmax,
                OptimumArg::Cubic => OptimumRule::Cubic,
            };
        }
        if args.series_axis.is_some() {
            c.series_axis = args.series_axis.clone();
        }
        if let Some(t) = args.simpson_threshold {
            c.simpson_threshold = t;
        }
        if let Some(s) = args.seed {
            c.seed = s;
        }
        if c.manifest.is_none() {
            return Err(Error::InvalidArgument("no --manifest given".into()));
        }
        if c.targets.is_empty() || c.methods.is_empty() {
            return Err(Error::InvalidArgument("empty target or method list".into()));
        }
        if !(0.0..1.0).contains(&c.simpson_threshold) {
            return Err(Error::InvalidArgument("--simpson-threshold must lie in [0, 1)".into()));
        }
        Ok(c)
    }

    /// Fills defaulted fields from the manifest: task list, slice axes, metrics.
    pub fn complete(&mut self, manifest: &ModelManifest) -> Result<()> {
        let has = |a: &str| manifest.grid_axes.iter().any(|g| g == a);
        if self.axes.is_empty() {
            self.axes = manifest.grid_axes.iter().filter(|a| **a != self.run_key).cloned().collect();
        }
        if self.metrics.is_empty() {
            self.metrics = manifest.metric_names();
        }
        if self.tune_axes.is_empty() {
            if let Some(g) = &self.group_axis {
                self.tune_axes = manifest.grid_axes.iter().filter(|a| *a != g && **a != self.run_key).cloned().collect();
            }
        }
        if self.tasks.is_empty() {
            self.tasks.push(Task::Global);
            if !self.axes.is_empty() {
                self.tasks.push(Task::Two);
            }
            if has(&self.run_key) {
                self.tasks.push(Task::Three);
            }
            if self.group_axis.is_some() {
                self.tasks.extend([Task::One, Task::Simpson]);
            }
            if self.series_axis.is_some() {
                self.tasks.push(Task::Selection);
            }
        }
        self.tasks.sort();
        self.tasks.dedup();
        if self.metrics.is_empty() {
            return Err(Error::Manifest("manifest has no metric columns".into()));
        }
        for m in &self.metrics {
            if !manifest.records.iter().any(|r| r.metrics.contains_key(m)) {
                return Err(Error::InvalidArgument(format!("metric {m:?} not in manifest")));
            }
        }
        let needs_group = self.tasks.iter().any(|t| matches!(t, Task::One | Task::Simpson));
        if needs_group && self.group_axis.is_none() {
            return Err(Error::InvalidArgument("tasks one and simpson need --group-axis".into()));
        }
        if self.tasks.contains(&Task::Selection) && self.series_axis.is_none() {
            return Err(Error::InvalidArgument("the selection task needs --series-axis".into()));
        }
        Ok(())
    }
}

/// Per-group diagnostics for task two and three runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupNote {
    pub task: Task,
    pub metric: String,
    pub target: Target,
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<String>,
    pub n_results: usize,
    pub skipped: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub median_target_range: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelateOutput {
    pub header: Header<CorrelateConfig>,
    pub results: Vec<CorrelationResult>,
    pub groups: Vec<GroupNote>,
    pub selection: Vec<SelectionRate>,
    pub simpson: Vec<SimpsonReport>,
}

pub fn execute(config: &CorrelateConfig, jobs: Option<usize>) -> Result<CorrelateOutput> {
    let manifest = ModelManifest::load(config.manifest.as_ref().expect("validated"))?;
    let mut config = config.clone();
    config.complete(&manifest)?;
    let c = &config;
    let mut out = CorrelateOutput {
        header: Header::new("correlate", c.seed, c.clone()),
        results: Vec::new(),
        groups: Vec::new(),
        selection: Vec::new(),
        simpson: Vec::new(),
    };
    with_jobs(jobs, || -> Result<()> {
        for &task in &c.tasks {
            for metric in &c.metrics {
                if task == Task::Selection {
                    let series = series_by_axis(&manifest, c.series_axis.as_deref().expect("checked"))?;
                    out.selection.push(best_selection_rate(&series, metric));
                    continue;
                }
                for &target in &c.targets {
                    for &method in &c.methods {
                        run_task(task, c, &manifest, metric, target, method, &mut out)?;
                    }
                }
            }
        }
        Ok(())
    })??;
    Ok(out)
}

fn run_task(task: Task, c: &CorrelateConfig, manifest: &ModelManifest, metric: &str, target: Target, method: Method, out: &mut CorrelateOutput) -> Result<()> {
    let mut note = |axis: Option<&str>, g: crate::correlate::GroupedCorrelations| {
        out.groups.push(GroupNote {
            task,
            metric: metric.to_string(),
            target,
            method,
            axis: axis.map(str::to_string),
            n_results: g.results.len(),
            skipped: g.skipped,
            median_target_range: g.median_target_range,
        });
        g.results
    };
    let found: Vec<CorrelationResult> = match task {
        Task::Global => correlate_global(manifest, metric, target, method)?.into_iter().collect(),
        Task::Two => {
            let mut all = Vec::new();
            for axis in &c.axes {
                let g = correlate_slices(manifest, axis, metric, target, method)?;
                all.extend(note(Some(axis), g));
            }
            all
        }
        Task::Three => {
            let g = correlate_trajectory(manifest, &c.run_key, metric, target, method)?;
            note(Some(&c.run_key), g)
        }
        Task::One => {
            let group = c.group_axis.as_deref().expect("checked");
            let tune: Vec<&str> = c.tune_axes.iter().map(String::as_str).collect();
            let subset = optimal_subset(manifest, group, &tune, c.optimum, Some(metric))?;
            correlate_optimal(&subset, group, metric, target, method)?.into_iter().collect()
        }
        Task::Simpson => {
            let group = c.group_axis.as_deref().expect("checked");
            out.simpson.push(simpson_check(manifest, group, metric, target, method, c.simpson_threshold)?);
            Vec::new()
        }
        Task::Selection => unreachable!("handled by the caller"),
    };
    out.results.extend(found);
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(crate::correlate::manifest::format_f64).unwrap_or_default()
}

fn summary_csv(out: &CorrelateOutput) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(csv_header_line(&out.header)?.into_bytes());
    w.write_record(["metric", "scope", "target", "method", "n", "n_undefined", "p25", "p50", "p75"])?;
    for r in percentile_summary(&out.results) {
        let target = serde_json::to_value(r.target)?;
        let method = serde_json::to_value(r.method)?;
        w.write_record([
            r.metric,
            r.scope,
            target.as_str().unwrap_or_default().to_string(),
            method.as_str().unwrap_or_default().to_string(),
            r.n.to_string(),
            r.n_undefined.to_string(),
            opt(r.p25),
            opt(r.p50),
            opt(r.p75),
        ])?;
    }
    w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn selection_csv(out: &CorrelateOutput) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(csv_header_line(&out.header)?.into_bytes());
    w.write_record(["metric", "rate", "hits", "n_series", "skipped"])?;
    for s in &out.selection {
        w.write_record([s.metric.clone(), opt(s.rate), s.hits.to_string(), s.n_series.to_string(), s.skipped.to_string()])?;
    }
    w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Header line followed by one result per line.
pub fn results_jsonl(out: &CorrelateOutput) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec(&serde_json::json!({ "header": out.header }))?;
    bytes.push(b'\n');
    for r in &out.results {
        serde_json::to_writer(&mut bytes, r)?;
        bytes.push(b'\n');
    }
    Ok(bytes)
}

pub(super) fn run(args: CorrelateArgs) -> Result<i32> {
    let config = CorrelateConfig::resolve(&args)?;
    let out = execute(&config, args.jobs)?;
    let jsonl = results_jsonl(&out)?;
    match &args.out {
        None => write_bytes(None, &jsonl)?,
        Some(dir) => {
            write_bytes(Some(&out_path(dir, "correlations.jsonl")), &jsonl)?;
            write_bytes(Some(&out_path(dir, "summary.csv")), &summary_csv(&out)?)?;
            if !out.selection.is_empty() {
                write_bytes(Some(&out_path(dir, "selection.csv")), &selection_csv(&out)?)?;
            }
            emit_json(Some(&out_path(dir, "correlate.json")), &out)?;
        }
    }
    Ok(0)
}
