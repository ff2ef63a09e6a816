use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{base_config, csv_header_line, json_arg, out_path, write_bytes, Header};
use crate::correlate::manifest::format_f64;
use crate::correlate::{ModelManifest, ModelRecord};
use crate::error::{Error, Result};
use crate::netprobe::{ProbeDataset, ProbeNetwork};
use crate::synth::{matrix_with_spectrum, planted_series, simpson_manifest, spiked_family, synth_manifest, ManifestSpec, SpectrumSpec, DEFAULT_SEED};
use crate::tensor_io::{write_safetensors, StoreDtype};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// Eigenvalue list, one per line.
    Spectrum,
    /// Matrix whose ESD is a sampled spectrum (CSV or safetensors by extension).
    Matrix,
    /// Planted-correlation manifest.
    Manifest,
    /// Spiked model family: one checkpoint per model plus a manifest.
    Family,
    /// Probe network, initial weights and Gaussian-blob data.
    Probe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ManifestPreset {
    /// `5 × 8 × 5` grid with one metric equal to `-quality`.
    Grid,
    /// Two groups whose pooled correlation flips sign.
    Simpson,
    /// Series with planted best-model hits (`--hits`).
    Series,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, required_unless_present = "config")]
    pub kind: Option<SynthKind>,
    /// Spectrum or manifest descriptor: inline JSON or a file.
    #[arg(long)]
    pub spec: Option<String>,
    #[arg(long, value_enum)]
    pub preset: Option<ManifestPreset>,
    /// Hit pattern for the series preset, e.g. `1,1,0,1`.
    #[arg(long, value_delimiter = ',')]
    pub hits: Vec<u8>,
    /// Matrix row count; at least the number of eigenvalues.
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file (spectrum, matrix, manifest) or directory (family, probe).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilyOptions {
    pub n_models: usize,
    pub n_rows: usize,
    pub n_cols: usize,
    pub n_spikes: usize,
    pub alpha_range: (f64, f64),
}

impl Default for FamilyOptions {
    fn default() -> Self {
        FamilyOptions {
            n_models: 10,
            n_rows: 400,
            n_cols: 200,
            n_spikes: 60,
            alpha_range: (10.0, 1.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeOptions {
    /// Layer widths, input first; the last is the class count.
    pub widths: Vec<usize>,
    pub per_class: usize,
    pub separation: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            widths: vec![8, 32, 3],
            per_class: 50,
            separation: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub kind: Option<SynthKind>,
    pub spectrum: Option<SpectrumSpec>,
    pub rows: Option<usize>,
    pub preset: Option<ManifestPreset>,
    pub manifest: Option<ManifestSpec>,
    pub hits: Vec<bool>,
    pub per_group: usize,
    pub family: FamilyOptions,
    pub probe: ProbeOptions,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            kind: None,
            spectrum: None,
            rows: None,
            preset: None,
            manifest: None,
            hits: Vec::new(),
            per_group: 20,
            family: FamilyOptions::default(),
            probe: ProbeOptions::default(),
            seed: DEFAULT_SEED,
        }
    }
}

impl SynthConfig {
    pub fn resolve(args: &SynthArgs) -> Result<Self> {
        let mut c: SynthConfig = base_config(args.config.as_deref())?;
        if args.kind.is_some() {
            c.kind = args.kind;
        }
        let kind = c.kind.ok_or_else(|| Error::InvalidArgument("no --kind given".into()))?;
        if let Some(s) = &args.spec {
            match kind {
                SynthKind::Manifest => c.manifest = Some(json_arg(s)?),
                SynthKind::Spectrum | SynthKind::Matrix => c.spectrum = Some(json_arg(s)?),
                SynthKind::Family | SynthKind::Probe => return Err(Error::InvalidArgument("--spec does not apply to this kind".into())),
            }
        }
        if args.preset.is_some() {
            c.preset = args.preset;
        }
        if !args.hits.is_empty() {
            c.hits = args.hits.iter().map(|h| *h != 0).collect();
        }
        if args.rows.is_some() {
            c.rows = args.rows;
        }
        if let Some(s) = args.seed {
            c.seed = s;
        }
        match kind {
            SynthKind::Spectrum | SynthKind::Matrix if c.spectrum.is_none() => {
                return Err(Error::InvalidArgument("this kind needs --spec".into()));
            }
            SynthKind::Manifest if c.manifest.is_none() && c.preset.is_none() => {
                return Err(Error::InvalidArgument("a manifest needs --spec or --preset".into()));
            }
            SynthKind::Manifest if c.preset == Some(ManifestPreset::Series) && c.hits.is_empty() => {
                return Err(Error::InvalidArgument("the series preset needs --hits".into()));
            }
            _ => {}
        }
        Ok(c)
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn header_metadata<C: Serialize>(header: &Header<C>) -> Result<Option<HashMap<String, String>>> {
    Ok(Some(HashMap::from([("htsr_header".to_string(), serde_json::to_string(header)?)])))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn manifest_csv<C: Serialize>(manifest: &ModelManifest, header: &Header<C>) -> Result<Vec<u8>> {
    let mut bytes = csv_header_line(header)?.into_bytes();
    bytes.extend(manifest.to_csv_bytes()?);
    Ok(bytes)
}

pub fn build_manifest(c: &SynthConfig) -> Result<ModelManifest> {
    match (c.preset, &c.manifest) {
        (_, Some(spec)) => synth_manifest(spec, c.seed),
        (Some(ManifestPreset::Grid), None) => synth_manifest(&ManifestSpec::grid_5x8x5(), c.seed),
        (Some(ManifestPreset::Simpson), None) => simpson_manifest(c.per_group, c.seed),
        (Some(ManifestPreset::Series), None) => planted_series(&c.hits, c.per_group, c.seed),
        (None, None) => Err(Error::InvalidArgument("a manifest needs --spec or --preset".into())),
    }
}

pub(super) fn run(args: SynthArgs) -> Result<i32> {
    let c = SynthConfig::resolve(&args)?;
    let header = Header::new("synth", c.seed, c.clone());
    let out = args.out.as_deref();
    match c.kind.expect("resolved") {
        SynthKind::Spectrum => {
            let v = c.spectrum.as_ref().expect("resolved").sample(c.seed)?;
            let mut text = csv_header_line(&header)?;
            for x in v {
                text.push_str(&format_f64(x));
                text.push('\n');
            }
            write_bytes(out, text.as_bytes())?;
        }
        SynthKind::Matrix => {
            let out = out.ok_or_else(|| Error::InvalidArgument("a matrix needs --out".into()))?;
            let v = c.spectrum.as_ref().expect("resolved").sample(c.seed)?;
            let m = matrix_with_spectrum(&v, c.rows.unwrap_or(v.len()), c.seed)?;
            if out.extension().and_then(|e| e.to_str()) == Some("safetensors") {
                let t = [("weight".to_string(), vec![m.nrows(), m.ncols()], row_major(&m))];
                write_safetensors(out, &t, StoreDtype::F64, header_metadata(&header)?)?;
            } else {
                let mut text = csv_header_line(&header)?;
                for r in 0..m.nrows() {
                    let row: Vec<String> = (0..m.ncols()).map(|j| format_f64(m[(r, j)])).collect();
                    text.push_str(&row.join(","));
                    text.push('\n');
                }
                write_bytes(Some(out), text.as_bytes())?;
            }
        }
        SynthKind::Manifest => {
            let m = build_manifest(&c)?;
            match out {
                Some(p) if p.extension().and_then(|e| e.to_str()) != Some("csv") => m.write_jsonl(p)?,
                _ => write_bytes(out, &manifest_csv(&m, &header)?)?,
            }
        }
        SynthKind::Family => {
            let dir = out.ok_or_else(|| Error::InvalidArgument("a family needs --out <dir>".into()))?;
            ensure_dir(dir)?;
            let f = &c.family;
            let members = spiked_family(f.n_models, f.n_rows, f.n_cols, f.n_spikes, f.alpha_range, c.seed)?;
            let mut records = Vec::new();
            for m in &members {
                let file = format!("{}.safetensors", m.name);
                let t = [("layer0.weight".to_string(), vec![m.matrix.nrows(), m.matrix.ncols()], row_major(&m.matrix))];
                write_safetensors(out_path(dir, &file), &t, StoreDtype::F64, header_metadata(&header)?)?;
                let mut r = ModelRecord::new(&m.name, m.quality)
                    .with_axis("member", m.quality)
                    .with_axis("n_spikes", m.n_spikes as f64);
                r.checkpoint_path = file;
                records.push(r);
            }
            let bytes = manifest_csv(&ModelManifest::new(records)?, &header)?;
            write_bytes(Some(&out_path(dir, "manifest.csv")), &bytes)?;
        }
        SynthKind::Probe => {
            let dir = out.ok_or_else(|| Error::InvalidArgument("a probe needs --out <dir>".into()))?;
            ensure_dir(dir)?;
            let p = &c.probe;
            let (Some(&dim), Some(&classes)) = (p.widths.first(), p.widths.last()) else {
                return Err(Error::InvalidArgument("probe widths are empty".into()));
            };
            let net = ProbeNetwork::random(&p.widths, c.seed)?;
            let init = ProbeNetwork::random(&p.widths, c.seed.wrapping_add(1))?;
            net.save(&out_path(dir, "probe.safetensors"), &out_path(dir, "probe.json"))?;
            init.save(&out_path(dir, "init.safetensors"), &out_path(dir, "init.json"))?;
            ProbeDataset::gaussian_blobs(classes, dim, p.per_class, p.separation, c.seed.wrapping_add(2))?.write_csv(&out_path(dir, "data.csv"))?;
            super::emit_json(Some(&out_path(dir, "synth.json")), &header)?;
        }
    }
    Ok(0)
}
