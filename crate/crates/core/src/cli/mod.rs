//! Command-line surface: `analyze`, `fit`, `plot-data`, `correlate`, `synth`.
//!
//! Each command resolves its flags (optionally layered over a `--config`
//! JSON file) into one config struct, which is echoed in every output header.

mod analyze;
mod correlate;
mod fit;
mod synth;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use analyze::{AnalyzeArgs, AnalyzeConfig, AnalyzeOutput, CheckpointFailure};
pub use correlate::{CorrelateArgs, CorrelateConfig, Task};
pub use fit::{FitArgs, FitOutput, FitRunConfig, LayerFitRecord, PlotData};
pub use synth::{SynthArgs, SynthConfig, SynthKind};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL: &str = "htsr";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "htsr", version, about = "Spectral and norm-based generalization metrics for weight matrices")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute metrics for one or more checkpoints.
    Analyze(AnalyzeArgs),
    /// Fit PL, E-TPL, EXP and MP laws to each layer's spectrum.
    Fit(FitArgs),
    /// Same as `fit` with histogram and fitted-curve samples always included.
    PlotData(FitArgs),
    /// Rank correlations between metrics and quality over a manifest.
    Correlate(CorrelateArgs),
    /// Write seeded synthetic spectra, matrices, manifests or probe data.
    Synth(SynthArgs),
}

/// Provenance block carried by every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header<C> {
    pub schema_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub config: C,
}

impl<C> Header<C> {
    pub fn new(command: &str, seed: u64, config: C) -> Self {
        Header {
            schema_version: SCHEMA_VERSION,
            tool: TOOL.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            seed,
            config,
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.kind());
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Analyze(a) => analyze::run(a),
        Command::Fit(a) => fit::run(a, false),
        Command::PlotData(a) => fit::run(a, true),
        Command::Correlate(a) => correlate::run(a),
        Command::Synth(a) => synth::run(a),
    }
}

/// Starting config: the `--config` file when given, defaults otherwise.
pub(crate) fn base_config<C: DeserializeOwned + Default>(path: Option<&Path>) -> Result<C> {
    match path {
        None => Ok(C::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("config {}: {e}", p.display())))
        }
    }
}

/// Inline JSON when the argument starts with `{`, otherwise a file path.
pub(crate) fn json_arg<T: DeserializeOwned>(arg: &str) -> Result<T> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).map_err(|e| Error::io(arg, e))?
    };
    serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("{arg}: {e}")))
}

pub(crate) fn write_bytes(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            fs::write(p, bytes).map_err(|e| Error::io(p, e))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes).and_then(|_| stdout.flush()).map_err(|e| Error::io("<stdout>", e))
        }
    }
}

/// Pretty JSON plus a trailing newline.
pub(crate) fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_bytes(out, &bytes)
}

/// `# {header}` line prepended to CSV outputs; every CSV reader here skips it.
pub(crate) fn csv_header_line<C: Serialize>(header: &Header<C>) -> Result<String> {
    Ok(format!("# {}\n", serde_json::to_string(header)?))
}

pub(crate) fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(Error::InvalidArgument("--jobs must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

pub(crate) fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
