//! `daugs`: batch driver for phantom generation, pool segmentation,
//! uncertainty-guided selection, evaluation, perfusion quantification and the
//! experiment reports.
//!
//! Exit codes: 0 success, 1 usage, 2 data, 3 backend.

mod commands;
mod config;
mod pool_cfg;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use daugs_core::error::Error;

use crate::config::Settings;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_backend() => 3,
            CliError::Core(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

pub(crate) fn load_ini(path: &Path) -> Result<ini::Ini, ini::Error> {
    let opt = ini::ParseOption { enabled_quote: false, enabled_escape: false, ..Default::default() };
    ini::Ini::load_from_file_opt(path, opt)
}

#[derive(Debug, Parser)]
#[command(name = "daugs", version, about = "Uncertainty-guided model-pool segmentation of dynamic image series")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// INI config file; command-line flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores); outputs do not depend on it
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, default_value = "daugs-out")]
    out: PathBuf,
    #[arg(long, global = true)]
    umap_stride: Option<usize>,
    #[arg(long, global = true)]
    recon_stride: Option<usize>,
    #[arg(long, global = true)]
    patch: Option<usize>,
    #[arg(long, global = true)]
    metric: Option<MetricArg>,
    /// External segmenter command, one per extra pool member (repeatable)
    #[arg(long, global = true)]
    backend: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricArg {
    Upp,
    Utot,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RegimeArg {
    None,
    Shifted,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Daugs,
    Established,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a phantom cohort with its manifest
    Phantom {
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, value_enum, default_value = "none")]
        regime: RegimeArg,
        #[arg(long, default_value_t = 0)]
        first_id: u64,
    },
    /// Upsample, crop, resample and normalise raw series
    Preprocess {
        /// Series tensor (T × H × W float)
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        input: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Frame spacing of `--input`
        #[arg(long, default_value_t = 1.0)]
        dt_s: f64,
    },
    /// Segment every manifest case with every pool member
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Choose one solution per case
    Select {
        /// `solutions.csv` written by `run`
        #[arg(long)]
        solutions: PathBuf,
        #[arg(long, value_enum, default_value = "daugs")]
        method: MethodArg,
        /// Fixed model for `--method established`
        #[arg(long)]
        established: Option<u32>,
        /// Pool config whose validation scores pick the established model
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Dice, HD95 and failure criteria of run masks against the ground truth
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        run_dir: PathBuf,
        /// Evaluate only the chosen masks of this `selection.csv`
        #[arg(long)]
        selection: Option<PathBuf>,
    },
    /// Segment-wise blood flow for the ground truth and selected masks
    Mbf {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        run_dir: PathBuf,
        /// `name=selection.csv`, one per method (repeatable)
        #[arg(long = "selection")]
        selections: Vec<String>,
        /// Two-column signal-to-concentration CSV
        #[arg(long)]
        lut: Option<PathBuf>,
        /// AIF curve used for every case instead of the LV cavity
        #[arg(long)]
        aif: Option<PathBuf>,
    },
    /// Motion-correction failure Monte Carlo
    Mocosim,
    /// Established vs uncertainty-guided selection on internal and shifted cohorts
    Abtest {
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Solution montage and U_pp histogram of the pool on one case
    Poolreport {
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Case id within `--manifest` (default: the first)
        #[arg(long, requires = "manifest")]
        case: Option<u64>,
    },
    /// Compare selection under U_pp and U_tot
    Metriccompare {
        #[arg(long)]
        pool: Option<PathBuf>,
        /// Use the built-in two-solution case on which the metrics disagree
        #[arg(long)]
        fixture: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Phantom { .. } => "phantom",
            Command::Preprocess { .. } => "preprocess",
            Command::Run { .. } => "run",
            Command::Select { .. } => "select",
            Command::Eval { .. } => "eval",
            Command::Mbf { .. } => "mbf",
            Command::Mocosim => "mocosim",
            Command::Abtest { .. } => "abtest",
            Command::Poolreport { .. } => "poolreport",
            Command::Metriccompare { .. } => "metriccompare",
        }
    }
}

pub const SUMMARY_FORMAT: &str = "daugs-summary/1";

/// `<out>/summary.csv`: `key,value` rows. Holds no timings, so reruns are
/// byte-identical.
#[derive(Debug, Default)]
pub struct Summary {
    rows: Vec<(String, String)>,
}

impl Summary {
    pub fn put(&mut self, key: impl Into<String>, value: impl ToString) {
        self.rows.push((key.into(), value.to_string()));
    }

    pub fn outputs(&mut self, out: &Path, files: &[PathBuf]) {
        for f in files {
            let rel = f.strip_prefix(out).unwrap_or(f);
            self.put("output", rel.display());
        }
    }

    fn write(&self, dir: &Path, command: &str, status: &str) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
        w.write_record(["key", "value"])?;
        w.write_record(["format", SUMMARY_FORMAT])?;
        w.write_record(["command", command])?;
        w.write_record(["status", status])?;
        for (k, v) in &self.rows {
            w.write_record([k, v])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub struct Ctx {
    pub settings: Settings,
    pub out: PathBuf,
    pub backends: Vec<String>,
}

fn settings(g: &Global) -> Result<Settings, CliError> {
    let mut s = Settings::default();
    if let Some(p) = &g.config {
        s.apply_file(p)?;
    }
    if let Some(v) = g.seed {
        s.seed = v;
    }
    if g.jobs.is_some() {
        s.jobs = g.jobs;
    }
    if let Some(v) = g.patch {
        s.grid.patch = v;
    }
    if let Some(v) = g.recon_stride {
        s.grid.recon_stride = v;
    }
    if let Some(v) = g.umap_stride {
        s.grid.umap_stride = v;
    }
    if let Some(m) = g.metric {
        s.metric = match m {
            MetricArg::Upp => daugs_core::selection::UMetric::Upp,
            MetricArg::Utot => daugs_core::selection::UMetric::Utot,
        };
    }
    s.validate()?;
    Ok(s)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let settings = settings(&cli.global)?;
    let name = cli.command.name();
    let out = cli.global.out.clone();
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("config.ini"), settings.echo(name))?;
    let pool = daugs_core::harness::thread_pool(settings.jobs)?;
    let ctx = Ctx { settings, out: out.clone(), backends: cli.global.backend.clone() };
    let mut summary = Summary::default();
    let result = pool.install(|| commands::run(&ctx, cli.command, &mut summary));
    match &result {
        Ok(()) => summary.write(&out, name, "ok")?,
        Err(e) => {
            summary.put("error", e);
            summary.put("exit_code", e.exit_code());
            // the original error matters more than a failed summary write
            let _ = summary.write(&out, name, "error");
        }
    }
    result
}

pub fn main_with(args: impl IntoIterator<Item = OsString>) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("daugs: {e}");
            e.exit_code()
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(main_with(std::env::args_os()))
}
