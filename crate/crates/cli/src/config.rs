//! Effective settings: built-in defaults, then the INI config file, then
//! command-line flags.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use daugs_core::components::Connectivity;
use daugs_core::harness::pool::CheckpointPoolConfig;
use daugs_core::harness::GridConfig;
use daugs_core::metrics::FailureConfig;
use daugs_core::selection::UMetric;

use crate::CliError;

pub const CONFIG_FORMAT: &str = "daugs-config/1";

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub jobs: Option<usize>,
    pub grid: GridConfig,
    pub metric: UMetric,
    pub backend_timeout_s: f64,
    pub failure: FailureConfig,
    pub pool: CheckpointPoolConfig,
    pub pool_threshold: f64,
    pub pool_cap: usize,
    pub validation_cases: usize,
    pub internal_cases: usize,
    pub shifted_cases: usize,
    pub moco_f_max: usize,
    pub moco_runs: usize,
    pub moco_temperature: f64,
    pub mbf_scale: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            seed: 0,
            jobs: None,
            grid: GridConfig::default(),
            metric: UMetric::Upp,
            backend_timeout_s: daugs_core::segmenters::DEFAULT_BACKEND_TIMEOUT.as_secs_f64(),
            failure: FailureConfig::default(),
            pool: CheckpointPoolConfig::default(),
            pool_threshold: 0.87,
            pool_cap: 10,
            validation_cases: 5,
            internal_cases: 20,
            shifted_cases: 40,
            moco_f_max: 4,
            moco_runs: 30,
            moco_temperature: 0.05,
            mbf_scale: 1.0,
        }
    }
}

fn parse<T: FromStr>(section: &str, key: &str, v: &str) -> Result<T, CliError> {
    v.trim().parse().map_err(|_| CliError::Usage(format!("config [{section}] {key}: cannot parse {v:?}")))
}

fn connectivity(section: &str, key: &str, v: &str) -> Result<Connectivity, CliError> {
    match v.trim() {
        "4" => Ok(Connectivity::Four),
        "8" => Ok(Connectivity::Eight),
        _ => Err(CliError::Usage(format!("config [{section}] {key}: expected 4 or 8, got {v:?}"))),
    }
}

impl Settings {
    /// Applies every key of `path`; unknown sections and keys are errors.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let ini = crate::load_ini(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("");
            for (key, v) in props.iter() {
                self.set(section, key, v)?;
            }
        }
        Ok(())
    }

    pub fn set(&mut self, section: &str, key: &str, v: &str) -> Result<(), CliError> {
        let (s, k) = (section, key);
        match (s, k) {
            ("meta", _) => {}
            ("run", "seed") => self.seed = parse(s, k, v)?,
            ("run", "jobs") => self.jobs = if v.trim().is_empty() { None } else { Some(parse(s, k, v)?) },
            ("run", "patch") => self.grid.patch = parse(s, k, v)?,
            ("run", "recon_stride") => self.grid.recon_stride = parse(s, k, v)?,
            ("run", "umap_stride") => self.grid.umap_stride = parse(s, k, v)?,
            ("run", "metric") => self.metric = v.trim().parse().map_err(|e| CliError::Usage(format!("{e}")))?,
            ("run", "backend_timeout_s") => self.backend_timeout_s = parse(s, k, v)?,
            ("failure", "connectivity") => self.failure.connectivity = connectivity(s, k, v)?,
            ("failure", "speckle_min_px") => self.failure.speckle_min_px = parse(s, k, v)?,
            ("pool", "runs") => self.pool.runs = parse(s, k, v)?,
            ("pool", "checkpoints") => self.pool.checkpoints_per_run = parse(s, k, v)?,
            ("pool", "jitter_first") => self.pool.jitter_px.0 = parse(s, k, v)?,
            ("pool", "jitter_last") => self.pool.jitter_px.1 = parse(s, k, v)?,
            ("pool", "sensitivity_first") => self.pool.sensitivity.0 = parse(s, k, v)?,
            ("pool", "sensitivity_last") => self.pool.sensitivity.1 = parse(s, k, v)?,
            ("pool", "sensitivity_power") => self.pool.sensitivity_power = parse(s, k, v)?,
            ("pool", "run_jitter_step") => self.pool.run_jitter_step = parse(s, k, v)?,
            ("pool", "run_sensitivity_step") => self.pool.run_sensitivity_step = parse(s, k, v)?,
            ("pool", "label_noise") => self.pool.label_noise_rate = parse(s, k, v)?,
            ("pool", "threshold") => self.pool_threshold = parse(s, k, v)?,
            ("pool", "cap") => self.pool_cap = parse(s, k, v)?,
            ("cohort", "validation") => self.validation_cases = parse(s, k, v)?,
            ("cohort", "internal") => self.internal_cases = parse(s, k, v)?,
            ("cohort", "shifted") => self.shifted_cases = parse(s, k, v)?,
            ("moco", "f_max") => self.moco_f_max = parse(s, k, v)?,
            ("moco", "runs") => self.moco_runs = parse(s, k, v)?,
            ("moco", "temperature") => self.moco_temperature = parse(s, k, v)?,
            ("mbf", "scale") => self.mbf_scale = parse(s, k, v)?,
            _ => return Err(CliError::Usage(format!("unknown config key [{s}] {k}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let g = self.grid;
        if g.patch == 0 || g.recon_stride == 0 || g.umap_stride == 0 {
            return Err(CliError::Usage("patch size and strides must be positive".into()));
        }
        if self.jobs == Some(0) {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        if !(self.backend_timeout_s > 0.0) {
            return Err(CliError::Usage("backend timeout must be positive".into()));
        }
        Ok(())
    }

    /// The settings as a config file that reproduces them.
    pub fn echo(&self, command: &str) -> String {
        let mut s = String::new();
        let conn = match self.failure.connectivity {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        };
        let p = &self.pool;
        let _ = write!(
            s,
            "[meta]\nformat = {CONFIG_FORMAT}\ncommand = {command}\nversion = {}\n\n\
             [run]\nseed = {}\njobs = {}\npatch = {}\nrecon_stride = {}\numap_stride = {}\nmetric = {}\n\
             backend_timeout_s = {}\n\n\
             [failure]\nconnectivity = {conn}\nspeckle_min_px = {}\n\n\
             [pool]\nruns = {}\ncheckpoints = {}\njitter_first = {}\njitter_last = {}\nsensitivity_first = {}\n\
             sensitivity_last = {}\nsensitivity_power = {}\nrun_jitter_step = {}\nrun_sensitivity_step = {}\n\
             label_noise = {}\nthreshold = {}\ncap = {}\n\n\
             [cohort]\nvalidation = {}\ninternal = {}\nshifted = {}\n\n\
             [moco]\nf_max = {}\nruns = {}\ntemperature = {}\n\n\
             [mbf]\nscale = {}\n",
            env!("CARGO_PKG_VERSION"),
            self.seed,
            self.jobs.map_or(String::new(), |j| j.to_string()),
            self.grid.patch,
            self.grid.recon_stride,
            self.grid.umap_stride,
            self.metric.name(),
            self.backend_timeout_s,
            self.failure.speckle_min_px,
            p.runs,
            p.checkpoints_per_run,
            p.jitter_px.0,
            p.jitter_px.1,
            p.sensitivity.0,
            p.sensitivity.1,
            p.sensitivity_power,
            p.run_jitter_step,
            p.run_sensitivity_step,
            p.label_noise_rate,
            self.pool_threshold,
            self.pool_cap,
            self.validation_cases,
            self.internal_cases,
            self.shifted_cases,
            self.moco_f_max,
            self.moco_runs,
            self.moco_temperature,
            self.mbf_scale,
        );
        s
    }
}
