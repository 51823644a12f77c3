//! Synthetic stand-in for a pool of training checkpoints.
//!
//! Each run is a sequence of perturbed oracles. Later checkpoints have a
//! tighter boundary (better in-distribution accuracy) but react more strongly
//! to dataset shift, so the checkpoint that validates best is also among the
//! most fragile.

use crate::error::{Error, Result};
use crate::segmenters::{PerturbParams, SegmenterKind, SegmenterSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointPoolConfig {
    pub runs: usize,
    pub checkpoints_per_run: usize,
    /// Boundary jitter at the first and last checkpoint of a run.
    pub jitter_px: (f64, f64),
    /// Shift sensitivity at the first and last checkpoint of a run.
    pub sensitivity: (f64, f64),
    /// Sensitivity follows `progress^power` between its endpoints.
    pub sensitivity_power: f64,
    /// Added to the jitter of run `r` as `r * run_jitter_step`.
    pub run_jitter_step: f64,
    /// Run `r` scales its sensitivity by `1 + r * run_sensitivity_step`.
    pub run_sensitivity_step: f64,
    pub label_noise_rate: f64,
}

impl Default for CheckpointPoolConfig {
    fn default() -> Self {
        Self {
            runs: 5,
            checkpoints_per_run: 12,
            jitter_px: (3.0, 1.0),
            sensitivity: (0.2, 3.0),
            sensitivity_power: 2.0,
            run_jitter_step: 0.1,
            run_sensitivity_step: 0.15,
            label_noise_rate: 0.0,
        }
    }
}

impl CheckpointPoolConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sensitivity_power > 0.0) {
            return Err(Error::invalid("sensitivity power must be positive"));
        }
        if self.runs == 0 || self.checkpoints_per_run == 0 {
            return Err(Error::invalid("checkpoint pool needs at least one run and one checkpoint"));
        }
        Ok(())
    }

    pub fn params(&self, run: usize, checkpoint: usize) -> PerturbParams {
        let q =
            if self.checkpoints_per_run > 1 { checkpoint as f64 / (self.checkpoints_per_run - 1) as f64 } else { 1.0 };
        let lerp = |(a, b): (f64, f64), q: f64| a + (b - a) * q;
        PerturbParams {
            boundary_jitter_px: lerp(self.jitter_px, q) + run as f64 * self.run_jitter_step,
            label_noise_rate: self.label_noise_rate,
            shift_sensitivity: lerp(self.sensitivity, q.powf(self.sensitivity_power))
                * (1.0 + run as f64 * self.run_sensitivity_step),
        }
    }

    /// Candidates with model id `run * 100 + checkpoint`.
    pub fn candidates(&self) -> Result<Vec<SegmenterSpec>> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.runs * self.checkpoints_per_run);
        for r in 0..self.runs {
            for c in 0..self.checkpoints_per_run {
                let p = self.params(r, c);
                p.validate()?;
                out.push(SegmenterSpec {
                    model_id: (r * 100 + c) as u32,
                    kind: SegmenterKind::PerturbedOracle(p),
                    run_id: Some(r as u32),
                    checkpoint_id: Some(c as u32),
                    validation_dice: None,
                });
            }
        }
        Ok(out)
    }
}
