use crate::components::{label, Connectivity};
use crate::types::{Class, LabelMask};

use super::aha::{lv_cavity, ring_holes, AhaSegments};

/// Outcome of the two segmentation failure criteria.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FailureReport {
    pub bloodpool_inclusion: bool,
    pub noncontiguous_segments: Vec<u8>,
    pub failed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FailureConfig {
    pub connectivity: Connectivity,
    /// Components smaller than this are ignored when counting pieces.
    pub speckle_min_px: usize,
}

impl Default for FailureConfig {
    fn default() -> Self {
        Self { connectivity: Connectivity::Eight, speckle_min_px: 3 }
    }
}

/// Flags bloodpool enclosed by myocardium outside the LV cavity, and
/// segments whose myocardium splits into more than one component.
pub fn detect_failure(mask: &LabelMask, segments: &AhaSegments, cfg: FailureConfig) -> FailureReport {
    let (w, h) = (mask.width(), mask.height());
    let holes = ring_holes(mask);
    let cavity = lv_cavity(mask);
    let bloodpool_inclusion =
        mask.labels().iter().enumerate().any(|(i, &c)| c == Class::Bloodpool && holes[i] && !cavity[i]);

    let mut noncontiguous_segments = Vec::new();
    for s in 1..=6u8 {
        let fg: Vec<bool> = segments.segment.iter().map(|&v| v == s).collect();
        if label(&fg, w, h, cfg.connectivity).count_at_least(cfg.speckle_min_px) > 1 {
            noncontiguous_segments.push(s);
        }
    }
    let failed = bloodpool_inclusion || !noncontiguous_segments.is_empty();
    FailureReport { bloodpool_inclusion, noncontiguous_segments, failed }
}
