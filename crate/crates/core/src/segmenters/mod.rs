//! Patch segmenters: reference implementations and the external backend slot.
//!
//! A segmenter maps one space-time window to static class probabilities for
//! that window. Pool members are described by [`SegmenterSpec`] and
//! instantiated per case with [`instantiate`], which lets in-process kinds
//! precompute per-case tables once and external kinds keep one backend process
//! alive for the whole case.

pub mod wire;

use std::path::Path;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use rand::Rng as _;

use crate::distance::{signed_distance, squared_edt};
use crate::error::{Error, Result};
use crate::patching::PatchView;
use crate::rng::{substream, DOMAIN_PERTURB};
use crate::types::{Class, ImageSeries, LabelMask};

pub const DEFAULT_BACKEND_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbParams {
    pub boundary_jitter_px: f64,
    pub label_noise_rate: f64,
    pub shift_sensitivity: f64,
}

impl PerturbParams {
    pub const NONE: PerturbParams =
        PerturbParams { boundary_jitter_px: 0.0, label_noise_rate: 0.0, shift_sensitivity: 0.0 };

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.boundary_jitter_px) || !ok(self.shift_sensitivity) {
            return Err(Error::invalid("perturbation parameters must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.label_noise_rate) {
            return Err(Error::invalid("label noise rate must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Prototype time curves in class order (background, myocardium, bloodpool).
#[derive(Debug, Clone, PartialEq)]
pub struct CurveMatchParams {
    pub prototypes: [Vec<f32>; 3],
    pub temperature: f64,
    /// When set, each window's curves are rescaled by `reference_level / q`
    /// before matching, where `q` is the peak over time of the window's
    /// spatial mean.
    pub reference_level: Option<f64>,
}

impl CurveMatchParams {
    pub fn validate(&self) -> Result<()> {
        let t = self.prototypes[0].len();
        if t == 0 || self.prototypes.iter().any(|p| p.len() != t) {
            return Err(Error::invalid("prototype curves must share a non-zero length"));
        }
        if self.prototypes.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("prototype curves must be finite"));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if self.reference_level.is_some_and(|r| !r.is_finite()) {
            return Err(Error::invalid("reference level must be finite"));
        }
        if self.scale_sd() == 0.0 {
            return Err(Error::invalid("prototype curves have zero variance"));
        }
        Ok(())
    }

    /// Root of the mean population variance of the three prototypes; the
    /// distance unit.
    pub fn scale_sd(&self) -> f64 {
        let var = |p: &[f32]| {
            let n = p.len() as f64;
            let m = p.iter().map(|&v| v as f64).sum::<f64>() / n;
            p.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / n
        };
        (self.prototypes.iter().map(|p| var(p)).sum::<f64>() / 3.0).sqrt()
    }

    /// Reads three comma-separated rows of equal length.
    pub fn read_prototypes(path: &Path) -> Result<[Vec<f32>; 3]> {
        let text = std::fs::read_to_string(path)?;
        let rows: Vec<Vec<f32>> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split(',').map(|v| v.trim().parse::<f32>().map_err(|e| Error::Parse(format!("{v:?}: {e}")))).collect()
            })
            .collect::<Result<_>>()?;
        let [a, b, c]: [Vec<f32>; 3] =
            rows.try_into().map_err(|_| Error::Parse("prototype file needs exactly 3 rows".into()))?;
        Ok([a, b, c])
    }

    pub fn write_prototypes(path: &Path, protos: &[Vec<f32>; 3]) -> Result<()> {
        let mut s = String::new();
        for p in protos {
            let row: Vec<String> = p.iter().map(|v| format!("{v:?}")).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        std::fs::write(path, s)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalParams {
    pub command: Vec<String>,
    pub timeout: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SegmenterKind {
    Oracle,
    PerturbedOracle(PerturbParams),
    CurveMatching(CurveMatchParams),
    Uniform,
    External(ExternalParams),
}

impl SegmenterKind {
    pub fn name(&self) -> &'static str {
        match self {
            SegmenterKind::Oracle => "oracle",
            SegmenterKind::PerturbedOracle(_) => "perturbed_oracle",
            SegmenterKind::CurveMatching(_) => "curve_matching",
            SegmenterKind::Uniform => "uniform",
            SegmenterKind::External(_) => "external",
        }
    }
}

/// One pool member.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmenterSpec {
    pub model_id: u32,
    pub kind: SegmenterKind,
    pub run_id: Option<u32>,
    pub checkpoint_id: Option<u32>,
    pub validation_dice: Option<f64>,
}

impl SegmenterSpec {
    pub fn new(model_id: u32, kind: SegmenterKind) -> Self {
        Self { model_id, kind, run_id: None, checkpoint_id: None, validation_dice: None }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            SegmenterKind::PerturbedOracle(p) => p.validate(),
            SegmenterKind::CurveMatching(c) => c.validate(),
            SegmenterKind::External(e) if e.command.is_empty() => {
                Err(Error::invalid("external segmenter needs a command"))
            }
            _ => Ok(()),
        }
    }
}

/// Per-case tables shared by every oracle-type model on that case.
#[derive(Debug)]
pub struct OracleMaps {
    width: usize,
    height: usize,
    truth: Arc<LabelMask>,
    /// Signed distance to the myocardium (negative inside), pixels.
    myo_sdf: Vec<f32>,
    /// Closest non-myocardial class for every pixel.
    nearest_other: Vec<Class>,
}

impl OracleMaps {
    fn new(truth: Arc<LabelMask>) -> Self {
        let (w, h) = (truth.width(), truth.height());
        let myo_sdf = signed_distance(&truth.indicator(Class::Myocardium), w, h);
        let d_bg = squared_edt(&truth.indicator(Class::Background), w, h, (1.0, 1.0));
        let d_bp = squared_edt(&truth.indicator(Class::Bloodpool), w, h, (1.0, 1.0));
        let nearest_other =
            d_bg.iter().zip(&d_bp).map(|(a, b)| if b < a { Class::Bloodpool } else { Class::Background }).collect();
        Self { width: w, height: h, truth, myo_sdf, nearest_other }
    }

    /// Label at `(x, y)` after growing the myocardium by `radius` pixels
    /// (shrinking when negative).
    #[inline]
    fn label(&self, x: usize, y: usize, radius: f32) -> Class {
        let i = y * self.width + x;
        if self.myo_sdf[i] <= radius {
            Class::Myocardium
        } else {
            match self.truth.labels()[i] {
                Class::Myocardium => self.nearest_other[i],
                c => c,
            }
        }
    }
}

/// What a segmenter may know about the case beyond the image itself.
#[derive(Debug)]
pub struct CaseContext {
    pub case_id: u64,
    pub seed: u64,
    /// Severity of the dataset shift applied to this case (0 when unshifted).
    pub shift_magnitude: f64,
    ground_truth: Option<Arc<LabelMask>>,
    maps: OnceLock<Arc<OracleMaps>>,
}

impl CaseContext {
    pub fn new(case_id: u64, seed: u64) -> Self {
        Self { case_id, seed, shift_magnitude: 0.0, ground_truth: None, maps: OnceLock::new() }
    }

    pub fn with_truth(mut self, truth: Arc<LabelMask>) -> Self {
        self.ground_truth = Some(truth);
        self.maps = OnceLock::new();
        self
    }

    pub fn with_shift(mut self, magnitude: f64) -> Self {
        self.shift_magnitude = magnitude;
        self
    }

    pub fn ground_truth(&self) -> Option<&Arc<LabelMask>> {
        self.ground_truth.as_ref()
    }

    fn oracle_maps(&self) -> Result<Arc<OracleMaps>> {
        let truth =
            self.ground_truth.as_ref().ok_or_else(|| Error::invalid("oracle segmenters need the case ground truth"))?;
        Ok(self.maps.get_or_init(|| Arc::new(OracleMaps::new(truth.clone()))).clone())
    }
}

/// A segmenter bound to one case.
pub trait PatchSegmenter: Send {
    /// Predicts the window at `origin` (class fastest, then x, then y),
    /// overwriting `out`.
    fn predict(&mut self, window: &PatchView<'_>, out: &mut Vec<[f32; 3]>) -> Result<()>;

    /// Releases external resources; called once after the last window.
    fn finish(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Binds `spec` to a case.
pub fn instantiate(spec: &SegmenterSpec, ctx: &CaseContext, series: &ImageSeries) -> Result<Box<dyn PatchSegmenter>> {
    spec.validate()?;
    Ok(match &spec.kind {
        SegmenterKind::Oracle => Box::new(Perturbed::new(ctx, spec.model_id, PerturbParams::NONE)?),
        SegmenterKind::PerturbedOracle(p) => Box::new(Perturbed::new(ctx, spec.model_id, *p)?),
        SegmenterKind::Uniform => Box::new(Uniform),
        SegmenterKind::CurveMatching(c) => Box::new(CurveMatcher::new(c.clone(), series)?),
        SegmenterKind::External(e) => Box::new(wire::ExternalSegmenter::spawn(spec.model_id, e, series.n_frames())?),
    })
}

/// Single-window convenience wrapper around [`instantiate`].
pub fn segment_patch(
    spec: &SegmenterSpec,
    window: &PatchView<'_>,
    series: &ImageSeries,
    ctx: &CaseContext,
) -> Result<Vec<[f32; 3]>> {
    let mut seg = instantiate(spec, ctx, series)?;
    let mut out = Vec::new();
    let r = seg.predict(window, &mut out);
    let f = seg.finish();
    r.and(f)?;
    Ok(out)
}

struct Uniform;

impl PatchSegmenter for Uniform {
    fn predict(&mut self, window: &PatchView<'_>, out: &mut Vec<[f32; 3]>) -> Result<()> {
        out.clear();
        out.resize(window.size * window.size, [1.0 / 3.0; 3]);
        Ok(())
    }
}

fn one_hot(c: Class) -> [f32; 3] {
    let mut p = [0.0; 3];
    p[c.index()] = 1.0;
    p
}

/// Ground truth seen through per-window corruption: the myocardium grows or
/// shrinks by a random radius in `±jitter`, and individual labels flip at a
/// fixed rate. Under dataset shift, with `e = sensitivity × magnitude`, the
/// radius range extends by `e` on the shrinking side and the window is
/// displaced by a random integer offset of up to `e / 2` per axis. All
/// draws come from a stream keyed by (seed, case, model, window origin).
const DISPLACEMENT_FRACTION: f64 = 0.5;

struct Perturbed {
    maps: Arc<OracleMaps>,
    params: PerturbParams,
    seed: u64,
    case_id: u64,
    model_id: u32,
    shift_magnitude: f64,
}

impl Perturbed {
    fn new(ctx: &CaseContext, model_id: u32, params: PerturbParams) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            maps: ctx.oracle_maps()?,
            params,
            seed: ctx.seed,
            case_id: ctx.case_id,
            model_id,
            shift_magnitude: ctx.shift_magnitude,
        })
    }
}

impl PatchSegmenter for Perturbed {
    fn predict(&mut self, window: &PatchView<'_>, out: &mut Vec<[f32; 3]>) -> Result<()> {
        let m = &self.maps;
        let (ox, oy) = window.origin;
        let n = window.size;
        if ox + n > m.width || oy + n > m.height {
            return Err(Error::mismatch("window exceeds the ground-truth mask"));
        }
        let p = self.params;
        let origin_code = ((oy as u64) << 32) | ox as u64;
        let mut rng = substream(self.seed, &[DOMAIN_PERTURB, self.case_id, self.model_id as u64, origin_code]);

        let extra = p.shift_sensitivity * self.shift_magnitude;
        let lo = -(p.boundary_jitter_px + extra);
        let hi = p.boundary_jitter_px;
        let radius = if hi > lo { rng.random_range(lo..=hi) as f32 } else { 0.0 };
        let reach = DISPLACEMENT_FRACTION * extra;
        let (dx, dy) = if reach > 0.0 {
            (rng.random_range(-reach..=reach).round() as isize, rng.random_range(-reach..=reach).round() as isize)
        } else {
            (0, 0)
        };

        out.clear();
        out.reserve(n * n);
        let clampi = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
        for y in 0..n {
            let sy = clampi((oy + y) as isize - dy, m.height);
            for x in 0..n {
                let sx = clampi((ox + x) as isize - dx, m.width);
                out.push(one_hot(m.label(sx, sy, radius)));
            }
        }

        let rate = p.label_noise_rate;
        if rate > 0.0 {
            // geometric gaps between flipped pixels
            let log_keep = (1.0 - rate).ln();
            let mut i = 0usize;
            loop {
                if rate < 1.0 {
                    let u: f64 = 1.0 - rng.random::<f64>();
                    let gap = (u.ln() / log_keep).floor();
                    if !gap.is_finite() || gap >= (out.len() - i) as f64 {
                        break;
                    }
                    i += gap as usize;
                }
                if i >= out.len() {
                    break;
                }
                let cur = out[i].iter().position(|&v| v == 1.0).unwrap_or(0);
                let step = if rng.random::<bool>() { 1 } else { 2 };
                out[i] = one_hot(Class::ALL[(cur + step) % 3]);
                i += 1;
            }
        }
        Ok(())
    }
}

/// Class scores from the distance of a time curve to each prototype:
/// `softmax(-d_c / temperature)` with
/// `d_c = rms(scale · curve - prototype_c) / scale_sd`.
pub fn curve_match_probs(curve: &[f32], scale: f64, params: &CurveMatchParams) -> [f32; 3] {
    let t = curve.len() as f64;
    let mut d2 = [0.0f64; 3];
    for (c, proto) in params.prototypes.iter().enumerate() {
        d2[c] = curve.iter().zip(proto).map(|(&v, &p)| (scale * v as f64 - p as f64).powi(2)).sum::<f64>() / t;
    }
    softmax_from_d2(d2, params.scale_sd(), params.temperature)
}

fn softmax_from_d2(d2: [f64; 3], sd: f64, temperature: f64) -> [f32; 3] {
    let logits = d2.map(|v| -(v.max(0.0).sqrt() / sd) / temperature);
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.map(|l| (l - m).exp());
    let s: f64 = e.iter().sum();
    let p = e.map(|v| v / s);
    // keep the sum within f32 rounding of one
    let (p0, p2) = (p[0] as f32, p[2] as f32);
    [p0, ((1.0 - p[0] - p[2]).max(0.0)) as f32, p2]
}

/// Scale factor applied to a window's curves, from the peak over time of
/// the window's spatial mean intensity.
pub fn window_scale(params: &CurveMatchParams, window_peak: f64) -> f64 {
    match params.reference_level {
        Some(r) if window_peak > 0.0 => r / window_peak,
        _ => 1.0,
    }
}

/// Curve matching with per-pixel moments precomputed once per case, so each
/// window costs O(window area).
struct CurveMatcher {
    params: CurveMatchParams,
    sd: f64,
    width: usize,
    n_frames: usize,
    /// Σ x², Σ x·p_c per pixel.
    sxx: Vec<f64>,
    sxp: Vec<[f64; 3]>,
    spp: [f64; 3],
    /// Summed-area table of per-pixel temporal sums, (w+1)×(h+1).
    sat: Vec<f64>,
}

impl CurveMatcher {
    fn new(params: CurveMatchParams, series: &ImageSeries) -> Result<Self> {
        params.validate()?;
        let (w, h, t) = (series.width(), series.height(), series.n_frames());
        if params.prototypes[0].len() != t {
            return Err(Error::mismatch(format!(
                "prototype length {} differs from series length {t}",
                params.prototypes[0].len()
            )));
        }
        let mut sxx = vec![0.0; w * h];
        let mut sxp = vec![[0.0; 3]; w * h];
        for f in 0..t {
            let frame = series.frame(f);
            let pf = [params.prototypes[0][f] as f64, params.prototypes[1][f] as f64, params.prototypes[2][f] as f64];
            for (i, &v) in frame.iter().enumerate() {
                let v = v as f64;
                sxx[i] += v * v;
                for c in 0..3 {
                    sxp[i][c] += v * pf[c];
                }
            }
        }
        let spp = [0, 1, 2].map(|c| params.prototypes[c].iter().map(|&p| (p as f64).powi(2)).sum());
        let w1 = w + 1;
        let mut sat = vec![0.0; t * w1 * (h + 1)];
        for f in 0..t {
            let frame = series.frame(f);
            let table = &mut sat[f * w1 * (h + 1)..(f + 1) * w1 * (h + 1)];
            for y in 0..h {
                let mut row = 0.0;
                for x in 0..w {
                    row += frame[y * w + x] as f64;
                    table[(y + 1) * w1 + x + 1] = table[y * w1 + x + 1] + row;
                }
            }
        }
        let sd = params.scale_sd();
        Ok(Self { params, sd, width: w, n_frames: t, sxx, sxp, spp, sat })
    }

    /// Peak over time of the window's spatial mean.
    fn window_peak(&self, origin: (usize, usize), n: usize) -> f64 {
        let w1 = self.width + 1;
        let plane = self.sat.len() / self.n_frames;
        let (x0, y0, x1, y1) = (origin.0, origin.1, origin.0 + n, origin.1 + n);
        let mut peak = f64::NEG_INFINITY;
        for f in 0..self.n_frames {
            let t = &self.sat[f * plane..(f + 1) * plane];
            let s = t[y1 * w1 + x1] - t[y0 * w1 + x1] - t[y1 * w1 + x0] + t[y0 * w1 + x0];
            peak = peak.max(s);
        }
        peak / (n * n) as f64
    }
}

impl PatchSegmenter for CurveMatcher {
    fn predict(&mut self, window: &PatchView<'_>, out: &mut Vec<[f32; 3]>) -> Result<()> {
        if window.n_frames() != self.n_frames {
            return Err(Error::mismatch("window length differs from prototypes"));
        }
        let n = window.size;
        let a = window_scale(&self.params, self.window_peak(window.origin, n));
        let t = self.n_frames as f64;
        out.clear();
        out.reserve(n * n);
        for y in 0..n {
            let row = (window.origin.1 + y) * self.width + window.origin.0;
            for x in 0..n {
                let i = row + x;
                let d2 = [0, 1, 2].map(|c| (a * a * self.sxx[i] - 2.0 * a * self.sxp[i][c] + self.spp[c]) / t);
                out.push(softmax_from_d2(d2, self.sd, self.params.temperature));
            }
        }
        Ok(())
    }
}

/// Reference evaluation of one window straight from the window samples;
/// the external backend uses the same routine.
pub fn curve_match_window(data: &[f32], size: usize, n_frames: usize, params: &CurveMatchParams) -> Vec<[f32; 3]> {
    let plane = size * size;
    let peak = (0..n_frames)
        .map(|t| data[t * plane..(t + 1) * plane].iter().map(|&v| v as f64).sum::<f64>() / plane as f64)
        .fold(f64::NEG_INFINITY, f64::max);
    let a = window_scale(params, peak);
    let mut curve = vec![0.0f32; n_frames];
    (0..size * size)
        .map(|i| {
            for (t, c) in curve.iter_mut().enumerate() {
                *c = data[t * size * size + i];
            }
            curve_match_probs(&curve, a, params)
        })
        .collect()
}
