//! Synthetic first-pass perfusion phantoms, dataset-shift transforms, frame
//! corruption, and cohort generation.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::metrics::rv_centroid;
use crate::rng::{substream, Rng, DOMAIN_COHORT, DOMAIN_MOCO, DOMAIN_NOISE, DOMAIN_PHANTOM, DOMAIN_SHIFT};
use crate::tensor::Tensor;
use crate::types::{Class, ImageSeries, LabelMask};

/// Peak-normalised gamma variate `A (τ/(αβ))^α exp(α - τ/β)` for
/// `τ = t - onset > 0`, zero before onset. The peak value `A` is reached at
/// `τ = αβ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaVariate {
    pub amplitude: f64,
    pub onset_s: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl GammaVariate {
    pub fn eval(&self, t: f64) -> f64 {
        let tau = t - self.onset_s;
        if tau <= 0.0 {
            return 0.0;
        }
        let tp = self.alpha * self.beta;
        self.amplitude * (tau / tp).powf(self.alpha) * (self.alpha - tau / self.beta).exp()
    }

    pub fn peak_time_s(&self) -> f64 {
        self.onset_s + self.alpha * self.beta
    }

    fn valid(&self) -> bool {
        self.amplitude >= 0.0 && self.alpha > 0.0 && self.beta > 0.0 && self.onset_s.is_finite()
    }
}

/// Sector of the myocardium with reduced enhancement (angles in display
/// degrees, counterclockwise from +x).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Defect {
    pub start_deg: f64,
    pub end_deg: f64,
    /// Multiplier applied to the myocardial enhancement.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub width: usize,
    pub height: usize,
    pub n_frames: usize,
    pub dt_s: f64,
    pub spacing_mm: (f64, f64),
    pub lv_center: (f64, f64),
    pub cavity_radius: f64,
    pub wall_thickness: f64,
    pub rv_center: (f64, f64),
    pub rv_radius: f64,
    /// Pre-contrast signal of every tissue.
    pub baseline: f64,
    pub rv_curve: GammaVariate,
    pub lv_curve: GammaVariate,
    pub myo_curve: GammaVariate,
    pub background_curve: GammaVariate,
    pub defects: Vec<Defect>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            n_frames: 30,
            dt_s: 1.0,
            spacing_mm: (1.0, 1.0),
            lv_center: (66.0, 62.0),
            cavity_radius: 14.0,
            wall_thickness: 8.0,
            rv_center: (30.0, 62.0),
            rv_radius: 13.0,
            baseline: 0.08,
            rv_curve: GammaVariate { amplitude: 0.85, onset_s: 2.0, alpha: 3.0, beta: 1.5 },
            lv_curve: GammaVariate { amplitude: 0.8, onset_s: 5.0, alpha: 3.0, beta: 1.8 },
            myo_curve: GammaVariate { amplitude: 0.25, onset_s: 8.0, alpha: 2.5, beta: 3.0 },
            background_curve: GammaVariate { amplitude: 0.04, onset_s: 10.0, alpha: 2.0, beta: 5.0 },
            defects: Vec::new(),
            noise_sigma: 0.01,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.n_frames == 0 || !(self.dt_s > 0.0) {
            return Err(Error::invalid("phantom dimensions and frame spacing must be positive"));
        }
        if !(self.cavity_radius > 0.0 && self.rv_radius > 0.0) {
            return Err(Error::invalid("radii must be positive"));
        }
        if self.wall_thickness < 3.0 {
            return Err(Error::invalid("wall thickness must be at least 3 px"));
        }
        if ![self.rv_curve, self.lv_curve, self.myo_curve, self.background_curve].iter().all(GammaVariate::valid)
            || self.baseline < 0.0
            || self.noise_sigma < 0.0
        {
            return Err(Error::invalid("enhancement curves must be non-negative"));
        }
        let outer = self.outer_radius();
        let (cx, cy) = self.lv_center;
        let inside = |x: f64, y: f64, r: f64| {
            x - r >= 0.0 && y - r >= 0.0 && x + r <= (self.width - 1) as f64 && y + r <= (self.height - 1) as f64
        };
        if !inside(cx, cy, outer + 1.0) || !inside(self.rv_center.0, self.rv_center.1, self.rv_radius + 1.0) {
            return Err(Error::invalid("phantom geometry exceeds the image bounds"));
        }
        Ok(())
    }

    pub fn outer_radius(&self) -> f64 {
        self.cavity_radius + self.wall_thickness
    }

    pub fn frame_time(&self, t: usize) -> f64 {
        t as f64 * self.dt_s
    }

    /// Ground-truth label of pixel `(x, y)`.
    pub fn label_at(&self, x: usize, y: usize) -> Class {
        let (fx, fy) = (x as f64, y as f64);
        let d = ((fx - self.lv_center.0).powi(2) + (fy - self.lv_center.1).powi(2)).sqrt();
        if d < self.cavity_radius {
            Class::Bloodpool
        } else if d < self.outer_radius() {
            Class::Myocardium
        } else if (fx - self.rv_center.0).powi(2) + (fy - self.rv_center.1).powi(2) < self.rv_radius.powi(2) {
            Class::Bloodpool
        } else {
            Class::Background
        }
    }

    fn in_cavity(&self, x: usize, y: usize) -> bool {
        (x as f64 - self.lv_center.0).powi(2) + (y as f64 - self.lv_center.1).powi(2) < self.cavity_radius.powi(2)
    }

    fn defect_scale(&self, x: usize, y: usize) -> f64 {
        let ang = (-(y as f64 - self.lv_center.1)).atan2(x as f64 - self.lv_center.0).to_degrees();
        let mut s = 1.0;
        for d in &self.defects {
            let span = (d.end_deg - d.start_deg).rem_euclid(360.0);
            if (ang - d.start_deg).rem_euclid(360.0) < span {
                s *= d.scale;
            }
        }
        s
    }

    /// Noise-free signal of `(x, y)` at time `t_s`.
    pub fn signal(&self, x: usize, y: usize, t_s: f64) -> f64 {
        let enh = match self.label_at(x, y) {
            Class::Myocardium => self.myo_curve.eval(t_s) * self.defect_scale(x, y),
            Class::Bloodpool if self.in_cavity(x, y) => self.lv_curve.eval(t_s),
            Class::Bloodpool => self.rv_curve.eval(t_s),
            Class::Background => self.background_curve.eval(t_s),
        };
        self.baseline + enh
    }

    /// Noise-free class curves sampled at the frame times, in class order
    /// (background, myocardium, LV bloodpool).
    pub fn class_curves(&self) -> [Vec<f32>; 3] {
        let s = |g: &GammaVariate| -> Vec<f32> {
            (0..self.n_frames).map(|t| (self.baseline + g.eval(self.frame_time(t))) as f32).collect()
        };
        [s(&self.background_curve), s(&self.myo_curve), s(&self.lv_curve)]
    }

    /// End-diastolic counterpart: larger cavity, thinner wall, same curves
    /// and a different noise realisation.
    pub fn diastolic(&self) -> PhantomSpec {
        let mut d = self.clone();
        d.cavity_radius = self.cavity_radius + 4.0;
        d.wall_thickness = (self.wall_thickness - 2.0).max(3.0);
        d.seed = self.seed ^ 0xd1a5_7011c;
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub series: ImageSeries,
    pub truth: LabelMask,
    pub rv_centroid: (f64, f64),
}

pub fn gen_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let truth = LabelMask::from_fn(w, h, |x, y| spec.label_at(x, y));
    let mut series =
        ImageSeries::from_fn(w, h, spec.n_frames, spec.dt_s, |x, y, t| spec.signal(x, y, spec.frame_time(t)) as f32)?
            .with_spacing(spec.spacing_mm);
    if spec.noise_sigma > 0.0 {
        let mut rng = substream(spec.seed, &[DOMAIN_PHANTOM, DOMAIN_NOISE]);
        add_noise(&mut series, spec.noise_sigma, &mut rng);
    }
    let rv = rv_centroid(&truth).ok_or_else(|| Error::invalid("phantom has no right-ventricle blob"))?;
    Ok(Phantom { series, truth, rv_centroid: rv })
}

fn add_noise(series: &mut ImageSeries, sigma: f64, rng: &mut Rng) {
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    for v in series.data_mut() {
        *v += n.sample(rng) as f32;
    }
}

/// Multiplicative smooth surface `1 + amplitude · exp(-d² / 2s²)` centred at
/// `center` (fractions of the image size), with `s = (1 + sigma) · width / 12`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlatField {
    pub sigma: f64,
    pub amplitude: f64,
    pub center: (f64, f64),
}

/// Test-time dataset shift: an affine part applied to image and mask alike,
/// and photometric parts applied to the image only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftTransform {
    pub rotation_deg: f64,
    pub shear_deg: f64,
    pub translation_px: (f64, f64),
    pub scale: f64,
    pub gamma: Option<f64>,
    pub flatfield: Option<FlatField>,
    pub noise_sigma: f64,
}

impl Default for ShiftTransform {
    fn default() -> Self {
        Self {
            rotation_deg: 0.0,
            shear_deg: 0.0,
            translation_px: (0.0, 0.0),
            scale: 1.0,
            gamma: None,
            flatfield: None,
            noise_sigma: 0.0,
        }
    }
}

pub const MAX_ROTATION_DEG: f64 = 60.0;
pub const MAX_SHEAR_DEG: f64 = 10.0;
pub const MAX_TRANSLATION_PX: f64 = 2.0;
pub const SCALE_RANGE: (f64, f64) = (0.8, 1.2);
pub const GAMMA_RANGE: (f64, f64) = (0.5, 1.5);
pub const MAX_FLATFIELD_SIGMA: f64 = 5.0;
pub const MAX_FLATFIELD_AMPLITUDE: f64 = 0.5;
pub const MAX_SHIFT_NOISE: f64 = 0.03;

impl ShiftTransform {
    pub fn identity() -> Self {
        Self::default()
    }

    /// Draws every parameter uniformly over its range; gamma and flat-field
    /// are each applied with probability 0.5.
    pub fn sample(rng: &mut Rng) -> Self {
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..=hi);
        let rotation_deg = u(-MAX_ROTATION_DEG, MAX_ROTATION_DEG);
        let shear_deg = u(-MAX_SHEAR_DEG, MAX_SHEAR_DEG);
        let translation_px = (u(-MAX_TRANSLATION_PX, MAX_TRANSLATION_PX), u(-MAX_TRANSLATION_PX, MAX_TRANSLATION_PX));
        let scale = u(SCALE_RANGE.0, SCALE_RANGE.1);
        let g = u(GAMMA_RANGE.0, GAMMA_RANGE.1);
        let ff = FlatField {
            sigma: u(0.0, MAX_FLATFIELD_SIGMA),
            amplitude: u(0.0, MAX_FLATFIELD_AMPLITUDE),
            center: (u(0.2, 0.8), u(0.2, 0.8)),
        };
        let noise_sigma = u(0.0, MAX_SHIFT_NOISE);
        let use_gamma = rng.random::<bool>();
        let use_ff = rng.random::<bool>();
        Self {
            rotation_deg,
            shear_deg,
            translation_px,
            scale,
            gamma: use_gamma.then_some(g),
            flatfield: use_ff.then_some(ff),
            noise_sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let within = |v: f64, lo: f64, hi: f64| v.is_finite() && v >= lo && v <= hi;
        let ok = within(self.rotation_deg, -MAX_ROTATION_DEG, MAX_ROTATION_DEG)
            && within(self.shear_deg, -MAX_SHEAR_DEG, MAX_SHEAR_DEG)
            && within(self.translation_px.0, -MAX_TRANSLATION_PX, MAX_TRANSLATION_PX)
            && within(self.translation_px.1, -MAX_TRANSLATION_PX, MAX_TRANSLATION_PX)
            && within(self.scale, SCALE_RANGE.0, SCALE_RANGE.1)
            && self.gamma.is_none_or(|g| within(g, GAMMA_RANGE.0, GAMMA_RANGE.1))
            && self.flatfield.is_none_or(|f| {
                within(f.sigma, 0.0, MAX_FLATFIELD_SIGMA) && within(f.amplitude, 0.0, MAX_FLATFIELD_AMPLITUDE)
            })
            && within(self.noise_sigma, 0.0, f64::MAX);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("shift parameters out of range: {self:?}")))
        }
    }

    /// Each parameter's deviation from identity, normalised by its range
    /// limit, combined as a Euclidean norm.
    pub fn magnitude(&self) -> f64 {
        let t2 = (self.translation_px.0.powi(2) + self.translation_px.1.powi(2)) / (2.0 * MAX_TRANSLATION_PX.powi(2));
        let mut s = (self.rotation_deg / MAX_ROTATION_DEG).powi(2)
            + (self.shear_deg / MAX_SHEAR_DEG).powi(2)
            + t2
            + ((self.scale - 1.0) / 0.2).powi(2)
            + (self.noise_sigma / MAX_SHIFT_NOISE).powi(2);
        if let Some(g) = self.gamma {
            s += (g.ln() / 1.5f64.ln()).powi(2);
        }
        if let Some(f) = self.flatfield {
            s += (f.amplitude / MAX_FLATFIELD_AMPLITUDE).powi(2);
        }
        s.sqrt()
    }

    /// Forward 2×2 linear part: rotation · shear · isotropic scale.
    fn linear(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let k = self.shear_deg.to_radians().tan();
        // R · [[1, k], [0, 1]] · scale
        [[c * self.scale, (c * k - s) * self.scale], [s * self.scale, (s * k + c) * self.scale]]
    }

    fn is_affine_identity(&self) -> bool {
        self.rotation_deg == 0.0 && self.shear_deg == 0.0 && self.translation_px == (0.0, 0.0) && self.scale == 1.0
    }

    /// Maps a source point to its transformed position about the image centre.
    pub fn forward(&self, p: (f64, f64), width: usize, height: usize) -> (f64, f64) {
        let c = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        let m = self.linear();
        let (dx, dy) = (p.0 - c.0, p.1 - c.1);
        (
            c.0 + m[0][0] * dx + m[0][1] * dy + self.translation_px.0,
            c.1 + m[1][0] * dx + m[1][1] * dy + self.translation_px.1,
        )
    }

    fn inverse(&self, q: (f64, f64), width: usize, height: usize) -> (f64, f64) {
        let c = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        let m = self.linear();
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let (dx, dy) = (q.0 - c.0 - self.translation_px.0, q.1 - c.1 - self.translation_px.1);
        (c.0 + (m[1][1] * dx - m[0][1] * dy) / det, c.1 + (-m[1][0] * dx + m[0][0] * dy) / det)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedCase {
    pub series: ImageSeries,
    pub truth: LabelMask,
    pub shift_magnitude: f64,
}

fn bilinear(frame: &[f32], w: usize, h: usize, x: f64, y: f64) -> f32 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let v = |xx: usize, yy: usize| frame[yy * w + xx] as f64;
    let top = v(x0, y0) * (1.0 - fx) + v(x1, y0) * fx;
    let bot = v(x0, y1) * (1.0 - fx) + v(x1, y1) * fx;
    (top * (1.0 - fy) + bot * fy) as f32
}

pub fn apply_shift(series: &ImageSeries, truth: &LabelMask, t: &ShiftTransform, rng: &mut Rng) -> Result<ShiftedCase> {
    t.validate()?;
    let (w, h) = (series.width(), series.height());
    if truth.width() != w || truth.height() != h {
        return Err(Error::mismatch("apply_shift: mask and series differ in size"));
    }
    let mut out = series.clone();
    let mut mask = truth.clone();
    if !t.is_affine_identity() {
        let src: Vec<(f64, f64)> = (0..w * h).map(|i| t.inverse(((i % w) as f64, (i / w) as f64), w, h)).collect();
        for f in 0..series.n_frames() {
            let frame = series.frame(f);
            let dst = out.frame_mut(f);
            for (d, &(sx, sy)) in dst.iter_mut().zip(&src) {
                *d = bilinear(frame, w, h, sx, sy);
            }
        }
        mask = LabelMask::from_fn(w, h, |x, y| {
            let (sx, sy) = src[y * w + x];
            let (rx, ry) = (sx.round(), sy.round());
            if rx < 0.0 || ry < 0.0 || rx > (w - 1) as f64 || ry > (h - 1) as f64 {
                Class::Background
            } else {
                truth.get(rx as usize, ry as usize)
            }
        });
    }
    if let Some(g) = t.gamma {
        for v in out.data_mut() {
            *v = v.signum() * v.abs().powf(g as f32);
        }
    }
    if let Some(ff) = t.flatfield {
        let s = (1.0 + ff.sigma) * w as f64 / 12.0;
        let (cx, cy) = (ff.center.0 * w as f64, ff.center.1 * h as f64);
        let surface: Vec<f32> = (0..w * h)
            .map(|i| {
                let d2 = ((i % w) as f64 - cx).powi(2) + ((i / w) as f64 - cy).powi(2);
                (1.0 + ff.amplitude * (-d2 / (2.0 * s * s)).exp()) as f32
            })
            .collect();
        for f in 0..out.n_frames() {
            for (v, m) in out.frame_mut(f).iter_mut().zip(&surface) {
                *v *= m;
            }
        }
    }
    if t.noise_sigma > 0.0 {
        add_noise(&mut out, t.noise_sigma, rng);
    }
    Ok(ShiftedCase { series: out, truth: mask, shift_magnitude: t.magnitude() })
}

/// First and last frame (inclusive) eligible for replacement.
pub const MOCO_WINDOW: (usize, usize) = (8, 22);

/// Replaces `f` distinct frames drawn from the mid-series window by the
/// matching frames of `diastolic`. Frame times are kept. Returns the series
/// and the replaced frame indices in ascending order.
pub fn moco_corrupt(
    systolic: &ImageSeries,
    diastolic: &ImageSeries,
    f: usize,
    rng: &mut Rng,
) -> Result<(ImageSeries, Vec<usize>)> {
    let n = systolic.n_frames();
    if diastolic.width() != systolic.width() || diastolic.height() != systolic.height() || diastolic.n_frames() != n {
        return Err(Error::mismatch("moco_corrupt: series differ in shape"));
    }
    if f > n {
        return Err(Error::invalid(format!("cannot replace {f} of {n} frames")));
    }
    let lo = MOCO_WINDOW.0.min(n - 1);
    let hi = MOCO_WINDOW.1.min(n - 1);
    let window: Vec<usize> = (lo..=hi).collect();
    if f > window.len() {
        return Err(Error::invalid(format!("cannot replace {f} frames from a window of {}", window.len())));
    }
    let mut chosen: Vec<usize> =
        rand::seq::index::sample(rng, window.len(), f).into_iter().map(|i| window[i]).collect();
    chosen.sort_unstable();
    let mut out = systolic.clone();
    for &t in &chosen {
        out.frame_mut(t).copy_from_slice(diastolic.frame(t));
    }
    Ok((out, chosen))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    None,
    Shifted,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::None => "none",
            Regime::Shifted => "shifted",
        }
    }

    fn code(self) -> u64 {
        match self {
            Regime::None => 0,
            Regime::Shifted => 1,
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Regime::None),
            "shifted" => Ok(Regime::Shifted),
            _ => Err(Error::Parse(format!("unknown regime {s:?}"))),
        }
    }
}

/// Per-case randomised geometry and curves around `base`.
pub fn random_spec(base: &PhantomSpec, rng: &mut Rng) -> PhantomSpec {
    let mut s = base.clone();
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..=hi);
    s.lv_center = (base.lv_center.0 + u(-5.0, 5.0), base.lv_center.1 + u(-5.0, 5.0));
    s.cavity_radius = u(11.0, 16.0);
    s.wall_thickness = u(6.0, 9.0);
    let outer = s.cavity_radius + s.wall_thickness;
    s.rv_radius = u(10.0, 13.0);
    // the RV disk overlaps the ring slightly and is clipped to a crescent
    let overlap = u(1.0, 4.0);
    let ang = u(170.0, 190.0).to_radians();
    let dist = outer + s.rv_radius - overlap;
    s.rv_center = (s.lv_center.0 + dist * ang.cos(), s.lv_center.1 - dist * ang.sin());
    let jitter = |g: GammaVariate, u: &mut dyn FnMut(f64, f64) -> f64| GammaVariate {
        amplitude: g.amplitude * u(0.85, 1.15),
        onset_s: g.onset_s + u(-0.75, 0.75),
        alpha: g.alpha,
        beta: g.beta * u(0.9, 1.1),
    };
    s.rv_curve = jitter(base.rv_curve, &mut u);
    s.lv_curve = jitter(base.lv_curve, &mut u);
    s.myo_curve = jitter(base.myo_curve, &mut u);
    s.noise_sigma = u(0.008, 0.015);
    s
}

/// One generated case, held in memory.
#[derive(Debug, Clone)]
pub struct CohortCase {
    pub id: u64,
    pub seed: u64,
    pub regime: Regime,
    pub spec: PhantomSpec,
    pub series: ImageSeries,
    pub truth: LabelMask,
    pub rv_centroid: (f64, f64),
    pub shift: Option<ShiftTransform>,
    pub shift_magnitude: f64,
}

/// Generates `n` cases with ids `first_id..`. The case with id `id` draws its
/// geometry from the stream `(seed, cohort, regime, id)`, its noise from the
/// spec seed derived from that stream, and its shift from
/// `(seed, shift, regime, id)`.
pub fn gen_cohort(n: usize, base: &PhantomSpec, regime: Regime, seed: u64, first_id: u64) -> Result<Vec<CohortCase>> {
    if n == 0 {
        return Err(Error::invalid("cohort needs at least one case"));
    }
    (0..n as u64)
        .map(|i| {
            let id = first_id + i;
            let mut rng = substream(seed, &[DOMAIN_COHORT, regime.code(), id]);
            let mut spec = random_spec(base, &mut rng);
            spec.seed = rng.random();
            let ph = gen_phantom(&spec)?;
            let (series, truth, rv, shift, mag) = match regime {
                Regime::None => (ph.series, ph.truth, ph.rv_centroid, None, 0.0),
                Regime::Shifted => {
                    let mut srng = substream(seed, &[DOMAIN_SHIFT, regime.code(), id]);
                    let t = ShiftTransform::sample(&mut srng);
                    let sc = apply_shift(&ph.series, &ph.truth, &t, &mut srng)?;
                    let rv = t.forward(ph.rv_centroid, spec.width, spec.height);
                    (sc.series, sc.truth, rv, Some(t), sc.shift_magnitude)
                }
            };
            Ok(CohortCase {
                id,
                seed: spec.seed,
                regime,
                spec,
                series,
                truth,
                rv_centroid: rv,
                shift,
                shift_magnitude: mag,
            })
        })
        .collect()
}

/// MoCo-corruption stream for Monte Carlo run `run` at corruption level `f`.
pub fn moco_stream(seed: u64, f: usize, run: usize) -> Rng {
    substream(seed, &[DOMAIN_MOCO, f as u64, run as u64])
}

pub const MANIFEST_HEADER: [&str; 22] = [
    "id",
    "series_path",
    "gt_path",
    "rv_x",
    "rv_y",
    "regime",
    "rotation_deg",
    "shear_deg",
    "tx",
    "ty",
    "scale",
    "gamma",
    "flatfield_sigma",
    "flatfield_amplitude",
    "flatfield_cx",
    "flatfield_cy",
    "noise_sigma",
    "shift_magnitude",
    "seed",
    "dt_s",
    "spacing_x_mm",
    "spacing_y_mm",
];

/// One manifest row.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: u64,
    pub series_path: PathBuf,
    pub gt_path: PathBuf,
    pub rv_centroid: (f64, f64),
    pub regime: Regime,
    pub shift: Option<ShiftTransform>,
    pub shift_magnitude: f64,
    pub seed: u64,
    pub dt_s: f64,
    pub spacing_mm: (f64, f64),
}

impl ManifestEntry {
    pub fn load(&self, base: &Path) -> Result<(ImageSeries, LabelMask)> {
        let series = Tensor::read_file(base.join(&self.series_path))?.to_series(self.dt_s, self.spacing_mm)?;
        let truth = Tensor::read_file(base.join(&self.gt_path))?.to_mask()?;
        Ok((series, truth))
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x}"))
}

/// Writes series and masks as FPT files plus `manifest.csv` into `dir`.
pub fn write_cohort(dir: &Path, cases: &[CohortCase]) -> Result<Vec<ManifestEntry>> {
    fs::create_dir_all(dir.join("cases"))?;
    let mut w = csv::Writer::from_path(dir.join("manifest.csv"))?;
    w.write_record(MANIFEST_HEADER)?;
    let mut entries = Vec::new();
    for c in cases {
        let sp = PathBuf::from(format!("cases/case{:04}_series.fpt", c.id));
        let gp = PathBuf::from(format!("cases/case{:04}_gt.fpt", c.id));
        Tensor::from(&c.series).write_file(dir.join(&sp))?;
        Tensor::from(&c.truth).write_file(dir.join(&gp))?;
        let t = c.shift.unwrap_or_default();
        let rec = [
            c.id.to_string(),
            sp.display().to_string(),
            gp.display().to_string(),
            format!("{}", c.rv_centroid.0),
            format!("{}", c.rv_centroid.1),
            c.regime.name().to_string(),
            format!("{}", t.rotation_deg),
            format!("{}", t.shear_deg),
            format!("{}", t.translation_px.0),
            format!("{}", t.translation_px.1),
            format!("{}", t.scale),
            opt(t.gamma),
            opt(t.flatfield.map(|f| f.sigma)),
            opt(t.flatfield.map(|f| f.amplitude)),
            opt(t.flatfield.map(|f| f.center.0)),
            opt(t.flatfield.map(|f| f.center.1)),
            format!("{}", t.noise_sigma),
            format!("{}", c.shift_magnitude),
            c.seed.to_string(),
            format!("{}", c.spec.dt_s),
            format!("{}", c.spec.spacing_mm.0),
            format!("{}", c.spec.spacing_mm.1),
        ];
        w.write_record(&rec)?;
        entries.push(ManifestEntry {
            id: c.id,
            series_path: sp,
            gt_path: gp,
            rv_centroid: c.rv_centroid,
            regime: c.regime,
            shift: c.shift,
            shift_magnitude: c.shift_magnitude,
            seed: c.seed,
            dt_s: c.spec.dt_s,
            spacing_mm: c.spec.spacing_mm,
        });
    }
    w.flush()?;
    Ok(entries)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::Parse(format!("{}: unexpected manifest header", path.display())));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|e| Error::Parse(format!("column {}: {e}", MANIFEST_HEADER[i])))
        };
        let of = |i: usize| -> Result<Option<f64>> {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                f(i).map(Some)
            }
        };
        let regime: Regime = rec[5].parse()?;
        let shift = match regime {
            Regime::None => None,
            Regime::Shifted => Some(ShiftTransform {
                rotation_deg: f(6)?,
                shear_deg: f(7)?,
                translation_px: (f(8)?, f(9)?),
                scale: f(10)?,
                gamma: of(11)?,
                flatfield: match (of(12)?, of(13)?, of(14)?, of(15)?) {
                    (Some(sigma), Some(amplitude), Some(cx), Some(cy)) => {
                        Some(FlatField { sigma, amplitude, center: (cx, cy) })
                    }
                    _ => None,
                },
                noise_sigma: f(16)?,
            }),
        };
        out.push(ManifestEntry {
            id: rec[0].parse().map_err(|e| Error::Parse(format!("id: {e}")))?,
            series_path: PathBuf::from(&rec[1]),
            gt_path: PathBuf::from(&rec[2]),
            rv_centroid: (f(3)?, f(4)?),
            regime,
            shift,
            shift_magnitude: f(17)?,
            seed: rec[18].parse().map_err(|e| Error::Parse(format!("seed: {e}")))?,
            dt_s: f(19)?,
            spacing_mm: (f(20)?, f(21)?),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{aha6_split, detect_failure, FailureConfig, RvReference};
    use crate::rng::stream;

    #[test]
    fn default_phantom_is_failure_free_and_complete() {
        let p = gen_phantom(&PhantomSpec::default()).unwrap();
        for c in Class::ALL {
            assert!(p.truth.count(c) > 0);
        }
        let seg = aha6_split(&p.truth, RvReference::Centroid(p.rv_centroid.0, p.rv_centroid.1)).unwrap();
        assert!(!detect_failure(&p.truth, &seg, FailureConfig::default()).failed);
    }

    #[test]
    fn onset_ordering_of_class_means() {
        let spec = PhantomSpec::default();
        let p = gen_phantom(&spec).unwrap();
        let mean_curve = |pred: &dyn Fn(usize, usize) -> bool| -> Vec<f64> {
            (0..spec.n_frames)
                .map(|t| {
                    let (mut s, mut n) = (0.0, 0);
                    for y in 0..spec.height {
                        for x in 0..spec.width {
                            if pred(x, y) {
                                s += p.series.get(x, y, t) as f64;
                                n += 1;
                            }
                        }
                    }
                    s / n as f64
                })
                .collect()
        };
        let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let rv = argmax(&mean_curve(&|x, y| p.truth.get(x, y) == Class::Bloodpool && !spec.in_cavity(x, y)));
        let lv = argmax(&mean_curve(&|x, y| spec.in_cavity(x, y)));
        let myo = argmax(&mean_curve(&|x, y| p.truth.get(x, y) == Class::Myocardium));
        assert!(rv < lv && lv < myo, "{rv} {lv} {myo}");
    }

    #[test]
    fn noiseless_phantom_is_reproducible() {
        let spec = PhantomSpec { noise_sigma: 0.0, ..PhantomSpec::default() };
        assert_eq!(gen_phantom(&spec).unwrap(), gen_phantom(&spec).unwrap());
        let noisy = PhantomSpec { seed: 4, ..PhantomSpec::default() };
        assert_eq!(gen_phantom(&noisy).unwrap(), gen_phantom(&noisy).unwrap());
    }

    #[test]
    fn geometry_out_of_bounds_errors() {
        let spec = PhantomSpec { lv_center: (5.0, 5.0), ..PhantomSpec::default() };
        assert!(gen_phantom(&spec).is_err());
        let thin = PhantomSpec { wall_thickness: 2.0, ..PhantomSpec::default() };
        assert!(gen_phantom(&thin).is_err());
    }

    #[test]
    fn gamma_variate_peaks_at_amplitude() {
        let g = GammaVariate { amplitude: 2.0, onset_s: 1.0, alpha: 3.0, beta: 1.5 };
        assert!((g.eval(g.peak_time_s()) - 2.0).abs() < 1e-12);
        assert_eq!(g.eval(0.5), 0.0);
        assert!(g.eval(g.peak_time_s() - 0.1) < 2.0 && g.eval(g.peak_time_s() + 0.1) < 2.0);
    }

    fn centroid(m: &LabelMask, c: Class) -> (f64, f64) {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for y in 0..m.height() {
            for x in 0..m.width() {
                if m.get(x, y) == c {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1.0;
                }
            }
        }
        (sx / n, sy / n)
    }

    #[test]
    fn identity_shift_is_noop() {
        let p = gen_phantom(&PhantomSpec::default()).unwrap();
        let s = apply_shift(&p.series, &p.truth, &ShiftTransform::identity(), &mut stream(1)).unwrap();
        assert_eq!(s.series, p.series);
        assert_eq!(s.truth, p.truth);
        assert_eq!(s.shift_magnitude, 0.0);
        let g1 = ShiftTransform { gamma: Some(1.0), ..ShiftTransform::identity() };
        let s = apply_shift(&p.series, &p.truth, &g1, &mut stream(1)).unwrap();
        assert_eq!(s.series, p.series);
    }

    #[test]
    fn translation_moves_mask_centroid() {
        let p = gen_phantom(&PhantomSpec::default()).unwrap();
        let t = ShiftTransform { translation_px: (2.0, 0.0), ..ShiftTransform::identity() };
        let s = apply_shift(&p.series, &p.truth, &t, &mut stream(1)).unwrap();
        let a = centroid(&p.truth, Class::Myocardium);
        let b = centroid(&s.truth, Class::Myocardium);
        assert!((b.0 - a.0 - 2.0).abs() < 1e-9 && (b.1 - a.1).abs() < 1e-9);
        assert_eq!(s.series.get(50, 60, 10), p.series.get(48, 60, 10));
    }

    #[test]
    fn inverse_undoes_forward() {
        let t = ShiftTransform {
            rotation_deg: 33.0,
            shear_deg: -7.0,
            translation_px: (1.5, -0.5),
            scale: 0.9,
            ..ShiftTransform::identity()
        };
        let p = (17.0, 90.0);
        let q = t.forward(p, 128, 128);
        let r = t.inverse(q, 128, 128);
        assert!((r.0 - p.0).abs() < 1e-9 && (r.1 - p.1).abs() < 1e-9);
    }

    #[test]
    fn sampled_shifts_are_in_range() {
        let mut rng = stream(99);
        let mut gamma_used = 0;
        for _ in 0..500 {
            let t = ShiftTransform::sample(&mut rng);
            t.validate().unwrap();
            gamma_used += t.gamma.is_some() as usize;
        }
        assert!((200..300).contains(&gamma_used));
    }

    #[test]
    fn moco_replaces_exactly_f_frames() {
        let spec = PhantomSpec::default();
        let sys = gen_phantom(&spec).unwrap().series;
        let dia = gen_phantom(&spec.diastolic()).unwrap().series;
        let (out, idx) = moco_corrupt(&sys, &dia, 0, &mut stream(3)).unwrap();
        assert_eq!(out, sys);
        assert!(idx.is_empty());
        let (out, idx) = moco_corrupt(&sys, &dia, 2, &mut stream(3)).unwrap();
        assert_eq!(idx.len(), 2);
        for t in 0..sys.n_frames() {
            if idx.contains(&t) {
                assert!((MOCO_WINDOW.0..=MOCO_WINDOW.1).contains(&t));
                assert_eq!(out.frame(t), dia.frame(t));
                assert_ne!(out.frame(t), sys.frame(t));
            } else {
                assert_eq!(out.frame(t), sys.frame(t));
            }
        }
        let a = moco_corrupt(&sys, &dia, 4, &mut moco_stream(5, 4, 0)).unwrap().1;
        let b = moco_corrupt(&sys, &dia, 4, &mut moco_stream(5, 4, 0)).unwrap().1;
        assert_eq!(a, b);
        assert!(moco_corrupt(&sys, &dia, 31, &mut stream(3)).is_err());
    }

    #[test]
    fn cohorts_are_reproducible_and_valid() {
        let base = PhantomSpec::default();
        let a = gen_cohort(4, &base, Regime::None, 11, 0).unwrap();
        assert!(a.iter().all(|c| c.shift_magnitude == 0.0 && c.shift.is_none()));
        let b = gen_cohort(4, &base, Regime::Shifted, 11, 0).unwrap();
        for c in &b {
            c.shift.unwrap().validate().unwrap();
            assert!(c.shift_magnitude > 0.0);
            for k in Class::ALL {
                assert!(c.truth.count(k) > 0);
            }
        }
        let again = gen_cohort(4, &base, Regime::Shifted, 11, 0).unwrap();
        for (x, y) in b.iter().zip(&again) {
            assert_eq!(x.series, y.series);
            assert_eq!(x.truth, y.truth);
        }
    }

    #[test]
    fn manifest_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let cases = gen_cohort(2, &PhantomSpec::default(), Regime::Shifted, 3, 10).unwrap();
        let written = write_cohort(dir.path(), &cases).unwrap();
        let read = read_manifest(&dir.path().join("manifest.csv")).unwrap();
        assert_eq!(read.len(), 2);
        for (w, r) in written.iter().zip(&read) {
            assert_eq!(w.id, r.id);
            assert_eq!(w.series_path, r.series_path);
            assert_eq!(w.shift_magnitude, r.shift_magnitude);
            assert_eq!(w.rv_centroid, r.rv_centroid);
            assert_eq!(w.shift, r.shift);
        }
        let (s, m) = read[1].load(dir.path()).unwrap();
        assert_eq!(s.data(), cases[1].series.data());
        assert_eq!(m, cases[1].truth);
    }
}
