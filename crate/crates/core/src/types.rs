//! Shared domain types.
//!
//! Image-like data is stored row-major with `x` fastest: a series of
//! `width × height × n_frames` samples is indexed as `(t * height + y) * width + x`.
//! All types are plain values; cloning yields an independent copy.

use crate::error::{Error, Result};

/// Segmentation class of a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
#[repr(u8)]
pub enum Class {
    #[default]
    Background = 0,
    Myocardium = 1,
    Bloodpool = 2,
}

impl Class {
    pub const ALL: [Class; 3] = [Class::Background, Class::Myocardium, Class::Bloodpool];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: u8) -> Result<Class> {
        match code {
            0 => Ok(Class::Background),
            1 => Ok(Class::Myocardium),
            2 => Ok(Class::Bloodpool),
            other => Err(Error::InvalidLabel(other)),
        }
    }
}

/// A dynamic 2D+time scalar image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSeries {
    width: usize,
    height: usize,
    n_frames: usize,
    spacing_mm: (f64, f64),
    frame_times_s: Vec<f64>,
    data: Vec<f32>,
}

impl ImageSeries {
    pub fn new(
        width: usize,
        height: usize,
        spacing_mm: (f64, f64),
        frame_times_s: Vec<f64>,
        data: Vec<f32>,
    ) -> Result<Self> {
        let n_frames = frame_times_s.len();
        if width == 0 || height == 0 || n_frames == 0 {
            return Err(Error::invalid("image series dimensions must be at least 1"));
        }
        if frame_times_s.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("frame times must be strictly increasing"));
        }
        if !(spacing_mm.0 > 0.0 && spacing_mm.1 > 0.0) {
            return Err(Error::invalid("pixel spacing must be positive"));
        }
        let expected = width * height * n_frames;
        if data.len() != expected {
            return Err(Error::mismatch(format!("series data has {} samples, expected {expected}", data.len())));
        }
        Ok(Self { width, height, n_frames, spacing_mm, frame_times_s, data })
    }

    /// Builds a series with uniform frame spacing `dt_s` starting at t = 0.
    pub fn from_fn(
        width: usize,
        height: usize,
        n_frames: usize,
        dt_s: f64,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * n_frames);
        for t in 0..n_frames {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(x, y, t));
                }
            }
        }
        let times = (0..n_frames).map(|t| t as f64 * dt_s).collect();
        Self::new(width, height, (1.0, 1.0), times, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn spacing_mm(&self) -> (f64, f64) {
        self.spacing_mm
    }

    pub fn frame_times_s(&self) -> &[f64] {
        &self.frame_times_s
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn with_spacing(mut self, spacing_mm: (f64, f64)) -> Self {
        self.spacing_mm = spacing_mm;
        self
    }

    pub fn frame_len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, t: usize) -> usize {
        (t * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, t: usize) -> f32 {
        self.data[self.index(x, y, t)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, t: usize, v: f32) {
        let i = self.index(x, y, t);
        self.data[i] = v;
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f32] {
        let n = self.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    /// Time-intensity curve of one pixel.
    pub fn curve(&self, x: usize, y: usize) -> Vec<f32> {
        (0..self.n_frames).map(|t| self.get(x, y, t)).collect()
    }

    /// Mean frame spacing in seconds (0 for single-frame series).
    pub fn mean_dt_s(&self) -> f64 {
        if self.n_frames < 2 {
            return 0.0;
        }
        (self.frame_times_s[self.n_frames - 1] - self.frame_times_s[0]) / (self.n_frames - 1) as f64
    }
}

/// Discrete per-pixel segmentation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    labels: Vec<Class>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, labels: Vec<Class>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::mismatch(format!("mask has {} labels, expected {}", labels.len(), width * height)));
        }
        Ok(Self { width, height, labels })
    }

    pub fn filled(width: usize, height: usize, class: Class) -> Self {
        Self { width, height, labels: vec![class; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Class) -> Self {
        let mut labels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                labels.push(f(x, y));
            }
        }
        Self { width, height, labels }
    }

    pub fn from_codes(width: usize, height: usize, codes: &[u8]) -> Result<Self> {
        let labels = codes.iter().map(|&c| Class::from_code(c)).collect::<Result<Vec<_>>>()?;
        Self::new(width, height, labels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[Class] {
        &self.labels
    }

    pub fn codes(&self) -> Vec<u8> {
        self.labels.iter().map(|c| c.code()).collect()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Class {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, class: Class) {
        self.labels[y * self.width + x] = class;
    }

    pub fn count(&self, class: Class) -> usize {
        self.labels.iter().filter(|&&c| c == class).count()
    }

    /// Boolean indicator image of one class.
    pub fn indicator(&self, class: Class) -> Vec<bool> {
        self.labels.iter().map(|&c| c == class).collect()
    }

    pub fn same_shape(&self, other: &LabelMask) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// Per-pixel class probabilities `[background, myocardium, bloodpool]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilityMap {
    width: usize,
    height: usize,
    probs: Vec<[f32; 3]>,
}

/// Tolerance on per-pixel probability sums.
pub const PROB_SUM_TOL: f32 = 1e-6;

impl ClassProbabilityMap {
    pub fn new(width: usize, height: usize, probs: Vec<[f32; 3]>) -> Result<Self> {
        if probs.len() != width * height {
            return Err(Error::mismatch(format!(
                "probability map has {} pixels, expected {}",
                probs.len(),
                width * height
            )));
        }
        let map = Self { width, height, probs };
        map.validate()?;
        Ok(map)
    }

    /// Builds the map without validating probabilities.
    pub(crate) fn from_raw(width: usize, height: usize, probs: Vec<[f32; 3]>) -> Self {
        debug_assert_eq!(probs.len(), width * height);
        Self { width, height, probs }
    }

    pub fn uniform(width: usize, height: usize) -> Self {
        Self { width, height, probs: vec![[1.0 / 3.0; 3]; width * height] }
    }

    pub fn one_hot(mask: &LabelMask) -> Self {
        let probs = mask
            .labels()
            .iter()
            .map(|c| {
                let mut p = [0.0; 3];
                p[c.index()] = 1.0;
                p
            })
            .collect();
        Self { width: mask.width(), height: mask.height(), probs }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.probs.iter().enumerate() {
            if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!("probability out of [0,1] at pixel {i}: {p:?}")));
            }
            let sum: f32 = p.iter().sum();
            if (sum - 1.0).abs() > PROB_SUM_TOL * 4.0 {
                return Err(Error::invalid(format!("probabilities at pixel {i} sum to {sum}")));
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn probs(&self) -> &[[f32; 3]] {
        &self.probs
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        self.probs[y * self.width + x]
    }

    pub fn channel(&self, class: Class) -> Vec<f32> {
        self.probs.iter().map(|p| p[class.index()]).collect()
    }
}

/// Pixel-wise uncertainty together with its scalar summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f32>,
    pub n_myo: usize,
    pub u_pp: f64,
    pub u_tot: f64,
}

/// `u_pp` of a solution with no myocardial pixels. Orders above every finite value.
pub const U_PP_SENTINEL: f64 = f64::INFINITY;

impl UncertaintyMap {
    /// Wraps a raw map and fills `u_tot`/`u_pp` from it.
    pub fn from_values(width: usize, height: usize, u: Vec<f32>, n_myo: usize) -> Result<Self> {
        if u.len() != width * height {
            return Err(Error::mismatch("uncertainty map size"));
        }
        let (u_pp, u_tot) = crate::patching::u_metrics_raw(&u, n_myo);
        Ok(Self { width, height, u, n_myo, u_pp, u_tot })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.u[y * self.width + x]
    }
}

/// One pool member's output for one case.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationSolution {
    pub model_id: u32,
    pub mean_probs: ClassProbabilityMap,
    pub mask: LabelMask,
    pub umap: UncertaintyMap,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_rejects_non_increasing_times() {
        let r = ImageSeries::new(1, 1, (1.0, 1.0), vec![0.0, 0.0], vec![0.0, 0.0]);
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn series_index_is_x_fastest() {
        let s = ImageSeries::from_fn(3, 2, 2, 1.0, |x, y, t| (x + 10 * y + 100 * t) as f32).unwrap();
        assert_eq!(s.data()[1], 1.0);
        assert_eq!(s.data()[3], 10.0);
        assert_eq!(s.data()[6], 100.0);
        assert_eq!(s.get(2, 1, 1), 112.0);
    }

    #[test]
    fn clone_is_independent() {
        let a = LabelMask::filled(2, 2, Class::Background);
        let mut b = a.clone();
        b.set(0, 0, Class::Myocardium);
        assert_eq!(a.get(0, 0), Class::Background);

        let s = ImageSeries::from_fn(2, 2, 1, 1.0, |_, _, _| 1.0).unwrap();
        let mut s2 = s.clone();
        s2.set(0, 0, 0, 5.0);
        assert_eq!(s.get(0, 0, 0), 1.0);
    }

    #[test]
    fn label_codes_roundtrip_and_reject_unknown() {
        for c in Class::ALL {
            assert_eq!(Class::from_code(c.code()).unwrap(), c);
        }
        assert!(matches!(Class::from_code(3), Err(Error::InvalidLabel(3))));
    }

    #[test]
    fn probability_map_validation() {
        assert!(ClassProbabilityMap::new(1, 1, vec![[0.2, 0.3, 0.5]]).is_ok());
        assert!(ClassProbabilityMap::new(1, 1, vec![[0.2, 0.3, 0.6]]).is_err());
        assert!(ClassProbabilityMap::new(1, 1, vec![[-0.1, 0.6, 0.5]]).is_err());
    }
}
