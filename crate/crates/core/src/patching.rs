//! Sliding space-time patches, recombination of patch predictions, and the
//! pixel-wise uncertainty map.
//!
//! A grid of square windows slides over the image; every window spans all
//! frames. Each pixel `(x, y)` is covered by the set `Γ(x, y)` of windows
//! that contain it. Recombination averages the per-patch class
//! probabilities over `Γ(x, y)`; the uncertainty map is the population
//! standard deviation of the myocardium probability over the same set.
//!
//! All reductions run in ascending patch index, so results are bit-identical
//! regardless of how the predictions were produced.

use std::io::Write;

use crate::error::{Error, Result};
use crate::types::{Class, ClassProbabilityMap, ImageSeries, LabelMask, UncertaintyMap, U_PP_SENTINEL};

/// Sliding-window geometry over an `image_w × image_h` frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    pub image_h: usize,
    pub image_w: usize,
    pub patch: usize,
    pub stride: usize,
    xs: Vec<usize>,
    ys: Vec<usize>,
}

fn axis_starts(dim: usize, patch: usize, stride: usize) -> Vec<usize> {
    let last = dim - patch;
    let mut starts: Vec<usize> = (0..=last).step_by(stride).collect();
    if *starts.last().unwrap() != last {
        starts.push(last);
    }
    starts
}

impl PatchGrid {
    pub fn new(h: usize, w: usize, patch: usize, stride: usize) -> Result<Self> {
        if patch == 0 || patch > h.min(w) {
            return Err(Error::invalid(format!("patch size {patch} does not fit a {w}x{h} image")));
        }
        if stride == 0 || stride > patch {
            return Err(Error::invalid(format!("stride {stride} must be in 1..={patch}")));
        }
        Ok(Self {
            image_h: h,
            image_w: w,
            patch,
            stride,
            xs: axis_starts(w, patch, stride),
            ys: axis_starts(h, patch, stride),
        })
    }

    pub fn len(&self) -> usize {
        self.xs.len() * self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of windows along x and y.
    pub fn shape(&self) -> (usize, usize) {
        (self.xs.len(), self.ys.len())
    }

    /// Top-left corner `(x0, y0)` of window `i` (row-major).
    pub fn origin(&self, i: usize) -> (usize, usize) {
        (self.xs[i % self.xs.len()], self.ys[i / self.xs.len()])
    }

    pub fn origins(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.len()).map(move |i| self.origin(i))
    }

    /// Index of the window with the given origin, if it belongs to the grid.
    pub fn index_of(&self, origin: (usize, usize)) -> Option<usize> {
        let ix = self.xs.binary_search(&origin.0).ok()?;
        let iy = self.ys.binary_search(&origin.1).ok()?;
        Some(iy * self.xs.len() + ix)
    }

    /// `Γ(x, y)`: indices of all windows containing the pixel, ascending.
    pub fn coverage(&self, x: usize, y: usize) -> Vec<usize> {
        let nx = self.xs.len();
        let mut out = Vec::new();
        for (iy, &y0) in self.ys.iter().enumerate() {
            if y < y0 || y >= y0 + self.patch {
                continue;
            }
            for (ix, &x0) in self.xs.iter().enumerate() {
                if x >= x0 && x < x0 + self.patch {
                    out.push(iy * nx + ix);
                }
            }
        }
        out
    }

    /// `|Γ(x, y)|` for every pixel.
    pub fn coverage_counts(&self) -> Vec<u32> {
        let cx = axis_counts(&self.xs, self.patch, self.image_w);
        let cy = axis_counts(&self.ys, self.patch, self.image_h);
        let mut out = Vec::with_capacity(self.image_w * self.image_h);
        for &ny in &cy {
            for &nx in &cx {
                out.push(nx * ny);
            }
        }
        out
    }

    pub fn check_series(&self, series: &ImageSeries) -> Result<()> {
        if series.width() != self.image_w || series.height() != self.image_h {
            return Err(Error::mismatch(format!(
                "grid built for {}x{}, series is {}x{}",
                self.image_w,
                self.image_h,
                series.width(),
                series.height()
            )));
        }
        Ok(())
    }
}

fn axis_counts(starts: &[usize], patch: usize, dim: usize) -> Vec<u32> {
    let mut c = vec![0u32; dim];
    for &s in starts {
        for v in &mut c[s..s + patch] {
            *v += 1;
        }
    }
    c
}

/// Borrowed space-time window of a series.
#[derive(Debug, Clone, Copy)]
pub struct PatchView<'a> {
    series: &'a ImageSeries,
    pub origin: (usize, usize),
    pub size: usize,
}

impl<'a> PatchView<'a> {
    pub fn new(series: &'a ImageSeries, origin: (usize, usize), size: usize) -> Result<Self> {
        if origin.0 + size > series.width() || origin.1 + size > series.height() {
            return Err(Error::mismatch("patch window exceeds series bounds"));
        }
        Ok(Self { series, origin, size })
    }

    pub fn n_frames(&self) -> usize {
        self.series.n_frames()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, t: usize) -> f32 {
        self.series.get(self.origin.0 + x, self.origin.1 + y, t)
    }

    /// Row of `size` samples at local row `y`, frame `t`.
    pub fn row(&self, y: usize, t: usize) -> &'a [f32] {
        let start = self.series.index(self.origin.0, self.origin.1 + y, t);
        &self.series.data()[start..start + self.size]
    }

    pub fn frame_times_s(&self) -> &'a [f64] {
        self.series.frame_times_s()
    }

    /// Copies the window out (x fastest, then y, then t).
    pub fn to_patch(&self) -> Patch {
        let mut data = Vec::with_capacity(self.size * self.size * self.n_frames());
        for t in 0..self.n_frames() {
            for y in 0..self.size {
                data.extend_from_slice(self.row(y, t));
            }
        }
        Patch { origin: self.origin, size: self.size, n_frames: self.n_frames(), data }
    }
}

/// Owned space-time patch (x fastest, then y, then t).
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub origin: (usize, usize),
    pub size: usize,
    pub n_frames: usize,
    pub data: Vec<f32>,
}

impl Patch {
    #[inline]
    pub fn get(&self, x: usize, y: usize, t: usize) -> f32 {
        self.data[(t * self.size + y) * self.size + x]
    }
}

pub fn extract_patches(series: &ImageSeries, grid: &PatchGrid) -> Result<Vec<Patch>> {
    grid.check_series(series)?;
    grid.origins().map(|o| PatchView::new(series, o, grid.patch).map(|v| v.to_patch())).collect()
}

/// Static class probabilities predicted for one window (x fastest, then y).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPrediction {
    pub patch_index: usize,
    pub size: usize,
    pub probs: Vec<[f32; 3]>,
}

impl PatchPrediction {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        self.probs[y * self.size + x]
    }

    pub fn myo_channel(&self) -> Vec<f32> {
        self.probs.iter().map(|p| p[Class::Myocardium.index()]).collect()
    }
}

fn check_predictions(preds: &[PatchPrediction], grid: &PatchGrid) -> Result<()> {
    if preds.len() != grid.len() {
        return Err(Error::mismatch(format!("{} patch predictions for a grid of {} windows", preds.len(), grid.len())));
    }
    for (i, p) in preds.iter().enumerate() {
        if p.patch_index != i {
            return Err(Error::mismatch(format!("prediction {i} carries patch index {}", p.patch_index)));
        }
        if p.size != grid.patch || p.probs.len() != grid.patch * grid.patch {
            return Err(Error::mismatch(format!("prediction {i} has the wrong patch size")));
        }
    }
    Ok(())
}

/// Streaming per-pixel mean of patch predictions. Predictions must be added in
/// ascending patch index.
#[derive(Debug, Clone)]
pub struct MeanCombiner<'g> {
    grid: &'g PatchGrid,
    sums: Vec<[f64; 3]>,
    next: usize,
}

impl<'g> MeanCombiner<'g> {
    pub fn new(grid: &'g PatchGrid) -> Self {
        Self { grid, sums: vec![[0.0; 3]; grid.image_w * grid.image_h], next: 0 }
    }

    pub fn add(&mut self, index: usize, probs: &[[f32; 3]]) -> Result<()> {
        if index != self.next || index >= self.grid.len() {
            return Err(Error::mismatch(format!("expected patch {}, got {index}", self.next)));
        }
        let p = self.grid.patch;
        if probs.len() != p * p {
            return Err(Error::mismatch("patch prediction size"));
        }
        let (x0, y0) = self.grid.origin(index);
        let w = self.grid.image_w;
        for y in 0..p {
            let dst = &mut self.sums[(y0 + y) * w + x0..(y0 + y) * w + x0 + p];
            for (d, s) in dst.iter_mut().zip(&probs[y * p..(y + 1) * p]) {
                d[0] += s[0] as f64;
                d[1] += s[1] as f64;
                d[2] += s[2] as f64;
            }
        }
        self.next += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<ClassProbabilityMap> {
        if self.next != self.grid.len() {
            return Err(Error::mismatch(format!(
                "only {} of {} patch predictions supplied",
                self.next,
                self.grid.len()
            )));
        }
        let counts = self.grid.coverage_counts();
        let probs = self
            .sums
            .iter()
            .zip(&counts)
            .map(|(s, &n)| {
                let n = n as f64;
                [(s[0] / n) as f32, (s[1] / n) as f32, (s[2] / n) as f32]
            })
            .collect();
        Ok(ClassProbabilityMap::from_raw(self.grid.image_w, self.grid.image_h, probs))
    }
}

/// Mean of the softmax probabilities over `Γ(x, y)`, per class.
pub fn combine_mean(preds: &[PatchPrediction], grid: &PatchGrid) -> Result<ClassProbabilityMap> {
    check_predictions(preds, grid)?;
    let mut c = MeanCombiner::new(grid);
    for p in preds {
        c.add(p.patch_index, &p.probs)?;
    }
    c.finish()
}

/// Majority vote: myocardium where at least half of the covering windows give
/// myocardium probability above 0.5. Other pixels take the larger of the mean
/// background and bloodpool probabilities (background on ties).
pub fn combine_majority(preds: &[PatchPrediction], grid: &PatchGrid) -> Result<LabelMask> {
    check_predictions(preds, grid)?;
    let mean = combine_mean(preds, grid)?;
    let w = grid.image_w;
    let mut votes = vec![0u32; w * grid.image_h];
    let p = grid.patch;
    for pred in preds {
        let (x0, y0) = grid.origin(pred.patch_index);
        for y in 0..p {
            for x in 0..p {
                if pred.probs[y * p + x][Class::Myocardium.index()] > 0.5 {
                    votes[(y0 + y) * w + x0 + x] += 1;
                }
            }
        }
    }
    let counts = grid.coverage_counts();
    let labels = (0..w * grid.image_h)
        .map(|i| {
            if 2 * votes[i] >= counts[i] {
                Class::Myocardium
            } else {
                let [bg, _, bp] = mean.probs()[i];
                if bp > bg {
                    Class::Bloodpool
                } else {
                    Class::Background
                }
            }
        })
        .collect();
    LabelMask::new(w, grid.image_h, labels)
}

/// S-map binarization: myocardium where the mean myocardium probability is at
/// least 0.5, else bloodpool where the mean bloodpool probability is at least
/// 0.5, else background.
pub fn binarize_smap(mean_probs: &ClassProbabilityMap) -> LabelMask {
    let labels = mean_probs
        .probs()
        .iter()
        .map(|p| {
            if p[Class::Myocardium.index()] >= 0.5 {
                Class::Myocardium
            } else if p[Class::Bloodpool.index()] >= 0.5 {
                Class::Bloodpool
            } else {
                Class::Background
            }
        })
        .collect();
    LabelMask::new(mean_probs.width(), mean_probs.height(), labels).expect("shape preserved")
}

/// Uncertainty map from the myocardium channel of each window's prediction.
///
/// `myo(i)` returns the `patch × patch` myocardium probabilities of window
/// `i`. `u(x, y)` is the population standard deviation over `Γ(x, y)`,
/// computed with a two-pass mean/deviation reduction in ascending index.
pub fn umap_from_channels<'a>(
    grid: &PatchGrid,
    myo: impl Fn(usize) -> &'a [f32],
    n_myo: usize,
) -> Result<UncertaintyMap> {
    let (w, h, p) = (grid.image_w, grid.image_h, grid.patch);
    for i in 0..grid.len() {
        if myo(i).len() != p * p {
            return Err(Error::mismatch(format!("myocardium channel {i} has the wrong size")));
        }
    }
    let counts = grid.coverage_counts();
    let mut sums = vec![0.0f64; w * h];
    for i in 0..grid.len() {
        let (x0, y0) = grid.origin(i);
        let ch = myo(i);
        for y in 0..p {
            let dst = &mut sums[(y0 + y) * w + x0..(y0 + y) * w + x0 + p];
            for (d, &s) in dst.iter_mut().zip(&ch[y * p..(y + 1) * p]) {
                *d += s as f64;
            }
        }
    }
    let means: Vec<f64> = sums.iter().zip(&counts).map(|(s, &n)| s / n as f64).collect();
    let mut ss = vec![0.0f64; w * h];
    for i in 0..grid.len() {
        let (x0, y0) = grid.origin(i);
        let ch = myo(i);
        for y in 0..p {
            let row = (y0 + y) * w + x0;
            for x in 0..p {
                let d = ch[y * p + x] as f64 - means[row + x];
                ss[row + x] += d * d;
            }
        }
    }
    let u = ss.iter().zip(&counts).map(|(s, &n)| ((s / n as f64).sqrt().min(0.5)) as f32).collect();
    UncertaintyMap::from_values(w, h, u, n_myo)
}

/// U-map of a full set of predictions, with `n_myo` from the companion S-map.
pub fn compute_umap(preds: &[PatchPrediction], grid: &PatchGrid, n_myo: usize) -> Result<UncertaintyMap> {
    check_predictions(preds, grid)?;
    let channels: Vec<Vec<f32>> = preds.iter().map(|p| p.myo_channel()).collect();
    umap_from_channels(grid, |i| &channels[i], n_myo)
}

/// U-map whose `n_myo` is taken from `binarize_smap(combine_mean(preds))`.
pub fn compute_umap_with_smap(preds: &[PatchPrediction], grid: &PatchGrid) -> Result<UncertaintyMap> {
    let smap = binarize_smap(&combine_mean(preds, grid)?);
    compute_umap(preds, grid, smap.count(Class::Myocardium))
}

/// `(u_pp, u_tot)`: sum of squares (row-major, f64), and that sum divided by
/// `n_myo` (the sentinel when `n_myo` is zero).
pub fn u_metrics_raw(u: &[f32], n_myo: usize) -> (f64, f64) {
    let u_tot: f64 = u.iter().map(|&v| (v as f64) * (v as f64)).sum();
    let u_pp = if n_myo == 0 { U_PP_SENTINEL } else { u_tot / n_myo as f64 };
    (u_pp, u_tot)
}

pub fn u_metrics(umap: &UncertaintyMap) -> (f64, f64) {
    u_metrics_raw(&umap.u, umap.n_myo)
}

/// Writes a U-map as binary 16-bit PGM, mapping `u ∈ [0, 0.5]` linearly onto
/// `[0, 65535]` (big-endian samples).
pub fn write_umap_pgm<W: Write>(umap: &UncertaintyMap, mut w: W) -> Result<()> {
    write!(w, "P5\n{} {}\n65535\n", umap.width, umap.height)?;
    let mut buf = Vec::with_capacity(umap.u.len() * 2);
    for &v in &umap.u {
        let s = ((v as f64 / 0.5).clamp(0.0, 1.0) * 65535.0).round() as u16;
        buf.extend_from_slice(&s.to_be_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(index: usize, size: usize, f: impl Fn(usize, usize) -> [f32; 3]) -> PatchPrediction {
        let mut probs = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                probs.push(f(x, y));
            }
        }
        PatchPrediction { patch_index: index, size, probs }
    }

    fn myo(p: f32) -> [f32; 3] {
        [1.0 - p, p, 0.0]
    }

    #[test]
    fn grid_128_64_32() {
        let g = PatchGrid::new(128, 128, 64, 32).unwrap();
        assert_eq!(g.len(), 9);
        let origins: Vec<_> = g.origins().collect();
        assert_eq!(origins[0], (0, 0));
        assert_eq!(origins[1], (32, 0));
        assert_eq!(origins[2], (64, 0));
        assert_eq!(origins[3], (0, 32));
        assert_eq!(origins[8], (64, 64));
    }

    #[test]
    fn grid_128_64_2() {
        let g = PatchGrid::new(128, 128, 64, 2).unwrap();
        assert_eq!(g.shape(), (33, 33));
        assert_eq!(g.len(), 1089);
    }

    #[test]
    fn grid_single_patch() {
        let g = PatchGrid::new(64, 64, 64, 32).unwrap();
        assert_eq!(g.origins().collect::<Vec<_>>(), vec![(0, 0)]);
    }

    #[test]
    fn grid_appends_edge_aligned_origin() {
        let g = PatchGrid::new(100, 70, 64, 32).unwrap();
        let (nx, ny) = g.shape();
        assert_eq!(nx, 2); // 0, 6
        assert_eq!(ny, 3); // 0, 32, 36
        assert_eq!(g.origin(1), (6, 0));
        assert_eq!(g.origin(5), (6, 36));
        assert!(g.coverage_counts().iter().all(|&c| c >= 1));
    }

    #[test]
    fn grid_rejects_bad_geometry() {
        assert!(PatchGrid::new(32, 128, 64, 32).is_err());
        assert!(PatchGrid::new(128, 128, 64, 0).is_err());
        assert!(PatchGrid::new(128, 128, 64, 65).is_err());
    }

    #[test]
    fn coverage_matches_counts() {
        let g = PatchGrid::new(20, 17, 8, 3).unwrap();
        let counts = g.coverage_counts();
        for y in 0..20 {
            for x in 0..17 {
                assert_eq!(g.coverage(x, y).len() as u32, counts[y * 17 + x]);
            }
        }
    }

    #[test]
    fn two_point_mean() {
        // 2x1 windows of width 2 over a 3-wide image: pixel x=1 is covered twice.
        let g = PatchGrid::new(2, 3, 2, 1).unwrap();
        assert_eq!(g.len(), 2);
        let preds = vec![pred(0, 2, |_, _| myo(0.2)), pred(1, 2, |_, _| myo(0.8))];
        let m = combine_mean(&preds, &g).unwrap();
        assert!((m.get(1, 0)[1] - 0.5).abs() < 1e-7);
        assert!((m.get(0, 0)[1] - 0.2).abs() < 1e-7);
    }

    #[test]
    fn mean_of_constants_is_constant() {
        let g = PatchGrid::new(16, 16, 8, 4).unwrap();
        let v = [0.25, 0.5, 0.25];
        let preds: Vec<_> = (0..g.len()).map(|i| pred(i, 8, |_, _| v)).collect();
        let m = combine_mean(&preds, &g).unwrap();
        assert!(m.probs().iter().all(|p| *p == v));
    }

    #[test]
    fn missing_or_extra_predictions_rejected() {
        let g = PatchGrid::new(16, 16, 8, 8).unwrap();
        let mut preds: Vec<_> = (0..g.len()).map(|i| pred(i, 8, |_, _| myo(0.1))).collect();
        preds.pop();
        assert!(combine_mean(&preds, &g).is_err());
        preds.push(pred(3, 8, |_, _| myo(0.1)));
        preds.push(pred(4, 8, |_, _| myo(0.1)));
        assert!(combine_mean(&preds, &g).is_err());
        assert!(compute_umap(&preds, &g, 1).is_err());
    }

    #[test]
    fn majority_half_counts() {
        // 4 windows covering the centre pixel of a 3x3 image with 2x2 windows.
        let g = PatchGrid::new(3, 3, 2, 1).unwrap();
        assert_eq!(g.coverage(1, 1).len(), 4);
        let ps = [0.6, 0.6, 0.4, 0.4];
        let preds: Vec<_> = (0..4).map(|i| pred(i, 2, |_, _| myo(ps[i]))).collect();
        let m = combine_majority(&preds, &g).unwrap();
        assert_eq!(m.get(1, 1), Class::Myocardium);

        let preds: Vec<_> = (0..4).map(|i| pred(i, 2, |_, _| myo(0.45))).collect();
        let m = combine_majority(&preds, &g).unwrap();
        assert!(m.labels().iter().all(|&c| c == Class::Background));
    }

    #[test]
    fn majority_single_cover() {
        let g = PatchGrid::new(2, 2, 2, 1).unwrap();
        let m = combine_majority(&[pred(0, 2, |_, _| myo(0.51))], &g).unwrap();
        assert!(m.labels().iter().all(|&c| c == Class::Myocardium));
    }

    #[test]
    fn majority_fallback_uses_mean_argmax() {
        let g = PatchGrid::new(2, 2, 2, 1).unwrap();
        let m = combine_majority(&[pred(0, 2, |_, _| [0.3, 0.2, 0.5])], &g).unwrap();
        assert_eq!(m.get(0, 0), Class::Bloodpool);
    }

    #[test]
    fn smap_thresholds() {
        let m = ClassProbabilityMap::new(3, 1, vec![[0.5, 0.5, 0.0], [0.6, 0.2, 0.2], [0.2, 0.2, 0.6]]).unwrap();
        let s = binarize_smap(&m);
        assert_eq!(s.labels(), &[Class::Myocardium, Class::Background, Class::Bloodpool]);
    }

    #[test]
    fn umap_consensus_is_zero() {
        let g = PatchGrid::new(3, 3, 2, 1).unwrap();
        let preds: Vec<_> = (0..4).map(|i| pred(i, 2, |_, _| myo(0.7))).collect();
        let u = compute_umap(&preds, &g, 4).unwrap();
        assert!(u.u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn umap_half_ones_half_zeros_is_max() {
        let g = PatchGrid::new(3, 3, 2, 1).unwrap();
        let ps = [1.0, 1.0, 0.0, 0.0];
        let preds: Vec<_> = (0..4).map(|i| pred(i, 2, |_, _| myo(ps[i]))).collect();
        let u = compute_umap(&preds, &g, 1).unwrap();
        assert_eq!(u.get(1, 1), 0.5);
        // corner pixels are covered once
        assert_eq!(u.get(0, 0), 0.0);
    }

    #[test]
    fn umap_three_point_population_std() {
        let g = PatchGrid::new(1, 3, 1, 1).unwrap();
        // pixel-wide windows never overlap; use 3 windows of width 3 over a 5-wide row instead
        assert_eq!(g.len(), 3);
        let g = PatchGrid::new(3, 5, 3, 1).unwrap();
        assert_eq!(g.coverage(2, 0).len(), 3);
        let ps = [0.2f32, 0.5, 0.8];
        let preds: Vec<_> = (0..3).map(|i| pred(i, 3, |_, _| myo(ps[i]))).collect();
        let u = compute_umap(&preds, &g, 1).unwrap();
        let oracle = {
            let m = ps.iter().map(|&v| v as f64).sum::<f64>() / 3.0;
            (ps.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / 3.0).sqrt()
        };
        assert!((oracle - 0.06f64.sqrt()).abs() < 1e-7);
        assert!((u.get(2, 1) as f64 - 0.244_948_97).abs() < 1e-6);
    }

    #[test]
    fn metrics_formulas() {
        let u = UncertaintyMap::from_values(2, 2, vec![0.0; 4], 50).unwrap();
        assert_eq!(u_metrics(&u), (0.0, 0.0));
        let u = UncertaintyMap::from_values(2, 2, vec![0.5, 0.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(u_metrics(&u), (0.25, 0.25));
        let u = UncertaintyMap::from_values(2, 2, vec![0.5, 0.0, 0.0, 0.0], 0).unwrap();
        assert_eq!(u.u_pp, U_PP_SENTINEL);
        assert_eq!(u.u_tot, 0.25);
    }

    #[test]
    fn u_pp_decreases_with_n_myo() {
        let vals = vec![0.1f32, 0.3, 0.2, 0.0];
        let a = u_metrics_raw(&vals, 3);
        let b = u_metrics_raw(&vals, 4);
        assert_eq!(a.1, b.1);
        assert!(b.0 < a.0);
    }

    #[test]
    fn extract_single_origin_is_identity() {
        let s = ImageSeries::from_fn(4, 4, 3, 1.0, |x, y, t| (x + 4 * y + 16 * t) as f32).unwrap();
        let g = PatchGrid::new(4, 4, 4, 2).unwrap();
        let p = extract_patches(&s, &g).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].data, s.data());
    }

    #[test]
    fn extract_corner_codes_origin() {
        let s = ImageSeries::from_fn(128, 128, 2, 1.0, |x, y, _| (x * 1000 + y) as f32).unwrap();
        let g = PatchGrid::new(128, 128, 64, 32).unwrap();
        let patches = extract_patches(&s, &g).unwrap();
        assert_eq!(patches.len(), 9);
        for (p, (x0, y0)) in patches.iter().zip(g.origins()) {
            assert_eq!(p.get(0, 0, 1), (x0 * 1000 + y0) as f32);
            assert_eq!(p.origin, (x0, y0));
        }
        // overlap between windows 0 and 1 is bit-identical
        for t in 0..2 {
            for y in 0..64 {
                for x in 32..64 {
                    assert_eq!(patches[0].get(x, y, t).to_bits(), patches[1].get(x - 32, y, t).to_bits());
                }
            }
        }
    }

    #[test]
    fn extract_rejects_mismatched_grid() {
        let s = ImageSeries::from_fn(64, 64, 1, 1.0, |_, _, _| 0.0).unwrap();
        let g = PatchGrid::new(128, 128, 64, 32).unwrap();
        assert!(extract_patches(&s, &g).is_err());
    }

    #[test]
    fn pgm_header_and_scaling() {
        let u = UncertaintyMap::from_values(2, 1, vec![0.5, 0.25], 1).unwrap();
        let mut buf = Vec::new();
        write_umap_pgm(&u, &mut buf).unwrap();
        let header = b"P5\n2 1\n65535\n";
        assert_eq!(&buf[..header.len()], header);
        assert_eq!(&buf[header.len()..], &[0xff, 0xff, 0x80, 0x00]);
    }
}
