//! Conversion of a raw dynamic series into the canonical analysis matrix:
//! 2x bicubic upsampling, ROI crop, monotone cubic temporal resampling and
//! global [0, 1] normalization.

use crate::error::{Error, Result};
use crate::types::ImageSeries;

pub const ROI_SIZE: usize = 128;
pub const N_FRAMES: usize = 30;

/// Catmull-Rom cubic convolution kernel (a = -0.5).
pub fn catmull_rom(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        1.5 * x * x * x - 2.5 * x * x + 1.0
    } else if x < 2.0 {
        -0.5 * x * x * x + 2.5 * x * x - 4.0 * x + 2.0
    } else {
        0.0
    }
}

/// Source taps and weights for each output sample of a 2x upsampling along
/// one axis. Output pixel `i` sits at source coordinate `i / 2 - 0.25`
/// (pixel centres aligned); out-of-range taps clamp to the edge.
fn upsample_taps(n: usize) -> Vec<([usize; 4], [f64; 4])> {
    (0..2 * n)
        .map(|i| {
            let s = i as f64 / 2.0 - 0.25;
            let base = s.floor();
            let mut idx = [0usize; 4];
            let mut wts = [0.0; 4];
            for k in 0..4 {
                let j = base as isize - 1 + k as isize;
                idx[k] = j.clamp(0, n as isize - 1) as usize;
                wts[k] = catmull_rom(s - j as f64);
            }
            (idx, wts)
        })
        .collect()
}

/// Doubles width and height with separable Catmull-Rom interpolation.
pub fn upsample2x(series: &ImageSeries) -> ImageSeries {
    let (w, h) = (series.width(), series.height());
    let (w2, h2) = (2 * w, 2 * h);
    let tx = upsample_taps(w);
    let ty = upsample_taps(h);
    let mut out = Vec::with_capacity(w2 * h2 * series.n_frames());
    let mut tmp = vec![0.0f64; w2 * h];
    for t in 0..series.n_frames() {
        let frame = series.frame(t);
        for y in 0..h {
            let row = &frame[y * w..(y + 1) * w];
            for (x, (idx, wts)) in tx.iter().enumerate() {
                tmp[y * w2 + x] = (0..4).map(|k| wts[k] * row[idx[k]] as f64).sum();
            }
        }
        for (idx, wts) in &ty {
            for x in 0..w2 {
                let v: f64 = (0..4).map(|k| wts[k] * tmp[idx[k] * w2 + x]).sum();
                out.push(v as f32);
            }
        }
    }
    let (dx, dy) = series.spacing_mm();
    ImageSeries::new(w2, h2, (dx / 2.0, dy / 2.0), series.frame_times_s().to_vec(), out)
        .expect("upsampled shape is consistent")
}

/// Per-pixel temporal variance smoothed by a 5x5 box filter (edge-truncated).
pub fn smoothed_variance_map(series: &ImageSeries) -> Vec<f64> {
    let (w, h, n) = (series.width(), series.height(), series.n_frames());
    let mut mean = vec![0.0f64; w * h];
    for t in 0..n {
        for (m, &v) in mean.iter_mut().zip(series.frame(t)) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0f64; w * h];
    for t in 0..n {
        for ((s, &v), m) in var.iter_mut().zip(series.frame(t)).zip(&mean) {
            let d = v as f64 - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= n as f64);

    let mut out = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let (ylo, yhi) = (y.saturating_sub(2), (y + 2).min(h - 1));
            let (xlo, xhi) = (x.saturating_sub(2), (x + 2).min(w - 1));
            let mut acc = 0.0;
            for yy in ylo..=yhi {
                acc += var[yy * w + xlo..=yy * w + xhi].iter().sum::<f64>();
            }
            out[y * w + x] = acc / ((yhi - ylo + 1) * (xhi - xlo + 1)) as f64;
        }
    }
    out
}

/// Pixel maximizing the smoothed temporal variance. A flat maximum resolves
/// to the centroid of the tied pixels.
pub fn locate_roi_center(series: &ImageSeries) -> Result<(usize, usize)> {
    let v = smoothed_variance_map(series);
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    if !(hi - lo > 1e-12 * (1.0 + hi.abs())) {
        return Err(Error::NoRoiSignal);
    }
    // centroid of the maximal plateau
    let w = series.width();
    let (mut sx, mut sy, mut n) = (0usize, 0usize, 0usize);
    for (i, &s) in v.iter().enumerate() {
        if s >= hi - 1e-9 * hi.abs() {
            sx += i % w;
            sy += i / w;
            n += 1;
        }
    }
    Ok(((sx + n / 2) / n, (sy + n / 2) / n))
}

/// Crops a `size × size` window centred on `center` (or the auto-detected
/// ROI), clamped to stay inside the image.
pub fn crop_to_roi(series: &ImageSeries, center: Option<(usize, usize)>, size: usize) -> Result<ImageSeries> {
    let (w, h) = (series.width(), series.height());
    if size == 0 || size > w || size > h {
        return Err(Error::invalid(format!("crop window {size}x{size} exceeds the {w}x{h} image")));
    }
    let (cx, cy) = match center {
        Some(c) => c,
        None => locate_roi_center(series)?,
    };
    let x0 = cx.saturating_sub(size / 2).min(w - size);
    let y0 = cy.saturating_sub(size / 2).min(h - size);
    let mut data = Vec::with_capacity(size * size * series.n_frames());
    for t in 0..series.n_frames() {
        for y in y0..y0 + size {
            let start = series.index(x0, y, t);
            data.extend_from_slice(&series.data()[start..start + size]);
        }
    }
    ImageSeries::new(size, size, series.spacing_mm(), series.frame_times_s().to_vec(), data)
}

/// Shape-preserving piecewise cubic Hermite interpolant (Fritsch-Carlson
/// derivative estimates, as in PCHIP).
#[derive(Debug, Clone)]
pub struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(Error::invalid("monotone cubic needs at least two matching knots"));
        }
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d[0] = delta[0];
            d[1] = delta[0];
            return Ok(Self { x, y, d });
        }
        for k in 1..n - 1 {
            let (a, b) = (delta[k - 1], delta[k]);
            if a * b > 0.0 {
                let w1 = 2.0 * h[k] + h[k - 1];
                let w2 = h[k] + 2.0 * h[k - 1];
                d[k] = (w1 + w2) / (w1 / a + w2 / b);
            }
        }
        d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
        d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        Ok(Self { x, y, d })
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let span = self.x[n - 1] - self.x[0];
        let k = match self.x.binary_search_by(|v| v.total_cmp(&t)) {
            Ok(i) => return self.y[i],
            Err(i) => i,
        };
        // snap to a knot that differs only by rounding
        let tol = 1e-9 * span.abs().max(1.0);
        for j in [k.saturating_sub(1), k.min(n - 1)] {
            if (self.x[j] - t).abs() <= tol {
                return self.y[j];
            }
        }
        let k = k.clamp(1, n - 1) - 1;
        let hk = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / hk;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[k] + h10 * hk * self.d[k] + h01 * self.y[k + 1] + h11 * hk * self.d[k + 1]
    }
}

fn end_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() || m0 == 0.0 {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}

/// Resamples every pixel curve at `n_out` uniform times spanning the first
/// to the last frame time.
pub fn resample_time(series: &ImageSeries, n_out: usize) -> Result<ImageSeries> {
    let n = series.n_frames();
    if n < 4 {
        return Err(Error::invalid(format!("temporal resampling needs at least 4 frames, got {n}")));
    }
    if n_out < 2 {
        return Err(Error::invalid("n_out must be at least 2"));
    }
    let times = series.frame_times_s();
    let (t0, t1) = (times[0], times[n - 1]);
    let out_times: Vec<f64> =
        (0..n_out).map(|k| if k + 1 == n_out { t1 } else { t0 + (t1 - t0) * k as f64 / (n_out - 1) as f64 }).collect();
    let (w, h) = (series.width(), series.height());
    let frame_len = w * h;
    let mut out = vec![0.0f32; frame_len * n_out];
    let mut curve = vec![0.0f64; n];
    for p in 0..frame_len {
        for (t, c) in curve.iter_mut().enumerate() {
            *c = series.data()[t * frame_len + p] as f64;
        }
        let interp = MonotoneCubic::new(times.to_vec(), curve.clone())?;
        for (k, &tk) in out_times.iter().enumerate() {
            out[k * frame_len + p] = interp.eval(tk) as f32;
        }
    }
    ImageSeries::new(w, h, series.spacing_mm(), out_times, out)
}

/// Affine map of the global minimum to 0 and maximum to 1; constant series
/// become all zeros.
pub fn normalize01(series: &ImageSeries) -> ImageSeries {
    let (lo, hi) = series.data().iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mut out = series.clone();
    if !(hi > lo) {
        out.data_mut().iter_mut().for_each(|v| *v = 0.0);
        return out;
    }
    let (lo, range) = (lo as f64, (hi - lo) as f64);
    for v in out.data_mut() {
        *v = (((*v as f64) - lo) / range).clamp(0.0, 1.0) as f32;
    }
    out
}

/// Full pipeline: upsample, crop to the 128x128 ROI, resample to 30 frames,
/// normalize to [0, 1].
pub fn preprocess(series: &ImageSeries, center: Option<(usize, usize)>) -> Result<ImageSeries> {
    let up = upsample2x(series);
    let roi = crop_to_roi(&up, center, ROI_SIZE)?;
    let resampled = resample_time(&roi, N_FRAMES)?;
    Ok(normalize01(&resampled))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gamma_variate(t: f64) -> f64 {
        // peak 1 at t = 13 s (onset 4 s, alpha 3, beta 3)
        let (t0, a, b) = (4.0, 3.0, 3.0);
        if t <= t0 {
            return 0.0;
        }
        let s = (t - t0) / (a * b);
        s.powf(a) * (a * (1.0 - s)).exp()
    }

    #[test]
    fn kernel_basics() {
        assert_eq!(catmull_rom(0.0), 1.0);
        assert_eq!(catmull_rom(1.0), 0.0);
        assert_eq!(catmull_rom(2.0), 0.0);
        // partition of unity at quarter offsets
        let s: f64 = [-1.25, -0.25, 0.75, 1.75].iter().map(|&x| catmull_rom(x)).sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn upsample_constant() {
        let s = ImageSeries::from_fn(2, 2, 1, 1.0, |_, _, _| 3.5).unwrap();
        let u = upsample2x(&s);
        assert_eq!((u.width(), u.height()), (4, 4));
        assert!(u.data().iter().all(|&v| (v - 3.5).abs() < 1e-6));
        assert_eq!(u.spacing_mm(), (0.5, 0.5));
    }

    #[test]
    fn upsample_reproduces_ramp_in_interior() {
        let s = ImageSeries::from_fn(16, 12, 1, 1.0, |x, y, _| (0.3 * x as f64 + 0.7 * y as f64 + 1.0) as f32).unwrap();
        let u = upsample2x(&s);
        for y in 4..u.height() - 4 {
            for x in 4..u.width() - 4 {
                let (sx, sy) = (x as f64 / 2.0 - 0.25, y as f64 / 2.0 - 0.25);
                let expect = 0.3 * sx + 0.7 * sy + 1.0;
                assert!((u.get(x, y, 0) as f64 - expect).abs() < 1e-4, "({x},{y})");
            }
        }
    }

    #[test]
    fn upsample_impulse_matches_kernel() {
        let (px, py) = (6usize, 5usize);
        let s = ImageSeries::from_fn(12, 12, 1, 1.0, |x, y, _| if (x, y) == (px, py) { 1.0 } else { 0.0 }).unwrap();
        let u = upsample2x(&s);
        for y in 0..24 {
            for x in 0..24 {
                let (sx, sy) = (x as f64 / 2.0 - 0.25, y as f64 / 2.0 - 0.25);
                let expect = catmull_rom(sx - px as f64) * catmull_rom(sy - py as f64);
                assert!((u.get(x, y, 0) as f64 - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn upsample_preserves_mean_of_smooth_image() {
        let s = ImageSeries::from_fn(32, 32, 1, 1.0, |x, y, _| {
            (0.5 + 0.4 * (x as f64 * 0.2).sin() * (y as f64 * 0.15).cos()) as f32
        })
        .unwrap();
        let u = upsample2x(&s);
        let m0: f64 = s.data().iter().map(|&v| v as f64).sum::<f64>() / s.data().len() as f64;
        let m1: f64 = u.data().iter().map(|&v| v as f64).sum::<f64>() / u.data().len() as f64;
        assert!((m0 - m1).abs() < 1e-3, "{m0} vs {m1}");
    }

    fn pulsating_block(w: usize, cx: usize, cy: usize, half: usize) -> ImageSeries {
        ImageSeries::from_fn(w, w, 30, 1.0, |x, y, t| {
            let inside = x + half >= cx && x < cx + half && y + half >= cy && y < cy + half;
            if inside {
                (1.0 + (t as f64 * 0.7).sin()) as f32
            } else {
                0.2
            }
        })
        .unwrap()
    }

    #[test]
    fn auto_roi_finds_pulsating_block() {
        // raw block centred at (60, 60); after upsampling it sits near (120, 120)
        let raw = pulsating_block(128, 60, 60, 5);
        let up = upsample2x(&raw);
        assert_eq!(up.width(), 256);
        let (cx, cy) = locate_roi_center(&up).unwrap();
        assert!((cx as i64 - 120).abs() <= 2 && (cy as i64 - 120).abs() <= 2, "({cx},{cy})");
        let crop = crop_to_roi(&up, None, 128).unwrap();
        assert_eq!((crop.width(), crop.height()), (128, 128));
        // the crop centre lies inside the pulsating block
        assert!((crop.get(64, 64, 3) - crop.get(64, 64, 0)).abs() > 0.5);
    }

    #[test]
    fn explicit_center_takes_central_window() {
        let s = ImageSeries::from_fn(256, 256, 2, 1.0, |x, y, t| (x + 256 * y + t) as f32).unwrap();
        let c = crop_to_roi(&s, Some((128, 128)), 128).unwrap();
        assert_eq!(c.get(0, 0, 0), s.get(64, 64, 0));
        assert_eq!(c.get(127, 127, 1), s.get(191, 191, 1));
    }

    #[test]
    fn crop_clamps_to_bounds() {
        let s = ImageSeries::from_fn(200, 200, 1, 1.0, |x, y, _| (x + 1000 * y) as f32).unwrap();
        let c = crop_to_roi(&s, Some((5, 199)), 128).unwrap();
        assert_eq!(c.get(0, 0, 0), s.get(0, 72, 0));
    }

    #[test]
    fn crop_errors() {
        let flat = ImageSeries::from_fn(160, 160, 5, 1.0, |_, _, _| 2.0).unwrap();
        assert!(matches!(crop_to_roi(&flat, None, 128), Err(Error::NoRoiSignal)));
        let small = ImageSeries::from_fn(100, 100, 5, 1.0, |x, _, t| (x * t) as f32).unwrap();
        assert!(crop_to_roi(&small, Some((50, 50)), 128).is_err());
    }

    #[test]
    fn resample_identity_on_uniform_timing() {
        for dt in [1.0, 0.8, 0.37] {
            let s = ImageSeries::from_fn(3, 2, 30, dt, |x, y, t| (x + y) as f32 * 0.1 + (t as f32).sqrt()).unwrap();
            let r = resample_time(&s, 30).unwrap();
            assert_eq!(r.data(), s.data());
        }
    }

    #[test]
    fn resample_linear_exact() {
        let s = ImageSeries::from_fn(2, 1, 17, 0.9, |x, _, t| (2.0 * t as f64 * 0.9 + x as f64) as f32).unwrap();
        for n_out in [5, 30, 64] {
            let r = resample_time(&s, n_out).unwrap();
            for (k, &tk) in r.frame_times_s().iter().enumerate() {
                for x in 0..2 {
                    let expect = 2.0 * tk + x as f64;
                    assert!((r.get(x, 0, k) as f64 - expect).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn resample_gamma_variate_60_to_30() {
        let times: Vec<f64> = (0..60).map(|k| k as f64 * 0.5).collect();
        let data: Vec<f32> = times.iter().map(|&t| gamma_variate(t) as f32).collect();
        let s = ImageSeries::new(1, 1, (1.0, 1.0), times, data).unwrap();
        let r = resample_time(&s, 30).unwrap();
        let max_err = r
            .frame_times_s()
            .iter()
            .enumerate()
            .map(|(k, &t)| (r.get(0, 0, k) as f64 - gamma_variate(t)).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-3, "max error {max_err}");
    }

    #[test]
    fn resample_needs_four_frames() {
        let s = ImageSeries::from_fn(1, 1, 3, 1.0, |_, _, t| t as f32).unwrap();
        assert!(resample_time(&s, 30).is_err());
    }

    #[test]
    fn monotone_no_overshoot() {
        let m = MonotoneCubic::new(vec![0.0, 1.0, 2.0, 3.0, 4.0], vec![0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        for i in 0..=400 {
            let v = m.eval(i as f64 / 100.0);
            assert!((-1e-12..=1.0 + 1e-12).contains(&v));
        }
    }

    #[test]
    fn normalize_rules() {
        let s = ImageSeries::from_fn(2, 1, 2, 1.0, |x, _, t| (100 + 100 * x + 100 * t) as f32).unwrap();
        let n = normalize01(&s);
        assert_eq!(n.data(), &[0.0, 0.5, 0.5, 1.0]);
        let unit = ImageSeries::from_fn(2, 1, 1, 1.0, |x, _, _| x as f32).unwrap();
        assert_eq!(normalize01(&unit).data(), unit.data());
        let flat = ImageSeries::from_fn(2, 2, 2, 1.0, |_, _, _| 7.0).unwrap();
        assert!(normalize01(&flat).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pipeline_output_shape_and_range() {
        let raw = ImageSeries::from_fn(96, 80, 45, 0.8, |x, y, t| {
            let d = ((x as f64 - 40.0).powi(2) + (y as f64 - 42.0).powi(2)).sqrt();
            let e = if d < 10.0 { gamma_variate(t as f64 * 0.8) * 800.0 } else { 0.0 };
            (100.0 + e + (x % 3) as f64) as f32
        })
        .unwrap();
        let p = preprocess(&raw, None).unwrap();
        assert_eq!((p.width(), p.height(), p.n_frames()), (128, 128, 30));
        assert!(p.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
