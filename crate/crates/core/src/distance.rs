//! Exact Euclidean distance transforms on 2-D grids.

/// Squared Euclidean distance from every pixel to the nearest `true` pixel of
/// `features`, with physical pixel spacing `(dx, dy)`.
///
/// Uses the separable lower-envelope algorithm of Felzenszwalb and Huttenlocher.
/// Pixels are `f64::INFINITY` when `features` has no `true` entry.
pub fn squared_edt(features: &[bool], width: usize, height: usize, spacing: (f64, f64)) -> Vec<f64> {
    assert_eq!(features.len(), width * height);
    let (dx, dy) = spacing;
    let mut grid: Vec<f64> = features.iter().map(|&f| if f { 0.0 } else { f64::INFINITY }).collect();

    let mut scratch = Envelope::with_capacity(width.max(height));
    let mut col = vec![0.0; height];
    let mut out = vec![0.0; width.max(height)];

    // columns
    for x in 0..width {
        for y in 0..height {
            col[y] = grid[y * width + x];
        }
        scratch.transform(&col, dy * dy, &mut out[..height]);
        for y in 0..height {
            grid[y * width + x] = out[y];
        }
    }
    // rows
    for y in 0..height {
        let row = &mut grid[y * width..(y + 1) * width];
        scratch.transform(row, dx * dx, &mut out[..width]);
        row.copy_from_slice(&out[..width]);
    }
    grid
}

/// Euclidean distance (not squared).
pub fn edt(features: &[bool], width: usize, height: usize, spacing: (f64, f64)) -> Vec<f64> {
    squared_edt(features, width, height, spacing).into_iter().map(f64::sqrt).collect()
}

struct Envelope {
    v: Vec<usize>,
    z: Vec<f64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Self { v: Vec::with_capacity(n), z: Vec::with_capacity(n + 1) }
    }

    /// 1-D transform `out[p] = min_q f[q] + w (p - q)^2`.
    fn transform(&mut self, f: &[f64], w: f64, out: &mut [f64]) {
        let n = f.len();
        self.v.clear();
        self.z.clear();
        for q in 0..n {
            if !f[q].is_finite() {
                continue;
            }
            loop {
                match self.v.last() {
                    None => {
                        self.v.push(q);
                        self.z.clear();
                        self.z.push(f64::NEG_INFINITY);
                        break;
                    }
                    Some(&r) => {
                        let s = ((f[q] + w * (q * q) as f64) - (f[r] + w * (r * r) as f64))
                            / (2.0 * w * (q as f64 - r as f64));
                        if s <= *self.z.last().unwrap() {
                            self.v.pop();
                            self.z.pop();
                        } else {
                            self.v.push(q);
                            self.z.push(s);
                            break;
                        }
                    }
                }
            }
        }
        if self.v.is_empty() {
            out.iter_mut().for_each(|o| *o = f64::INFINITY);
            return;
        }
        let mut k = 0;
        for (p, o) in out.iter_mut().enumerate() {
            while k + 1 < self.v.len() && self.z[k + 1] < p as f64 {
                k += 1;
            }
            let q = self.v[k];
            let d = p as f64 - q as f64;
            *o = f[q] + w * d * d;
        }
    }
}

/// Signed distance to the boundary of a region: negative inside (distance to
/// the nearest outside pixel), positive outside (distance to the nearest
/// inside pixel).
pub fn signed_distance(region: &[bool], width: usize, height: usize) -> Vec<f32> {
    let outside: Vec<bool> = region.iter().map(|&r| !r).collect();
    let to_inside = edt(region, width, height, (1.0, 1.0));
    let to_outside = edt(&outside, width, height, (1.0, 1.0));
    region
        .iter()
        .enumerate()
        .map(|(i, &inside)| if inside { -(to_outside[i] as f32) } else { to_inside[i] as f32 })
        .collect()
}
