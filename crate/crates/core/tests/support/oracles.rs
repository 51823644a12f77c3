//! Naive reference implementations and seeded suites that compare them with
//! the library. Each suite returns the first mismatch as an error string.

use daugs_core::metrics::{agreement_stats, dice, hd95};
use daugs_core::patching::{combine_majority, combine_mean, compute_umap, u_metrics, PatchGrid, PatchPrediction};
use daugs_core::rng::{substream, Rng};
use daugs_core::{Class, LabelMask};
use rand::Rng as _;

pub struct Instance {
    pub w: usize,
    pub h: usize,
    pub patch: usize,
    pub stride: usize,
    pub grid: PatchGrid,
    /// Window origins enumerated independently of `PatchGrid`, x fastest.
    pub origins: Vec<(usize, usize)>,
    pub preds: Vec<PatchPrediction>,
}

fn axis_origins(len: usize, p: usize, s: usize) -> Vec<usize> {
    let mut v = Vec::new();
    let mut o = 0;
    while o + p <= len {
        v.push(o);
        o += s;
    }
    if *v.last().unwrap() + p != len {
        v.push(len - p);
    }
    v
}

fn probs(rng: &mut Rng) -> [f32; 3] {
    if rng.random_bool(0.4) {
        let mut p = [0.0; 3];
        p[rng.random_range(0..3)] = 1.0;
        return p;
    }
    let a: f32 = rng.random();
    let b: f32 = rng.random::<f32>() * (1.0 - a);
    [1.0 - a - b, a, b]
}

pub fn random_instance(rng: &mut Rng, max_side: usize) -> Instance {
    let h = rng.random_range(1..=max_side);
    let w = rng.random_range(1..=max_side);
    let patch = rng.random_range(1..=h.min(w));
    let stride = rng.random_range(1..=patch);
    let grid = PatchGrid::new(h, w, patch, stride).unwrap();
    let mut origins = Vec::new();
    for y0 in axis_origins(h, patch, stride) {
        for x0 in axis_origins(w, patch, stride) {
            origins.push((x0, y0));
        }
    }
    let preds = (0..origins.len())
        .map(|i| PatchPrediction {
            patch_index: i,
            size: patch,
            probs: (0..patch * patch).map(|_| probs(rng)).collect(),
        })
        .collect();
    Instance { w, h, patch, stride, grid, origins, preds }
}

/// Γ(x, y) by scanning every window.
pub fn gamma(inst: &Instance, x: usize, y: usize) -> Vec<usize> {
    let p = inst.patch;
    (0..inst.origins.len())
        .filter(|&i| {
            let (x0, y0) = inst.origins[i];
            x >= x0 && x < x0 + p && y >= y0 && y < y0 + p
        })
        .collect()
}

fn at(inst: &Instance, i: usize, x: usize, y: usize) -> [f32; 3] {
    let (x0, y0) = inst.origins[i];
    inst.preds[i].probs[(y - y0) * inst.patch + (x - x0)]
}

pub fn oracle_mean(inst: &Instance, x: usize, y: usize) -> [f32; 3] {
    let g = gamma(inst, x, y);
    let mut s = [0.0f64; 3];
    for &i in &g {
        let p = at(inst, i, x, y);
        for c in 0..3 {
            s[c] += p[c] as f64;
        }
    }
    let n = g.len() as f64;
    [(s[0] / n) as f32, (s[1] / n) as f32, (s[2] / n) as f32]
}

pub fn oracle_majority(inst: &Instance, x: usize, y: usize) -> Class {
    let g = gamma(inst, x, y);
    let votes = g.iter().filter(|&&i| at(inst, i, x, y)[1] > 0.5).count();
    if 2 * votes >= g.len() {
        return Class::Myocardium;
    }
    let m = oracle_mean(inst, x, y);
    if m[2] > m[0] {
        Class::Bloodpool
    } else {
        Class::Background
    }
}

/// Population standard deviation of the myocardium probability over Γ, in f64.
pub fn oracle_u(inst: &Instance, x: usize, y: usize) -> f64 {
    let g = gamma(inst, x, y);
    let n = g.len() as f64;
    let mean = g.iter().map(|&i| at(inst, i, x, y)[1] as f64).sum::<f64>() / n;
    (g.iter().map(|&i| (at(inst, i, x, y)[1] as f64 - mean).powi(2)).sum::<f64>() / n).sqrt()
}

pub fn oracle_u_metrics(u: &[f32], n_myo: usize) -> (f64, f64) {
    let mut tot = 0.0;
    for &v in u {
        tot += v as f64 * v as f64;
    }
    (if n_myo == 0 { f64::INFINITY } else { tot / n_myo as f64 }, tot)
}

/// Every U-map value of `n_pixels` or more random prediction pixels lies in
/// [0, 0.5], and windows split evenly between 1 and 0 reach 0.5 exactly.
pub fn umap_bound_suite(seed: u64, n_pixels: usize) -> Result<usize, String> {
    let mut seen = 0;
    let mut k = 0;
    while seen < n_pixels {
        let mut rng = substream(seed, &[k]);
        k += 1;
        let inst = random_instance(&mut rng, 32);
        let u = compute_umap(&inst.preds, &inst.grid, 1).map_err(|e| e.to_string())?;
        if let Some(v) = u.u.iter().find(|v| !(0.0..=0.5).contains(*v)) {
            return Err(format!("u = {v} out of range"));
        }
        seen += u.u.len();
    }
    for n in [2usize, 4, 6] {
        // n windows of side n over an n × (2n - 1) image: column n - 1 is covered n times
        let grid = PatchGrid::new(n, 2 * n - 1, n, 1).unwrap();
        let preds: Vec<_> = (0..n)
            .map(|i| {
                let p = if i % 2 == 0 { 1.0 } else { 0.0 };
                PatchPrediction { patch_index: i, size: n, probs: vec![[1.0 - p, p, 0.0]; n * n] }
            })
            .collect();
        let u = compute_umap(&preds, &grid, 1).map_err(|e| e.to_string())?;
        if u.get(n - 1, 0) != 0.5 {
            return Err(format!("half-ones construction with {n} windows gave {}", u.get(n - 1, 0)));
        }
    }
    Ok(seen)
}

/// combine_mean, combine_majority, compute_umap and u_metrics against the
/// Γ-enumeration oracles on `n` random instances no larger than 32×32.
pub fn gamma_suite(seed: u64, n: u64) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for k in 0..n {
        let mut rng = substream(seed, &[k]);
        let inst = random_instance(&mut rng, 32);
        let tag = format!("instance {k} ({}x{}, patch {}, stride {})", inst.w, inst.h, inst.patch, inst.stride);
        if inst.grid.origins().collect::<Vec<_>>() != inst.origins {
            return Err(format!("{tag}: window origins differ"));
        }
        let mean = combine_mean(&inst.preds, &inst.grid).map_err(|e| e.to_string())?;
        let maj = combine_majority(&inst.preds, &inst.grid).map_err(|e| e.to_string())?;
        let n_myo = rng.random_range(0..=inst.w * inst.h);
        let u = compute_umap(&inst.preds, &inst.grid, n_myo).map_err(|e| e.to_string())?;
        for y in 0..inst.h {
            for x in 0..inst.w {
                if mean.get(x, y) != oracle_mean(&inst, x, y) {
                    return Err(format!("{tag}: mean differs at ({x}, {y})"));
                }
                if maj.get(x, y) != oracle_majority(&inst, x, y) {
                    return Err(format!("{tag}: majority differs at ({x}, {y})"));
                }
                let o = oracle_u(&inst, x, y);
                if u.get(x, y) != o as f32 {
                    return Err(format!("{tag}: u differs at ({x}, {y}): {} vs {o}", u.get(x, y)));
                }
                worst = worst.max((u.get(x, y) as f64 - o).abs());
            }
        }
        let (pp, tot) = oracle_u_metrics(&u.u, n_myo);
        let (a, b) = u_metrics(&u);
        let pp_ok = if n_myo == 0 { a == pp } else { (a - pp).abs() <= 1e-12 };
        if !pp_ok || (b - tot).abs() > 1e-12 {
            return Err(format!("{tag}: u metrics ({a}, {b}) vs ({pp}, {tot})"));
        }
    }
    Ok(worst)
}

pub fn random_mask(rng: &mut Rng, max_side: usize) -> LabelMask {
    let w = rng.random_range(1..=max_side);
    let h = rng.random_range(1..=max_side);
    let p_myo = rng.random_range(0.0..0.7);
    LabelMask::from_fn(w, h, |_, _| {
        let r: f64 = rng.random();
        if r < p_myo {
            Class::Myocardium
        } else if r < p_myo + 0.15 {
            Class::Bloodpool
        } else {
            Class::Background
        }
    })
}

pub fn oracle_dice(a: &LabelMask, b: &LabelMask, class: Class) -> f64 {
    let (mut na, mut nb, mut both) = (0.0, 0.0, 0.0);
    for y in 0..a.height() {
        for x in 0..a.width() {
            let (ia, ib) = (a.get(x, y) == class, b.get(x, y) == class);
            na += ia as u8 as f64;
            nb += ib as u8 as f64;
            both += (ia && ib) as u8 as f64;
        }
    }
    if na + nb == 0.0 {
        1.0
    } else {
        2.0 * both / (na + nb)
    }
}

fn oracle_boundary(m: &LabelMask, class: Class) -> Vec<(usize, usize)> {
    let (w, h) = (m.width() as i64, m.height() as i64);
    let inside = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && m.get(x as usize, y as usize) == class;
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if inside(x, y) && [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|(dx, dy)| !inside(x + dx, y + dy)) {
                out.push((x as usize, y as usize));
            }
        }
    }
    out
}

pub fn oracle_percentile(v: &mut [f64], q: f64) -> f64 {
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Pooled undirected HD95 by comparing every boundary pixel pair; `None` when
/// either boundary is empty.
pub fn oracle_hd95(a: &LabelMask, b: &LabelMask, class: Class, s: (f64, f64)) -> Option<f64> {
    let (ba, bb) = (oracle_boundary(a, class), oracle_boundary(b, class));
    if ba.is_empty() || bb.is_empty() {
        return None;
    }
    let nearest = |p: &(usize, usize), set: &[(usize, usize)]| {
        set.iter()
            .map(|q| {
                let dx = (p.0 as f64 - q.0 as f64) * s.0;
                let dy = (p.1 as f64 - q.1 as f64) * s.1;
                (dx * dx + dy * dy).sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let mut d: Vec<f64> = ba.iter().map(|p| nearest(p, &bb)).chain(bb.iter().map(|p| nearest(p, &ba))).collect();
    Some(oracle_percentile(&mut d, 95.0))
}

/// 1-based rank by counting, ties sharing their mean rank.
fn oracle_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|a| {
            let less = v.iter().filter(|b| *b < a).count() as f64;
            let equal = v.iter().filter(|b| *b == a).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn oracle_r(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt()
}

/// `[r², slope, intercept, bias, loa_low, loa_high, rho]` from the textbook
/// sum formulas.
pub fn oracle_agreement(x: &[f64], y: &[f64]) -> [f64; 7] {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    let r = oracle_r(x, y);
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - a).collect();
    let bias = d.iter().sum::<f64>() / n;
    let var = (d.iter().map(|v| v * v).sum::<f64>() - n * bias * bias) / (n - 1.0);
    let sd = var.max(0.0).sqrt();
    let rho = oracle_r(&oracle_ranks(x), &oracle_ranks(y));
    [r * r, slope, intercept, bias, bias - 1.96 * sd, bias + 1.96 * sd, rho]
}

/// dice and hd95 on `n_pairs` random masks up to 16×16, then
/// agreement_stats on `n_sets` random paired samples.
pub fn metrics_suite(seed: u64, n_pairs: u64, n_sets: u64) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for k in 0..n_pairs {
        let mut rng = substream(seed, &[1, k]);
        let a = random_mask(&mut rng, 16);
        let b = LabelMask::from_fn(a.width(), a.height(), |x, y| {
            if rng.random_bool(0.3) {
                Class::ALL[rng.random_range(0..3)]
            } else {
                a.get(x, y)
            }
        });
        let spacing = if k % 2 == 0 { (1.0, 1.0) } else { (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)) };
        for class in Class::ALL {
            let d = dice(&a, &b, class).map_err(|e| e.to_string())?;
            let o = oracle_dice(&a, &b, class);
            worst = worst.max((d - o).abs());
            if (d - o).abs() > 1e-9 {
                return Err(format!("pair {k}: dice {d} vs {o}"));
            }
            match (hd95(&a, &b, class, spacing), oracle_hd95(&a, &b, class, spacing)) {
                (Ok(h), Some(o)) => {
                    worst = worst.max((h - o).abs());
                    if (h - o).abs() > 1e-9 {
                        return Err(format!("pair {k} {class:?}: hd95 {h} vs {o}"));
                    }
                }
                (Err(_), None) => {}
                (h, o) => return Err(format!("pair {k} {class:?}: hd95 {h:?} vs {o:?}")),
            }
        }
    }
    for k in 0..n_sets {
        let mut rng = substream(seed, &[2, k]);
        let n = rng.random_range(3..60);
        let x: Vec<f64> = (0..n).map(|_| (rng.random_range(0.0..4.0) * 8.0f64).round() / 8.0).collect();
        let slope = rng.random_range(0.5..1.5);
        let y: Vec<f64> = x.iter().map(|v| slope * v + rng.random_range(-0.5..0.5)).collect();
        let s = match agreement_stats(&x, &y) {
            Ok(s) => s,
            // all x tied: rejected by design
            Err(_) if x.iter().all(|v| *v == x[0]) => continue,
            Err(e) => return Err(format!("set {k}: {e}")),
        };
        let got = [s.pearson_r2, s.slope, s.intercept, s.bias, s.loa_low, s.loa_high, s.spearman_rho];
        for (name, (g, o)) in ["r2", "slope", "intercept", "bias", "loa_low", "loa_high", "rho"]
            .iter()
            .zip(got.iter().zip(oracle_agreement(&x, &y)))
        {
            let err = (g - o).abs() / o.abs().max(1.0);
            worst = worst.max(err);
            if err > 1e-9 {
                return Err(format!("set {k}: {name} {g} vs {o}"));
            }
        }
    }
    Ok(worst)
}
