//! Segmentation accuracy metrics, failure detection and agreement statistics.

mod aha;
mod failure;
pub mod stats;

pub use aha::{aha6_split, lv_cavity, rv_centroid, AhaSegments, RvReference};
pub use failure::{detect_failure, FailureConfig, FailureReport};
pub use stats::{agreement_stats, fisher_exact, paired_tests, AgreementStats, PairedTests};

use crate::distance::squared_edt;
use crate::error::{Error, Result};
use crate::types::{Class, LabelMask};

/// Dice overlap `2|A∩B| / (|A| + |B|)` of one class; 1 when both are empty.
pub fn dice(a: &LabelMask, b: &LabelMask, class: Class) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::mismatch("dice: masks differ in shape"));
    }
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (&la, &lb) in a.labels().iter().zip(b.labels()) {
        let (ia, ib) = (la == class, lb == class);
        na += ia as usize;
        nb += ib as usize;
        both += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Class pixels with a 4-neighbour outside the class (image edges count as outside).
pub fn boundary(mask: &LabelMask, class: Class) -> Vec<bool> {
    let (w, h) = (mask.width(), mask.height());
    let inside = mask.indicator(class);
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !inside[i] {
                continue;
            }
            out[i] = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !inside[i - 1]
                || !inside[i + 1]
                || !inside[i - w]
                || !inside[i + w];
        }
    }
    out
}

/// Linear-interpolation percentile (`q` in [0, 100]) of unsorted values.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.total_cmp(b));
    let pos = q / 100.0 * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(values.len() - 1);
    let frac = pos - lo as f64;
    values[lo] + frac * (values[hi] - values[lo])
}

/// Directed boundary distances from `from` to the nearest boundary pixel of `to`.
fn directed_distances(from: &[bool], to: &[bool], w: usize, h: usize, spacing: (f64, f64)) -> Vec<f64> {
    let d2 = squared_edt(to, w, h, spacing);
    from.iter().zip(&d2).filter(|(&f, _)| f).map(|(_, &d)| d.sqrt()).collect()
}

/// Undirected 95th-percentile Hausdorff distance in millimetres: both
/// directed boundary-to-boundary distance sets are pooled before taking the
/// percentile.
pub fn hd95(a: &LabelMask, b: &LabelMask, class: Class, spacing_mm: (f64, f64)) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::mismatch("hd95: masks differ in shape"));
    }
    let (w, h) = (a.width(), a.height());
    let ba = boundary(a, class);
    let bb = boundary(b, class);
    if !ba.iter().any(|&v| v) || !bb.iter().any(|&v| v) {
        return Err(Error::Undefined(format!("hd95: class {class:?} absent from a mask")));
    }
    let mut pooled = directed_distances(&ba, &bb, w, h, spacing_mm);
    pooled.extend(directed_distances(&bb, &ba, w, h, spacing_mm));
    Ok(percentile(&mut pooled, 95.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(rows: &[&str]) -> LabelMask {
        let h = rows.len();
        let w = rows[0].len();
        LabelMask::from_fn(w, h, |x, y| match rows[y].as_bytes()[x] {
            b'M' => Class::Myocardium,
            b'B' => Class::Bloodpool,
            _ => Class::Background,
        })
    }

    #[test]
    fn dice_cases() {
        let a = mask(&["MM..", "MM.."]);
        assert_eq!(dice(&a, &a, Class::Myocardium).unwrap(), 1.0);
        let b = mask(&["..MM", "..MM"]);
        assert_eq!(dice(&a, &b, Class::Myocardium).unwrap(), 0.0);
        let c = mask(&[".MM.", ".MM."]);
        assert_eq!(dice(&a, &c, Class::Myocardium).unwrap(), 0.5);
        assert_eq!(dice(&a, &b, Class::Bloodpool).unwrap(), 1.0);
        assert!(dice(&a, &mask(&["M"]), Class::Myocardium).is_err());
    }

    #[test]
    fn hd95_identical_is_zero() {
        let a = mask(&["....", ".MM.", ".MM.", "...."]);
        assert_eq!(hd95(&a, &a, Class::Myocardium, (1.0, 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn hd95_single_pixels() {
        let a = mask(&["M......", "......."]);
        let b = mask(&[".....M.", "......."]);
        assert_eq!(hd95(&a, &b, Class::Myocardium, (1.0, 1.0)).unwrap(), 5.0);
        assert_eq!(hd95(&a, &b, Class::Myocardium, (2.0, 2.0)).unwrap(), 10.0);
    }

    #[test]
    fn hd95_absent_class_is_undefined() {
        let a = mask(&["M."]);
        let b = mask(&[".."]);
        assert!(matches!(hd95(&a, &b, Class::Myocardium, (1.0, 1.0)), Err(Error::Undefined(_))));
    }

    #[test]
    fn percentile_interpolates() {
        let mut v = vec![4.0, 1.0, 3.0, 2.0];
        assert_eq!(percentile(&mut v, 50.0), 2.5);
        assert_eq!(percentile(&mut v, 100.0), 4.0);
        let mut v: Vec<f64> = (0..21).map(|i| i as f64).collect();
        assert_eq!(percentile(&mut v, 95.0), 19.0);
    }
}
