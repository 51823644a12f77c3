use crate::components::{label, reachable_from_border, Connectivity};
use crate::error::{Error, Result};
use crate::types::{Class, LabelMask};

/// Anchor for the sector division: a direction from the LV centre toward the
/// right ventricle (image coordinates, y down), or the RV bloodpool centroid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RvReference {
    Direction(f64, f64),
    Centroid(f64, f64),
}

/// Six-sector division of the myocardium.
#[derive(Debug, Clone, PartialEq)]
pub struct AhaSegments {
    pub width: usize,
    pub height: usize,
    /// 0 for non-myocardial pixels, else the segment id 1..=6.
    pub segment: Vec<u8>,
    pub center: (f64, f64),
    /// Start angle of segment 1 in degrees (counterclockwise as displayed).
    pub start_deg: f64,
}

impl AhaSegments {
    pub fn pixels_in(&self, s: u8) -> usize {
        self.segment.iter().filter(|&&v| v == s).count()
    }
}

/// Non-myocardial pixels enclosed by the myocardium.
pub(crate) fn ring_holes(mask: &LabelMask) -> Vec<bool> {
    let open: Vec<bool> = mask.labels().iter().map(|&c| c != Class::Myocardium).collect();
    let outside = reachable_from_border(&open, mask.width(), mask.height(), Connectivity::Four);
    open.iter().zip(&outside).map(|(&o, &r)| o && !r).collect()
}

fn centroid(pixels: &[bool], width: usize) -> Option<(f64, f64)> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for (i, _) in pixels.iter().enumerate().filter(|(_, &p)| p) {
        sx += (i % width) as f64;
        sy += (i / width) as f64;
        n += 1;
    }
    (n > 0).then(|| (sx / n as f64, sy / n as f64))
}

/// LV cavity: the largest bloodpool component enclosed by the myocardium.
/// When the ring is open, falls back to the bloodpool component whose
/// centroid is closest to the myocardial centroid.
pub fn lv_cavity(mask: &LabelMask) -> Vec<bool> {
    let (w, h) = (mask.width(), mask.height());
    let holes = ring_holes(mask);
    let enclosed_bp: Vec<bool> =
        mask.labels().iter().zip(&holes).map(|(&c, &hole)| hole && c == Class::Bloodpool).collect();
    let comps = label(&enclosed_bp, w, h, Connectivity::Four);
    if let Some(l) = comps.largest() {
        return comps.labels.iter().map(|&v| v == l).collect();
    }
    let bp = mask.indicator(Class::Bloodpool);
    let Some(myo_c) = centroid(&mask.indicator(Class::Myocardium), w) else {
        return vec![false; w * h];
    };
    let comps = label(&bp, w, h, Connectivity::Four);
    let mut best: Option<(f64, u32)> = None;
    for id in 1..=comps.count() as u32 {
        let pix: Vec<bool> = comps.labels.iter().map(|&v| v == id).collect();
        let c = centroid(&pix, w).expect("component is non-empty");
        let d = (c.0 - myo_c.0).powi(2) + (c.1 - myo_c.1).powi(2);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, id));
        }
    }
    match best {
        Some((_, id)) => comps.labels.iter().map(|&v| v == id).collect(),
        None => vec![false; w * h],
    }
}

/// Centroid of the largest bloodpool component outside the LV cavity.
pub fn rv_centroid(mask: &LabelMask) -> Option<(f64, f64)> {
    let (w, h) = (mask.width(), mask.height());
    let cavity = lv_cavity(mask);
    let rv: Vec<bool> = mask.labels().iter().zip(&cavity).map(|(&c, &lv)| c == Class::Bloodpool && !lv).collect();
    let comps = label(&rv, w, h, Connectivity::Four);
    let l = comps.largest()?;
    let pix: Vec<bool> = comps.labels.iter().map(|&v| v == l).collect();
    centroid(&pix, w)
}

/// Display angle (degrees, counterclockwise with y pointing up on screen).
fn display_angle(dx: f64, dy: f64) -> f64 {
    (-dy).atan2(dx).to_degrees()
}

/// Assigns each myocardial pixel to one of six 60° sectors around the LV
/// centre. Segment 1 starts 120° clockwise of the RV direction so that the
/// RV direction falls on the boundary between segments 2 and 3; ids increase
/// counterclockwise.
pub fn aha6_split(mask: &LabelMask, rv: RvReference) -> Result<AhaSegments> {
    let (w, h) = (mask.width(), mask.height());
    let myo = mask.indicator(Class::Myocardium);
    let Some(myo_c) = centroid(&myo, w) else {
        return Err(Error::Empty("myocardium"));
    };
    let center = centroid(&lv_cavity(mask), w).unwrap_or(myo_c);
    let rv_deg = match rv {
        RvReference::Direction(dx, dy) => display_angle(dx, dy),
        RvReference::Centroid(x, y) => display_angle(x - center.0, y - center.1),
    };
    let start_deg = rv_deg - 120.0;
    let segment = myo
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            if !m {
                return 0;
            }
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            let rel = (display_angle(x - center.0, y - center.1) - start_deg).rem_euclid(360.0);
            (1 + (rel / 60.0).floor() as u8).min(6)
        })
        .collect();
    Ok(AhaSegments { width: w, height: h, segment, center, start_deg })
}
