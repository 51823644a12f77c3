//! Segment-wise myocardial blood flow by Fermi-constrained deconvolution.
//!
//! The impulse response is `R(t) = F / (1 + exp((t - w) / k))` for `t >= 0`,
//! applied to the arterial input delayed by `delay` seconds (linear
//! interpolation between frames). The tissue model is the left Riemann sum
//! `y_i = dt * sum_{j<=i} aif_d[j] * R((i - j) dt)`. Flow is `R(0)` times a
//! conversion scale.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::{agreement_stats, AgreementStats};
use crate::metrics::{aha6_split, detect_failure, lv_cavity, AhaSegments, FailureConfig, RvReference};
use crate::types::{ImageSeries, LabelMask};

pub const DEFAULT_BASELINE_FRAMES: usize = 3;
pub const MIN_FRAMES: usize = 8;

/// Monotone signal-to-concentration lookup, linearly interpolated and
/// linearly extrapolated from the end segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Lut {
    signal: Vec<f64>,
    concentration: Vec<f64>,
}

impl Lut {
    pub fn new(signal: Vec<f64>, concentration: Vec<f64>) -> Result<Self> {
        if signal.len() != concentration.len() || signal.len() < 2 {
            return Err(Error::invalid("lookup table needs at least two (signal, concentration) pairs"));
        }
        if signal.iter().chain(&concentration).any(|v| !v.is_finite()) {
            return Err(Error::invalid("lookup table values must be finite"));
        }
        if signal.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("lookup table signal column must increase strictly"));
        }
        let up = concentration.windows(2).all(|w| w[1] >= w[0]);
        let down = concentration.windows(2).all(|w| w[1] <= w[0]);
        if !up && !down {
            return Err(Error::invalid("lookup table concentration column must be monotone"));
        }
        Ok(Self { signal, concentration })
    }

    /// Two-column CSV, optional header line.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
        let (mut s, mut c) = (Vec::new(), Vec::new());
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(Error::Parse(format!("lookup table row {} has {} columns", i + 1, rec.len())));
            }
            match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
                (Ok(a), Ok(b)) => {
                    s.push(a);
                    c.push(b);
                }
                _ if i == 0 => continue,
                _ => return Err(Error::Parse(format!("lookup table row {} is not numeric", i + 1))),
            }
        }
        Self::new(s, c)
    }

    pub fn apply(&self, v: f64) -> f64 {
        let s = &self.signal;
        let n = s.len();
        let i = match s.partition_point(|&x| x <= v) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let t = (v - s[i]) / (s[i + 1] - s[i]);
        self.concentration[i] + t * (self.concentration[i + 1] - self.concentration[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerfusionCurves {
    pub aif: Vec<f64>,
    /// Per AHA segment 1..=6; `None` when the segment has no pixels.
    pub tissue: [Option<Vec<f64>>; 6],
    pub dt_s: f64,
    pub baseline_frames: usize,
}

impl PerfusionCurves {
    pub fn empty_segments(&self) -> Vec<u8> {
        (1..=6u8).filter(|&s| self.tissue[s as usize - 1].is_none()).collect()
    }
}

fn remove_baseline(c: &mut [f64], n: usize) {
    let b = c[..n].iter().sum::<f64>() / n as f64;
    c.iter_mut().for_each(|v| *v -= b);
}

/// AIF from the LV cavity and one tissue curve per segment, baseline
/// corrected by the mean of the first `baseline_frames` frames. Intensities
/// pass through `lut` first when given.
pub fn extract_curves(
    series: &ImageSeries,
    mask: &LabelMask,
    segments: &AhaSegments,
    baseline_frames: usize,
    lut: Option<&Lut>,
) -> Result<PerfusionCurves> {
    let (w, h, t) = (series.width(), series.height(), series.n_frames());
    if mask.width() != w || mask.height() != h || segments.width != w || segments.height != h {
        return Err(Error::mismatch("series, mask and segments differ in size"));
    }
    if t < MIN_FRAMES {
        return Err(Error::invalid(format!("perfusion curves need at least {MIN_FRAMES} frames, got {t}")));
    }
    if baseline_frames == 0 || baseline_frames > t {
        return Err(Error::invalid(format!("baseline frame count {baseline_frames} out of range")));
    }
    let dt_s = series.mean_dt_s();
    if !(dt_s > 0.0) {
        return Err(Error::invalid("frame spacing must be positive"));
    }
    let cavity = lv_cavity(mask);
    let n_cavity = cavity.iter().filter(|&&c| c).count();
    if n_cavity == 0 {
        return Err(Error::Empty("LV bloodpool"));
    }
    let conv = |v: f32| lut.map_or(v as f64, |l| l.apply(v as f64));
    let mut aif = vec![0.0; t];
    let mut sums: [Vec<f64>; 6] = std::array::from_fn(|_| vec![0.0; t]);
    let mut counts = [0usize; 6];
    for &s in &segments.segment {
        if (1..=6).contains(&s) {
            counts[s as usize - 1] += 1;
        }
    }
    for f in 0..t {
        let frame = series.frame(f);
        for i in 0..w * h {
            if cavity[i] {
                aif[f] += conv(frame[i]);
            }
            let s = segments.segment[i];
            if (1..=6).contains(&s) {
                sums[s as usize - 1][f] += conv(frame[i]);
            }
        }
    }
    aif.iter_mut().for_each(|v| *v /= n_cavity as f64);
    remove_baseline(&mut aif, baseline_frames);
    let mut tissue: [Option<Vec<f64>>; 6] = Default::default();
    for (k, mut c) in sums.into_iter().enumerate() {
        if counts[k] == 0 {
            continue;
        }
        c.iter_mut().for_each(|v| *v /= counts[k] as f64);
        remove_baseline(&mut c, baseline_frames);
        tissue[k] = Some(c);
    }
    Ok(PerfusionCurves { aif, tissue, dt_s, baseline_frames })
}

/// Fermi impulse response at `t` seconds.
pub fn fermi(t: f64, f: f64, w: f64, k: f64) -> f64 {
    f / (1.0 + ((t - w) / k).exp())
}

/// `aif` delayed by `delay` seconds with linear interpolation (zero before
/// the start), and its derivative with respect to the delay.
fn delayed(aif: &[f64], delay: f64, dt: f64) -> (Vec<f64>, Vec<f64>) {
    let n = aif.len();
    let mut v = vec![0.0; n];
    let mut dv = vec![0.0; n];
    for j in 0..n {
        let s = j as f64 - delay / dt;
        if s < 0.0 {
            continue;
        }
        let m = s.floor() as usize;
        if m + 1 >= n {
            v[j] = aif[n - 1];
            continue;
        }
        let fr = s - m as f64;
        v[j] = aif[m] * (1.0 - fr) + aif[m + 1] * fr;
        dv[j] = -(aif[m + 1] - aif[m]) / dt;
    }
    (v, dv)
}

/// Left-Riemann forward model `dt * (aif_d ⊛ R)` for parameters
/// `(F, w, ln k, delay)`.
pub fn fermi_forward(aif: &[f64], dt: f64, theta: [f64; 4]) -> Vec<f64> {
    model_and_jacobian(aif, dt, theta, false).0
}

fn model_and_jacobian(aif: &[f64], dt: f64, theta: [f64; 4], jac: bool) -> (Vec<f64>, Vec<[f64; 4]>) {
    let [f, w, lnk, delay] = theta;
    let k = lnk.exp();
    let n = aif.len();
    let (a, da) = delayed(aif, delay, dt);
    // impulse response and its parameter derivatives on the lag grid
    let mut r = vec![0.0; n];
    let mut dr = vec![[0.0; 3]; n];
    for l in 0..n {
        let t = l as f64 * dt;
        let sig = 1.0 / (1.0 + ((t - w) / k).exp());
        r[l] = f * sig;
        let s1 = sig * (1.0 - sig);
        dr[l] = [sig, f * s1 / k, f * s1 * (t - w) / k];
    }
    let mut y = vec![0.0; n];
    let mut jm = if jac { vec![[0.0; 4]; n] } else { Vec::new() };
    for i in 0..n {
        let mut acc = 0.0;
        let mut g = [0.0; 4];
        for j in 0..=i {
            let l = i - j;
            acc += a[j] * r[l];
            if jac {
                g[0] += a[j] * dr[l][0];
                g[1] += a[j] * dr[l][1];
                g[2] += a[j] * dr[l][2];
                g[3] += da[j] * r[l];
            }
        }
        y[i] = dt * acc;
        if jac {
            jm[i] = g.map(|v| v * dt);
        }
    }
    (y, jm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Relative step and gradient tolerance.
    pub tol: f64,
    /// Flow conversion applied to `R(0)`.
    pub scale: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iter: 500, tol: 1e-8, scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MbfFit {
    pub mbf: f64,
    pub amplitude: f64,
    pub width_s: f64,
    pub decay_s: f64,
    pub delay_s: f64,
    pub residual_rms: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Objective after every accepted step of the winning start, starting
    /// from its initial value.
    pub objective_trace: Vec<f64>,
}

fn sse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Onset: first frame reaching 10% of the curve's peak.
fn onset(c: &[f64]) -> usize {
    let peak = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    c.iter().position(|&v| v >= 0.1 * peak).unwrap_or(0)
}

/// Solves the 4×4 system `a x = b` by Gaussian elimination with partial
/// pivoting.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for c in 0..4 {
        let p = (c..4).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..4 {
            let m = a[r][c] / a[c][c];
            for k in c..4 {
                a[r][k] -= m * a[c][k];
            }
            b[r] -= m * b[c];
        }
    }
    let mut x = [0.0; 4];
    for r in (0..4).rev() {
        let s: f64 = (r + 1..4).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

struct LmOutcome {
    theta: [f64; 4],
    objective: f64,
    converged: bool,
    iterations: usize,
    trace: Vec<f64>,
}

fn levenberg_marquardt(aif: &[f64], y: &[f64], dt: f64, start: [f64; 4], opt: &FitOptions) -> LmOutcome {
    let mut theta = start;
    let (m0, _) = model_and_jacobian(aif, dt, theta, false);
    let mut obj = sse(&m0, y);
    let mut trace = vec![obj];
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut it = 0;
    while it < opt.max_iter {
        it += 1;
        let (m, jm) = model_and_jacobian(aif, dt, theta, true);
        let r: Vec<f64> = y.iter().zip(&m).map(|(a, b)| a - b).collect();
        let mut jtj = [[0.0; 4]; 4];
        let mut g = [0.0; 4];
        for (row, &ri) in jm.iter().zip(&r) {
            for a in 0..4 {
                g[a] += row[a] * ri;
                for b in 0..4 {
                    jtj[a][b] += row[a] * row[b];
                }
            }
        }
        let gnorm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gnorm <= opt.tol * (1.0 + obj) {
            converged = true;
            break;
        }
        let mut accepted = false;
        while lambda < 1e12 {
            let mut a = jtj;
            for d in 0..4 {
                a[d][d] += lambda * jtj[d][d].max(1e-12);
            }
            let Some(step) = solve4(a, g) else {
                lambda *= 10.0;
                continue;
            };
            let cand = [theta[0] + step[0], theta[1] + step[1], theta[2] + step[2], theta[3] + step[3]];
            let (mc, _) = model_and_jacobian(aif, dt, cand, false);
            let oc = sse(&mc, y);
            if oc.is_finite() && oc < obj {
                let snorm = step.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let tnorm = theta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                theta = cand;
                let small = snorm <= opt.tol * (tnorm + opt.tol) || obj - oc <= opt.tol * opt.tol * obj;
                obj = oc;
                trace.push(obj);
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if small {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged {
            break;
        }
        if !accepted {
            // no downhill step at any damping: stationary to working precision
            converged = true;
            break;
        }
    }
    LmOutcome { theta, objective: obj, converged, iterations: it, trace }
}

/// Fits the Fermi model from four fixed starts and keeps the best residual.
pub fn fermi_fit(tissue: &[f64], aif: &[f64], dt_s: f64, opt: &FitOptions) -> Result<MbfFit> {
    let n = tissue.len();
    if aif.len() != n {
        return Err(Error::mismatch("tissue and AIF curves differ in length"));
    }
    if n < MIN_FRAMES {
        return Err(Error::invalid(format!("curves need at least {MIN_FRAMES} frames")));
    }
    if !(dt_s > 0.0) || tissue.iter().chain(aif).any(|v| !v.is_finite()) {
        return Err(Error::invalid("curves must be finite with positive frame spacing"));
    }
    if !aif.iter().any(|&v| v > 0.0) {
        return Err(Error::invalid("AIF has no positive enhancement"));
    }
    let d_est = (onset(tissue) as f64 - onset(aif) as f64).max(0.0) * dt_s;
    let starts = [(5.0, 1.0, 0.0), (10.0, 2.0, 0.0), (5.0, 1.0, d_est), (10.0, 2.0, d_est)];
    let mut best: Option<LmOutcome> = None;
    for (w, k, d) in starts {
        // amplitude by linear least squares at the start shape
        let unit = fermi_forward(aif, dt_s, [1.0, w, f64::ln(k), d]);
        let uu: f64 = unit.iter().map(|v| v * v).sum();
        let f0 = if uu > 0.0 { unit.iter().zip(tissue).map(|(u, y)| u * y).sum::<f64>() / uu } else { 0.0 };
        let out = levenberg_marquardt(aif, tissue, dt_s, [f0, w, f64::ln(k), d], opt);
        if best.as_ref().is_none_or(|b| out.objective < b.objective) {
            best = Some(out);
        }
    }
    let b = best.expect("four starts");
    let [f, w, lnk, d] = b.theta;
    let k = lnk.exp();
    Ok(MbfFit {
        mbf: (fermi(0.0, f, w, k) * opt.scale).max(0.0),
        amplitude: f,
        width_s: w,
        decay_s: k,
        delay_s: d,
        residual_rms: (b.objective / n as f64).sqrt(),
        converged: b.converged,
        iterations: b.iterations,
        objective_trace: b.trace,
    })
}

/// One (case, method, segment) flow value.
#[derive(Debug, Clone, PartialEq)]
pub struct MbfRow {
    pub case_id: u64,
    pub method: String,
    pub segment: u8,
    /// `None` when the segment is empty, or flagged by the failure criteria.
    pub fit: Option<MbfFit>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodAgreement {
    pub method: String,
    /// `None` with fewer than three usable pairs.
    pub stats: Option<AgreementStats>,
    pub pairs: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MbfReport {
    pub rows: Vec<MbfRow>,
    pub agreement: Vec<MethodAgreement>,
    pub warnings: Vec<String>,
}

/// Input to [`mbf_table`]: one case with its reference mask and the masks of
/// the methods under comparison.
pub struct MbfCase<'a> {
    pub case_id: u64,
    pub series: &'a ImageSeries,
    pub reference: &'a LabelMask,
    pub methods: Vec<(String, &'a LabelMask)>,
    pub rv_centroid: Option<(f64, f64)>,
    /// Replaces the cavity AIF of every mask, e.g. a separately acquired
    /// low-dose bolus already on the tissue scale. Baseline corrected here.
    pub aif: Option<&'a [f64]>,
}

pub const REFERENCE_METHOD: &str = "manual";

#[allow(clippy::too_many_arguments)]
fn segment_fits(
    case_id: u64,
    method: &str,
    series: &ImageSeries,
    mask: &LabelMask,
    rv: Option<(f64, f64)>,
    aif: Option<&[f64]>,
    failure: FailureConfig,
    lut: Option<&Lut>,
    opt: &FitOptions,
) -> Result<(Vec<MbfRow>, Vec<String>)> {
    let mut warnings = Vec::new();
    let rv = rv.or_else(|| crate::metrics::rv_centroid(mask));
    let seg = match rv.map(|(x, y)| aha6_split(mask, RvReference::Centroid(x, y))) {
        Some(Ok(s)) => s,
        Some(Err(Error::Empty(_))) | None => {
            warnings.push(format!("case {case_id} {method}: mask has no myocardium or RV; all segments flagged"));
            let rows = (1..=6).map(|s| MbfRow { case_id, method: method.into(), segment: s, fit: None, flagged: true });
            return Ok((rows.collect(), warnings));
        }
        Some(Err(e)) => return Err(e),
    };
    let report = detect_failure(mask, &seg, failure);
    let curves = match extract_curves(series, mask, &seg, DEFAULT_BASELINE_FRAMES, lut) {
        Ok(mut c) => {
            if let Some(a) = aif {
                if a.len() != c.aif.len() {
                    return Err(Error::mismatch(format!("AIF has {} frames, series has {}", a.len(), c.aif.len())));
                }
                c.aif = a.to_vec();
                remove_baseline(&mut c.aif, c.baseline_frames);
            }
            c
        }
        Err(Error::Empty(_)) => {
            warnings.push(format!("case {case_id} {method}: no LV cavity; all segments flagged"));
            let rows = (1..=6).map(|s| MbfRow { case_id, method: method.into(), segment: s, fit: None, flagged: true });
            return Ok((rows.collect(), warnings));
        }
        Err(e) => return Err(e),
    };
    let fits: Vec<Result<Option<MbfFit>>> = (1..=6u8)
        .into_par_iter()
        .map(|s| match &curves.tissue[s as usize - 1] {
            Some(c) if !report.noncontiguous_segments.contains(&s) => {
                fermi_fit(c, &curves.aif, curves.dt_s, opt).map(Some)
            }
            _ => Ok(None),
        })
        .collect();
    let mut rows = Vec::with_capacity(6);
    for (s, fit) in (1..=6u8).zip(fits) {
        let fit = fit?;
        let flagged = fit.is_none();
        if let Some(f) = &fit {
            if !f.converged {
                warnings.push(format!("case {case_id} {method} segment {s}: fit did not converge"));
            }
        }
        rows.push(MbfRow { case_id, method: method.into(), segment: s, fit, flagged });
    }
    Ok((rows, warnings))
}

/// Per-segment flow for the reference mask and every method mask, and the
/// agreement of each method with the reference over segments usable in
/// both.
pub fn mbf_table(
    cases: &[MbfCase<'_>],
    failure: FailureConfig,
    lut: Option<&Lut>,
    opt: &FitOptions,
) -> Result<MbfReport> {
    if cases.is_empty() {
        return Err(Error::Empty("cases"));
    }
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    let mut names: Vec<String> = Vec::new();
    for c in cases {
        let (r, w) =
            segment_fits(c.case_id, REFERENCE_METHOD, c.series, c.reference, c.rv_centroid, c.aif, failure, lut, opt)?;
        rows.extend(r);
        warnings.extend(w);
        for (name, mask) in &c.methods {
            if name == REFERENCE_METHOD {
                return Err(Error::invalid(format!("method name {REFERENCE_METHOD:?} is reserved")));
            }
            if !names.contains(name) {
                names.push(name.clone());
            }
            let (r, w) = segment_fits(c.case_id, name, c.series, mask, c.rv_centroid, c.aif, failure, lut, opt)?;
            rows.extend(r);
            warnings.extend(w);
        }
    }
    let mut agreement = Vec::new();
    for name in names {
        let (mut x, mut y) = (Vec::new(), Vec::new());
        let mut excluded = 0;
        for r in rows.iter().filter(|r| r.method == name) {
            let reference =
                rows.iter().find(|m| m.method == REFERENCE_METHOD && m.case_id == r.case_id && m.segment == r.segment);
            match (reference.and_then(|m| m.fit.as_ref()), r.fit.as_ref()) {
                (Some(a), Some(b)) => {
                    x.push(a.mbf);
                    y.push(b.mbf);
                }
                _ => excluded += 1,
            }
        }
        let stats = if x.len() >= 3 { agreement_stats(&x, &y).ok() } else { None };
        agreement.push(MethodAgreement { method: name, stats, pairs: x.len(), excluded });
    }
    Ok(MbfReport { rows, agreement, warnings })
}

/// Rows as `case_id,method,segment,mbf,amplitude,width_s,decay_s,delay_s,residual_rms,converged,flagged`
/// and agreement as
/// `method,pairs,excluded,r2,slope,intercept,bias,loa_low,loa_high,spearman_rho`.
pub fn write_mbf(dir: &Path, r: &MbfReport) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let table = dir.join("mbf.csv");
    let mut w = csv::Writer::from_path(&table)?;
    w.write_record([
        "case_id",
        "method",
        "segment",
        "mbf",
        "amplitude",
        "width_s",
        "decay_s",
        "delay_s",
        "residual_rms",
        "converged",
        "flagged",
    ])?;
    for row in &r.rows {
        let mut rec = vec![row.case_id.to_string(), row.method.clone(), row.segment.to_string()];
        match &row.fit {
            Some(f) => rec.extend([
                f.mbf.to_string(),
                f.amplitude.to_string(),
                f.width_s.to_string(),
                f.decay_s.to_string(),
                f.delay_s.to_string(),
                f.residual_rms.to_string(),
                (f.converged as u8).to_string(),
            ]),
            None => rec.extend(std::iter::repeat_n(String::new(), 7)),
        }
        rec.push((row.flagged as u8).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    let agree = dir.join("mbf_agreement.csv");
    let mut w = csv::Writer::from_path(&agree)?;
    w.write_record([
        "method",
        "pairs",
        "excluded",
        "r2",
        "slope",
        "intercept",
        "bias",
        "loa_low",
        "loa_high",
        "spearman_rho",
    ])?;
    for a in &r.agreement {
        let mut rec = vec![a.method.clone(), a.pairs.to_string(), a.excluded.to_string()];
        match &a.stats {
            Some(s) => rec.extend(
                [s.pearson_r2, s.slope, s.intercept, s.bias, s.loa_low, s.loa_high, s.spearman_rho]
                    .map(|v| v.to_string()),
            ),
            None => rec.extend(std::iter::repeat_n(String::new(), 7)),
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    let mut out = vec![table, agree];
    for a in &r.agreement {
        let (x, y) = pairs(r, &a.method);
        let scatter = dir.join(format!("mbf_scatter_{}.svg", a.method));
        std::fs::write(&scatter, scatter_svg(&x, &y, a))?;
        let ba = dir.join(format!("mbf_bland_altman_{}.svg", a.method));
        std::fs::write(&ba, bland_altman_svg(&x, &y, a))?;
        out.extend([scatter, ba]);
    }
    Ok(out)
}

fn pairs(r: &MbfReport, method: &str) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for row in r.rows.iter().filter(|m| m.method == method) {
        let reference = r
            .rows
            .iter()
            .find(|m| m.method == REFERENCE_METHOD && m.case_id == row.case_id && m.segment == row.segment);
        if let (Some(a), Some(b)) = (reference.and_then(|m| m.fit.as_ref()), row.fit.as_ref()) {
            x.push(a.mbf);
            y.push(b.mbf);
        }
    }
    (x, y)
}

use crate::harness::report::Svg;

fn bounds(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.1).max(1e-9);
    (lo - pad, hi + pad)
}

fn scatter_svg(x: &[f64], y: &[f64], a: &MethodAgreement) -> String {
    let mut s = Svg::new(360.0, 340.0);
    let (x0, y0, w, h) = (50.0, 20.0, 280.0, 270.0);
    let (lo, hi) = bounds(x.iter().chain(y).copied());
    let p = |v: f64| (v - lo) / (hi - lo);
    s.line(x0, y0 + h, x0 + w, y0 + h);
    s.line(x0, y0, x0, y0 + h);
    s.colored_line(x0, y0 + h, x0 + w, y0, "#999");
    for (&a, &b) in x.iter().zip(y) {
        s.circle(x0 + p(a) * w, y0 + h - p(b) * h, 2.5, "#2b6cb0");
    }
    if let Some(st) = &a.stats {
        let line = |v: f64| st.slope * v + st.intercept;
        s.colored_line(x0, y0 + h - p(line(lo)) * h, x0 + w, y0 + h - p(line(hi)) * h, "#c53030");
        s.text(
            x0 + 6.0,
            y0 + 12.0,
            &format!("r² = {:.3}, y = {:.3}x + {:.3}", st.pearson_r2, st.slope, st.intercept),
            "start",
        );
    }
    s.text(x0 + w / 2.0, y0 + h + 30.0, &format!("{REFERENCE_METHOD} MBF"), "middle");
    s.text(x0 - 36.0, y0 + h / 2.0, &format!("{} MBF", a.method), "middle");
    s.text(x0, y0 + h + 14.0, &format!("{lo:.3}"), "middle");
    s.text(x0 + w, y0 + h + 14.0, &format!("{hi:.3}"), "middle");
    s.finish()
}

fn bland_altman_svg(x: &[f64], y: &[f64], a: &MethodAgreement) -> String {
    let mut s = Svg::new(360.0, 340.0);
    let (x0, y0, w, h) = (50.0, 20.0, 280.0, 270.0);
    let means: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a + b) / 2.0).collect();
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - a).collect();
    let extra = a.stats.as_ref().map(|s| vec![s.loa_low, s.loa_high, s.bias]).unwrap_or_default();
    let (mlo, mhi) = bounds(means.iter().copied());
    let (dlo, dhi) = bounds(diffs.iter().chain(&extra).copied().chain([0.0]));
    let px = |v: f64| x0 + (v - mlo) / (mhi - mlo) * w;
    let py = |v: f64| y0 + h - (v - dlo) / (dhi - dlo) * h;
    s.line(x0, y0 + h, x0 + w, y0 + h);
    s.line(x0, y0, x0, y0 + h);
    for (&m, &d) in means.iter().zip(&diffs) {
        s.circle(px(m), py(d), 2.5, "#2b6cb0");
    }
    if let Some(st) = &a.stats {
        s.colored_line(x0, py(st.bias), x0 + w, py(st.bias), "#c53030");
        s.colored_line(x0, py(st.loa_low), x0 + w, py(st.loa_low), "#999");
        s.colored_line(x0, py(st.loa_high), x0 + w, py(st.loa_high), "#999");
        s.text(
            x0 + 6.0,
            y0 + 12.0,
            &format!("bias {:.4}, LoA [{:.4}, {:.4}]", st.bias, st.loa_low, st.loa_high),
            "start",
        );
    }
    s.text(x0 + w / 2.0, y0 + h + 30.0, "mean of methods", "middle");
    s.text(x0 - 36.0, y0 + h / 2.0, "difference", "middle");
    s.finish()
}
