//! Report files: CSV tables, SVG plots and PGM montages.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::types::{Class, SegmentationSolution};

use super::experiments::{AbReport, HeterogeneityReport, Histogram, Method, MetricCompareReport, MocoReport};

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_writer(fs::File::create(path)?))
}

fn segs(v: &[u8]) -> String {
    v.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(";")
}

fn opt_id(v: Option<u32>) -> String {
    v.map_or(String::new(), |id| id.to_string())
}

/// Writes `ab_cases.csv`, `ab_summary.csv`, `ab_tests.csv` and `ab.svg`.
pub fn write_ab(dir: &Path, r: &AbReport) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let cases = dir.join("ab_cases.csv");
    let mut w = csv_writer(&cases)?;
    w.write_record([
        "cohort",
        "case_id",
        "method",
        "model_id",
        "u_pp",
        "dice",
        "hd95_mm",
        "failed",
        "bloodpool_inclusion",
        "noncontiguous_segments",
    ])?;
    for row in &r.rows {
        w.write_record([
            row.cohort.clone(),
            row.case_id.to_string(),
            row.method.name().to_string(),
            opt_id(row.model_id),
            row.u_pp.to_string(),
            row.eval.dice.to_string(),
            row.eval.hd95_mm.to_string(),
            (row.eval.failure.failed as u8).to_string(),
            (row.eval.failure.bloodpool_inclusion as u8).to_string(),
            segs(&row.eval.failure.noncontiguous_segments),
        ])?;
    }
    w.flush()?;

    let summary = dir.join("ab_summary.csv");
    let mut w = csv_writer(&summary)?;
    w.write_record([
        "cohort",
        "method",
        "n",
        "dice_mean",
        "dice_sd",
        "hd95_mean_mm",
        "hd95_sd_mm",
        "hd95_n",
        "failures",
        "failure_rate",
    ])?;
    for s in &r.summaries {
        w.write_record([
            s.cohort.clone(),
            s.method.name().to_string(),
            s.n.to_string(),
            s.dice_mean.to_string(),
            s.dice_sd.to_string(),
            s.hd95_mean.to_string(),
            s.hd95_sd.to_string(),
            s.hd95_n.to_string(),
            s.failures.to_string(),
            s.failure_rate().to_string(),
        ])?;
    }
    w.flush()?;

    let tests = dir.join("ab_tests.csv");
    let mut w = csv_writer(&tests)?;
    w.write_record(["cohort", "n", "dice_wilcoxon_p", "dice_t_p", "failure_fisher_p"])?;
    for c in &r.comparisons {
        w.write_record([
            c.cohort.clone(),
            c.n.to_string(),
            c.dice_wilcoxon_p.to_string(),
            c.dice_t_p.to_string(),
            c.failure_fisher_p.to_string(),
        ])?;
    }
    w.flush()?;

    let svg = dir.join("ab.svg");
    fs::write(&svg, ab_svg(r))?;
    Ok(vec![cases, summary, tests, svg])
}

const METHOD_COLORS: [(Method, &str); 2] = [(Method::Established, "#8c8c8c"), (Method::Daugs, "#2b6cb0")];

/// Two panels per cohort: Dice mean ± sd and failure rate, one bar per
/// method.
fn ab_svg(r: &AbReport) -> String {
    let cohorts: Vec<&str> = r.comparisons.iter().map(|c| c.cohort.as_str()).collect();
    let panel_w = 120.0 * cohorts.len().max(1) as f64;
    let mut s = Svg::new(2.0 * panel_w + 120.0, 300.0);
    for (panel, title) in ["Dice (mean ± sd)", "Failure rate"].iter().enumerate() {
        let x0 = 50.0 + panel as f64 * (panel_w + 40.0);
        let (y0, h) = (40.0, 200.0);
        s.text(x0 + panel_w / 2.0, 20.0, title, "middle");
        s.line(x0, y0 + h, x0 + panel_w, y0 + h);
        s.line(x0, y0, x0, y0 + h);
        for k in 0..=4 {
            let v = k as f64 / 4.0;
            let y = y0 + h - v * h;
            s.text(x0 - 4.0, y + 4.0, &format!("{v:.2}"), "end");
        }
        for (ci, cohort) in cohorts.iter().enumerate() {
            let cx = x0 + 120.0 * ci as f64;
            s.text(cx + 60.0, y0 + h + 16.0, cohort, "middle");
            for (mi, (method, color)) in METHOD_COLORS.iter().enumerate() {
                let Some(sum) = r.summary(cohort, *method) else { continue };
                let v = if panel == 0 { sum.dice_mean } else { sum.failure_rate() };
                let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
                let bx = cx + 20.0 + 40.0 * mi as f64;
                s.rect(bx, y0 + h - v * h, 30.0, v * h, color);
                if panel == 0 && sum.dice_sd.is_finite() {
                    let top = (sum.dice_mean + sum.dice_sd).min(1.0);
                    let bot = (sum.dice_mean - sum.dice_sd).max(0.0);
                    s.line(bx + 15.0, y0 + h - top * h, bx + 15.0, y0 + h - bot * h);
                }
            }
        }
    }
    for (mi, (method, color)) in METHOD_COLORS.iter().enumerate() {
        let y = 270.0 + 14.0 * mi as f64 - 14.0;
        s.rect(50.0, y - 9.0, 10.0, 10.0, color);
        s.text(64.0, y, method.name(), "start");
    }
    s.finish()
}

/// Writes `moco_runs.csv`, `moco_summary.csv` and `moco.svg`.
pub fn write_moco(dir: &Path, r: &MocoReport) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let runs = dir.join("moco_runs.csv");
    let mut w = csv_writer(&runs)?;
    w.write_record(["f", "run", "frames", "u_pp", "n_myo"])?;
    for row in &r.rows {
        let frames = row.frames.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(";");
        w.write_record([row.f.to_string(), row.run.to_string(), frames, row.u_pp.to_string(), row.n_myo.to_string()])?;
    }
    w.flush()?;
    let summary = dir.join("moco_summary.csv");
    let mut w = csv_writer(&summary)?;
    w.write_record(["f", "n", "u_pp_mean", "u_pp_sd"])?;
    for s in &r.summaries {
        w.write_record([s.f.to_string(), s.n.to_string(), s.u_pp_mean.to_string(), s.u_pp_sd.to_string()])?;
    }
    w.flush()?;
    let points: Vec<(f64, f64, f64)> = r.summaries.iter().map(|s| (s.f as f64, s.u_pp_mean, s.u_pp_sd)).collect();
    let svg = dir.join("moco.svg");
    fs::write(&svg, line_svg(&points, "replaced frames f", "mean U_pp"))?;
    Ok(vec![runs, summary, svg])
}

fn line_svg(points: &[(f64, f64, f64)], xlabel: &str, ylabel: &str) -> String {
    let mut s = Svg::new(420.0, 300.0);
    let (x0, y0, w, h) = (60.0, 20.0, 330.0, 230.0);
    let finite: Vec<&(f64, f64, f64)> = points.iter().filter(|p| p.1.is_finite()).collect();
    let xmax = finite.iter().map(|p| p.0).fold(1.0, f64::max);
    let xmin = finite.iter().map(|p| p.0).fold(xmax, f64::min);
    let ymax = finite.iter().map(|p| p.1 + p.2.max(0.0)).fold(0.0, f64::max).max(1e-12) * 1.1;
    let px = |x: f64| x0 + if xmax > xmin { (x - xmin) / (xmax - xmin) * w } else { w / 2.0 };
    let py = |y: f64| y0 + h - y / ymax * h;
    s.line(x0, y0 + h, x0 + w, y0 + h);
    s.line(x0, y0, x0, y0 + h);
    s.text(x0 + w / 2.0, y0 + h + 36.0, xlabel, "middle");
    s.text(14.0, y0 + h / 2.0, ylabel, "middle");
    for k in 0..=4 {
        let v = ymax * k as f64 / 4.0;
        s.text(x0 - 4.0, py(v) + 4.0, &format!("{v:.3}"), "end");
    }
    let mut path = String::new();
    for (i, p) in finite.iter().enumerate() {
        s.text(px(p.0), y0 + h + 16.0, &format!("{}", p.0), "middle");
        s.line(px(p.0), py((p.1 - p.2).max(0.0)), px(p.0), py(p.1 + p.2));
        s.circle(px(p.0), py(p.1), 3.0, "#2b6cb0");
        let _ = write!(path, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, px(p.0), py(p.1));
    }
    s.path(path.trim_end(), "#2b6cb0");
    s.finish()
}

/// Histogram as an SVG bar chart.
pub fn histogram_svg(h: &Histogram, xlabel: &str, highlight: Option<f64>) -> String {
    let mut s = Svg::new(420.0, 300.0);
    let (x0, y0, w, hh) = (50.0, 20.0, 340.0, 230.0);
    let bins = h.counts.len();
    let cmax = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bw = w / bins as f64;
    s.line(x0, y0 + hh, x0 + w, y0 + hh);
    s.line(x0, y0, x0, y0 + hh);
    for (i, &c) in h.counts.iter().enumerate() {
        let bh = c as f64 / cmax * hh;
        s.rect(x0 + i as f64 * bw + 1.0, y0 + hh - bh, bw - 2.0, bh, "#2b6cb0");
    }
    s.text(x0 - 4.0, y0 + 4.0, &format!("{}", cmax as usize), "end");
    s.text(x0, y0 + hh + 16.0, &format!("{:.4}", h.edges[0]), "middle");
    s.text(x0 + w, y0 + hh + 16.0, &format!("{:.4}", h.edges[bins]), "middle");
    s.text(x0 + w / 2.0, y0 + hh + 36.0, xlabel, "middle");
    if let Some(v) = highlight.filter(|v| v.is_finite()) {
        let span = h.edges[bins] - h.edges[0];
        let x = x0 + if span > 0.0 { (v - h.edges[0]) / span * w } else { 0.0 };
        s.colored_line(x, y0, x, y0 + hh, "#c53030");
    }
    s.finish()
}

const TILE_GAP: usize = 4;

/// Solutions laid out on the montage grid, as 8-bit greyscale. Masks map
/// background, bloodpool and myocardium to 0, 110 and 230; U-maps map
/// [0, 0.5] to [0, 255]. The chosen tile is framed in white.
pub fn montage_pgm(report: &HeterogeneityReport, solutions: &[SegmentationSolution], umaps: bool) -> Result<Vec<u8>> {
    let first = solutions.first().ok_or(Error::Empty("solution list"))?;
    let (w, h) = (first.mask.width(), first.mask.height());
    let (tw, th) = (w + TILE_GAP, h + TILE_GAP);
    let (mw, mh) = (report.cols * tw + TILE_GAP, report.rows * th + TILE_GAP);
    let mut img = vec![40u8; mw * mh];
    for (cell, sol) in report.cells.iter().zip(solutions) {
        if sol.mask.width() != w || sol.mask.height() != h {
            return Err(Error::mismatch("montage solutions differ in size"));
        }
        let (ox, oy) = (TILE_GAP + cell.col * tw, TILE_GAP + cell.row * th);
        if cell.model_id == report.chosen_model {
            let g = TILE_GAP / 2;
            for y in oy - g..oy + h + g {
                for x in ox - g..ox + w + g {
                    img[y * mw + x] = 255;
                }
            }
        }
        for y in 0..h {
            for x in 0..w {
                let v = if umaps {
                    (sol.umap.get(x, y) / 0.5 * 255.0).round().clamp(0.0, 255.0) as u8
                } else {
                    match sol.mask.get(x, y) {
                        Class::Background => 0,
                        Class::Bloodpool => 110,
                        Class::Myocardium => 230,
                    }
                };
                img[(oy + y) * mw + ox + x] = v;
            }
        }
    }
    let mut out = format!("P5\n{mw} {mh}\n255\n").into_bytes();
    out.extend_from_slice(&img);
    Ok(out)
}

/// Writes `pool_upp.csv`, `montage_masks.pgm`, `montage_umaps.pgm` and
/// `upp_histogram.svg`.
pub fn write_heterogeneity(
    dir: &Path,
    r: &HeterogeneityReport,
    solutions: &[SegmentationSolution],
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let table = dir.join("pool_upp.csv");
    let mut w = csv_writer(&table)?;
    w.write_record(["model_id", "row", "col", "u_pp", "chosen"])?;
    for c in &r.cells {
        w.write_record([
            c.model_id.to_string(),
            c.row.to_string(),
            c.col.to_string(),
            c.u_pp.to_string(),
            ((c.model_id == r.chosen_model) as u8).to_string(),
        ])?;
    }
    w.flush()?;
    let masks = dir.join("montage_masks.pgm");
    fs::write(&masks, montage_pgm(r, solutions, false)?)?;
    let umaps = dir.join("montage_umaps.pgm");
    fs::write(&umaps, montage_pgm(r, solutions, true)?)?;
    let chosen_u = r.cells.iter().find(|c| c.model_id == r.chosen_model).map(|c| c.u_pp);
    let hist = dir.join("upp_histogram.svg");
    fs::write(&hist, histogram_svg(&r.histogram, "U_pp", chosen_u))?;
    Ok(vec![table, masks, umaps, hist])
}

/// Writes `metric_cases.csv` and `metric_summary.csv`.
pub fn write_metric_compare(dir: &Path, r: &MetricCompareReport) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let cases = dir.join("metric_cases.csv");
    let mut w = csv_writer(&cases)?;
    w.write_record([
        "cohort",
        "case_id",
        "upp_model",
        "utot_model",
        "agree",
        "upp_n_myo",
        "utot_n_myo",
        "upp_dice",
        "utot_dice",
        "upp_noncontiguous_segments",
        "utot_noncontiguous_segments",
    ])?;
    for row in &r.rows {
        w.write_record([
            row.cohort.clone(),
            row.case_id.to_string(),
            row.upp_model.to_string(),
            row.utot_model.to_string(),
            (row.agree() as u8).to_string(),
            row.upp_n_myo.to_string(),
            row.utot_n_myo.to_string(),
            row.upp_eval.dice.to_string(),
            row.utot_eval.dice.to_string(),
            segs(&row.upp_eval.failure.noncontiguous_segments),
            segs(&row.utot_eval.failure.noncontiguous_segments),
        ])?;
    }
    w.flush()?;
    let summary = dir.join("metric_summary.csv");
    let mut w = csv_writer(&summary)?;
    w.write_record([
        "cohort",
        "n",
        "upp_dice_mean",
        "utot_dice_mean",
        "upp_noncontiguous",
        "utot_noncontiguous",
        "disagreements",
    ])?;
    for s in &r.summaries {
        w.write_record([
            s.cohort.clone(),
            s.n.to_string(),
            s.upp_dice_mean.to_string(),
            s.utot_dice_mean.to_string(),
            s.upp_noncontiguous.to_string(),
            s.utot_noncontiguous.to_string(),
            s.disagreements.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(vec![cases, summary])
}

/// Minimal SVG builder.
pub struct Svg {
    body: String,
    width: f64,
    height: f64,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Self { body: String::new(), width, height }
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64) {
        self.colored_line(x1, y1, x2, y2, "#222");
    }

    pub fn colored_line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, color: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{color}" stroke-width="1"/>"#
        );
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(self.body, r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"/>"#);
    }

    pub fn circle(&mut self, cx: f64, cy: f64, r: f64, fill: &str) {
        let _ = writeln!(self.body, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{r:.2}" fill="{fill}"/>"#);
    }

    pub fn path(&mut self, d: &str, stroke: &str) {
        let _ = writeln!(self.body, r#"<path d="{d}" fill="none" stroke="{stroke}" stroke-width="1.5"/>"#);
    }

    pub fn text(&mut self, x: f64, y: f64, text: &str, anchor: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{}</text>"#,
            esc(text)
        );
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }

    pub fn write_to(self, mut out: impl Write) -> Result<()> {
        out.write_all(self.finish().as_bytes())?;
        Ok(())
    }
}
