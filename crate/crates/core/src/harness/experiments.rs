//! Cohort-level comparisons of DAUGS against the established approach, and
//! the supporting experiments.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::metrics::{
    aha6_split, detect_failure, dice, fisher_exact, hd95, paired_tests, rv_centroid, FailureConfig, FailureReport,
    RvReference,
};
use crate::segmenters::SegmenterSpec;
use crate::selection::{daugs_select, UMetric};
use crate::synth::CohortCase;
use crate::types::{Class, LabelMask};

use super::{run_case, Case, GridConfig, ModelFailure};

impl From<&CohortCase> for Case {
    fn from(c: &CohortCase) -> Self {
        Case {
            id: c.id,
            series: Arc::new(c.series.clone()),
            truth: Some(Arc::new(c.truth.clone())),
            shift_magnitude: c.shift_magnitude,
            rv_centroid: Some(c.rv_centroid),
        }
    }
}

/// Quality of one mask against the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub dice: f64,
    /// NaN when either mask has no myocardium.
    pub hd95_mm: f64,
    pub failure: FailureReport,
}

/// Dice, HD95 and the failure criteria for one mask. Sectors are placed from
/// `rv` when given, else from the mask's own RV. A mask without myocardium
/// or RV counts as failed.
pub fn evaluate(
    mask: &LabelMask,
    truth: &LabelMask,
    rv: Option<(f64, f64)>,
    spacing_mm: (f64, f64),
    cfg: FailureConfig,
) -> Result<Evaluation> {
    let d = dice(mask, truth, Class::Myocardium)?;
    let hd = match hd95(mask, truth, Class::Myocardium, spacing_mm) {
        Ok(v) => v,
        Err(Error::Undefined(_)) => f64::NAN,
        Err(e) => return Err(e),
    };
    let rv = rv.or_else(|| rv_centroid(mask));
    let failure = match rv.map(|(x, y)| aha6_split(mask, RvReference::Centroid(x, y))) {
        Some(Ok(seg)) => detect_failure(mask, &seg, cfg),
        Some(Err(Error::Empty(_))) | None => {
            FailureReport { bloodpool_inclusion: false, noncontiguous_segments: Vec::new(), failed: true }
        }
        Some(Err(e)) => return Err(e),
    };
    Ok(Evaluation { dice: d, hd95_mm: hd, failure })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Method {
    Established,
    Daugs,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Established => "established",
            Method::Daugs => "daugs",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Cohort {
    pub name: String,
    pub cases: Vec<Case>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbConfig {
    pub grid: GridConfig,
    pub seed: u64,
    pub metric: UMetric,
    pub failure: FailureConfig,
}

/// One (case, method) outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct AbRow {
    pub cohort: String,
    pub case_id: u64,
    pub method: Method,
    /// `None` when the established model failed on this case.
    pub model_id: Option<u32>,
    pub u_pp: f64,
    pub eval: Evaluation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbSummary {
    pub cohort: String,
    pub method: Method,
    pub n: usize,
    pub dice_mean: f64,
    pub dice_sd: f64,
    /// Over cases where HD95 is defined.
    pub hd95_mean: f64,
    pub hd95_sd: f64,
    pub hd95_n: usize,
    pub failures: usize,
}

impl AbSummary {
    pub fn failure_rate(&self) -> f64 {
        self.failures as f64 / self.n as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbComparison {
    pub cohort: String,
    pub n: usize,
    pub dice_wilcoxon_p: f64,
    pub dice_t_p: f64,
    pub failure_fisher_p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbReport {
    pub established_id: u32,
    pub metric: UMetric,
    /// Grouped by cohort, then case, then method.
    pub rows: Vec<AbRow>,
    pub summaries: Vec<AbSummary>,
    pub comparisons: Vec<AbComparison>,
    pub model_failures: Vec<(String, u64, ModelFailure)>,
    pub warnings: Vec<String>,
}

impl AbReport {
    pub fn summary(&self, cohort: &str, method: Method) -> Option<&AbSummary> {
        self.summaries.iter().find(|s| s.cohort == cohort && s.method == method)
    }

    pub fn comparison(&self, cohort: &str) -> Option<&AbComparison> {
        self.comparisons.iter().find(|c| c.cohort == cohort)
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

fn failed_eval(truth: &LabelMask) -> Result<Evaluation> {
    let empty = LabelMask::filled(truth.width(), truth.height(), Class::Background);
    Ok(Evaluation {
        dice: dice(&empty, truth, Class::Myocardium)?,
        hd95_mm: f64::NAN,
        failure: FailureReport { bloodpool_inclusion: false, noncontiguous_segments: Vec::new(), failed: true },
    })
}

/// Segments every case with the whole pool, then compares the per-case
/// DAUGS choice against the fixed `established` model. Cases are processed
/// in order with the pool evaluated in parallel, so the report does not
/// depend on the worker count. Empty cohorts are skipped with a warning.
pub fn experiment_ab(cohorts: &[Cohort], pool: &[SegmenterSpec], established: u32, cfg: &AbConfig) -> Result<AbReport> {
    if !pool.iter().any(|m| m.model_id == established) {
        return Err(Error::invalid(format!("established model {established} is not in the pool")));
    }
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    let mut comparisons = Vec::new();
    let mut model_failures = Vec::new();
    let mut warnings = Vec::new();
    for cohort in cohorts {
        if cohort.cases.is_empty() {
            warnings.push(format!("cohort {} is empty; skipped", cohort.name));
            continue;
        }
        let mut per_method: [Vec<Evaluation>; 2] = [Vec::new(), Vec::new()];
        for case in &cohort.cases {
            let truth =
                case.truth.as_deref().ok_or_else(|| Error::invalid(format!("case {} has no ground truth", case.id)))?;
            let spacing = case.series.spacing_mm();
            let result = run_case(case, pool, cfg.grid, cfg.seed)?;
            model_failures.extend(result.failures.iter().map(|f| (cohort.name.clone(), case.id, f.clone())));

            let est = result.solutions.iter().find(|s| s.model_id == established);
            let est_row = match est {
                Some(s) => AbRow {
                    cohort: cohort.name.clone(),
                    case_id: case.id,
                    method: Method::Established,
                    model_id: Some(s.model_id),
                    u_pp: s.umap.u_pp,
                    eval: evaluate(&s.mask, truth, case.rv_centroid, spacing, cfg.failure)?,
                },
                None => AbRow {
                    cohort: cohort.name.clone(),
                    case_id: case.id,
                    method: Method::Established,
                    model_id: None,
                    u_pp: f64::NAN,
                    eval: failed_eval(truth)?,
                },
            };
            let sel = daugs_select(&result.solutions, cfg.metric)?;
            let chosen = &result.solutions[sel.chosen];
            let daugs_row = AbRow {
                cohort: cohort.name.clone(),
                case_id: case.id,
                method: Method::Daugs,
                model_id: Some(chosen.model_id),
                u_pp: chosen.umap.u_pp,
                eval: evaluate(&chosen.mask, truth, case.rv_centroid, spacing, cfg.failure)?,
            };
            per_method[0].push(est_row.eval.clone());
            per_method[1].push(daugs_row.eval.clone());
            rows.push(est_row);
            rows.push(daugs_row);
        }
        for (method, evals) in [Method::Established, Method::Daugs].into_iter().zip(&per_method) {
            let d: Vec<f64> = evals.iter().map(|e| e.dice).collect();
            let h: Vec<f64> = evals.iter().map(|e| e.hd95_mm).filter(|v| v.is_finite()).collect();
            let (dice_mean, dice_sd) = mean_sd(&d);
            let (hd95_mean, hd95_sd) = mean_sd(&h);
            summaries.push(AbSummary {
                cohort: cohort.name.clone(),
                method,
                n: d.len(),
                dice_mean,
                dice_sd,
                hd95_mean,
                hd95_sd,
                hd95_n: h.len(),
                failures: evals.iter().filter(|e| e.failure.failed).count(),
            });
        }
        let n = cohort.cases.len();
        let (dice_wilcoxon_p, dice_t_p) = if n >= 2 {
            let a: Vec<f64> = per_method[1].iter().map(|e| e.dice).collect();
            let b: Vec<f64> = per_method[0].iter().map(|e| e.dice).collect();
            let t = paired_tests(&a, &b)?;
            (t.wilcoxon_p_value, t.t_p_value)
        } else {
            warnings.push(format!("cohort {} has a single case; no paired test", cohort.name));
            (f64::NAN, f64::NAN)
        };
        let fails = |v: &Vec<Evaluation>| v.iter().filter(|e| e.failure.failed).count() as u64;
        let failure_fisher_p = fisher_exact(fails(&per_method[1]), n as u64, fails(&per_method[0]), n as u64)?;
        comparisons.push(AbComparison { cohort: cohort.name.clone(), n, dice_wilcoxon_p, dice_t_p, failure_fisher_p });
    }
    if comparisons.is_empty() {
        return Err(Error::Empty("cohorts"));
    }
    Ok(AbReport {
        established_id: established,
        metric: cfg.metric,
        rows,
        summaries,
        comparisons,
        model_failures,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MocoRow {
    pub f: usize,
    pub run: usize,
    pub frames: Vec<usize>,
    pub u_pp: f64,
    pub n_myo: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MocoSummary {
    pub f: usize,
    pub n: usize,
    pub u_pp_mean: f64,
    pub u_pp_sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MocoReport {
    pub rows: Vec<MocoRow>,
    pub summaries: Vec<MocoSummary>,
    /// Spearman correlation of f against the mean U_pp.
    pub spearman_rho: f64,
}

/// Monte Carlo of frame-swap motion-correction failure: for each `f`, `n_mc`
/// corrupted copies of `systolic` are segmented by `model` and their U_pp
/// recorded. Run `r` at level `f` always uses the same corruption stream.
pub fn experiment_moco(
    systolic: &crate::types::ImageSeries,
    diastolic: &crate::types::ImageSeries,
    model: &SegmenterSpec,
    f_values: &[usize],
    n_mc: usize,
    grid: GridConfig,
    seed: u64,
) -> Result<MocoReport> {
    use rayon::prelude::*;

    if f_values.is_empty() || n_mc == 0 {
        return Err(Error::invalid("moco experiment needs at least one level and one run"));
    }
    let jobs: Vec<(usize, usize)> = f_values.iter().flat_map(|&f| (0..n_mc).map(move |r| (f, r))).collect();
    let rows: Vec<MocoRow> = jobs
        .par_iter()
        .map(|&(f, run)| {
            let mut rng = crate::synth::moco_stream(seed, f, run);
            let (series, frames) = crate::synth::moco_corrupt(systolic, diastolic, f, &mut rng)?;
            let case = Case { id: 0, series: Arc::new(series), truth: None, shift_magnitude: 0.0, rv_centroid: None };
            let s = super::solve_model(model, &case, grid, seed)?;
            Ok(MocoRow { f, run, frames, u_pp: s.umap.u_pp, n_myo: s.umap.n_myo })
        })
        .collect::<Result<_>>()?;
    let summaries: Vec<MocoSummary> = f_values
        .iter()
        .map(|&f| {
            let v: Vec<f64> = rows.iter().filter(|r| r.f == f).map(|r| r.u_pp).collect();
            let (m, sd) = mean_sd(&v);
            MocoSummary { f, n: v.len(), u_pp_mean: m, u_pp_sd: sd }
        })
        .collect();
    let spearman_rho = if summaries.len() >= 2 {
        let x: Vec<f64> = summaries.iter().map(|s| s.f as f64).collect();
        let y: Vec<f64> = summaries.iter().map(|s| s.u_pp_mean).collect();
        crate::metrics::stats::spearman(&x, &y)?
    } else {
        f64::NAN
    };
    Ok(MocoReport { rows, summaries, spearman_rho })
}

/// Where each pool member sits in the solution montage.
#[derive(Debug, Clone, PartialEq)]
pub struct MontageCell {
    pub model_id: u32,
    pub row: usize,
    pub col: usize,
    pub u_pp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` edges, ascending.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Values left out because they are not finite.
    pub excluded: usize,
}

/// Equal-width histogram over the finite values. When every value is the
/// same, everything lands in the first bin of a unit-width range.
pub fn histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::invalid("histogram needs at least one bin"));
    }
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let excluded = values.len() - finite.len();
    if finite.is_empty() {
        return Ok(Histogram { edges: (0..=bins).map(|i| i as f64).collect(), counts: vec![0; bins], excluded });
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 / bins as f64 };
    let edges: Vec<f64> = (0..=bins).map(|i| lo + i as f64 * width).collect();
    let mut counts = vec![0; bins];
    for v in finite {
        let b = (((v - lo) / width).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    Ok(Histogram { edges, counts, excluded })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeterogeneityReport {
    pub rows: usize,
    pub cols: usize,
    pub cells: Vec<MontageCell>,
    pub chosen_model: u32,
    pub histogram: Histogram,
}

pub const HISTOGRAM_BINS: usize = 20;

/// Montage layout and U_pp histogram for one case's pool solutions. When
/// every member carries run and checkpoint ids, rows are runs and columns
/// checkpoints in ascending order; otherwise members fill a near-square grid
/// row by row.
pub fn pool_heterogeneity(
    solutions: &[crate::types::SegmentationSolution],
    pool: &[SegmenterSpec],
    metric: UMetric,
) -> Result<HeterogeneityReport> {
    if solutions.len() < 2 {
        return Err(Error::invalid("pool heterogeneity needs at least two solutions"));
    }
    let spec_of = |id: u32| pool.iter().find(|s| s.model_id == id);
    let structured: Option<Vec<(u32, u32)>> =
        solutions.iter().map(|s| spec_of(s.model_id).and_then(|p| Some((p.run_id?, p.checkpoint_id?)))).collect();
    let (rows, cols, pos): (usize, usize, Vec<(usize, usize)>) = match structured {
        Some(rc) => {
            let mut runs: Vec<u32> = rc.iter().map(|r| r.0).collect();
            runs.sort_unstable();
            runs.dedup();
            let mut per_run: Vec<Vec<u32>> = vec![Vec::new(); runs.len()];
            for &(r, c) in &rc {
                per_run[runs.binary_search(&r).unwrap()].push(c);
            }
            per_run.iter_mut().for_each(|v| {
                v.sort_unstable();
                v.dedup();
            });
            let cols = per_run.iter().map(Vec::len).max().unwrap_or(1);
            let pos = rc
                .iter()
                .map(|&(r, c)| {
                    let row = runs.binary_search(&r).unwrap();
                    (row, per_run[row].binary_search(&c).unwrap())
                })
                .collect();
            (runs.len(), cols, pos)
        }
        None => {
            let n = solutions.len();
            let cols = (n as f64).sqrt().ceil() as usize;
            (n.div_ceil(cols), cols, (0..n).map(|i| (i / cols, i % cols)).collect())
        }
    };
    let cells = solutions
        .iter()
        .zip(pos)
        .map(|(s, (row, col))| MontageCell { model_id: s.model_id, row, col, u_pp: s.umap.u_pp })
        .collect();
    let chosen_model = daugs_select(solutions, metric)?.model_id;
    let u: Vec<f64> = solutions.iter().map(|s| s.umap.u_pp).collect();
    Ok(HeterogeneityReport { rows, cols, cells, chosen_model, histogram: histogram(&u, HISTOGRAM_BINS)? })
}

/// The two metrics' choices on one case.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricCompareRow {
    pub cohort: String,
    pub case_id: u64,
    pub upp_model: u32,
    pub utot_model: u32,
    pub upp_n_myo: usize,
    pub utot_n_myo: usize,
    pub upp_eval: Evaluation,
    pub utot_eval: Evaluation,
}

impl MetricCompareRow {
    pub fn agree(&self) -> bool {
        self.upp_model == self.utot_model
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricCompareSummary {
    pub cohort: String,
    pub n: usize,
    pub upp_dice_mean: f64,
    pub utot_dice_mean: f64,
    pub upp_noncontiguous: usize,
    pub utot_noncontiguous: usize,
    pub disagreements: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricCompareReport {
    pub rows: Vec<MetricCompareRow>,
    pub summaries: Vec<MetricCompareSummary>,
}

impl MetricCompareReport {
    pub fn disagreements(&self) -> impl Iterator<Item = &MetricCompareRow> {
        self.rows.iter().filter(|r| !r.agree())
    }
}

/// Selects with both metrics among precomputed solutions and evaluates both
/// choices.
pub fn compare_metrics_on_case(
    cohort: &str,
    case: &Case,
    solutions: &[crate::types::SegmentationSolution],
    failure: FailureConfig,
) -> Result<MetricCompareRow> {
    let truth = case.truth.as_deref().ok_or_else(|| Error::invalid(format!("case {} has no ground truth", case.id)))?;
    let spacing = case.series.spacing_mm();
    let a = &solutions[daugs_select(solutions, UMetric::Upp)?.chosen];
    let b = &solutions[daugs_select(solutions, UMetric::Utot)?.chosen];
    Ok(MetricCompareRow {
        cohort: cohort.to_string(),
        case_id: case.id,
        upp_model: a.model_id,
        utot_model: b.model_id,
        upp_n_myo: a.umap.n_myo,
        utot_n_myo: b.umap.n_myo,
        upp_eval: evaluate(&a.mask, truth, case.rv_centroid, spacing, failure)?,
        utot_eval: evaluate(&b.mask, truth, case.rv_centroid, spacing, failure)?,
    })
}

/// Per-cohort means and counts over precomputed rows.
pub fn summarize_metric_rows(cohort: &str, rows: &[MetricCompareRow]) -> MetricCompareSummary {
    let n = rows.len();
    let mean = |f: &dyn Fn(&MetricCompareRow) -> f64| rows.iter().map(f).sum::<f64>() / n as f64;
    let noncontig = |e: &Evaluation| !e.failure.noncontiguous_segments.is_empty();
    MetricCompareSummary {
        cohort: cohort.to_string(),
        n,
        upp_dice_mean: mean(&|r| r.upp_eval.dice),
        utot_dice_mean: mean(&|r| r.utot_eval.dice),
        upp_noncontiguous: rows.iter().filter(|r| noncontig(&r.upp_eval)).count(),
        utot_noncontiguous: rows.iter().filter(|r| noncontig(&r.utot_eval)).count(),
        disagreements: rows.iter().filter(|r| !r.agree()).count(),
    }
}

/// Runs the pool on every case and compares selection under U_pp and U_tot.
pub fn metric_variant_compare(
    cohorts: &[Cohort],
    pool: &[SegmenterSpec],
    cfg: &AbConfig,
) -> Result<MetricCompareReport> {
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for cohort in cohorts {
        if cohort.cases.is_empty() {
            continue;
        }
        let mut cohort_rows = Vec::with_capacity(cohort.cases.len());
        for case in &cohort.cases {
            let result = run_case(case, pool, cfg.grid, cfg.seed)?;
            cohort_rows.push(compare_metrics_on_case(&cohort.name, case, &result.solutions, cfg.failure)?);
        }
        summaries.push(summarize_metric_rows(&cohort.name, &cohort_rows));
        rows.extend(cohort_rows);
    }
    if summaries.is_empty() {
        return Err(Error::Empty("cohorts"));
    }
    Ok(MetricCompareReport { rows, summaries })
}

/// A case with two candidate solutions on which the metrics disagree: model 0
/// is the complete ring with moderate uncertainty everywhere on it; model 1
/// keeps a few short arcs of the ring with higher per-pixel uncertainty but a
/// smaller total. U_tot prefers the fragmented model 1, U_pp the complete
/// model 0.
pub fn metric_fixture() -> (Case, Vec<crate::types::SegmentationSolution>) {
    use crate::types::{ClassProbabilityMap, SegmentationSolution, UncertaintyMap};

    let n = 64;
    let (cx, cy) = (34.0, 32.0);
    let dist = |x: usize, y: usize| ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
    let rv = (10.0, 32.0);
    let truth = LabelMask::from_fn(n, n, |x, y| {
        let d = dist(x, y);
        let drv = ((x as f64 - rv.0).powi(2) + (y as f64 - rv.1).powi(2)).sqrt();
        if d < 10.0 {
            Class::Bloodpool
        } else if d < 16.0 {
            Class::Myocardium
        } else if drv < 7.0 {
            Class::Bloodpool
        } else {
            Class::Background
        }
    });
    // 10° arcs every 30°, so each 60° sector holds two pieces
    let fragmented = LabelMask::from_fn(n, n, |x, y| {
        let c = truth.get(x, y);
        if c != Class::Myocardium {
            return c;
        }
        let ang = (-(y as f64 - cy)).atan2(x as f64 - cx).to_degrees().rem_euclid(360.0);
        if (ang / 10.0).floor() as usize % 3 == 0 {
            Class::Myocardium
        } else {
            Class::Background
        }
    });
    let solution = |id: u32, mask: LabelMask, u: f32| {
        let vals = mask.labels().iter().map(|&c| if c == Class::Myocardium { u } else { 0.0 }).collect();
        let n_myo = mask.count(Class::Myocardium);
        SegmentationSolution {
            model_id: id,
            mean_probs: ClassProbabilityMap::one_hot(&mask),
            umap: UncertaintyMap::from_values(n, n, vals, n_myo).expect("fixture shape"),
            mask,
        }
    };
    let sols = vec![solution(0, truth.clone(), 0.2), solution(1, fragmented, 0.3)];
    let series = crate::types::ImageSeries::from_fn(n, n, 2, 1.0, |_, _, _| 0.0).expect("fixture series");
    let case = Case {
        id: 0,
        series: Arc::new(series),
        truth: Some(Arc::new(truth)),
        shift_magnitude: 0.0,
        rv_centroid: Some(rv),
    };
    (case, sols)
}
