//! End-to-end runs of a model pool over cases, and the experiments built on
//! them.

pub mod experiments;
pub mod pool;
pub mod report;

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::dice;
use crate::patching::{binarize_smap, umap_from_channels, MeanCombiner, PatchGrid, PatchView};
use crate::segmenters::{instantiate, CaseContext, SegmenterSpec};
use crate::selection::{checkpoint_filter, established_from_scores, FilteredPool};
use crate::types::{Class, ImageSeries, LabelMask, SegmentationSolution};

/// Window geometry. The reconstruction grid produces the mask; the
/// (usually denser) U-map grid produces the uncertainty map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridConfig {
    pub patch: usize,
    pub recon_stride: usize,
    pub umap_stride: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { patch: 64, recon_stride: 32, umap_stride: 2 }
    }
}

impl GridConfig {
    pub fn grids(&self, h: usize, w: usize) -> Result<(PatchGrid, PatchGrid)> {
        Ok((PatchGrid::new(h, w, self.patch, self.recon_stride)?, PatchGrid::new(h, w, self.patch, self.umap_stride)?))
    }
}

/// A case as seen by the harness.
#[derive(Debug, Clone)]
pub struct Case {
    pub id: u64,
    pub series: Arc<ImageSeries>,
    pub truth: Option<Arc<LabelMask>>,
    pub shift_magnitude: f64,
    pub rv_centroid: Option<(f64, f64)>,
}

impl Case {
    pub fn context(&self, seed: u64) -> CaseContext {
        let mut c = CaseContext::new(self.id, seed).with_shift(self.shift_magnitude);
        if let Some(t) = &self.truth {
            c = c.with_truth(t.clone());
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFailure {
    pub model_id: u32,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub case_id: u64,
    /// In pool order, failed models omitted.
    pub solutions: Vec<SegmentationSolution>,
    pub failures: Vec<ModelFailure>,
}

/// Origins of both grids merged in row-major order, each tagged with its index
/// in the reconstruction and U-map grids.
fn merged_origins(recon: &PatchGrid, umap: &PatchGrid) -> Vec<((usize, usize), Option<usize>, Option<usize>)> {
    let mut all: Vec<(usize, usize)> = recon.origins().chain(umap.origins()).collect();
    all.sort_by_key(|&(x, y)| (y, x));
    all.dedup();
    all.into_iter().map(|o| (o, recon.index_of(o), umap.index_of(o))).collect()
}

/// One model's solution: windows on both grids are predicted once each; the
/// reconstruction windows are averaged and binarised into the mask, and the
/// U-map windows give the uncertainty map with `n_myo` from that mask.
pub fn solve_model(spec: &SegmenterSpec, case: &Case, grid: GridConfig, seed: u64) -> Result<SegmentationSolution> {
    let series = &*case.series;
    let (recon, ugrid) = grid.grids(series.height(), series.width())?;
    let ctx = case.context(seed);
    let mut seg = instantiate(spec, &ctx, series)?;
    let mut combiner = MeanCombiner::new(&recon);
    let mut channels: Vec<Vec<f32>> = vec![Vec::new(); ugrid.len()];
    let mut probs = Vec::new();
    let run = (|| -> Result<()> {
        for (origin, ri, ui) in merged_origins(&recon, &ugrid) {
            seg.predict(&PatchView::new(series, origin, grid.patch)?, &mut probs)?;
            if probs.len() != grid.patch * grid.patch {
                return Err(Error::mismatch("segmenter returned the wrong number of pixels"));
            }
            if let Some(i) = ri {
                combiner.add(i, &probs)?;
            }
            if let Some(i) = ui {
                channels[i] = probs.iter().map(|p| p[Class::Myocardium.index()]).collect();
            }
        }
        Ok(())
    })();
    let fin = seg.finish();
    run?;
    fin?;
    let mean_probs = combiner.finish()?;
    let mask = binarize_smap(&mean_probs);
    let umap = umap_from_channels(&ugrid, |i| &channels[i], mask.count(Class::Myocardium))?;
    Ok(SegmentationSolution { model_id: spec.model_id, mean_probs, mask, umap })
}

/// Mask from the reconstruction grid alone.
pub fn reconstruct(spec: &SegmenterSpec, case: &Case, grid: GridConfig, seed: u64) -> Result<LabelMask> {
    let series = &*case.series;
    let recon = PatchGrid::new(series.height(), series.width(), grid.patch, grid.recon_stride)?;
    let ctx = case.context(seed);
    let mut seg = instantiate(spec, &ctx, series)?;
    let mut combiner = MeanCombiner::new(&recon);
    let mut probs = Vec::new();
    let run = (|| -> Result<()> {
        for (i, origin) in recon.origins().enumerate() {
            seg.predict(&PatchView::new(series, origin, grid.patch)?, &mut probs)?;
            combiner.add(i, &probs)?;
        }
        Ok(())
    })();
    let fin = seg.finish();
    run?;
    fin?;
    Ok(binarize_smap(&combiner.finish()?))
}

/// Segments a case with every pool member. Backend failures are recorded per
/// model; any other error aborts. Fails only when no model succeeds, with
/// the first backend error.
pub fn run_case(case: &Case, pool: &[SegmenterSpec], grid: GridConfig, seed: u64) -> Result<CaseResult> {
    if pool.is_empty() {
        return Err(Error::Empty("model pool"));
    }
    let outcomes: Vec<Result<SegmentationSolution>> =
        pool.par_iter().map(|spec| solve_model(spec, case, grid, seed)).collect();
    collect_outcomes(case.id, pool, outcomes)
}

fn collect_outcomes(
    case_id: u64,
    pool: &[SegmenterSpec],
    outcomes: Vec<Result<SegmentationSolution>>,
) -> Result<CaseResult> {
    let mut solutions = Vec::new();
    let mut failures = Vec::new();
    let mut first_backend = None;
    for (spec, o) in pool.iter().zip(outcomes) {
        match o {
            Ok(s) => solutions.push(s),
            Err(e) if e.is_backend() => {
                failures.push(ModelFailure { model_id: spec.model_id, message: e.to_string() });
                first_backend.get_or_insert(e);
            }
            Err(e) => return Err(e),
        }
    }
    if solutions.is_empty() {
        return Err(first_backend.unwrap_or_else(|| Error::invalid(format!("case {case_id}: every model failed"))));
    }
    Ok(CaseResult { case_id, solutions, failures })
}

/// Runs many cases with parallelism over (case, model) pairs. Output order
/// follows the input order.
pub fn run_cases(cases: &[Case], pool: &[SegmenterSpec], grid: GridConfig, seed: u64) -> Result<Vec<CaseResult>> {
    if pool.is_empty() {
        return Err(Error::Empty("model pool"));
    }
    let pairs: Vec<(usize, usize)> = (0..cases.len()).flat_map(|c| (0..pool.len()).map(move |m| (c, m))).collect();
    let mut outcomes: Vec<Option<Result<SegmentationSolution>>> =
        pairs.par_iter().map(|&(c, m)| Some(solve_model(&pool[m], &cases[c], grid, seed))).collect();
    cases
        .iter()
        .enumerate()
        .map(|(c, case)| {
            let o = outcomes[c * pool.len()..(c + 1) * pool.len()].iter_mut().map(|o| o.take().unwrap()).collect();
            collect_outcomes(case.id, pool, o)
        })
        .collect()
}

/// Mean myocardial Dice of every pool member over the validation cases,
/// using reconstruction-grid masks; recorded into `validation_dice`.
pub fn score_on_validation(pool: &mut [SegmenterSpec], validation: &[Case], grid: GridConfig, seed: u64) -> Result<()> {
    if validation.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    if validation.iter().any(|c| c.truth.is_none()) {
        return Err(Error::invalid("validation cases need ground truth"));
    }
    let pairs: Vec<(usize, usize)> = (0..pool.len()).flat_map(|m| (0..validation.len()).map(move |c| (m, c))).collect();
    let spec_ref: &[SegmenterSpec] = pool;
    let scores: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|&(m, c)| {
            let mask = reconstruct(&spec_ref[m], &validation[c], grid, seed)?;
            dice(&mask, validation[c].truth.as_ref().unwrap(), Class::Myocardium)
        })
        .collect();
    let n = validation.len();
    for (m, spec) in pool.iter_mut().enumerate() {
        let mut total = 0.0;
        for s in &scores[m * n..(m + 1) * n] {
            total += *s.as_ref().map_err(|e| Error::invalid(format!("validation of model {}: {e}", spec.model_id)))?;
        }
        spec.validation_dice = Some(total / n as f64);
    }
    Ok(())
}

/// Scores the pool on the validation cases and returns the best model id.
pub fn established_select(pool: &mut [SegmenterSpec], validation: &[Case], grid: GridConfig, seed: u64) -> Result<u32> {
    if pool.is_empty() {
        return Err(Error::Empty("model pool"));
    }
    score_on_validation(pool, validation, grid, seed)?;
    established_from_scores(pool)
}

/// Scores candidates, filters them, and picks the established model from
/// the filtered pool.
pub fn build_pool(
    candidates: &mut [SegmenterSpec],
    validation: &[Case],
    grid: GridConfig,
    seed: u64,
    threshold: f64,
    per_run_cap: usize,
) -> Result<(FilteredPool, u32)> {
    score_on_validation(candidates, validation, grid, seed)?;
    let filtered = checkpoint_filter(candidates, threshold, per_run_cap)?;
    let established = established_from_scores(&filtered.members)?;
    Ok((filtered, established))
}

/// Builds a rayon pool with `jobs` workers (all cores when `None`).
pub fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        b = b.num_threads(j.max(1));
    }
    b.build().map_err(|e| Error::invalid(format!("thread pool: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmenters::{PerturbParams, SegmenterKind};
    use crate::synth::{gen_phantom, PhantomSpec};

    fn case() -> Case {
        let p = gen_phantom(&PhantomSpec::default()).unwrap();
        Case {
            id: 0,
            series: Arc::new(p.series),
            truth: Some(Arc::new(p.truth)),
            shift_magnitude: 0.0,
            rv_centroid: Some(p.rv_centroid),
        }
    }

    const FAST: GridConfig = GridConfig { patch: 64, recon_stride: 32, umap_stride: 16 };

    #[test]
    fn oracle_solution_is_exact() {
        let c = case();
        let r = run_case(&c, &[SegmenterSpec::new(0, SegmenterKind::Oracle)], FAST, 1).unwrap();
        let s = &r.solutions[0];
        assert_eq!(&s.mask, c.truth.as_deref().unwrap());
        assert_eq!(s.umap.u_pp, 0.0);
        assert_eq!(s.umap.n_myo, s.mask.count(Class::Myocardium));
    }

    #[test]
    fn identical_members_give_identical_solutions() {
        let c = case();
        let p = PerturbParams { boundary_jitter_px: 2.0, label_noise_rate: 0.02, shift_sensitivity: 0.0 };
        let pool: Vec<_> = (0..3).map(|_| SegmenterSpec::new(4, SegmenterKind::PerturbedOracle(p))).collect();
        let r = run_case(&c, &pool, FAST, 1).unwrap();
        assert_eq!(r.solutions[0], r.solutions[1]);
        assert_eq!(r.solutions[1], r.solutions[2]);
        assert!(r.solutions[0].umap.u_pp > 0.0);
    }

    #[test]
    fn merged_origins_cover_both_grids_once() {
        let (a, b) = GridConfig { patch: 64, recon_stride: 32, umap_stride: 3 }.grids(128, 128).unwrap();
        let m = merged_origins(&a, &b);
        assert_eq!(m.iter().filter(|e| e.1.is_some()).count(), a.len());
        assert_eq!(m.iter().filter(|e| e.2.is_some()).count(), b.len());
        let recon_order: Vec<usize> = m.iter().filter_map(|e| e.1).collect();
        assert_eq!(recon_order, (0..a.len()).collect::<Vec<_>>());
    }

    #[test]
    fn solution_matches_separate_pipeline() {
        use crate::patching::{combine_mean, compute_umap, extract_patches, PatchPrediction};
        let c = case();
        let p = PerturbParams { boundary_jitter_px: 1.5, label_noise_rate: 0.01, shift_sensitivity: 0.0 };
        let spec = SegmenterSpec::new(2, SegmenterKind::PerturbedOracle(p));
        let s = solve_model(&spec, &c, FAST, 5).unwrap();
        let (recon, ugrid) = FAST.grids(128, 128).unwrap();
        let ctx = c.context(5);
        let mut seg = instantiate(&spec, &ctx, &c.series).unwrap();
        let predict = |grid: &PatchGrid, seg: &mut Box<dyn crate::segmenters::PatchSegmenter>| {
            extract_patches(&c.series, grid).unwrap();
            grid.origins()
                .enumerate()
                .map(|(i, o)| {
                    let mut out = Vec::new();
                    seg.predict(&PatchView::new(&c.series, o, 64).unwrap(), &mut out).unwrap();
                    PatchPrediction { patch_index: i, size: 64, probs: out }
                })
                .collect::<Vec<_>>()
        };
        let rp = predict(&recon, &mut seg);
        let up = predict(&ugrid, &mut seg);
        let mean = combine_mean(&rp, &recon).unwrap();
        assert_eq!(s.mean_probs, mean);
        let mask = binarize_smap(&mean);
        assert_eq!(s.mask, mask);
        assert_eq!(s.umap, compute_umap(&up, &ugrid, mask.count(Class::Myocardium)).unwrap());
    }

    #[test]
    fn oracle_wins_established_selection() {
        let c = case();
        let noisy = PerturbParams { boundary_jitter_px: 3.0, label_noise_rate: 0.05, shift_sensitivity: 0.0 };
        let mut pool = vec![
            SegmenterSpec::new(0, SegmenterKind::PerturbedOracle(noisy)),
            SegmenterSpec::new(1, SegmenterKind::Oracle),
        ];
        assert_eq!(established_select(&mut pool, &[c], FAST, 0).unwrap(), 1);
        assert_eq!(pool[1].validation_dice, Some(1.0));
        assert!(pool[0].validation_dice.unwrap() < 1.0);
    }
}
