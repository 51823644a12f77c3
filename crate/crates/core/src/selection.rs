//! Per-case uncertainty-guided selection, the fixed-model baseline, and pool
//! filtering.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::segmenters::SegmenterSpec;
use crate::types::SegmentationSolution;

/// Uncertainty energy used to rank solutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UMetric {
    /// Energy per myocardial pixel.
    #[default]
    Upp,
    /// Total energy.
    Utot,
}

impl UMetric {
    pub fn name(self) -> &'static str {
        match self {
            UMetric::Upp => "upp",
            UMetric::Utot => "utot",
        }
    }

    pub fn score(self, s: &SegmentationSolution) -> f64 {
        match self {
            UMetric::Upp => s.umap.u_pp,
            UMetric::Utot => s.umap.u_tot,
        }
    }
}

impl FromStr for UMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "upp" | "u_pp" => Ok(UMetric::Upp),
            "utot" | "u_tot" => Ok(UMetric::Utot),
            _ => Err(Error::Parse(format!("unknown metric {s:?} (expected upp or utot)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Index into the input list.
    pub chosen: usize,
    pub model_id: u32,
    /// Input indices from best to worst.
    pub ranking: Vec<usize>,
    pub metric: UMetric,
}

/// The scalar summaries ranking needs from one solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolutionScore {
    pub model_id: u32,
    pub u_pp: f64,
    pub u_tot: f64,
    pub n_myo: usize,
}

impl From<&SegmentationSolution> for SolutionScore {
    fn from(s: &SegmentationSolution) -> Self {
        Self { model_id: s.model_id, u_pp: s.umap.u_pp, u_tot: s.umap.u_tot, n_myo: s.umap.n_myo }
    }
}

impl SolutionScore {
    pub fn score(&self, metric: UMetric) -> f64 {
        match metric {
            UMetric::Upp => self.u_pp,
            UMetric::Utot => self.u_tot,
        }
    }
}

/// Orders solutions by the chosen energy, lowest first. Solutions with an
/// empty myocardium go last under either metric; ties fall to the lower
/// model id.
pub fn rank(solutions: &[SegmentationSolution], metric: UMetric) -> Vec<usize> {
    let scores: Vec<SolutionScore> = solutions.iter().map(SolutionScore::from).collect();
    rank_scores(&scores, metric)
}

pub fn rank_scores(scores: &[SolutionScore], metric: UMetric) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| compare(&scores[a], &scores[b], metric));
    idx
}

fn compare(a: &SolutionScore, b: &SolutionScore, metric: UMetric) -> Ordering {
    (a.n_myo == 0)
        .cmp(&(b.n_myo == 0))
        .then(a.score(metric).total_cmp(&b.score(metric)))
        .then(a.model_id.cmp(&b.model_id))
}

pub fn daugs_select(solutions: &[SegmentationSolution], metric: UMetric) -> Result<Selection> {
    let scores: Vec<SolutionScore> = solutions.iter().map(SolutionScore::from).collect();
    select_scores(&scores, metric)
}

pub fn select_scores(scores: &[SolutionScore], metric: UMetric) -> Result<Selection> {
    if scores.is_empty() {
        return Err(Error::Empty("solution list"));
    }
    let ranking = rank_scores(scores, metric);
    let chosen = ranking[0];
    Ok(Selection { chosen, model_id: scores[chosen].model_id, ranking, metric })
}

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.9e}")
    }
}

/// `model_id,u_pp,u_tot,n_myo,chosen` rows in input order.
pub fn write_selection_csv<W: Write>(mut w: W, solutions: &[SegmentationSolution], sel: &Selection) -> Result<()> {
    writeln!(w, "model_id,u_pp,u_tot,n_myo,chosen")?;
    for (i, s) in solutions.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{},{}",
            s.model_id,
            fmt_f64(s.umap.u_pp),
            fmt_f64(s.umap.u_tot),
            s.umap.n_myo,
            (i == sel.chosen) as u8
        )?;
    }
    Ok(())
}

/// Picks the model with the highest recorded validation Dice (lowest model id
/// on ties).
pub fn established_from_scores(pool: &[SegmenterSpec]) -> Result<u32> {
    if pool.is_empty() {
        return Err(Error::Empty("model pool"));
    }
    let mut best: Option<(f64, u32)> = None;
    for s in pool {
        let d =
            s.validation_dice.ok_or_else(|| Error::invalid(format!("model {} has no validation score", s.model_id)))?;
        let better = match best {
            None => true,
            Some((bd, bid)) => d > bd || (d == bd && s.model_id < bid),
        };
        if better {
            best = Some((d, s.model_id));
        }
    }
    Ok(best.expect("non-empty pool").1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilteredPool {
    pub members: Vec<SegmenterSpec>,
    pub warnings: Vec<String>,
}

/// Keeps, per training run, up to `per_run_cap` candidates whose validation
/// Dice is at least `threshold`, best first. Candidates without a run id form
/// their own group. The result is ordered by model id.
pub fn checkpoint_filter(candidates: &[SegmenterSpec], threshold: f64, per_run_cap: usize) -> Result<FilteredPool> {
    let mut runs: BTreeMap<Option<u32>, Vec<&SegmenterSpec>> = BTreeMap::new();
    for c in candidates {
        if c.validation_dice.is_none() {
            return Err(Error::invalid(format!("candidate {} has no validation score", c.model_id)));
        }
        runs.entry(c.run_id).or_default().push(c);
    }
    let mut members = Vec::new();
    let mut warnings = Vec::new();
    for (run, mut cands) in runs {
        cands.retain(|c| c.validation_dice.unwrap() >= threshold);
        if cands.is_empty() {
            let name = run.map_or("without run id".to_string(), |r| r.to_string());
            warnings.push(format!("run {name}: no checkpoint reaches validation Dice {threshold}"));
            continue;
        }
        cands.sort_by(|a, b| {
            b.validation_dice.unwrap().total_cmp(&a.validation_dice.unwrap()).then(a.model_id.cmp(&b.model_id))
        });
        members.extend(cands.into_iter().take(per_run_cap).cloned());
    }
    members.sort_by_key(|m| m.model_id);
    Ok(FilteredPool { members, warnings })
}
