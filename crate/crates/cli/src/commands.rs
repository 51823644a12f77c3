use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use daugs_core::error::Error;
use daugs_core::harness::experiments::{
    compare_metrics_on_case, evaluate, experiment_ab, experiment_moco, metric_fixture, metric_variant_compare,
    pool_heterogeneity, summarize_metric_rows, AbConfig, Cohort, MetricCompareReport,
};
use daugs_core::harness::report::{write_ab, write_heterogeneity, write_metric_compare, write_moco};
use daugs_core::harness::{run_case, run_cases, score_on_validation, Case, CaseResult};
use daugs_core::perfusion::{mbf_table, write_mbf, FitOptions, Lut, MbfCase};
use daugs_core::preprocess::preprocess;
use daugs_core::segmenters::{CurveMatchParams, SegmenterKind, SegmenterSpec};
use daugs_core::selection::{checkpoint_filter, established_from_scores, select_scores, SolutionScore};
use daugs_core::synth::{gen_cohort, gen_phantom, read_manifest, write_cohort, ManifestEntry, PhantomSpec, Regime};
use daugs_core::tensor::Tensor;
use daugs_core::types::{LabelMask, SegmentationSolution};

use crate::pool_cfg::{external, read_pool, write_pool};
use crate::{CliError, Command, Ctx, MethodArg, RegimeArg, Summary};

/// First id of the validation cohort, clear of the test cohorts.
const VALIDATION_FIRST_ID: u64 = 1000;

pub fn run(ctx: &Ctx, cmd: Command, summary: &mut Summary) -> Result<(), CliError> {
    match cmd {
        Command::Phantom { n, regime, first_id } => phantom(ctx, n, regime, first_id, summary),
        Command::Preprocess { input, manifest, dt_s } => preprocess_cmd(ctx, input, manifest, dt_s, summary),
        Command::Run { manifest, pool } => run_cmd(ctx, &manifest, pool.as_deref(), summary),
        Command::Select { solutions, method, established, pool } => {
            select(ctx, &solutions, method, established, pool.as_deref(), summary)
        }
        Command::Eval { manifest, run_dir, selection } => eval(ctx, &manifest, &run_dir, selection.as_deref(), summary),
        Command::Mbf { manifest, run_dir, selections, lut, aif } => {
            mbf(ctx, &manifest, &run_dir, &selections, lut.as_deref(), aif.as_deref(), summary)
        }
        Command::Mocosim => mocosim(ctx, summary),
        Command::Abtest { pool } => abtest(ctx, pool.as_deref(), summary),
        Command::Poolreport { pool, manifest, case } => {
            poolreport(ctx, pool.as_deref(), manifest.as_deref(), case, summary)
        }
        Command::Metriccompare { pool, fixture } => metriccompare(ctx, pool.as_deref(), fixture, summary),
    }
}

fn regime(r: RegimeArg) -> Regime {
    match r {
        RegimeArg::None => Regime::None,
        RegimeArg::Shifted => Regime::Shifted,
    }
}

fn phantom(ctx: &Ctx, n: usize, r: RegimeArg, first_id: u64, summary: &mut Summary) -> Result<(), CliError> {
    if n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let cases = gen_cohort(n, &PhantomSpec::default(), regime(r), ctx.settings.seed, first_id)?;
    let entries = write_cohort(&ctx.out, &cases)?;
    summary.put("cases", entries.len());
    summary.put("regime", regime(r).name());
    summary.outputs(&ctx.out, &[ctx.out.join("manifest.csv")]);
    Ok(())
}

fn preprocess_cmd(
    ctx: &Ctx,
    input: Option<PathBuf>,
    manifest: Option<PathBuf>,
    dt_s: f64,
    summary: &mut Summary,
) -> Result<(), CliError> {
    let mut jobs: Vec<(String, daugs_core::types::ImageSeries, PathBuf)> = Vec::new();
    if let Some(p) = input {
        let series = Tensor::read_file(existing(&p)?)?.to_series(dt_s, (1.0, 1.0))?;
        jobs.push((p.display().to_string(), series, PathBuf::from("preprocessed.fpt")));
    } else if let Some(m) = manifest {
        let base = m.parent().unwrap_or(Path::new(".")).to_path_buf();
        for e in read_manifest(existing(&m)?)? {
            let series = Tensor::read_file(existing(&base.join(&e.series_path))?)?.to_series(e.dt_s, e.spacing_mm)?;
            let out = PathBuf::from(format!("cases/case{:04}_series.fpt", e.id));
            jobs.push((e.series_path.display().to_string(), series, out));
        }
    }
    std::fs::create_dir_all(ctx.out.join("cases"))?;
    let table = ctx.out.join("preprocessed.csv");
    let mut w = csv::Writer::from_path(&table)?;
    w.write_record(["input", "output", "width", "height", "frames"])?;
    for (src, series, dst) in &jobs {
        let p = preprocess(series, None)?;
        Tensor::from(&p).write_file(ctx.out.join(dst))?;
        w.write_record([
            src.clone(),
            dst.display().to_string(),
            p.width().to_string(),
            p.height().to_string(),
            p.n_frames().to_string(),
        ])?;
    }
    w.flush()?;
    summary.put("series", jobs.len());
    summary.outputs(&ctx.out, &[table]);
    Ok(())
}

struct Loaded {
    entry: ManifestEntry,
    case: Case,
}

fn load_manifest(path: &Path) -> Result<Vec<Loaded>, CliError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let entries = read_manifest(existing(path)?)?;
    if entries.is_empty() {
        return Err(CliError::Core(Error::Empty("manifest")));
    }
    entries
        .into_iter()
        .map(|entry| {
            existing(&base.join(&entry.series_path))?;
            existing(&base.join(&entry.gt_path))?;
            let (series, truth) = entry.load(base)?;
            let case = Case {
                id: entry.id,
                series: Arc::new(series),
                truth: Some(Arc::new(truth)),
                shift_magnitude: entry.shift_magnitude,
                rv_centroid: Some(entry.rv_centroid),
            };
            Ok(Loaded { entry, case })
        })
        .collect()
}

/// Pool members from `pool.cfg` (or the default checkpoint pool), followed by
/// one external member per `--backend` with ids above every other member.
fn candidates(ctx: &Ctx, pool: Option<&Path>) -> Result<Vec<SegmenterSpec>, CliError> {
    let mut specs = match pool {
        Some(p) => read_pool(p, ctx.settings.backend_timeout_s)?,
        None => ctx.settings.pool.candidates()?,
    };
    let next = specs.iter().map(|s| s.model_id + 1).max().unwrap_or(0);
    for (i, cmd) in ctx.backends.iter().enumerate() {
        specs.push(external(next + i as u32, cmd, ctx.settings.backend_timeout_s)?);
    }
    Ok(specs)
}

struct PreparedPool {
    members: Vec<SegmenterSpec>,
    established: u32,
    warnings: Vec<String>,
}

/// Scores members on the validation cohort unless every member already has
/// a score, filters by the checkpoint rule and picks the established model.
fn prepared_pool(ctx: &Ctx, pool: Option<&Path>) -> Result<PreparedPool, CliError> {
    let s = &ctx.settings;
    let mut specs = candidates(ctx, pool)?;
    if specs.iter().any(|m| m.validation_dice.is_none()) {
        if s.validation_cases == 0 {
            return Err(CliError::Usage("pool has unscored members and [cohort] validation = 0".into()));
        }
        let val = gen_cohort(s.validation_cases, &PhantomSpec::default(), Regime::None, s.seed, VALIDATION_FIRST_ID)?;
        let val: Vec<Case> = val.iter().map(Case::from).collect();
        score_on_validation(&mut specs, &val, s.grid, s.seed)?;
    }
    let filtered = checkpoint_filter(&specs, s.pool_threshold, s.pool_cap)?;
    let established = established_from_scores(&filtered.members)?;
    Ok(PreparedPool { members: filtered.members, established, warnings: filtered.warnings })
}

fn test_cohorts(ctx: &Ctx) -> Result<Vec<Cohort>, CliError> {
    let s = &ctx.settings;
    let base = PhantomSpec::default();
    let make = |name: &str, n: usize, r: Regime| -> Result<Cohort, CliError> {
        let cases =
            if n == 0 { Vec::new() } else { gen_cohort(n, &base, r, s.seed, 0)?.iter().map(Case::from).collect() };
        Ok(Cohort { name: name.into(), cases })
    };
    Ok(vec![make("internal", s.internal_cases, Regime::None)?, make("shifted", s.shifted_cases, Regime::Shifted)?])
}

fn mask_path(case_id: u64, model_id: u32) -> PathBuf {
    PathBuf::from(format!("masks/case{case_id:04}_model{model_id}.fpt"))
}

fn umap_path(case_id: u64, model_id: u32) -> PathBuf {
    PathBuf::from(format!("umaps/case{case_id:04}_model{model_id}.fpt"))
}

pub const SOLUTIONS_HEADER: [&str; 8] = ["case_id", "model_id", "kind", "u_pp", "u_tot", "n_myo", "mask", "umap"];

/// `solutions.csv` plus one mask and U-map tensor per solution, and
/// `failures.csv` for models that failed on a case.
fn write_solutions(out: &Path, results: &[CaseResult], pool: &[SegmenterSpec]) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(out.join("masks"))?;
    std::fs::create_dir_all(out.join("umaps"))?;
    let kind = |id: u32| pool.iter().find(|s| s.model_id == id).map_or("", |s| s.kind.name());
    let table = out.join("solutions.csv");
    let mut w = csv::Writer::from_path(&table)?;
    w.write_record(SOLUTIONS_HEADER)?;
    for r in results {
        for s in &r.solutions {
            let (mp, up) = (mask_path(r.case_id, s.model_id), umap_path(r.case_id, s.model_id));
            Tensor::from(&s.mask).write_file(out.join(&mp))?;
            Tensor::from(&s.umap).write_file(out.join(&up))?;
            w.write_record([
                r.case_id.to_string(),
                s.model_id.to_string(),
                kind(s.model_id).to_string(),
                s.umap.u_pp.to_string(),
                s.umap.u_tot.to_string(),
                s.umap.n_myo.to_string(),
                mp.display().to_string(),
                up.display().to_string(),
            ])?;
        }
    }
    w.flush()?;
    let fails = out.join("failures.csv");
    let mut w = csv::Writer::from_path(&fails)?;
    w.write_record(["case_id", "model_id", "message"])?;
    for r in results {
        for f in &r.failures {
            w.write_record([r.case_id.to_string(), f.model_id.to_string(), f.message.clone()])?;
        }
    }
    w.flush()?;
    Ok(vec![table, fails])
}

fn run_cmd(ctx: &Ctx, manifest: &Path, pool: Option<&Path>, summary: &mut Summary) -> Result<(), CliError> {
    let loaded = load_manifest(manifest)?;
    let specs = candidates(ctx, pool)?;
    let cases: Vec<Case> = loaded.into_iter().map(|l| l.case).collect();
    let results = run_cases(&cases, &specs, ctx.settings.grid, ctx.settings.seed)?;
    let files = write_solutions(&ctx.out, &results, &specs)?;
    std::fs::write(ctx.out.join("pool.cfg"), write_pool(&specs))?;
    summary.put("cases", results.len());
    summary.put("models", specs.len());
    summary.put("solutions", results.iter().map(|r| r.solutions.len()).sum::<usize>());
    summary.put("model_failures", results.iter().map(|r| r.failures.len()).sum::<usize>());
    summary.outputs(&ctx.out, &files);
    summary.outputs(&ctx.out, &[ctx.out.join("pool.cfg")]);
    Ok(())
}

struct SolutionRow {
    case_id: u64,
    score: SolutionScore,
    mask: PathBuf,
}

fn read_solutions(path: &Path) -> Result<Vec<SolutionRow>, CliError> {
    let mut r = csv::Reader::from_path(existing(path)?)?;
    if r.headers()?.iter().collect::<Vec<_>>() != SOLUTIONS_HEADER {
        return Err(CliError::Core(Error::Parse(format!("{}: unexpected solutions header", path.display()))));
    }
    let bad = |col: &str| CliError::Core(Error::Parse(format!("{}: bad {col} value", path.display())));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push(SolutionRow {
            case_id: rec[0].parse().map_err(|_| bad("case_id"))?,
            score: SolutionScore {
                model_id: rec[1].parse().map_err(|_| bad("model_id"))?,
                u_pp: rec[3].parse().map_err(|_| bad("u_pp"))?,
                u_tot: rec[4].parse().map_err(|_| bad("u_tot"))?,
                n_myo: rec[5].parse().map_err(|_| bad("n_myo"))?,
            },
            mask: PathBuf::from(&rec[6]),
        });
    }
    Ok(out)
}

fn by_case(rows: &[SolutionRow]) -> BTreeMap<u64, Vec<&SolutionRow>> {
    let mut m: BTreeMap<u64, Vec<&SolutionRow>> = BTreeMap::new();
    for r in rows {
        m.entry(r.case_id).or_default().push(r);
    }
    m
}

pub const SELECTION_HEADER: [&str; 7] = ["case_id", "method", "metric", "model_id", "u_pp", "u_tot", "n_myo"];

fn select(
    ctx: &Ctx,
    solutions: &Path,
    method: MethodArg,
    established: Option<u32>,
    pool: Option<&Path>,
    summary: &mut Summary,
) -> Result<(), CliError> {
    let rows = read_solutions(solutions)?;
    let metric = ctx.settings.metric;
    let fixed = match method {
        MethodArg::Daugs => None,
        MethodArg::Established => Some(match (established, pool) {
            (Some(id), _) => id,
            (None, Some(p)) => established_from_scores(&read_pool(p, ctx.settings.backend_timeout_s)?)?,
            (None, None) => {
                return Err(CliError::Usage("--method established needs --established or --pool".into()));
            }
        }),
    };
    let table = ctx.out.join("selection.csv");
    let mut w = csv::Writer::from_path(&table)?;
    w.write_record(SELECTION_HEADER)?;
    let groups = by_case(&rows);
    let mut missing = 0;
    for (case_id, group) in &groups {
        let scores: Vec<SolutionScore> = group.iter().map(|r| r.score).collect();
        let chosen = match fixed {
            None => Some(scores[select_scores(&scores, metric)?.chosen]),
            Some(id) => scores.iter().copied().find(|s| s.model_id == id),
        };
        let (name, metric_name) = match fixed {
            None => ("daugs", metric.name()),
            Some(_) => ("established", "none"),
        };
        let mut rec = vec![case_id.to_string(), name.to_string(), metric_name.to_string()];
        match chosen {
            Some(s) => {
                rec.extend([s.model_id.to_string(), s.u_pp.to_string(), s.u_tot.to_string(), s.n_myo.to_string()])
            }
            None => {
                missing += 1;
                rec.extend(std::iter::repeat_n(String::new(), 4));
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    summary.put("cases", groups.len());
    summary.put("method", if fixed.is_some() { "established" } else { "daugs" });
    if let Some(id) = fixed {
        summary.put("established_id", id);
        summary.put("cases_without_established", missing);
    } else {
        summary.put("metric", metric.name());
    }
    summary.outputs(&ctx.out, &[table]);
    Ok(())
}

/// `case_id -> model_id` of a `selection.csv`; cases without a choice are
/// left out.
fn read_selection(path: &Path) -> Result<BTreeMap<u64, u32>, CliError> {
    let mut r = csv::Reader::from_path(existing(path)?)?;
    if r.headers()?.iter().collect::<Vec<_>>() != SELECTION_HEADER {
        return Err(CliError::Core(Error::Parse(format!("{}: unexpected selection header", path.display()))));
    }
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        if rec[3].is_empty() {
            continue;
        }
        let bad = || CliError::Core(Error::Parse(format!("{}: bad selection row", path.display())));
        out.insert(rec[0].parse().map_err(|_| bad())?, rec[3].parse().map_err(|_| bad())?);
    }
    Ok(out)
}

fn load_mask(run_dir: &Path, rel: &Path) -> Result<LabelMask, CliError> {
    let p = run_dir.join(rel);
    Ok(Tensor::read_file(existing(&p)?)?.to_mask()?)
}

/// `p` when it exists, else a data error naming it.
fn existing(p: &Path) -> Result<&Path, CliError> {
    if p.exists() {
        Ok(p)
    } else {
        Err(CliError::Core(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{}: no such file or directory", p.display()),
        ))))
    }
}

fn eval(
    ctx: &Ctx,
    manifest: &Path,
    run_dir: &Path,
    selection: Option<&Path>,
    summary: &mut Summary,
) -> Result<(), CliError> {
    let loaded = load_manifest(manifest)?;
    let rows = read_solutions(&run_dir.join("solutions.csv"))?;
    let chosen = selection.map(read_selection).transpose()?;
    let table = ctx.out.join("eval.csv");
    let mut w = csv::Writer::from_path(&table)?;
    w.write_record([
        "case_id",
        "model_id",
        "dice",
        "hd95_mm",
        "bloodpool_inclusion",
        "noncontiguous_segments",
        "failed",
    ])?;
    let (mut n, mut dice_sum, mut failures) = (0usize, 0.0, 0usize);
    for l in &loaded {
        let truth = l.case.truth.as_deref().expect("manifest cases carry ground truth");
        for r in rows.iter().filter(|r| r.case_id == l.entry.id) {
            if chosen.as_ref().is_some_and(|c| c.get(&r.case_id) != Some(&r.score.model_id)) {
                continue;
            }
            let mask = load_mask(run_dir, &r.mask)?;
            let e = evaluate(&mask, truth, Some(l.entry.rv_centroid), l.entry.spacing_mm, ctx.settings.failure)?;
            let segs: Vec<String> = e.failure.noncontiguous_segments.iter().map(u8::to_string).collect();
            w.write_record([
                r.case_id.to_string(),
                r.score.model_id.to_string(),
                e.dice.to_string(),
                e.hd95_mm.to_string(),
                (e.failure.bloodpool_inclusion as u8).to_string(),
                segs.join(" "),
                (e.failure.failed as u8).to_string(),
            ])?;
            n += 1;
            dice_sum += e.dice;
            failures += e.failure.failed as usize;
        }
    }
    w.flush()?;
    if n == 0 {
        return Err(CliError::Core(Error::Empty("masks matching the manifest")));
    }
    summary.put("masks", n);
    summary.put("dice_mean", dice_sum / n as f64);
    summary.put("failures", failures);
    summary.outputs(&ctx.out, &[table]);
    Ok(())
}

fn read_curve(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(existing(path)?)?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| CliError::Core(Error::Parse(format!("{}: {t:?}", path.display())))))
        .collect()
}

fn mbf(
    ctx: &Ctx,
    manifest: &Path,
    run_dir: &Path,
    selections: &[String],
    lut: Option<&Path>,
    aif: Option<&Path>,
    summary: &mut Summary,
) -> Result<(), CliError> {
    let loaded = load_manifest(manifest)?;
    let mut methods = Vec::new();
    for s in selections {
        let (name, path) = s
            .split_once('=')
            .filter(|(n, p)| !n.is_empty() && !p.is_empty())
            .ok_or_else(|| CliError::Usage(format!("--selection expects name=path, got {s:?}")))?;
        methods.push((name.to_string(), read_selection(Path::new(path))?));
    }
    let lut = lut.map(|p| existing(p).and_then(|p| Ok(Lut::read_csv(p)?))).transpose()?;
    let aif = aif.map(read_curve).transpose()?;
    let mut masks: Vec<Vec<(String, LabelMask)>> = Vec::new();
    for l in &loaded {
        let mut m = Vec::new();
        for (name, sel) in &methods {
            match sel.get(&l.entry.id) {
                Some(&model) => m.push((name.clone(), load_mask(run_dir, &mask_path(l.entry.id, model))?)),
                None => summary.put("warning", format!("case {}: no {name} selection", l.entry.id)),
            }
        }
        masks.push(m);
    }
    let cases: Vec<MbfCase<'_>> = loaded
        .iter()
        .zip(&masks)
        .map(|(l, m)| MbfCase {
            case_id: l.entry.id,
            series: &l.case.series,
            reference: l.case.truth.as_deref().expect("manifest cases carry ground truth"),
            methods: m.iter().map(|(n, mask)| (n.clone(), mask)).collect(),
            rv_centroid: Some(l.entry.rv_centroid),
            aif: aif.as_deref(),
        })
        .collect();
    let opt = FitOptions { scale: ctx.settings.mbf_scale, ..FitOptions::default() };
    let report = mbf_table(&cases, ctx.settings.failure, lut.as_ref(), &opt)?;
    let files = write_mbf(&ctx.out, &report)?;
    summary.put("cases", loaded.len());
    for a in &report.agreement {
        summary.put(format!("pairs.{}", a.method), a.pairs);
        summary.put(format!("excluded.{}", a.method), a.excluded);
        if let Some(st) = &a.stats {
            summary.put(format!("r2.{}", a.method), st.pearson_r2);
            summary.put(format!("bias.{}", a.method), st.bias);
        }
    }
    for w in &report.warnings {
        summary.put("warning", w);
    }
    summary.outputs(&ctx.out, &files);
    Ok(())
}

/// Curve-matching model for the MoCo simulation: phantom class curves as
/// prototypes, windows rescaled to the series' peak whole-frame mean.
pub fn moco_model(spec: &PhantomSpec, series: &daugs_core::types::ImageSeries, temperature: f64) -> SegmenterSpec {
    let n = series.frame_len() as f64;
    let peak = (0..series.n_frames())
        .map(|t| series.frame(t).iter().map(|&v| v as f64).sum::<f64>() / n)
        .fold(f64::NEG_INFINITY, f64::max);
    SegmenterSpec::new(
        0,
        SegmenterKind::CurveMatching(CurveMatchParams {
            prototypes: spec.class_curves(),
            temperature,
            reference_level: Some(peak),
        }),
    )
}

fn mocosim(ctx: &Ctx, summary: &mut Summary) -> Result<(), CliError> {
    let s = &ctx.settings;
    if s.moco_runs == 0 {
        return Err(CliError::Usage("[moco] runs must be at least 1".into()));
    }
    let spec = PhantomSpec { seed: s.seed, ..PhantomSpec::default() };
    let sys = gen_phantom(&spec)?;
    let dia = gen_phantom(&spec.diastolic())?;
    let model = moco_model(&spec, &sys.series, s.moco_temperature);
    let f: Vec<usize> = (0..=s.moco_f_max).collect();
    let r = experiment_moco(&sys.series, &dia.series, &model, &f, s.moco_runs, s.grid, s.seed)?;
    let files = write_moco(&ctx.out, &r)?;
    for m in &r.summaries {
        summary.put(format!("u_pp_mean.f{}", m.f), m.u_pp_mean);
    }
    summary.put("spearman_rho", r.spearman_rho);
    summary.outputs(&ctx.out, &files);
    Ok(())
}

fn abtest(ctx: &Ctx, pool: Option<&Path>, summary: &mut Summary) -> Result<(), CliError> {
    let s = &ctx.settings;
    let prepared = prepared_pool(ctx, pool)?;
    let cohorts = test_cohorts(ctx)?;
    let cfg = AbConfig { grid: s.grid, seed: s.seed, metric: s.metric, failure: s.failure };
    let r = experiment_ab(&cohorts, &prepared.members, prepared.established, &cfg)?;
    let mut files = write_ab(&ctx.out, &r)?;
    let pool_file = ctx.out.join("pool.cfg");
    std::fs::write(&pool_file, write_pool(&prepared.members))?;
    files.push(pool_file);
    summary.put("pool_size", prepared.members.len());
    summary.put("established_id", r.established_id);
    summary.put("metric", r.metric.name());
    for m in &r.summaries {
        let key = format!("{}.{}", m.cohort, m.method.name());
        summary.put(format!("dice_mean.{key}"), m.dice_mean);
        summary.put(format!("failures.{key}"), m.failures);
    }
    for c in &r.comparisons {
        summary.put(format!("dice_wilcoxon_p.{}", c.cohort), c.dice_wilcoxon_p);
        summary.put(format!("failure_fisher_p.{}", c.cohort), c.failure_fisher_p);
    }
    summary.put("model_failures", r.model_failures.len());
    for w in prepared.warnings.iter().chain(&r.warnings) {
        summary.put("warning", w);
    }
    summary.outputs(&ctx.out, &files);
    Ok(())
}

fn poolreport(
    ctx: &Ctx,
    pool: Option<&Path>,
    manifest: Option<&Path>,
    case_id: Option<u64>,
    summary: &mut Summary,
) -> Result<(), CliError> {
    let s = &ctx.settings;
    let case = match manifest {
        Some(m) => {
            let loaded = load_manifest(m)?;
            let pick = match case_id {
                Some(id) => loaded.into_iter().find(|l| l.entry.id == id),
                None => loaded.into_iter().next(),
            };
            pick.ok_or_else(|| CliError::Usage(format!("case {} is not in the manifest", case_id.unwrap_or(0))))?.case
        }
        None => Case::from(&gen_cohort(1, &PhantomSpec::default(), Regime::Shifted, s.seed, 0)?[0]),
    };
    let prepared = prepared_pool(ctx, pool)?;
    let result = run_case(&case, &prepared.members, s.grid, s.seed)?;
    let report = pool_heterogeneity(&result.solutions, &prepared.members, s.metric)?;
    let files = write_heterogeneity(&ctx.out, &report, &result.solutions)?;
    summary.put("case_id", case.id);
    summary.put("pool_size", prepared.members.len());
    summary.put("rows", report.rows);
    summary.put("cols", report.cols);
    summary.put("chosen_model", report.chosen_model);
    summary.put("model_failures", result.failures.len());
    summary.outputs(&ctx.out, &files);
    Ok(())
}

fn metriccompare(ctx: &Ctx, pool: Option<&Path>, fixture: bool, summary: &mut Summary) -> Result<(), CliError> {
    let s = &ctx.settings;
    let (report, mut files) = if fixture {
        let (case, sols): (Case, Vec<SegmentationSolution>) = metric_fixture();
        let row = compare_metrics_on_case("fixture", &case, &sols, s.failure)?;
        let rows = vec![row];
        let summaries = vec![summarize_metric_rows("fixture", &rows)];
        let result = CaseResult { case_id: case.id, solutions: sols, failures: Vec::new() };
        let fixture_pool: Vec<SegmenterSpec> = Vec::new();
        let files = write_solutions(&ctx.out, std::slice::from_ref(&result), &fixture_pool)?;
        (MetricCompareReport { rows, summaries }, files)
    } else {
        let prepared = prepared_pool(ctx, pool)?;
        let cfg = AbConfig { grid: s.grid, seed: s.seed, metric: s.metric, failure: s.failure };
        (metric_variant_compare(&test_cohorts(ctx)?, &prepared.members, &cfg)?, Vec::new())
    };
    files.extend(write_metric_compare(&ctx.out, &report)?);
    for m in &report.summaries {
        summary.put(format!("disagreements.{}", m.cohort), m.disagreements);
        summary.put(format!("noncontiguous.{}.upp", m.cohort), m.upp_noncontiguous);
        summary.put(format!("noncontiguous.{}.utot", m.cohort), m.utot_noncontiguous);
    }
    summary.outputs(&ctx.out, &files);
    Ok(())
}
