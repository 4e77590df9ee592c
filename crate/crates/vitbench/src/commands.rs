//! The pipeline stages behind each subcommand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use vitbench_core::data::{make_folds, summarize_counts, AugmentPolicy, CountSummary, DatasetManifest, FoldPlan};
use vitbench_core::interpret::{focus_scores, grad_cam_map, render_overlay, CamMode, CamOptions, FocusScores, RegionMask};
use vitbench_core::metrics::{pairwise_table, PairwiseRow};
use vitbench_core::seed::derive_seed;
use vitbench_core::train::{
    class_weights, cross_validate, prepare_batch, run_grid, run_replications, train_one_run, ClassCounts, CvResult,
    GridRow, ImageSet, ReplicationReport, RunResult, Setup, TrainConfig,
};
use vitbench_core::vit::{vit_forward, VitParams};
use vitbench_core::Tensor;

use crate::checkpoint;
use crate::config::{ExperimentConfig, TableFormat};
use crate::dataset::{build_manifest, load_images, SkipReport};
use crate::error::{Error, Result};
use crate::exec::{resolve_workers, Pool};
use crate::imageio::{encode_png, load_mask};
use crate::output::{unix_now, CommandRecord, Outputs, RunManifest};
use crate::report::{self, file_stem, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Prepare,
    AugmentEval,
    WeightEval,
    Grid,
    Replicate,
    Cam,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Prepare => "prepare",
            Command::AugmentEval => "augment-eval",
            Command::WeightEval => "weight-eval",
            Command::Grid => "grid",
            Command::Replicate => "replicate",
            Command::Cam => "cam",
        }
    }
}

/// Indices of the per-stage seeds `derive_seed(master, [("stage", s)])`.
pub mod stage {
    pub const FOLDS: u64 = 0;
    pub const AUGMENT: u64 = 1;
    pub const WEIGHT: u64 = 2;
    pub const GRID: u64 = 3;
    pub const REPLICATE: u64 = 4;
    pub const CAM: u64 = 5;
}

pub fn stage_seed(master: u64, s: u64) -> u64 {
    derive_seed(master, &[("stage", s)])
}

#[derive(Debug, Clone, Default)]
pub struct Options {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

#[derive(Debug)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
    /// Files in the output directory that no command registered.
    pub orphans: Vec<String>,
}

/// Load and validate the config, run `cmd`, then write every output at once.
pub fn run(cmd: Command, opts: &Options) -> Result<Outcome> {
    let started_unix = unix_now();
    let mut cfg = ExperimentConfig::load(&opts.config)?;
    if let Some(seed) = opts.seed {
        cfg.train.hyper.seed = seed;
    }
    if cmd == Command::Cam && !cfg.interpret.enabled {
        return Err(Error::Schema {
            path: opts.config.clone(),
            field: "interpret.enabled".into(),
            message: "Grad-CAM is disabled in this config".into(),
        });
    }
    let out_dir = opts.out.clone().unwrap_or_else(|| cfg.output.directory.clone());
    let mut out = Outputs::open(&out_dir)?;
    let mut ctx = Ctx {
        master: cfg.train.hyper.seed,
        pool: Pool::new(resolve_workers(opts.workers, cfg.workers)),
        cfg: &cfg,
        seeds: BTreeMap::new(),
    };
    let run = |e: Error| match e {
        e @ (Error::Run { .. } | Error::Schema { .. }) => e,
        other => Error::Run { run: cmd.name().into(), source: Box::new(other) },
    };
    match cmd {
        Command::Prepare => ctx.prepare(&mut out),
        Command::AugmentEval => ctx.augment_eval(&mut out),
        Command::WeightEval => ctx.weight_eval(&mut out),
        Command::Grid => ctx.grid(&mut out),
        Command::Replicate => ctx.replicate(&mut out),
        Command::Cam => ctx.cam(&mut out),
    }
    .map_err(run)?;
    out.add("config.json", cfg.to_canonical_json().into_bytes());
    let record = CommandRecord {
        command: cmd.name().into(),
        config_hash: cfg.hash(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        master_seed: ctx.master,
        seeds: ctx.seeds,
        started_unix,
        finished_unix: 0,
        files: Vec::new(),
    };
    let (manifest, orphans) = out.commit(record)?;
    Ok(Outcome { out_dir, manifest, orphans })
}

struct Data {
    manifest: DatasetManifest,
    skipped: SkipReport,
    summary: CountSummary,
    plan: FoldPlan,
    images: Vec<Tensor>,
    labels: Vec<u8>,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    master: u64,
    pool: Pool,
    seeds: BTreeMap<String, u64>,
}

#[derive(Serialize)]
struct ManifestFile<'a> {
    samples: &'a DatasetManifest,
    summary: &'a CountSummary,
    skipped: &'a SkipReport,
}

#[derive(Serialize)]
struct FoldSummary {
    fold: usize,
    normal: usize,
    abnormal: usize,
    groups: usize,
    samples: Vec<String>,
}

#[derive(Serialize)]
struct FoldsFile<'a> {
    k: usize,
    seed: u64,
    assignment: &'a [usize],
    folds: Vec<FoldSummary>,
}

#[derive(Serialize)]
struct AugmentEvalResult<'a> {
    seed: u64,
    strategies: Vec<StrategyResult<'a>>,
}

#[derive(Serialize)]
struct StrategyResult<'a> {
    name: &'a str,
    policy: AugmentPolicy,
    cv: CvResult,
}

#[derive(Serialize)]
struct WeightCaseResult {
    case: usize,
    abnormal_multiplier: f64,
    normal_multiplier: f64,
    /// Weights from whole-dataset counts; each fold trains with weights from
    /// its own training split.
    abnormal_weight: f64,
    normal_weight: f64,
    cv: Option<CvResult>,
}

#[derive(Serialize)]
struct WeightEvalResult {
    seed: u64,
    counts: ClassCounts,
    cases: Vec<WeightCaseResult>,
}

#[derive(Serialize)]
struct GridResult<'a> {
    seed: u64,
    base: &'a TrainConfig,
    rows: &'a [GridRow],
}

#[derive(Serialize)]
struct ExperimentResult<'a> {
    name: &'a str,
    train: TrainConfig,
    report: ReplicationReport,
}

#[derive(Serialize)]
struct ReplicateResult<'a> {
    seed: u64,
    n_replications: usize,
    paired: bool,
    experiments: Vec<ExperimentResult<'a>>,
    pairwise_accuracy: Vec<PairwiseRow>,
    pairwise_f1: Vec<PairwiseRow>,
}

#[derive(Debug, Clone, Serialize)]
struct CamEntry {
    sample: String,
    path: String,
    label: u8,
    predicted: u8,
    target_class: u8,
    grid: Vec<Vec<f64>>,
    focus: FocusScores,
    overlay: String,
}

#[derive(Serialize)]
struct CamResult<'a> {
    seed: u64,
    model: String,
    fold: usize,
    block: usize,
    mode: CamMode,
    alpha: f64,
    smoothing_sigma: f64,
    run: Option<RunResult>,
    entries: &'a [CamEntry],
}

/// Sample id for file names: manifest path without extension, `/` → `__`.
fn sample_id(path: &str) -> String {
    let stem = Path::new(path).with_extension("");
    file_stem(&stem.to_string_lossy().replace('/', "__"))
}

impl Ctx<'_> {
    fn want(&self, f: TableFormat) -> bool {
        self.cfg.output.formats.contains(&f)
    }

    fn emit_table(&self, out: &mut Outputs, t: &Table) -> Result<()> {
        if self.want(TableFormat::Csv) {
            out.add(t.file_name(), t.to_csv()?);
        }
        Ok(())
    }

    fn emit_result<T: Serialize>(&self, out: &mut Outputs, name: &str, value: &T) -> Result<()> {
        if self.want(TableFormat::Json) {
            out.add_json(format!("results/{name}.json"), value)?;
        }
        Ok(())
    }

    fn record_cv(&mut self, prefix: &str, cv: &CvResult) {
        for r in &cv.folds {
            let key = match r.fold {
                Some(f) => format!("{prefix}/fold{f}"),
                None => format!("{prefix}/app"),
            };
            self.seeds.insert(key, r.seed);
        }
    }

    fn load_data(&mut self, with_images: bool) -> Result<Data> {
        let ds = &self.cfg.dataset;
        let pattern = self.cfg.group_pattern();
        let (manifest, skipped) = build_manifest(&ds.root, &ds.class_map, pattern.as_ref())?;
        let summary = summarize_counts(manifest.class_counts, ds.expected_normal_fraction)?;
        let fold_seed = self.cfg.folds.seed.unwrap_or_else(|| stage_seed(self.master, stage::FOLDS));
        self.seeds.insert("folds".into(), fold_seed);
        let plan = make_folds(&manifest, self.cfg.folds.k, fold_seed)?;
        let images = if with_images { load_images(&self.pool, &ds.root, &manifest, ds.image_size)? } else { Vec::new() };
        let labels = manifest.labels();
        Ok(Data { manifest, skipped, summary, plan, images, labels })
    }

    fn pretrained(&self) -> Result<Option<VitParams>> {
        match &self.cfg.pretrained {
            None => Ok(None),
            Some(p) => Ok(Some(checkpoint::load(p, Some(&self.cfg.model))?.1)),
        }
    }

    fn prepare(&mut self, out: &mut Outputs) -> Result<()> {
        let d = self.load_data(false)?;
        out.add_json("manifest.json", &ManifestFile { samples: &d.manifest, summary: &d.summary, skipped: &d.skipped })?;
        let per_fold = d.plan.class_counts(&d.labels);
        let folds = (0..d.plan.k)
            .map(|f| {
                let idx = d.plan.validation_indices(f);
                let mut groups: Vec<&str> = idx.iter().map(|&i| d.manifest.samples[i].group_id.as_str()).collect();
                groups.sort_unstable();
                groups.dedup();
                FoldSummary {
                    fold: f,
                    normal: per_fold[f][0],
                    abnormal: per_fold[f][1],
                    groups: groups.len(),
                    samples: idx.iter().map(|&i| d.manifest.samples[i].path.clone()).collect(),
                }
            })
            .collect();
        out.add_json("folds.json", &FoldsFile { k: d.plan.k, seed: d.plan.seed, assignment: &d.plan.assignment, folds })?;
        self.emit_table(out, &report::class_counts(&per_fold))
    }

    fn augment_eval(&mut self, out: &mut Outputs) -> Result<()> {
        let d = self.load_data(true)?;
        let init = self.pretrained()?;
        let seed = stage_seed(self.master, stage::AUGMENT);
        let hyper = TrainConfig { seed, ..self.cfg.train.hyper.clone() };
        let data = ImageSet::new(&d.images, &d.labels)?;
        let mut strategies = Vec::new();
        for s in &self.cfg.augment_eval.strategies {
            let policy = s.policy(&self.cfg.augmentation);
            let setup = with_init(Setup::new(data, &self.cfg.model, &policy), init.as_ref());
            let cv = cross_validate(&self.pool, setup, &d.plan, &hyper).map_err(|e| run_error(format!("augment-eval/{}", s.name), e))?;
            self.record_cv(&format!("augment-eval/{}", s.name), &cv);
            strategies.push(StrategyResult { name: &s.name, policy, cv });
        }
        let rows: Vec<(String, CvResult)> = strategies.iter().map(|s| (s.name.to_string(), s.cv.clone())).collect();
        self.emit_table(out, &report::augment_eval(&rows))?;
        self.emit_result(out, "augment_eval", &AugmentEvalResult { seed, strategies })
    }

    fn weight_eval(&mut self, out: &mut Outputs) -> Result<()> {
        let we = &self.cfg.weight_eval;
        let d = self.load_data(we.train)?;
        let init = self.pretrained()?;
        let seed = stage_seed(self.master, stage::WEIGHT);
        let counts = d.manifest.class_counts;
        let mut cases = Vec::new();
        for (i, c) in we.cases.iter().enumerate() {
            let w = class_weights(counts, (c.abnormal, c.normal))?;
            let cv = if we.train {
                let hyper = TrainConfig { seed, weight_multipliers: (c.abnormal, c.normal), ..self.cfg.train.hyper.clone() };
                let data = ImageSet::new(&d.images, &d.labels)?;
                let setup = with_init(Setup::new(data, &self.cfg.model, &self.cfg.augmentation), init.as_ref());
                let run = format!("weight-eval/case{}", i + 1);
                let cv = cross_validate(&self.pool, setup, &d.plan, &hyper).map_err(|e| run_error(run.clone(), e))?;
                self.record_cv(&run, &cv);
                Some(cv)
            } else {
                None
            };
            cases.push(WeightCaseResult {
                case: i + 1,
                abnormal_multiplier: c.abnormal,
                normal_multiplier: c.normal,
                abnormal_weight: w.abnormal,
                normal_weight: w.normal,
                cv,
            });
        }
        let rows: Vec<report::WeightRow<'_>> = cases
            .iter()
            .map(|c| report::WeightRow {
                case: c.case,
                abnormal_multiplier: c.abnormal_multiplier,
                normal_multiplier: c.normal_multiplier,
                abnormal_weight: c.abnormal_weight,
                normal_weight: c.normal_weight,
                cv: c.cv.as_ref(),
            })
            .collect();
        self.emit_table(out, &report::weight_eval(&rows))?;
        self.emit_result(out, "weight_eval", &WeightEvalResult { seed, counts, cases })
    }

    fn grid(&mut self, out: &mut Outputs) -> Result<()> {
        let d = self.load_data(true)?;
        let init = self.pretrained()?;
        let seed = stage_seed(self.master, stage::GRID);
        let base = TrainConfig { seed, ..self.cfg.train.hyper.clone() };
        let data = ImageSet::new(&d.images, &d.labels)?;
        let setup = with_init(Setup::new(data, &self.cfg.model, &self.cfg.augmentation), init.as_ref());
        let rows = run_grid(&self.pool, setup, &d.plan, &self.cfg.train.grid, &base)?;
        for r in &rows {
            self.record_cv(&format!("grid/exp{:02}", r.experiment), &r.cv);
        }
        self.emit_table(out, &report::grid(&rows))?;
        self.emit_result(out, "grid", &GridResult { seed, base: &base, rows: &rows })
    }

    fn replicate(&mut self, out: &mut Outputs) -> Result<()> {
        let d = self.load_data(true)?;
        let init = self.pretrained()?;
        let tr = &self.cfg.train;
        let seed = stage_seed(self.master, stage::REPLICATE);
        let data = ImageSet::new(&d.images, &d.labels)?;
        let setup = with_init(Setup::new(data, &self.cfg.model, &self.cfg.augmentation), init.as_ref());
        let mut experiments = Vec::new();
        for e in &tr.experiments {
            let train = e.apply(&tr.hyper);
            let report = run_replications(&self.pool, setup, &d.plan, &train, tr.n_replications, seed, tr.resubstitution)
                .map_err(|err| run_error(format!("replicate/{}", e.name), err))?;
            for row in &report.rows {
                let prefix = format!("replicate/{}/rep{}", e.name, row.rep);
                self.record_cv(&prefix, &row.cv);
                if let Some(app) = &row.app {
                    self.seeds.insert(format!("{prefix}/app"), app.seed);
                }
            }
            experiments.push(ExperimentResult { name: &e.name, train, report });
        }
        let (pairwise_accuracy, pairwise_f1) = if experiments.len() >= 2 {
            (pairwise(&experiments, "accuracy", tr.paired)?, pairwise(&experiments, "f1", tr.paired)?)
        } else {
            (Vec::new(), Vec::new())
        };
        for e in &experiments {
            self.emit_table(out, &report::replicate(e.name, &e.report))?;
        }
        let refs: Vec<(String, &ReplicationReport)> = experiments.iter().map(|e| (e.name.to_string(), &e.report)).collect();
        self.emit_table(out, &report::replicate_summary(&refs))?;
        if experiments.len() >= 2 {
            self.emit_table(out, &report::pairwise("accuracy", &pairwise_accuracy))?;
            self.emit_table(out, &report::pairwise("f1", &pairwise_f1))?;
        }
        let result = ReplicateResult {
            seed,
            n_replications: tr.n_replications,
            paired: tr.paired,
            experiments,
            pairwise_accuracy,
            pairwise_f1,
        };
        self.emit_result(out, "replicate", &result)
    }

    fn region_masks(&self) -> Result<Vec<RegionMask>> {
        let s = self.cfg.model.image_size;
        let mut masks = Vec::new();
        for r in &self.cfg.interpret.regions {
            let base = match (&r.rect, &r.mask) {
                (Some([x0, y0, x1, y1]), _) => {
                    let px = |f: f64| (f * s as f64).round() as usize;
                    RegionMask::rect(&r.name, s, px(*x0), px(*y0), px(*x1), px(*y1))
                }
                (None, Some(path)) => load_mask(&r.name, path, s)?,
                (None, None) => unreachable!("validated"),
            };
            masks.push(if r.invert { base.complement(&r.name) } else { base });
        }
        Ok(masks)
    }

    fn cam(&mut self, out: &mut Outputs) -> Result<()> {
        let it = &self.cfg.interpret;
        let vit = &self.cfg.model;
        let d = self.load_data(true)?;
        let seed = stage_seed(self.master, stage::CAM);
        let masks = self.region_masks()?;
        let (params, model, run) = match &it.checkpoint {
            Some(path) => (checkpoint::load(path, Some(vit))?.1, path.to_string_lossy().into_owned(), None),
            None => {
                let init = self.pretrained()?;
                let hyper = TrainConfig { seed, ..self.cfg.train.hyper.clone() };
                let data = ImageSet::new(&d.images, &d.labels)?;
                let setup = with_init(Setup::new(data, vit, &self.cfg.augmentation), init.as_ref());
                let trained = train_one_run(setup, &d.plan, it.fold, &hyper)?;
                let run_id = format!("cam/fold{}", it.fold);
                self.seeds.insert(run_id.clone(), trained.result.seed);
                let Some(params) = trained.params else {
                    return Err(run_error(run_id, vitbench_core::Error::NonFinite(format!("{:?}", trained.result.status))));
                };
                let file = format!("checkpoints/fold{}.vitw", it.fold);
                out.add(file.clone(), checkpoint::encode(vit, &params));
                (params, file, Some(trained.result))
            }
        };
        let idx = pick_balanced(&d.plan.validation_indices(it.fold), &d.labels, it.max_images);
        let opts = CamOptions { block: it.block_index, mode: it.mode, smoothing_sigma: it.smoothing_sigma };
        let data = ImageSet::new(&d.images, &d.labels)?;
        let jobs: Vec<(usize, u8)> = idx.iter().flat_map(|&i| it.target_classes.iter().map(move |&c| (i, c))).collect();
        let results = vitbench_core::exec::Executor::map(&self.pool, &jobs, |&(i, target)| -> Result<(CamEntry, Vec<u8>)> {
            let sample = &d.manifest.samples[i];
            let norm = prepare_batch(data, &[i], &AugmentPolicy::none(), 0, None)?.remove(0);
            let batch = Tensor::new(&[1, 3, vit.image_size, vit.image_size], norm.data().to_vec())?;
            let logits = vit_forward(&batch, &params, vit, false, 0)?;
            let predicted = vitbench_core::train::predict(&logits)[0];
            let mut heat = grad_cam_map(&params, vit, &norm, target, &opts)?;
            let up = heat.upsample(vit.image_size, it.smoothing_sigma)?.clone();
            let focus = focus_scores(&heat, &masks)?;
            let rgb = render_overlay(&d.images[i], &up, it.alpha)?;
            let png = encode_png(vit.image_size, vit.image_size, &rgb)?;
            let id = sample_id(&sample.path);
            let g = heat.grid.shape()[0];
            let entry = CamEntry {
                overlay: format!("cams/{id}_cam_{target}.png"),
                sample: id,
                path: sample.path.clone(),
                label: sample.label,
                predicted,
                target_class: target,
                grid: heat.grid.data().chunks(g).map(<[f64]>::to_vec).collect(),
                focus,
            };
            Ok((entry, png))
        });
        let mut entries = Vec::with_capacity(results.len());
        for r in results {
            let (entry, png) = r?;
            out.add(entry.overlay.clone(), png);
            out.add_json(entry.overlay.replace(".png", ".json"), &entry)?;
            entries.push(entry);
        }
        let names: Vec<String> = masks.iter().map(|m| m.name.clone()).collect();
        let rows: Vec<report::CamRow<'_>> = entries
            .iter()
            .map(|e| report::CamRow {
                sample: &e.sample,
                label: e.label,
                predicted: e.predicted,
                target_class: e.target_class,
                scores: &e.focus.scores,
            })
            .collect();
        self.emit_table(out, &report::cam_focus(&names, &rows))?;
        let result = CamResult {
            seed,
            model,
            fold: it.fold,
            block: it.block_index.unwrap_or(vit.depth - 1),
            mode: it.mode,
            alpha: it.alpha,
            smoothing_sigma: it.smoothing_sigma,
            run,
            entries: &entries,
        };
        self.emit_result(out, "cam", &result)
    }
}

/// Up to `max` indices alternating normal and abnormal, each class in order.
fn pick_balanced(indices: &[usize], labels: &[u8], max: usize) -> Vec<usize> {
    let mut by_class = [Vec::new(), Vec::new()];
    for &i in indices {
        by_class[labels[i] as usize].push(i);
    }
    let mut out = Vec::with_capacity(max);
    let (mut a, mut b) = (by_class[0].iter(), by_class[1].iter());
    while out.len() < max {
        let (x, y) = (a.next(), b.next());
        if x.is_none() && y.is_none() {
            break;
        }
        out.extend(x.into_iter().chain(y).take(max - out.len()));
    }
    out
}

fn with_init<'a>(setup: Setup<'a>, init: Option<&'a VitParams>) -> Setup<'a> {
    match init {
        Some(p) => setup.with_init(p),
        None => setup,
    }
}

fn run_error(run: String, e: impl Into<Error>) -> Error {
    Error::Run { run, source: Box::new(e.into()) }
}

/// Pairwise tests on per-replicate fold-averaged `metric`, in percent.
/// Flagged replicates are dropped; paired tests keep only replicates that
/// are unflagged in every configuration.
fn pairwise(experiments: &[ExperimentResult<'_>], metric: &str, paired: bool) -> Result<Vec<PairwiseRow>> {
    let n = experiments.iter().map(|e| e.report.rows.len()).min().unwrap_or(0);
    let usable = |e: &ExperimentResult<'_>, r: usize| !e.report.rows[r].flagged && e.report.rows[r].cv.mean.is_some();
    let keep: Vec<usize> = (0..n).filter(|&r| experiments.iter().all(|e| usable(e, r))).collect();
    let configs: Vec<(String, Vec<f64>)> = experiments
        .iter()
        .map(|e| {
            let values = e
                .report
                .rows
                .iter()
                .enumerate()
                .filter(|(r, _)| if paired { keep.contains(r) } else { usable(e, *r) })
                .filter_map(|(_, row)| row.cv.mean.and_then(|m| m.get(metric)))
                .map(|v| 100.0 * v)
                .collect();
            (e.name.to_string(), values)
        })
        .collect();
    Ok(pairwise_table(&configs, paired)?)
}
