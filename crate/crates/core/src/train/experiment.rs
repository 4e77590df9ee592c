//! Cross-validation, hyperparameter grids and replicated runs.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::run::{fit, train_one_run, RunResult, Setup};
use super::TrainConfig;
use crate::data::FoldPlan;
use crate::error::{bail, Result};
use crate::exec::Executor;
use crate::metrics::{ci_from_summary, column, mean_std, MetricSet, SummaryCI, METRIC_KEYS};
use crate::seed::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub folds: Vec<RunResult>,
    /// Mean over completed folds; `None` when every fold failed.
    pub mean: Option<MetricSet>,
    /// Folds that diverged and are excluded from `mean`.
    pub failed_folds: Vec<usize>,
}

impl CvResult {
    pub fn from_folds(folds: Vec<RunResult>) -> Self {
        let ok: Vec<MetricSet> = folds.iter().filter_map(RunResult::metrics).collect();
        let failed_folds = folds.iter().filter(|r| !r.is_completed()).filter_map(|r| r.fold).collect();
        CvResult { mean: MetricSet::mean_of(&ok), folds, failed_folds }
    }
}

fn cv_jobs<E: Executor>(
    exec: &E,
    setup: Setup<'_>,
    plan: &FoldPlan,
    jobs: &[(TrainConfig, usize)],
) -> Result<Vec<RunResult>> {
    exec.map(jobs, |(cfg, fold)| train_one_run(setup, plan, *fold, cfg).map(|r| r.result))
        .into_iter()
        .collect()
}

/// Train and validate every fold of `plan`. Fold `f` uses seed
/// `derive_seed(train.seed, [("fold", f)])`.
pub fn cross_validate<E: Executor>(exec: &E, setup: Setup<'_>, plan: &FoldPlan, train: &TrainConfig) -> Result<CvResult> {
    let jobs: Vec<(TrainConfig, usize)> = (0..plan.k).map(|f| (train.clone(), f)).collect();
    Ok(CvResult::from_folds(cv_jobs(exec, setup, plan, &jobs)?))
}

/// Train on all samples and evaluate on the same samples.
pub fn resubstitution_eval(setup: Setup<'_>, train: &TrainConfig) -> Result<RunResult> {
    let all: Vec<usize> = (0..setup.data.len()).collect();
    let seed = derive_seed(train.seed, &[("app", 0)]);
    Ok(fit(setup, &all, &all, train, seed, None)?.result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxes {
    pub batch_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub epoch_counts: Vec<usize>,
}

impl Default for GridAxes {
    fn default() -> Self {
        GridAxes {
            batch_sizes: alloc::vec![16, 32, 64],
            learning_rates: alloc::vec![0.0001, 0.0005, 0.001],
            epoch_counts: alloc::vec![5, 10, 15],
        }
    }
}

impl GridAxes {
    /// Cells in ascending (batch size, learning rate, epochs) order.
    pub fn cells(&self) -> Result<Vec<(usize, f64, usize)>> {
        if self.batch_sizes.is_empty() || self.learning_rates.is_empty() || self.epoch_counts.is_empty() {
            bail!(Config, "grid axes must be non-empty");
        }
        let mut b = self.batch_sizes.clone();
        let mut l = self.learning_rates.clone();
        let mut e = self.epoch_counts.clone();
        b.sort_unstable();
        b.dedup();
        l.sort_by(f64::total_cmp);
        l.dedup();
        e.sort_unstable();
        e.dedup();
        let mut out = Vec::with_capacity(b.len() * l.len() * e.len());
        for &bs in &b {
            for &lr in &l {
                for &ep in &e {
                    out.push((bs, lr, ep));
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    /// 1-based experiment number.
    pub experiment: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub cv: CvResult,
    pub failed: bool,
}

/// Cross-validate every cell of the grid. All cells share `base.seed`.
pub fn run_grid<E: Executor>(
    exec: &E,
    setup: Setup<'_>,
    plan: &FoldPlan,
    axes: &GridAxes,
    base: &TrainConfig,
) -> Result<Vec<GridRow>> {
    let cells = axes.cells()?;
    let mut jobs = Vec::with_capacity(cells.len() * plan.k);
    for &(batch_size, learning_rate, epochs) in &cells {
        let cfg = TrainConfig { batch_size, learning_rate, epochs, ..base.clone() };
        for f in 0..plan.k {
            jobs.push((cfg.clone(), f));
        }
    }
    let mut results = cv_jobs(exec, setup, plan, &jobs)?.into_iter();
    Ok(cells
        .into_iter()
        .enumerate()
        .map(|(i, (batch_size, learning_rate, epochs))| {
            let cv = CvResult::from_folds(results.by_ref().take(plan.k).collect());
            let failed = !cv.failed_folds.is_empty();
            GridRow { experiment: i + 1, batch_size, learning_rate, epochs, cv, failed }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRow {
    pub rep: usize,
    pub seed: u64,
    pub cv: CvResult,
    /// Resubstitution ("application") run on all samples.
    pub app: Option<RunResult>,
    /// Some run of this replicate diverged.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub rows: Vec<RepRow>,
    /// Mean ± sample std over replicates of the fold-averaged CV metrics.
    pub cv: BTreeMap<String, SummaryCI>,
    /// Mean ± sample std over replicates of resubstitution metrics.
    pub app: BTreeMap<String, SummaryCI>,
    /// Mean ± sample std over every (replicate, fold) validation result.
    pub cv_pooled_folds: BTreeMap<String, SummaryCI>,
}

fn aggregate(sets: &[MetricSet]) -> BTreeMap<String, SummaryCI> {
    let mut out = BTreeMap::new();
    for key in METRIC_KEYS {
        let values = column(sets, key);
        let summary = match mean_std(&values) {
            Ok((mean, std)) => ci_from_summary(mean, std, values.len()),
            Err(_) if values.len() == 1 => ci_from_summary(values[0], 0.0, 1),
            Err(_) => continue,
        };
        out.insert(key.to_string(), summary);
    }
    out
}

/// Replicate cross-validation (and optionally resubstitution) with seed
/// `derive_seed(master_seed, [("rep", r)])` for replicate `r`.
pub fn run_replications<E: Executor>(
    exec: &E,
    setup: Setup<'_>,
    plan: &FoldPlan,
    train: &TrainConfig,
    n_reps: usize,
    master_seed: u64,
    with_app: bool,
) -> Result<ReplicationReport> {
    if n_reps < 2 {
        bail!(InsufficientData, "replication needs at least 2 replicates, got {n_reps}");
    }
    let seeds: Vec<u64> = (0..n_reps).map(|r| derive_seed(master_seed, &[("rep", r as u64)])).collect();
    run_replications_with_seeds(exec, setup, plan, train, &seeds, with_app)
}

pub fn run_replications_with_seeds<E: Executor>(
    exec: &E,
    setup: Setup<'_>,
    plan: &FoldPlan,
    train: &TrainConfig,
    seeds: &[u64],
    with_app: bool,
) -> Result<ReplicationReport> {
    // job = (replicate, Some(fold) | None for the resubstitution run)
    let mut jobs: Vec<(usize, Option<usize>)> = Vec::new();
    for r in 0..seeds.len() {
        jobs.extend((0..plan.k).map(|f| (r, Some(f))));
        if with_app {
            jobs.push((r, None));
        }
    }
    let results: Vec<Result<RunResult>> = exec.map(&jobs, |&(r, fold)| {
        let cfg = TrainConfig { seed: seeds[r], ..train.clone() };
        match fold {
            Some(f) => train_one_run(setup, plan, f, &cfg).map(|t| t.result),
            None => resubstitution_eval(setup, &cfg),
        }
    });
    let mut results = results.into_iter();
    let mut rows = Vec::with_capacity(seeds.len());
    for (rep, &seed) in seeds.iter().enumerate() {
        let folds = results.by_ref().take(plan.k).collect::<Result<Vec<_>>>()?;
        let app = if with_app { Some(results.next().expect("app job queued")?) } else { None };
        let cv = CvResult::from_folds(folds);
        let flagged = !cv.failed_folds.is_empty() || app.as_ref().is_some_and(|a| !a.is_completed());
        rows.push(RepRow { rep, seed, cv, app, flagged });
    }
    Ok(ReplicationReport::from_rows(rows))
}

impl ReplicationReport {
    /// Aggregate replicate rows; flagged rows are kept but not counted.
    pub fn from_rows(rows: Vec<RepRow>) -> Self {
        let usable = rows.iter().filter(|r| !r.flagged);
        let cv_sets: Vec<MetricSet> = usable.clone().filter_map(|r| r.cv.mean).collect();
        let app_sets: Vec<MetricSet> = usable.clone().filter_map(|r| r.app.as_ref().and_then(RunResult::metrics)).collect();
        let pooled: Vec<MetricSet> = usable.flat_map(|r| r.cv.folds.iter().filter_map(RunResult::metrics)).collect();
        ReplicationReport { cv: aggregate(&cv_sets), app: aggregate(&app_sets), cv_pooled_folds: aggregate(&pooled), rows }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_axes_have_27_cells_in_order() {
        let cells = GridAxes::default().cells().unwrap();
        assert_eq!(cells.len(), 27);
        assert_eq!(cells[0], (16, 0.0001, 5));
        assert_eq!(cells[26], (64, 0.001, 15));
        let mut sorted = cells.clone();
        sorted.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
        assert_eq!(cells, sorted);
    }

    #[test]
    fn axes_sorted_even_if_given_unsorted() {
        let axes = GridAxes { batch_sizes: alloc::vec![64, 16], learning_rates: alloc::vec![1e-3], epoch_counts: alloc::vec![5] };
        let cells = axes.cells().unwrap();
        assert_eq!(cells.iter().map(|c| c.0).collect::<Vec<_>>(), [16, 64]);
        assert!(GridAxes { batch_sizes: Vec::new(), ..GridAxes::default() }.cells().is_err());
    }

    #[test]
    fn aggregate_hand_oracle() {
        let sets: Vec<MetricSet> = [1.0, 2.0, 3.0]
            .iter()
            .map(|&v| MetricSet { accuracy: v, precision: v, recall: v, f1: v, degenerate: false })
            .collect();
        let agg = aggregate(&sets);
        let acc = agg["accuracy"];
        assert_eq!((acc.mean, acc.std, acc.n), (2.0, 1.0, 3));
    }
}
