//! CSV rendering of result tables.
//!
//! Percentages carry two decimals, p-values three, differences three with a
//! sign. The JSON results keep full precision; these tables are for reading.

use std::collections::BTreeMap;

use vitbench_core::metrics::{MetricSet, PairwiseRow, SummaryCI, METRIC_KEYS};
use vitbench_core::train::{CvResult, GridRow, ReplicationReport};

use crate::error::Result;

/// A header plus rows of already formatted cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: &[&str]) -> Self {
        Table { name: name.into(), header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len(), "table {}", self.name);
        self.rows.push(row);
    }

    pub fn file_name(&self) -> String {
        format!("tables/{}.csv", self.name)
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        Ok(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?)
    }
}

pub fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

pub fn p_value(p: f64) -> String {
    format!("{p:.3}")
}

pub fn signed(x: f64) -> String {
    format!("{x:+.3}")
}

/// `mean ± std` of a fraction, in percent.
pub fn mean_std_pct(s: &SummaryCI) -> String {
    format!("{:.2} ± {:.2}", 100.0 * s.mean, 100.0 * s.std)
}

/// Replace anything but ASCII letters, digits, `-` and `_` with `_`.
pub fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

const METRIC_HEADERS: [&str; 4] = ["precision_pct", "recall_pct", "f1_pct", "accuracy_pct"];

fn metric_cells(m: Option<&MetricSet>) -> Vec<String> {
    METRIC_KEYS
        .iter()
        .map(|k| m.and_then(|m| m.get(k)).map(pct).unwrap_or_default())
        .collect()
}

fn failed_cell(cv: &CvResult) -> String {
    cv.failed_folds.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(" ")
}

/// Per-fold and overall class counts of a fold plan.
pub fn class_counts(per_fold: &[[usize; 2]]) -> Table {
    let mut t = Table::new("class_counts", &["scope", "normal", "abnormal", "total", "normal_pct"]);
    let mut all = [0usize; 2];
    let push = |t: &mut Table, scope: String, c: [usize; 2]| {
        let total = c[0] + c[1];
        let frac = if total > 0 { c[0] as f64 / total as f64 } else { 0.0 };
        t.push(vec![scope, c[0].to_string(), c[1].to_string(), total.to_string(), pct(frac)]);
    };
    for (f, c) in per_fold.iter().enumerate() {
        all[0] += c[0];
        all[1] += c[1];
        push(&mut t, format!("fold{f}"), *c);
    }
    push(&mut t, "all".into(), all);
    t
}

/// Cross-validated metrics per augmentation strategy.
pub fn augment_eval(rows: &[(String, CvResult)]) -> Table {
    let mut t = Table::new("augment_eval", &["strategy", METRIC_HEADERS[0], METRIC_HEADERS[1], METRIC_HEADERS[2], METRIC_HEADERS[3], "failed_folds"]);
    for (name, cv) in rows {
        let mut row = vec![name.clone()];
        row.extend(metric_cells(cv.mean.as_ref()));
        row.push(failed_cell(cv));
        t.push(row);
    }
    t
}

/// One multiplier case: the resulting weights and, if trained, its CV metrics.
pub struct WeightRow<'a> {
    pub case: usize,
    pub abnormal_multiplier: f64,
    pub normal_multiplier: f64,
    pub abnormal_weight: f64,
    pub normal_weight: f64,
    pub cv: Option<&'a CvResult>,
}

pub fn weight_eval(rows: &[WeightRow<'_>]) -> Table {
    let mut t = Table::new(
        "weight_eval",
        &["case", "multiplier", "abnormal_weight", "normal_weight", METRIC_HEADERS[0], METRIC_HEADERS[1], METRIC_HEADERS[2], METRIC_HEADERS[3], "failed_folds"],
    );
    for r in rows {
        let mut row = vec![
            r.case.to_string(),
            format!("{:?}×{:?}", r.abnormal_multiplier, r.normal_multiplier),
            format!("{:.2}", r.abnormal_weight),
            format!("{:.2}", r.normal_weight),
        ];
        row.extend(metric_cells(r.cv.and_then(|cv| cv.mean.as_ref())));
        row.push(r.cv.map(failed_cell).unwrap_or_default());
        t.push(row);
    }
    t
}

pub fn grid(rows: &[GridRow]) -> Table {
    let mut t = Table::new(
        "grid",
        &["experiment", "batch_size", "learning_rate", "epochs", METRIC_HEADERS[0], METRIC_HEADERS[1], METRIC_HEADERS[2], METRIC_HEADERS[3], "failed_folds"],
    );
    for r in rows {
        let mut row = vec![r.experiment.to_string(), r.batch_size.to_string(), r.learning_rate.to_string(), r.epochs.to_string()];
        row.extend(metric_cells(r.cv.mean.as_ref()));
        row.push(failed_cell(&r.cv));
        t.push(row);
    }
    t
}

const REP_HEADER: [&str; 11] = [
    "replicate",
    "seed",
    "cv_precision_pct",
    "cv_recall_pct",
    "cv_f1_pct",
    "cv_accuracy_pct",
    "app_precision_pct",
    "app_recall_pct",
    "app_f1_pct",
    "app_accuracy_pct",
    "flagged",
];

fn summary_cells(map: &BTreeMap<String, SummaryCI>) -> Vec<String> {
    METRIC_KEYS.iter().map(|k| map.get(*k).map(mean_std_pct).unwrap_or_default()).collect()
}

/// One row per replicate plus a `mean ± std` row over unflagged replicates.
pub fn replicate(name: &str, report: &ReplicationReport) -> Table {
    let mut t = Table::new(format!("replicate_{}", file_stem(name)), &REP_HEADER);
    for r in &report.rows {
        let mut row = vec![r.rep.to_string(), r.seed.to_string()];
        row.extend(metric_cells(r.cv.mean.as_ref()));
        row.extend(metric_cells(r.app.as_ref().and_then(|a| a.metrics()).as_ref()));
        row.push(if r.flagged { "yes".into() } else { String::new() });
        t.push(row);
    }
    let mut row = vec!["mean ± std".to_string(), String::new()];
    row.extend(summary_cells(&report.cv));
    row.extend(summary_cells(&report.app));
    row.push(String::new());
    t.push(row);
    t
}

/// Per configuration, `mean ± std` twice: the spread of fold-averaged CV
/// metrics over replicates, and the spread over every replicate × fold run.
pub fn replicate_summary(reports: &[(String, &ReplicationReport)]) -> Table {
    let mut t = Table::new(
        "replicate_summary",
        &[
            "configuration",
            "spread",
            "n",
            "cv_precision_pct",
            "cv_recall_pct",
            "cv_f1_pct",
            "cv_accuracy_pct",
            "app_precision_pct",
            "app_recall_pct",
            "app_f1_pct",
            "app_accuracy_pct",
        ],
    );
    for (name, r) in reports {
        let n = |m: &BTreeMap<String, SummaryCI>| m.get("accuracy").map(|s| s.n.to_string()).unwrap_or_default();
        let mut row = vec![name.clone(), "replications".into(), n(&r.cv)];
        row.extend(summary_cells(&r.cv));
        row.extend(summary_cells(&r.app));
        t.push(row);
        let mut row = vec![name.clone(), "pooled_folds".into(), n(&r.cv_pooled_folds)];
        row.extend(summary_cells(&r.cv_pooled_folds));
        row.extend(std::iter::repeat_n(String::new(), 4));
        t.push(row);
    }
    t
}

/// Pairwise tests on a metric already expressed in percent.
pub fn pairwise(metric: &str, rows: &[PairwiseRow]) -> Table {
    let mut t = Table::new(
        format!("pairwise_{metric}"),
        &["comparison", "mean_a", "mean_b", "diff", "ci_low", "ci_high", "t", "df", "p_value", "significant"],
    );
    for r in rows {
        let rep = &r.report;
        t.push(vec![
            format!("{} vs {}", r.a, r.b),
            format!("{:.2}", rep.mean_a),
            format!("{:.2}", rep.mean_b),
            signed(rep.diff),
            format!("{:.3}", rep.ci_low),
            format!("{:.3}", rep.ci_high),
            format!("{:.3}", rep.t_stat),
            format!("{:.2}", rep.df),
            p_value(rep.p_value),
            if rep.significant { "yes" } else { "no" }.into(),
        ]);
    }
    t
}

/// One row per explained image and target class; region columns in `regions` order.
pub struct CamRow<'a> {
    pub sample: &'a str,
    pub label: u8,
    pub predicted: u8,
    pub target_class: u8,
    pub scores: &'a BTreeMap<String, f64>,
}

pub fn cam_focus(regions: &[String], rows: &[CamRow<'_>]) -> Table {
    let mut head = vec!["sample", "label", "predicted", "target_class"];
    head.extend(regions.iter().map(String::as_str));
    let mut t = Table::new("cam_focus", &head);
    for r in rows {
        let mut row = vec![r.sample.to_string(), r.label.to_string(), r.predicted.to_string(), r.target_class.to_string()];
        row.extend(regions.iter().map(|name| r.scores.get(name).map(|s| format!("{s:.4}")).unwrap_or_default()));
        t.push(row);
    }
    t
}
