//! Two-sample comparisons of replicated metrics.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::mean_std;
use super::students_t::{t_cdf, t_quantile};
use crate::error::{bail, Result};

/// A sample reduced to mean, sample standard deviation and size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl SampleSummary {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let (mean, std) = mean_std(values)?;
        Ok(SampleSummary { mean, std, n: values.len() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestReport {
    pub mean_a: f64,
    pub mean_b: f64,
    pub diff: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub t_stat: f64,
    pub df: f64,
    pub p_value: f64,
    pub significant: bool,
    /// Both samples have zero variance, so `t` is not a ratio of finite values.
    #[serde(default)]
    pub degenerate: bool,
}

pub const ALPHA: f64 = 0.05;

fn finish(mean_a: f64, mean_b: f64, se: f64, df: f64) -> TTestReport {
    let diff = mean_a - mean_b;
    if se == 0.0 {
        let (t_stat, p_value) = if diff == 0.0 {
            (0.0, 1.0)
        } else {
            (diff.signum() * f64::INFINITY, 0.0)
        };
        return TTestReport {
            mean_a,
            mean_b,
            diff,
            ci_low: diff,
            ci_high: diff,
            t_stat,
            df,
            p_value,
            significant: p_value < ALPHA,
            degenerate: true,
        };
    }
    let t_stat = diff / se;
    let p_value = (2.0 * (1.0 - t_cdf(libm::fabs(t_stat), df))).clamp(0.0, 1.0);
    let half = t_quantile(1.0 - ALPHA / 2.0, df) * se;
    TTestReport {
        mean_a,
        mean_b,
        diff,
        ci_low: diff - half,
        ci_high: diff + half,
        t_stat,
        df,
        p_value,
        significant: p_value < ALPHA,
        degenerate: false,
    }
}

/// Welch's unequal-variance two-sample t-test with Welch–Satterthwaite
/// degrees of freedom. The difference interval uses the t critical value at
/// that df.
pub fn welch_test(a: &SampleSummary, b: &SampleSummary) -> Result<TTestReport> {
    if a.n < 2 || b.n < 2 {
        bail!(InsufficientData, "welch test needs n ≥ 2 per sample, got {} and {}", a.n, b.n);
    }
    let va = a.std * a.std / a.n as f64;
    let vb = b.std * b.std / b.n as f64;
    let se = libm::sqrt(va + vb);
    let df = if va + vb > 0.0 {
        (va + vb) * (va + vb)
            / (va * va / (a.n as f64 - 1.0) + vb * vb / (b.n as f64 - 1.0))
    } else {
        (a.n + b.n - 2) as f64
    };
    Ok(finish(a.mean, b.mean, se, df))
}

/// Paired t-test on matched replicates.
pub fn paired_test(a: &[f64], b: &[f64]) -> Result<TTestReport> {
    if a.len() != b.len() {
        bail!(Contract, "paired test needs equal lengths, got {} and {}", a.len(), b.len());
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (_, sd) = mean_std(&diffs)?;
    let n = diffs.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    Ok(finish(mean_a, mean_b, sd / libm::sqrt(n), n - 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRow {
    pub a: String,
    pub b: String,
    pub report: TTestReport,
}

/// Every unordered pair `(i, j)`, `i < j`, in input order.
pub fn pairwise_table(configs: &[(String, Vec<f64>)], paired: bool) -> Result<Vec<PairwiseRow>> {
    if configs.len() < 2 {
        bail!(InsufficientData, "pairwise comparison needs at least 2 configurations");
    }
    let mut rows = Vec::with_capacity(configs.len() * (configs.len() - 1) / 2);
    for i in 0..configs.len() {
        for j in i + 1..configs.len() {
            let (na, va) = &configs[i];
            let (nb, vb) = &configs[j];
            let report = if paired {
                paired_test(va, vb)?
            } else {
                welch_test(&SampleSummary::from_values(va)?, &SampleSummary::from_values(vb)?)?
            };
            rows.push(PairwiseRow { a: na.clone(), b: nb.clone(), report });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn identical_samples_are_null() {
        let s = SampleSummary::from_values(&[1.0, 2.0, 4.0]).unwrap();
        let r = welch_test(&s, &s).unwrap();
        assert_eq!(r.t_stat, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!(!r.significant);
    }

    #[test]
    fn zero_variance_conventions() {
        let a = SampleSummary { mean: 3.0, std: 0.0, n: 5 };
        let r = welch_test(&a, &a).unwrap();
        assert_eq!((r.t_stat, r.p_value, r.degenerate), (0.0, 1.0, true));
        let b = SampleSummary { mean: 4.0, std: 0.0, n: 5 };
        let r = welch_test(&a, &b).unwrap();
        assert_eq!(r.p_value, 0.0);
        assert!(r.degenerate && r.significant && r.t_stat < 0.0);
    }

    #[test]
    fn welch_table5_summaries() {
        let a = SampleSummary { mean: 93.93, std: 1.41, n: 10 };
        let b = SampleSummary { mean: 95.15, std: 0.57, n: 10 };
        let r = welch_test(&a, &b).unwrap();
        assert!((r.diff + 1.22).abs() < 1e-9);
        assert!((r.t_stat + 2.54).abs() < 0.01, "t = {}", r.t_stat);
        assert!((r.df - 11.9).abs() < 0.1, "df = {}", r.df);
        assert!(r.p_value > 0.015 && r.p_value < 0.05, "p = {}", r.p_value);
        assert!(r.significant);
    }

    #[test]
    fn more_replicates_narrow_interval() {
        let a = SampleSummary { mean: 1.0, std: 0.5, n: 5 };
        let b = SampleSummary { mean: 1.3, std: 0.8, n: 6 };
        let r1 = welch_test(&a, &b).unwrap();
        let r2 = welch_test(&SampleSummary { n: 10, ..a }, &SampleSummary { n: 12, ..b }).unwrap();
        assert!(r2.ci_high - r2.ci_low < r1.ci_high - r1.ci_low);
    }

    #[test]
    fn paired_requires_matching_lengths() {
        assert!(paired_test(&[1.0, 2.0], &[1.0]).is_err());
        let r = paired_test(&[1.0, 2.0, 3.5], &[0.5, 1.0, 3.0]).unwrap();
        assert!(r.diff > 0.0 && r.df == 2.0);
    }

    #[test]
    fn pairwise_rows_in_input_order() {
        let cfgs: Vec<(String, Vec<f64>)> = (0..4)
            .map(|i| (alloc::format!("Exp{}", i + 1), vec![i as f64, i as f64 + 1.0, i as f64 + 0.5]))
            .collect();
        let rows = pairwise_table(&cfgs, false).unwrap();
        let names: Vec<(String, String)> = rows.iter().map(|r| (r.a.clone(), r.b.clone())).collect();
        let expected = [("Exp1", "Exp2"), ("Exp1", "Exp3"), ("Exp1", "Exp4"), ("Exp2", "Exp3"), ("Exp2", "Exp4"), ("Exp3", "Exp4")];
        assert_eq!(names.len(), 6);
        for (got, want) in names.iter().zip(expected) {
            assert_eq!((got.0.as_str(), got.1.as_str()), want);
        }
        let same = vec![("x".to_string(), vec![1.0, 2.0]), ("y".to_string(), vec![1.0, 2.0])];
        let rows = pairwise_table(&same, false).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].report.p_value, 1.0);
    }
}
