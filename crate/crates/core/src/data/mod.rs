//! Dataset index, binary relabelling, fold planning, image preprocessing and
//! training-time augmentation.

pub mod augment;
pub mod folds;
pub mod image;

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::train::ClassCounts;

pub use augment::{augment_sample, AugmentPolicy};
pub use folds::{make_folds, make_folds_from, FoldPlan};
pub use image::{denormalize_image, normalize_image, resize_bilinear, IMAGENET_MEAN, IMAGENET_STD};

pub const NORMAL: u8 = 0;
pub const ABNORMAL: u8 = 1;

pub fn label_name(label: u8) -> &'static str {
    if label == ABNORMAL {
        "abnormal"
    } else {
        "normal"
    }
}

/// Raw class name → binary label.
pub type ClassMap = BTreeMap<String, u8>;

/// The seven Herlev cytology classes regrouped into normal / abnormal.
pub fn herlev_class_map() -> ClassMap {
    [
        ("normal_superficiel", NORMAL),
        ("normal_intermediate", NORMAL),
        ("normal_columnar", NORMAL),
        ("light_dysplastic", ABNORMAL),
        ("moderate_dysplastic", ABNORMAL),
        ("severe_dysplastic", ABNORMAL),
        ("carcinoma_in_situ", ABNORMAL),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub path: String,
    pub raw_label: String,
    pub label: u8,
    pub group_id: String,
}

/// A discovered but not yet labelled file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEntry {
    pub path: String,
    pub raw_label: String,
    pub group_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub samples: Vec<Sample>,
    pub class_counts: ClassCounts,
    pub class_map: ClassMap,
}

impl DatasetManifest {
    /// Label entries through `class_map` and sort them by path.
    pub fn from_entries(mut entries: Vec<RawEntry>, class_map: &ClassMap) -> Result<Self> {
        if entries.is_empty() {
            bail!(Dataset, "dataset is empty");
        }
        if let Some((k, v)) = class_map.iter().find(|(_, &v)| v > ABNORMAL) {
            bail!(Dataset, "class map sends {k:?} to {v}; labels must be 0 or 1");
        }
        entries.sort_by(|a, b| a.path.cmp(&b.path));
        let mut samples = Vec::with_capacity(entries.len());
        for e in entries {
            let Some(&label) = class_map.get(&e.raw_label) else {
                bail!(Dataset, "class {:?} is not in the class map", e.raw_label);
            };
            if e.group_id.is_empty() {
                bail!(Dataset, "empty group id for {}", e.path);
            }
            samples.push(Sample { path: e.path, raw_label: e.raw_label, label, group_id: e.group_id });
        }
        let class_counts = ClassCounts::from_labels(samples.iter().map(|s| s.label));
        Ok(DatasetManifest { samples, class_counts, class_map: class_map.clone() })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

fn round4(x: f64) -> f64 {
    libm::round(x * 1e4) / 1e4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountSummary {
    pub normal: usize,
    pub abnormal: usize,
    pub total: usize,
    /// Fractions rounded to four decimals.
    pub normal_fraction: f64,
    pub abnormal_fraction: f64,
    pub expected_normal_fraction: Option<f64>,
    pub warnings: Vec<String>,
}

/// Class counts and fractions, flagged against an optional expected normal
/// fraction (difference above 0.0005 is reported).
pub fn summarize_counts(counts: ClassCounts, expected_normal_fraction: Option<f64>) -> Result<CountSummary> {
    let total = counts.total();
    if total == 0 {
        bail!(Dataset, "cannot summarise an empty dataset");
    }
    let nf = counts.normal as f64 / total as f64;
    let mut warnings = Vec::new();
    if counts.normal == 0 || counts.abnormal == 0 {
        warnings.push("dataset contains a single class".to_string());
    }
    if let Some(expected) = expected_normal_fraction {
        if libm::fabs(round4(nf) - expected) > 5e-4 {
            warnings.push(alloc::format!(
                "computed normal fraction {:.4} differs from expected {:.4}",
                round4(nf),
                expected
            ));
        }
    }
    Ok(CountSummary {
        normal: counts.normal,
        abnormal: counts.abnormal,
        total,
        normal_fraction: round4(nf),
        abnormal_fraction: round4(1.0 - nf),
        expected_normal_fraction,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;

    fn entries(spec: &[(&str, usize)]) -> Vec<RawEntry> {
        let mut out = Vec::new();
        for (class, n) in spec {
            for i in 0..*n {
                let path = format!("{class}/{i:03}.png");
                out.push(RawEntry { path: path.clone(), raw_label: class.to_string(), group_id: path });
            }
        }
        out
    }

    #[test]
    fn herlev_layout_counts() {
        let spec = [
            ("normal_superficiel", 74),
            ("normal_intermediate", 70),
            ("normal_columnar", 98),
            ("light_dysplastic", 182),
            ("moderate_dysplastic", 146),
            ("severe_dysplastic", 197),
            ("carcinoma_in_situ", 150),
        ];
        let m = DatasetManifest::from_entries(entries(&spec), &herlev_class_map()).unwrap();
        assert_eq!(m.len(), 917);
        assert_eq!(m.class_counts, ClassCounts { normal: 242, abnormal: 675 });
    }

    #[test]
    fn custom_map_and_sorting() {
        let map: ClassMap = [("a", 0), ("b", 1), ("c", 1)].into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let mut e = entries(&[("c", 2), ("a", 2), ("b", 2)]);
        e.reverse();
        let m = DatasetManifest::from_entries(e, &map).unwrap();
        assert_eq!(m.class_counts, ClassCounts { normal: 2, abnormal: 4 });
        let paths: Vec<&str> = m.samples.iter().map(|s| s.path.as_str()).collect();
        let mut sorted = paths.clone();
        sorted.sort();
        assert_eq!(paths, sorted);
    }

    #[test]
    fn empty_and_unknown() {
        assert!(matches!(DatasetManifest::from_entries(Vec::new(), &herlev_class_map()), Err(crate::Error::Dataset(_))));
        assert!(DatasetManifest::from_entries(entries(&[("mystery", 1)]), &herlev_class_map()).is_err());
    }

    #[test]
    fn count_summary() {
        let s = summarize_counts(ClassCounts { normal: 242, abnormal: 675 }, Some(0.278)).unwrap();
        assert_eq!(s.normal_fraction, 0.2639);
        assert_eq!(s.abnormal_fraction, 0.7361);
        assert_eq!(s.warnings.len(), 1);
        let s = summarize_counts(ClassCounts { normal: 10, abnormal: 10 }, None).unwrap();
        assert_eq!((s.normal_fraction, s.abnormal_fraction), (0.5, 0.5));
        assert!(s.warnings.is_empty());
        let s = summarize_counts(ClassCounts { normal: 0, abnormal: 9 }, None).unwrap();
        assert_eq!(s.abnormal_fraction, 1.0);
        assert_eq!(s.warnings.len(), 1);
    }
}
