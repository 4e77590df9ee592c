use serde::{Deserialize, Serialize};

use crate::data::{ABNORMAL, NORMAL};
use crate::error::{bail, Result};

/// Per-class sample counts for the binary task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub normal: usize,
    pub abnormal: usize,
}

impl ClassCounts {
    pub fn from_labels(labels: impl IntoIterator<Item = u8>) -> Self {
        let mut c = ClassCounts { normal: 0, abnormal: 0 };
        for l in labels {
            if l == ABNORMAL {
                c.abnormal += 1;
            } else {
                c.normal += 1;
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.normal + self.abnormal
    }
}

/// Loss weights per class, stored with the multipliers that produced them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub normal: f64,
    pub abnormal: f64,
    /// `(abnormal, normal)` multipliers applied to the inverse-frequency base.
    pub multipliers: (f64, f64),
}

impl ClassWeights {
    /// Weights given directly, with unit multipliers.
    pub fn from_pair(normal: f64, abnormal: f64) -> Self {
        ClassWeights { normal, abnormal, multipliers: (1.0, 1.0) }
    }

    pub fn uniform() -> Self {
        Self::from_pair(1.0, 1.0)
    }

    pub fn weight(&self, label: u8) -> f64 {
        if label == ABNORMAL {
            self.abnormal
        } else {
            debug_assert_eq!(label, NORMAL);
            self.normal
        }
    }
}

/// Inverse-frequency weights `N / (C · N_c)` with `C = 2`, each scaled by its
/// class multiplier `(abnormal_mult, normal_mult)`.
pub fn class_weights(counts: ClassCounts, multipliers: (f64, f64)) -> Result<ClassWeights> {
    if counts.normal == 0 || counts.abnormal == 0 {
        bail!(InvalidCounts, "every class needs at least one sample, got {:?}", counts);
    }
    let (am, nm) = multipliers;
    if !(am > 0.0 && nm > 0.0) {
        bail!(InvalidCounts, "weight multipliers must be positive, got {:?}", multipliers);
    }
    let n = counts.total() as f64;
    let base = |nc: usize| n / (2.0 * nc as f64);
    Ok(ClassWeights { normal: base(counts.normal) * nm, abnormal: base(counts.abnormal) * am, multipliers })
}
