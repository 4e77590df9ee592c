use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetManifest;
use crate::error::{bail, Result};

/// Assignment of every sample to one of `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// `assignment[i]` is the fold of sample `i`.
    pub assignment: Vec<usize>,
}

impl FoldPlan {
    pub fn validation_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn training_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] != fold).collect()
    }

    /// `[fold][label]` sample counts.
    pub fn class_counts(&self, labels: &[u8]) -> Vec<[usize; 2]> {
        let mut out = vec![[0usize; 2]; self.k];
        for (&f, &l) in self.assignment.iter().zip(labels) {
            out[f][l as usize] += 1;
        }
        out
    }
}

pub fn make_folds(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<FoldPlan> {
    let labels = manifest.labels();
    let groups: Vec<&str> = manifest.samples.iter().map(|s| s.group_id.as_str()).collect();
    make_folds_from(&labels, &groups, k, seed)
}

/// Greedy stratified group k-fold.
///
/// Whole groups are placed one at a time, largest first (a seeded shuffle
/// breaks ties in size). Each goes to the fold where it minimises the squared
/// deviation of per-class counts from the proportional targets `N_c / k`;
/// remaining ties go to the smaller fold, then the lower fold index.
pub fn make_folds_from(labels: &[u8], groups: &[&str], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        bail!(Contract, "need at least 2 folds, got {k}");
    }
    if labels.len() != groups.len() {
        bail!(Contract, "{} labels for {} group ids", labels.len(), groups.len());
    }
    let mut by_group: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        by_group.entry(g).or_default().push(i);
    }
    let mut units: Vec<(Vec<usize>, [usize; 2])> = by_group
        .into_values()
        .map(|members| {
            let mut counts = [0usize; 2];
            for &i in &members {
                counts[labels[i] as usize] += 1;
            }
            (members, counts)
        })
        .collect();

    for class in 0..2 {
        let present = labels.iter().any(|&l| l as usize == class);
        let groups_with = units.iter().filter(|(_, c)| c[class] > 0).count();
        if present && groups_with < k {
            bail!(InfeasibleStratification, "class {class} occurs in {groups_with} groups, fewer than {k} folds");
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    units.shuffle(&mut rng);
    units.sort_by(|a, b| b.0.len().cmp(&a.0.len()));

    let totals = [
        labels.iter().filter(|&&l| l == 0).count() as f64,
        labels.iter().filter(|&&l| l == 1).count() as f64,
    ];
    let target = [totals[0] / k as f64, totals[1] / k as f64];
    let mut fold_counts = vec![[0usize; 2]; k];
    let mut assignment = vec![usize::MAX; labels.len()];
    for (members, counts) in &units {
        let mut best = 0;
        let mut best_key = (f64::INFINITY, usize::MAX);
        for (f, fc) in fold_counts.iter().enumerate() {
            // Change in Σ_c (count − target)² for this fold only.
            let mut delta = 0.0;
            for c in 0..2 {
                let before = fc[c] as f64 - target[c];
                let after = before + counts[c] as f64;
                delta += after * after - before * before;
            }
            let key = (delta, fc[0] + fc[1]);
            if key.0 < best_key.0 - 1e-9 || (libm::fabs(key.0 - best_key.0) <= 1e-9 && key.1 < best_key.1) {
                best = f;
                best_key = key;
            }
        }
        fold_counts[best][0] += counts[0];
        fold_counts[best][1] += counts[1];
        for &i in members {
            assignment[i] = best;
        }
    }
    Ok(FoldPlan { k, seed, assignment })
}
