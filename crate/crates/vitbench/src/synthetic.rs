//! A small Herlev-shaped image tree for trying the pipeline without the
//! real data: seven class directories of single-cell PNGs in which abnormal
//! cells have larger, darker nuclei.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use vitbench_core::data::{herlev_class_map, ABNORMAL};

use crate::error::{IoContext, Result};
use crate::imageio::encode_png;

/// Group pattern matching the `p<NNN>_` patient prefix of generated files.
pub const GROUP_REGEX: &str = r"^(p\d+)_";

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    /// Images per class directory.
    pub per_class: usize,
    pub size: usize,
    /// Images per patient; consecutive images of a class share a patient.
    pub per_patient: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec { per_class: 12, size: 32, per_patient: 2, seed: 0 }
    }
}

/// Interleaved RGB of one cell: pale cytoplasm disc and a nucleus whose
/// radius depends on the label.
pub fn cell_image(size: usize, abnormal: bool, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let s = size as f64;
    let (cx, cy) = (s / 2.0 + rng.random_range(-0.08..0.08) * s, s / 2.0 + rng.random_range(-0.08..0.08) * s);
    let cell_r = s * rng.random_range(0.36..0.44);
    let nuc_r = if abnormal { s * rng.random_range(0.20..0.26) } else { s * rng.random_range(0.07..0.11) };
    let tint = rng.random_range(-0.05..0.05);
    let mut out = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt();
            let noise = rng.random_range(-0.03..0.03);
            let rgb = if d < nuc_r {
                [0.30, 0.20, 0.45]
            } else if d < cell_r {
                [0.85, 0.65 + tint, 0.80]
            } else {
                [0.95, 0.93, 0.95]
            };
            out.extend(rgb.map(|c: f64| ((c + noise).clamp(0.0, 1.0) * 255.0).round() as u8));
        }
    }
    out
}

/// Write `<root>/<class>/p<NNN>_<i>.png` for the seven Herlev classes.
/// Returns the number of images written.
pub fn write_tree(root: &Path, spec: &SyntheticSpec) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut patient = 0usize;
    let mut written = 0;
    for (class, label) in herlev_class_map() {
        let dir = root.join(&class);
        fs::create_dir_all(&dir).at(&dir)?;
        for i in 0..spec.per_class {
            if i % spec.per_patient.max(1) == 0 {
                patient += 1;
            }
            let rgb = cell_image(spec.size, label == ABNORMAL, &mut rng);
            let path = dir.join(format!("p{patient:03}_{i:03}.png"));
            fs::write(&path, encode_png(spec.size, spec.size, &rgb)?).at(&path)?;
            written += 1;
        }
    }
    Ok(written)
}

/// A quick config for a tree written by [`write_tree`] at `images`
/// (relative to the config file) with images of side `size`.
pub fn example_config(images: &str, size: usize) -> serde_json::Value {
    json!({
        "dataset": { "root": images, "group_regex": GROUP_REGEX, "image_size": size },
        "folds": { "k": 3 },
        "model": { "image_size": size, "patch_size": size / 4, "embed_dim": 16, "depth": 1, "num_heads": 2, "mlp_ratio": 2.0 },
        "train": {
            "hyper": { "batch_size": 8, "learning_rate": 0.003, "epochs": 4, "seed": 7 },
            "grid": { "batch_sizes": [8, 16], "learning_rates": [0.001, 0.003], "epoch_counts": [2, 4] },
            "n_replications": 3,
            "experiments": [
                { "name": "B8_E4", "batch_size": 8, "epochs": 4 },
                { "name": "B16_E4", "batch_size": 16, "epochs": 4 }
            ]
        },
        "interpret": { "max_images": 4 },
        "output": { "directory": "out" }
    })
}
