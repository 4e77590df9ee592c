//! Strict JSON experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vitbench_core::data::{herlev_class_map, AugmentPolicy, ClassMap};
use vitbench_core::data::augment::{Affine, Blur, ColorJitter, Flip, Noise};
use vitbench_core::interpret::CamMode;
use vitbench_core::train::{GridAxes, TrainConfig};
use vitbench_core::vit::VitConfig;

use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub folds: FoldsConfig,
    /// Transform parameters; also the policy used for training outside
    /// `augment-eval`.
    #[serde(default)]
    pub augmentation: AugmentPolicy,
    #[serde(default)]
    pub augment_eval: AugmentEvalConfig,
    #[serde(default)]
    pub weight_eval: WeightEvalConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub model: VitConfig,
    /// `VITW` checkpoint used as the starting point of every run.
    #[serde(default)]
    pub pretrained: Option<PathBuf>,
    #[serde(default)]
    pub interpret: InterpretConfig,
    #[serde(default)]
    pub output: OutputConfig,
    /// Worker threads; `--workers` and `VITBENCH_WORKERS` take precedence.
    #[serde(default)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// One sub-directory per raw class.
    pub root: PathBuf,
    #[serde(default = "herlev_class_map")]
    pub class_map: ClassMap,
    /// Regex applied to file names; capture group 1 is the group id. Absent
    /// means every image is its own group.
    #[serde(default)]
    pub group_regex: Option<String>,
    #[serde(default = "default_image_size")]
    pub image_size: usize,
    /// Flag the computed normal fraction when it differs from this.
    #[serde(default)]
    pub expected_normal_fraction: Option<f64>,
}

fn default_image_size() -> usize {
    VitConfig::default().image_size
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FoldsConfig {
    pub k: usize,
    /// Absent: derived from the master seed.
    pub seed: Option<u64>,
}

impl Default for FoldsConfig {
    fn default() -> Self {
        FoldsConfig { k: 5, seed: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Hflip,
    Affine,
    Color,
    Blur,
    Noise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Strategy {
    pub name: String,
    pub transforms: Vec<Transform>,
}

impl Strategy {
    /// Only the listed transforms, with parameters from `params` (or the
    /// defaults when `params` disables that transform).
    pub fn policy(&self, params: &AugmentPolicy) -> AugmentPolicy {
        let mut p = AugmentPolicy::none();
        for t in &self.transforms {
            match t {
                Transform::Hflip => p.hflip = Some(params.hflip.clone().unwrap_or_else(Flip::default)),
                Transform::Affine => p.affine = Some(params.affine.clone().unwrap_or_else(Affine::default)),
                Transform::Color => p.color = Some(params.color.clone().unwrap_or_else(ColorJitter::default)),
                Transform::Blur => p.blur = Some(params.blur.clone().unwrap_or_else(Blur::default)),
                Transform::Noise => p.noise = Some(params.noise.clone().unwrap_or_else(Noise::default)),
            }
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentEvalConfig {
    pub strategies: Vec<Strategy>,
}

impl Default for AugmentEvalConfig {
    fn default() -> Self {
        use Transform::*;
        let s = |name: &str, transforms: &[Transform]| Strategy { name: name.into(), transforms: transforms.to_vec() };
        AugmentEvalConfig {
            strategies: vec![
                s("Color Jitter", &[Color]),
                s("Horizontal Flip", &[Hflip]),
                s("Random Affine", &[Affine]),
                s("Color Jitter + Horizontal Flip", &[Color, Hflip]),
                s("Color Jitter + Random Affine", &[Color, Affine]),
                s("Horizontal Flip + Random Affine", &[Hflip, Affine]),
                s("All Three Combined", &[Color, Hflip, Affine]),
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightCase {
    pub abnormal: f64,
    pub normal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightEvalConfig {
    pub cases: Vec<WeightCase>,
    /// Cross-validate each case; `false` only tabulates the weights.
    pub train: bool,
}

impl Default for WeightEvalConfig {
    fn default() -> Self {
        let c = |abnormal, normal| WeightCase { abnormal, normal };
        WeightEvalConfig { cases: vec![c(1.0, 1.0), c(0.8, 0.8), c(1.2, 1.2), c(0.7, 1.3), c(1.3, 0.7)], train: true }
    }
}

/// A replicated configuration: overrides on top of `train.hyper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedExperiment {
    pub name: String,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub epochs: Option<usize>,
}

impl NamedExperiment {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            epochs: self.epochs.unwrap_or(base.epochs),
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    /// Base hyperparameters. `hyper.seed` is the master seed.
    pub hyper: TrainConfig,
    pub grid: GridAxes,
    pub n_replications: usize,
    pub experiments: Vec<NamedExperiment>,
    /// Also train on all data and score on it ("App" columns).
    pub resubstitution: bool,
    /// Paired instead of Welch t-tests in the pairwise tables.
    pub paired: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let e = |name: &str, batch_size, epochs| NamedExperiment {
            name: name.into(),
            batch_size: Some(batch_size),
            learning_rate: Some(1e-4),
            epochs: Some(epochs),
        };
        TrainSection {
            hyper: TrainConfig::default(),
            grid: GridAxes::default(),
            n_replications: 10,
            experiments: vec![e("B16_E15", 16, 15), e("B32_E10", 32, 10), e("B32_E15", 32, 15), e("B64_E15", 64, 15)],
            resubstitution: true,
            paired: false,
        }
    }
}

/// A named region for focus scores: a rectangle in fractions of the image
/// side `[x0, y0, x1, y1]`, or a mask image. `invert` takes the complement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub name: String,
    #[serde(default)]
    pub rect: Option<[f64; 4]>,
    #[serde(default)]
    pub mask: Option<PathBuf>,
    #[serde(default)]
    pub invert: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpretConfig {
    /// `cam` refuses to run when false.
    pub enabled: bool,
    pub block_index: Option<usize>,
    pub mode: CamMode,
    pub alpha: f64,
    pub smoothing_sigma: f64,
    pub target_classes: Vec<u8>,
    /// Validation images of `fold` to explain.
    pub max_images: usize,
    pub fold: usize,
    /// Explain this `VITW` model instead of training one on `fold`.
    pub checkpoint: Option<PathBuf>,
    pub regions: Vec<RegionSpec>,
}

impl Default for InterpretConfig {
    fn default() -> Self {
        let center = [0.25, 0.25, 0.75, 0.75];
        InterpretConfig {
            enabled: true,
            block_index: None,
            mode: CamMode::Pooled,
            alpha: 0.5,
            smoothing_sigma: 0.0,
            target_classes: vec![0, 1],
            max_images: 8,
            fold: 0,
            checkpoint: None,
            regions: vec![
                RegionSpec { name: "center".into(), rect: Some(center), mask: None, invert: false },
                RegionSpec { name: "periphery".into(), rect: Some(center), mask: None, invert: true },
            ],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub formats: Vec<TableFormat>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { directory: PathBuf::from("vitbench-out"), formats: vec![TableFormat::Csv, TableFormat::Json] }
    }
}

fn schema(path: &Path, field: &str, message: impl Into<String>) -> Error {
    Error::Schema { path: path.into(), field: field.into(), message: message.into() }
}

impl ExperimentConfig {
    /// Parse JSON text; unknown keys and type errors report the JSON path.
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            schema(origin, &field, e.into_inner().to_string())
        })?;
        cfg.validate(origin)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).at(path)?;
        let mut cfg = Self::from_json(&text, path)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Make relative paths relative to `base` (the config's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset.root);
        fix(&mut self.output.directory);
        if let Some(p) = &mut self.pretrained {
            fix(p);
        }
        if let Some(p) = &mut self.interpret.checkpoint {
            fix(p);
        }
        for r in &mut self.interpret.regions {
            if let Some(m) = &mut r.mask {
                fix(m);
            }
        }
    }

    pub fn validate(&self, origin: &Path) -> Result<()> {
        let check = |field: &str, r: vitbench_core::Result<()>| r.map_err(|e| schema(origin, field, e.to_string()));
        check("model", self.model.validate())?;
        check("train.hyper", self.train.hyper.validate())?;
        check("augmentation", self.augmentation.validate())?;
        if self.dataset.image_size != self.model.image_size {
            return Err(schema(
                origin,
                "dataset.image_size",
                format!("{} differs from model.image_size {}", self.dataset.image_size, self.model.image_size),
            ));
        }
        if let Some(re) = &self.dataset.group_regex {
            Regex::new(re).map_err(|e| schema(origin, "dataset.group_regex", e.to_string()))?;
        }
        if let Some((k, v)) = self.dataset.class_map.iter().find(|(_, &v)| v > 1) {
            return Err(schema(origin, &format!("dataset.class_map.{k}"), format!("label {v} is not 0 or 1")));
        }
        if self.folds.k < 2 {
            return Err(schema(origin, "folds.k", "need at least 2 folds"));
        }
        check("train.grid", self.train.grid.cells().map(|_| ()))?;
        if self.train.n_replications < 2 {
            return Err(schema(origin, "train.n_replications", "need at least 2 replications"));
        }
        for (i, e) in self.train.experiments.iter().enumerate() {
            check(&format!("train.experiments[{i}]"), e.apply(&self.train.hyper).validate())?;
        }
        let mut names: Vec<&str> = self.train.experiments.iter().map(|e| e.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(schema(origin, "train.experiments", "experiment names must be unique"));
        }
        for (i, c) in self.weight_eval.cases.iter().enumerate() {
            if !(c.abnormal > 0.0 && c.normal > 0.0) {
                return Err(schema(origin, &format!("weight_eval.cases[{i}]"), "multipliers must be positive"));
            }
        }
        let it = &self.interpret;
        if !(0.0..=1.0).contains(&it.alpha) {
            return Err(schema(origin, "interpret.alpha", "must lie in [0, 1]"));
        }
        if !(it.smoothing_sigma >= 0.0) {
            return Err(schema(origin, "interpret.smoothing_sigma", "must be non-negative"));
        }
        if it.target_classes.iter().any(|&c| c > 1) {
            return Err(schema(origin, "interpret.target_classes", "classes are 0 (normal) or 1 (abnormal)"));
        }
        if it.block_index.is_some_and(|b| b >= self.model.depth) {
            return Err(schema(origin, "interpret.block_index", "beyond model depth"));
        }
        if it.fold >= self.folds.k {
            return Err(schema(origin, "interpret.fold", "beyond folds.k"));
        }
        for (i, r) in it.regions.iter().enumerate() {
            let field = format!("interpret.regions[{i}]");
            match (&r.rect, &r.mask) {
                (Some(rect), None) => {
                    let ok = rect.iter().all(|v| (0.0..=1.0).contains(v)) && rect[0] < rect[2] && rect[1] < rect[3];
                    if !ok {
                        return Err(schema(origin, &field, "rect must be [x0, y0, x1, y1] fractions with x0 < x1, y0 < y1"));
                    }
                }
                (None, Some(_)) => {}
                _ => return Err(schema(origin, &field, "give exactly one of `rect` or `mask`")),
            }
        }
        Ok(())
    }

    /// Pretty JSON with every default spelled out.
    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serialises");
        s.push('\n');
        s
    }

    /// SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_canonical_json().as_bytes()))
    }

    pub fn group_pattern(&self) -> Option<Regex> {
        self.dataset.group_regex.as_deref().map(|r| Regex::new(r).expect("validated"))
    }
}
