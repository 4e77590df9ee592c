//! Training-time augmentation on raw `[0, 1]` images, applied before
//! normalisation.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::image::{gaussian_blur_plane, hflip, sample_reflect};
use crate::error::{bail, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Flip {
    pub p: f64,
}

impl Default for Flip {
    fn default() -> Self {
        Flip { p: 0.5 }
    }
}

/// Rotation, translation and isotropic scaling about the image centre,
/// drawn together when the transform fires.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Affine {
    pub p: f64,
    pub rotation_deg: f64,
    /// Maximum shift as a fraction of the side length.
    pub translate: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for Affine {
    fn default() -> Self {
        Affine { p: 0.5, rotation_deg: 15.0, translate: 0.1, scale_min: 0.9, scale_max: 1.1 }
    }
}

/// Brightness and contrast factors in `[1 − x, 1 + x]`, plus an independent
/// per-channel gain in `[1 − hue, 1 + hue]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColorJitter {
    pub p: f64,
    pub brightness: f64,
    pub contrast: f64,
    pub hue: f64,
}

impl Default for ColorJitter {
    fn default() -> Self {
        ColorJitter { p: 0.5, brightness: 0.2, contrast: 0.2, hue: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Blur {
    pub p: f64,
    pub sigma_max: f64,
}

impl Default for Blur {
    fn default() -> Self {
        Blur { p: 0.1, sigma_max: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Noise {
    pub p: f64,
    pub sigma: f64,
}

impl Default for Noise {
    fn default() -> Self {
        Noise { p: 0.1, sigma: 0.01 }
    }
}

/// Which transforms run and with what probability. `None` disables one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    pub hflip: Option<Flip>,
    pub affine: Option<Affine>,
    pub color: Option<ColorJitter>,
    pub blur: Option<Blur>,
    pub noise: Option<Noise>,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            hflip: Some(Flip::default()),
            affine: Some(Affine::default()),
            color: Some(ColorJitter::default()),
            blur: Some(Blur::default()),
            noise: Some(Noise::default()),
        }
    }
}

impl AugmentPolicy {
    pub fn none() -> Self {
        AugmentPolicy { hflip: None, affine: None, color: None, blur: None, noise: None }
    }

    pub fn is_identity(&self) -> bool {
        let off = |p: Option<f64>| p.map_or(true, |p| p <= 0.0);
        off(self.hflip.as_ref().map(|t| t.p))
            && off(self.affine.as_ref().map(|t| t.p))
            && off(self.color.as_ref().map(|t| t.p))
            && off(self.blur.as_ref().map(|t| t.p))
            && off(self.noise.as_ref().map(|t| t.p))
    }

    /// The seven single and combined strategies compared in the augmentation
    /// study: colour jitter, horizontal flip, random affine and their unions.
    pub fn standard_strategies() -> Vec<(&'static str, AugmentPolicy)> {
        let cj = || Some(ColorJitter::default());
        let hf = || Some(Flip::default());
        let af = || Some(Affine::default());
        let base = AugmentPolicy::none;
        alloc::vec![
            ("color_jitter", AugmentPolicy { color: cj(), ..base() }),
            ("horizontal_flip", AugmentPolicy { hflip: hf(), ..base() }),
            ("random_affine", AugmentPolicy { affine: af(), ..base() }),
            ("color_jitter+horizontal_flip", AugmentPolicy { color: cj(), hflip: hf(), ..base() }),
            ("color_jitter+random_affine", AugmentPolicy { color: cj(), affine: af(), ..base() }),
            ("horizontal_flip+random_affine", AugmentPolicy { hflip: hf(), affine: af(), ..base() }),
            ("all_three", AugmentPolicy { color: cj(), hflip: hf(), affine: af(), ..base() }),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            self.hflip.as_ref().map(|t| t.p),
            self.affine.as_ref().map(|t| t.p),
            self.color.as_ref().map(|t| t.p),
            self.blur.as_ref().map(|t| t.p),
            self.noise.as_ref().map(|t| t.p),
        ];
        if probs.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
            bail!(Config, "augmentation probabilities must lie in [0, 1]");
        }
        if let Some(a) = &self.affine {
            if !(a.scale_min > 0.0 && a.scale_min <= a.scale_max) {
                bail!(Config, "affine scale range must satisfy 0 < min ≤ max");
            }
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn fires(rng: &mut ChaCha8Rng, p: f64) -> bool {
    p > 0.0 && rng.random::<f64>() < p
}

fn apply_affine(img: &Tensor, a: &Affine, rng: &mut ChaCha8Rng) -> Tensor {
    let s = img.shape()[1];
    let angle = uniform(rng, -a.rotation_deg, a.rotation_deg).to_radians();
    let tx = uniform(rng, -a.translate, a.translate) * s as f64;
    let ty = uniform(rng, -a.translate, a.translate) * s as f64;
    let scale = uniform(rng, a.scale_min, a.scale_max);
    let (sin, cos) = (libm::sin(angle), libm::cos(angle));
    let c = (s as f64 - 1.0) / 2.0;
    let mut out = img.clone();
    for (src, dst) in img.data().chunks(s * s).zip(out.data_mut().chunks_mut(s * s)) {
        for y in 0..s {
            for x in 0..s {
                // inverse map: undo translation, scale, then rotation
                let dx = (x as f64 - c - tx) / scale;
                let dy = (y as f64 - c - ty) / scale;
                let sx = cos * dx + sin * dy + c;
                let sy = -sin * dx + cos * dy + c;
                dst[y * s + x] = sample_reflect(src, s, s, sy, sx);
            }
        }
    }
    out
}

fn apply_color(img: &mut Tensor, cj: &ColorJitter, rng: &mut ChaCha8Rng) {
    let s = img.shape()[1];
    let plane = s * s;
    let b = uniform(rng, 1.0 - cj.brightness, 1.0 + cj.brightness);
    let c = uniform(rng, 1.0 - cj.contrast, 1.0 + cj.contrast);
    let gains = [
        uniform(rng, 1.0 - cj.hue, 1.0 + cj.hue),
        uniform(rng, 1.0 - cj.hue, 1.0 + cj.hue),
        uniform(rng, 1.0 - cj.hue, 1.0 + cj.hue),
    ];
    let data = img.data_mut();
    data.iter_mut().for_each(|v| *v = (*v * b).clamp(0.0, 1.0));
    // contrast about the mean luma
    let mut mean = 0.0;
    for i in 0..plane {
        mean += 0.299 * data[i] + 0.587 * data[plane + i] + 0.114 * data[2 * plane + i];
    }
    mean /= plane as f64;
    data.iter_mut().for_each(|v| *v = ((*v - mean) * c + mean).clamp(0.0, 1.0));
    for (ch, p) in data.chunks_mut(plane).enumerate() {
        p.iter_mut().for_each(|v| *v = (*v * gains[ch]).clamp(0.0, 1.0));
    }
}

/// Apply each enabled transform independently with its probability, in the
/// order flip, affine, colour, blur, noise. Output depends only on the
/// inputs and `seed`.
pub fn augment_sample(img: &Tensor, policy: &AugmentPolicy, seed: u64) -> Result<Tensor> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 || s[1] != s[2] {
        bail!(Shape, "expected a square [3 × S × S] image, got {:?}", s);
    }
    let side = s[1];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = img.clone();
    if let Some(f) = &policy.hflip {
        if fires(&mut rng, f.p) {
            out = hflip(&out);
        }
    }
    if let Some(a) = &policy.affine {
        if fires(&mut rng, a.p) {
            out = apply_affine(&out, a, &mut rng);
        }
    }
    if let Some(cj) = &policy.color {
        if fires(&mut rng, cj.p) {
            apply_color(&mut out, cj, &mut rng);
        }
    }
    if let Some(b) = &policy.blur {
        if fires(&mut rng, b.p) {
            let sigma = uniform(&mut rng, 0.0, b.sigma_max);
            let blurred: Vec<f64> = out
                .data()
                .chunks(side * side)
                .flat_map(|p| gaussian_blur_plane(p, side, side, sigma))
                .collect();
            out = Tensor::new(&[3, side, side], blurred)?;
        }
    }
    if let Some(n) = &policy.noise {
        if fires(&mut rng, n.p) {
            for v in out.data_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = (*v + n.sigma * z).clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}
