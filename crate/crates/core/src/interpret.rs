//! Grad-CAM heatmaps, region focus scores and overlay rendering.
//!
//! With class-token readout the final block's output patch tokens never
//! reach the logits, so their gradients are identically zero. The map is
//! therefore built on the features entering attention (the first layer-norm
//! output) of the selected block, by default the last one: these are the
//! patch features the class token attends over.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::image::gaussian_blur_plane;
use crate::error::{bail, Result};
use crate::tensor::Tensor;
use crate::vit::{forward_image, VitConfig, VitParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CamMode {
    /// Channel weights are token-averaged gradients (classic Grad-CAM).
    #[default]
    Pooled,
    /// Per-token gradient ⊙ activation.
    Elementwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CamOptions {
    /// Encoder block whose features are used; `None` means the last block.
    pub block: Option<usize>,
    pub mode: CamMode,
    /// Gaussian smoothing of the upsampled map, in pixels. 0 disables it.
    pub smoothing_sigma: f64,
}

impl Default for CamOptions {
    fn default() -> Self {
        CamOptions { block: None, mode: CamMode::Pooled, smoothing_sigma: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub target_class: u8,
    /// `[G × G]` grid in `[0, 1]`.
    pub grid: Tensor,
    /// `[S × S]` map in `[0, 1]`, once upsampled.
    pub upsampled: Option<Tensor>,
}

/// Grad-CAM grid for one normalised `[3 × S × S]` image.
pub fn grad_cam_map(
    params: &VitParams,
    config: &VitConfig,
    image: &Tensor,
    target_class: u8,
    options: &CamOptions,
) -> Result<Heatmap> {
    if target_class > 1 {
        bail!(Contract, "target class must be 0 or 1, got {target_class}");
    }
    if !params.is_finite() {
        bail!(NonFinite, "model parameters contain non-finite values");
    }
    let block = options.block.unwrap_or(config.depth - 1);
    if block >= config.depth {
        bail!(Contract, "block {block} out of range for depth {}", config.depth);
    }
    let mut g = Graph::new();
    let bound = params.bind(&mut g, true)?;
    let trace = forward_image(&mut g, &bound, config, image, None)?;
    let logit = g.slice_cols(trace.logits, target_class as usize, 1)?;
    let logit = g.sum(logit)?;
    let features = trace.blocks[block].attn_input;
    let grads = g.backward(logit)?.wrt(features);
    let acts = g.value(features);

    let (t, d) = (config.num_patches(), config.embed_dim);
    // row 0 is the class token
    let a = &acts.data()[d..];
    let gr = &grads.data()[d..];
    let raw: Vec<f64> = match options.mode {
        CamMode::Pooled => {
            let mut w = vec![0.0; d];
            for row in gr.chunks(d) {
                w.iter_mut().zip(row).for_each(|(w, g)| *w += g / t as f64);
            }
            a.chunks(d).map(|row| row.iter().zip(&w).map(|(a, w)| a * w).sum::<f64>().max(0.0)).collect()
        }
        CamMode::Elementwise => a
            .chunks(d)
            .zip(gr.chunks(d))
            .map(|(ar, gr)| ar.iter().zip(gr).map(|(a, g)| a * g).sum::<f64>().max(0.0))
            .collect(),
    };
    let side = config.grid_size();
    let grid = normalize_heatmap(&Tensor::new(&[side, side], raw)?)?;
    Ok(Heatmap { target_class, grid, upsampled: None })
}

impl Heatmap {
    /// Attach the `[S × S]` map: corner-aligned bilinear upsampling, then
    /// optional smoothing and renormalisation.
    pub fn upsample(&mut self, size: usize, smoothing_sigma: f64) -> Result<&Tensor> {
        let mut up = upsample(&self.grid, size)?;
        if smoothing_sigma > 0.0 {
            let blurred = gaussian_blur_plane(up.data(), size, size, smoothing_sigma);
            up = normalize_heatmap(&Tensor::new(&[size, size], blurred)?)?;
        }
        Ok(self.upsampled.insert(up))
    }
}

/// Min-max normalise to `[0, 1]`; a constant grid maps to zeros.
pub fn normalize_heatmap(raw: &Tensor) -> Result<Tensor> {
    if !raw.is_finite() {
        bail!(NonFinite, "heatmap contains non-finite values");
    }
    let lo = raw.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return Ok(Tensor::zeros(raw.shape()));
    }
    Ok(raw.map(|v| (v - lo) / (hi - lo)))
}

/// Bilinear upsampling of a `[G × G]` grid to `[S × S]` with corner-aligned
/// sampling: output pixel `i` reads source coordinate `i·(G−1)/(S−1)`.
pub fn upsample(grid: &Tensor, size: usize) -> Result<Tensor> {
    let s = grid.shape();
    if s.len() != 2 || s[0] != s[1] {
        bail!(Shape, "expected a square grid, got {:?}", s);
    }
    let n = s[0];
    if size < n {
        bail!(Contract, "cannot upsample a {n}×{n} grid to {size}×{size}");
    }
    let step = if size > 1 { (n - 1) as f64 / (size - 1) as f64 } else { 0.0 };
    let src = grid.data();
    let mut out = Vec::with_capacity(size * size);
    for oy in 0..size {
        let fy = oy as f64 * step;
        let y0 = (fy as usize).min(n - 1);
        let y1 = (y0 + 1).min(n - 1);
        let ty = fy - y0 as f64;
        for ox in 0..size {
            let fx = ox as f64 * step;
            let x0 = (fx as usize).min(n - 1);
            let x1 = (x0 + 1).min(n - 1);
            let tx = fx - x0 as f64;
            let top = src[y0 * n + x0] * (1.0 - tx) + src[y0 * n + x1] * tx;
            let bottom = src[y1 * n + x0] * (1.0 - tx) + src[y1 * n + x1] * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    Tensor::new(&[size, size], out)
}

/// Named binary `[S × S]` mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMask {
    pub name: String,
    pub size: usize,
    /// Row-major membership flags.
    pub mask: Vec<bool>,
}

impl RegionMask {
    pub fn new(name: impl Into<String>, size: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != size * size {
            bail!(Shape, "mask has {} entries, expected {}", mask.len(), size * size);
        }
        Ok(RegionMask { name: name.into(), size, mask })
    }

    pub fn all_ones(name: impl Into<String>, size: usize) -> Self {
        RegionMask { name: name.into(), size, mask: vec![true; size * size] }
    }

    pub fn all_zeros(name: impl Into<String>, size: usize) -> Self {
        RegionMask { name: name.into(), size, mask: vec![false; size * size] }
    }

    /// Pixels with `x0 ≤ x < x1` and `y0 ≤ y < y1`, clipped to the image.
    pub fn rect(name: impl Into<String>, size: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        let mask = (0..size * size)
            .map(|i| {
                let (y, x) = (i / size, i % size);
                (x0..x1).contains(&x) && (y0..y1).contains(&y)
            })
            .collect();
        RegionMask { name: name.into(), size, mask }
    }

    pub fn complement(&self, name: impl Into<String>) -> Self {
        RegionMask { name: name.into(), size: self.size, mask: self.mask.iter().map(|m| !m).collect() }
    }
}

/// Share of heatmap mass inside `mask`; 0 when the heatmap has no mass.
pub fn focus_score(heat: &Tensor, mask: &RegionMask) -> Result<f64> {
    if heat.shape() != [mask.size, mask.size] {
        bail!(Shape, "heatmap {:?} vs mask {}×{}", heat.shape(), mask.size, mask.size);
    }
    let total: f64 = heat.data().iter().sum();
    if total <= 0.0 {
        return Ok(0.0);
    }
    let inside: f64 = heat.data().iter().zip(&mask.mask).filter(|(_, &m)| m).map(|(v, _)| v).sum();
    Ok(inside / total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusScores {
    pub target_class: u8,
    pub scores: BTreeMap<String, f64>,
}

pub fn focus_scores(heat: &Heatmap, masks: &[RegionMask]) -> Result<FocusScores> {
    let Some(up) = &heat.upsampled else {
        bail!(Contract, "heatmap must be upsampled before scoring regions");
    };
    let mut scores = BTreeMap::new();
    for m in masks {
        scores.insert(m.name.clone(), focus_score(up, m)?);
    }
    Ok(FocusScores { target_class: heat.target_class, scores })
}

/// Anchors of the blue→red colormap at evenly spaced heat values
/// 0, ¼, ½, ¾, 1; colours in between are linearly interpolated.
pub const COLORMAP: [[u8; 3]; 5] = [[0, 0, 255], [0, 255, 255], [0, 255, 0], [255, 255, 0], [255, 0, 0]];

pub fn colormap(heat: f64) -> [f64; 3] {
    let x = heat.clamp(0.0, 1.0) * (COLORMAP.len() - 1) as f64;
    let i = (x as usize).min(COLORMAP.len() - 2);
    let t = x - i as f64;
    let (a, b) = (COLORMAP[i], COLORMAP[i + 1]);
    [0, 1, 2].map(|c| a[c] as f64 * (1.0 - t) + b[c] as f64 * t)
}

/// Blend the colormapped heatmap over a `[3 × S × S]` image in `[0, 1]`.
/// Returns interleaved 8-bit RGB, row-major.
pub fn render_overlay(image: &Tensor, heat: &Tensor, alpha: f64) -> Result<Vec<u8>> {
    if !(0.0..=1.0).contains(&alpha) {
        bail!(Contract, "alpha must lie in [0, 1], got {alpha}");
    }
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 || heat.shape() != [s[1], s[2]] {
        bail!(Shape, "image {:?} does not match heatmap {:?}", s, heat.shape());
    }
    let plane = s[1] * s[2];
    let px = image.data();
    let mut out = Vec::with_capacity(plane * 3);
    for (i, &h) in heat.data().iter().enumerate() {
        let color = colormap(h);
        for c in 0..3 {
            let base = px[c * plane + i].clamp(0.0, 1.0) * 255.0;
            let v = (1.0 - alpha) * base + alpha * color[c];
            out.push(libm::round(v).clamp(0.0, 255.0) as u8);
        }
    }
    Ok(out)
}
