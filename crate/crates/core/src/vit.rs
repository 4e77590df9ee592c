//! Mini Vision Transformer for two-class image classification.
//!
//! Layout: non-overlapping patch embedding, a learnable class token,
//! learnable positional embeddings, `depth` pre-norm encoder blocks
//! (`x + MHSA(LN(x))`, then `x + MLP(LN(x))` with exact GELU), a final layer
//! norm and a linear head read from the class-token slot.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{bail, Error, Result};
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-6;
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VitConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub mlp_ratio: f64,
    #[serde(default = "two")]
    pub num_classes: usize,
    #[serde(default)]
    pub dropout_rate: f64,
}

fn two() -> usize {
    2
}

impl Default for VitConfig {
    fn default() -> Self {
        VitConfig {
            image_size: 32,
            patch_size: 8,
            embed_dim: 32,
            depth: 2,
            num_heads: 2,
            mlp_ratio: 2.0,
            num_classes: 2,
            dropout_rate: 0.0,
        }
    }
}

impl VitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.patch_size == 0 || self.image_size % self.patch_size != 0 {
            bail!(Config, "image_size {} must be a positive multiple of patch_size {}", self.image_size, self.patch_size);
        }
        if self.embed_dim == 0 || self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            bail!(Config, "embed_dim {} must be divisible by num_heads {}", self.embed_dim, self.num_heads);
        }
        if self.depth == 0 {
            bail!(Config, "depth must be at least 1");
        }
        if self.num_classes != 2 {
            bail!(Config, "num_classes must be 2, got {}", self.num_classes);
        }
        if !(self.mlp_ratio > 0.0) || self.mlp_hidden() == 0 {
            bail!(Config, "mlp_ratio {} gives an empty MLP", self.mlp_ratio);
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            bail!(Config, "dropout_rate must lie in [0, 1), got {}", self.dropout_rate);
        }
        Ok(())
    }

    /// Patches per side.
    pub fn grid_size(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid_size() * self.grid_size()
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn mlp_hidden(&self) -> usize {
        libm::round(self.mlp_ratio * self.embed_dim as f64) as usize
    }

    /// Names and shapes of every parameter tensor in serialization order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (d, h) = (self.embed_dim, self.mlp_hidden());
        let mut out = vec![
            ("patch.weight".into(), vec![d, self.patch_dim()]),
            ("patch.bias".into(), vec![d]),
            ("class_token".into(), vec![d]),
            ("pos_embed".into(), vec![self.num_patches() + 1, d]),
        ];
        for b in 0..self.depth {
            for (name, shape) in [
                ("ln1.gamma", vec![d]),
                ("ln1.beta", vec![d]),
                ("attn.wq", vec![d, d]),
                ("attn.wk", vec![d, d]),
                ("attn.wv", vec![d, d]),
                ("attn.wo", vec![d, d]),
                ("ln2.gamma", vec![d]),
                ("ln2.beta", vec![d]),
                ("mlp.w1", vec![h, d]),
                ("mlp.b1", vec![h]),
                ("mlp.w2", vec![d, h]),
                ("mlp.b2", vec![d]),
            ] {
                out.push((format!("blocks.{b}.{name}"), shape));
            }
        }
        out.push(("norm.gamma".into(), vec![d]));
        out.push(("norm.beta".into(), vec![d]));
        out.push(("head.weight".into(), vec![self.num_classes, d]));
        out.push(("head.bias".into(), vec![self.num_classes]));
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
    pub mlp_w1: Tensor,
    pub mlp_b1: Tensor,
    pub mlp_w2: Tensor,
    pub mlp_b2: Tensor,
}

/// All learnable tensors of the model. Linear weights are stored `[out × in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VitParams {
    pub patch_weight: Tensor,
    pub patch_bias: Tensor,
    pub class_token: Tensor,
    pub pos_embed: Tensor,
    pub blocks: Vec<BlockParams>,
    pub norm_gamma: Tensor,
    pub norm_beta: Tensor,
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

impl VitParams {
    /// Tensors in the order of [`VitConfig::param_shapes`].
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.patch_weight, &self.patch_bias, &self.class_token, &self.pos_embed];
        for b in &self.blocks {
            out.extend([
                &b.ln1_gamma, &b.ln1_beta, &b.wq, &b.wk, &b.wv, &b.wo, &b.ln2_gamma, &b.ln2_beta,
                &b.mlp_w1, &b.mlp_b1, &b.mlp_w2, &b.mlp_b2,
            ]);
        }
        out.extend([&self.norm_gamma, &self.norm_beta, &self.head_weight, &self.head_bias]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![
            &mut self.patch_weight,
            &mut self.patch_bias,
            &mut self.class_token,
            &mut self.pos_embed,
        ];
        for b in &mut self.blocks {
            out.extend([
                &mut b.ln1_gamma, &mut b.ln1_beta, &mut b.wq, &mut b.wk, &mut b.wv, &mut b.wo,
                &mut b.ln2_gamma, &mut b.ln2_beta, &mut b.mlp_w1, &mut b.mlp_b1, &mut b.mlp_w2,
                &mut b.mlp_b2,
            ]);
        }
        out.extend([
            &mut self.norm_gamma,
            &mut self.norm_beta,
            &mut self.head_weight,
            &mut self.head_bias,
        ]);
        out
    }

    /// Rebuild from tensors in serialization order, checking every shape.
    pub fn from_tensors(config: &VitConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let shapes = config.param_shapes();
        if shapes.len() != tensors.len() {
            bail!(Config, "expected {} parameter tensors, got {}", shapes.len(), tensors.len());
        }
        for ((name, shape), t) in shapes.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                bail!(Config, "{name}: expected shape {:?}, got {:?}", shape, t.shape());
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        let patch_weight = next();
        let patch_bias = next();
        let class_token = next();
        let pos_embed = next();
        let blocks = (0..config.depth)
            .map(|_| BlockParams {
                ln1_gamma: next(),
                ln1_beta: next(),
                wq: next(),
                wk: next(),
                wv: next(),
                wo: next(),
                ln2_gamma: next(),
                ln2_beta: next(),
                mlp_w1: next(),
                mlp_b1: next(),
                mlp_w2: next(),
                mlp_b2: next(),
            })
            .collect();
        Ok(VitParams {
            patch_weight,
            patch_bias,
            class_token,
            pos_embed,
            blocks,
            norm_gamma: next(),
            norm_beta: next(),
            head_weight: next(),
            head_bias: next(),
        })
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<BoundParams> {
        let mut vars = Vec::new();
        for t in self.tensors() {
            let v = if trainable { g.param(t.clone())? } else { g.constant(t.clone())? };
            vars.push(v);
        }
        Ok(BoundParams::from_ordered(vars))
    }
}

/// Truncated normal `N(0, std²)` restricted to `±2·std`, by rejection.
fn trunc_normal(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let z: f64 = rng.sample(StandardNormal);
            if libm::fabs(z) <= 2.0 {
                break z * std;
            }
        })
        .collect();
    Tensor::new(shape, data).expect("shape product matches")
}

/// Weights, class token and positional embeddings from a truncated normal
/// (σ = 0.02, ±2σ); biases and layer-norm shifts zero; layer-norm scales one.
pub fn init_params(config: &VitConfig, seed: u64) -> Result<VitParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = config
        .param_shapes()
        .into_iter()
        .map(|(name, shape)| {
            if name.ends_with(".gamma") {
                Tensor::ones(&shape)
            } else if name.ends_with(".beta") || name.ends_with("bias") || name.ends_with(".b1") || name.ends_with(".b2") {
                Tensor::zeros(&shape)
            } else {
                trunc_normal(&mut rng, &shape, INIT_STD)
            }
        })
        .collect();
    VitParams::from_tensors(config, tensors)
}

#[derive(Debug, Clone, Copy)]
pub struct BoundBlock {
    pub ln1_gamma: Var,
    pub ln1_beta: Var,
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wo: Var,
    pub ln2_gamma: Var,
    pub ln2_beta: Var,
    pub mlp_w1: Var,
    pub mlp_b1: Var,
    pub mlp_w2: Var,
    pub mlp_b2: Var,
}

/// Parameters recorded on a [`Graph`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub patch_weight: Var,
    pub patch_bias: Var,
    pub class_token: Var,
    pub pos_embed: Var,
    pub blocks: Vec<BoundBlock>,
    pub norm_gamma: Var,
    pub norm_beta: Var,
    pub head_weight: Var,
    pub head_bias: Var,
    order: Vec<Var>,
}

impl BoundParams {
    /// Assemble from vars listed in serialization order.
    pub fn from_ordered(vars: Vec<Var>) -> Self {
        let order = vars.clone();
        let mut it = vars.into_iter();
        let mut next = || it.next().expect("bound vars follow param order");
        let patch_weight = next();
        let patch_bias = next();
        let class_token = next();
        let pos_embed = next();
        let depth = (order.len() - 8) / 12;
        let blocks = (0..depth)
            .map(|_| BoundBlock {
                ln1_gamma: next(),
                ln1_beta: next(),
                wq: next(),
                wk: next(),
                wv: next(),
                wo: next(),
                ln2_gamma: next(),
                ln2_beta: next(),
                mlp_w1: next(),
                mlp_b1: next(),
                mlp_w2: next(),
                mlp_b2: next(),
            })
            .collect();
        BoundParams {
            patch_weight,
            patch_bias,
            class_token,
            pos_embed,
            blocks,
            norm_gamma: next(),
            norm_beta: next(),
            head_weight: next(),
            head_bias: next(),
            order,
        }
    }

    /// Vars in serialization order.
    pub fn vars(&self) -> &[Var] {
        &self.order
    }
}

/// Split a `[3 × S × S]` image into row-major patches, each flattened
/// channel-major to a row of `3·P²` values.
pub fn patchify(image: &Tensor, config: &VitConfig) -> Result<Tensor> {
    let s = config.image_size;
    if image.shape() != [3, s, s] {
        bail!(Shape, "expected image of shape [3, {s}, {s}], got {:?}", image.shape());
    }
    let p = config.patch_size;
    let g = config.grid_size();
    let px = image.data();
    let mut out = Vec::with_capacity(3 * s * s);
    for gy in 0..g {
        for gx in 0..g {
            for c in 0..3 {
                for y in 0..p {
                    let row = c * s * s + (gy * p + y) * s + gx * p;
                    out.extend_from_slice(&px[row..row + p]);
                }
            }
        }
    }
    Tensor::new(&[g * g, config.patch_dim()], out)
}

/// Linear projection of patches to `[N × embed_dim]` tokens.
pub fn patch_embed(g: &mut Graph, params: &BoundParams, patches: Var) -> Result<Var> {
    g.linear(patches, params.patch_weight, Some(params.patch_bias))
}

/// Draws dropout masks during training.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn apply(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let shape = g.value(x).shape().to_vec();
        let n: usize = shape.iter().product();
        let mask = (0..n)
            .map(|_| if self.rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let m = g.constant(Tensor::new(&shape, mask)?)?;
        g.mul(x, m)
    }
}

/// Multi-head scaled dot-product self-attention over `tokens[T × d]`.
pub fn mhsa(
    g: &mut Graph,
    tokens: Var,
    block: &BoundBlock,
    num_heads: usize,
) -> Result<Var> {
    let d = g.value(tokens).last_dim();
    if num_heads == 0 || d % num_heads != 0 {
        bail!(Config, "embed_dim {d} is not divisible by {num_heads} heads");
    }
    let dh = d / num_heads;
    let q = g.linear(tokens, block.wq, None)?;
    let k = g.linear(tokens, block.wk, None)?;
    let v = g.linear(tokens, block.wv, None)?;
    let scale = 1.0 / libm::sqrt(dh as f64);
    let mut heads = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let (qh, kh, vh) = if num_heads == 1 {
            (q, k, v)
        } else {
            (g.slice_cols(q, h * dh, dh)?, g.slice_cols(k, h * dh, dh)?, g.slice_cols(v, h * dh, dh)?)
        };
        let scores = g.matmul_nt(qh, kh)?;
        let scores = g.scale(scores, scale)?;
        let attn = g.softmax(scores)?;
        heads.push(g.matmul(attn, vh)?);
    }
    let joined = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
    g.linear(joined, block.wo, None)
}

/// Values captured while running an encoder block.
#[derive(Debug, Clone, Copy)]
pub struct BlockTrace {
    /// Output of the first layer norm, the input to attention.
    pub attn_input: Var,
    pub output: Var,
}

/// One pre-norm transformer block.
pub fn encoder_block(
    g: &mut Graph,
    x: Var,
    block: &BoundBlock,
    config: &VitConfig,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<BlockTrace> {
    let h = g.layer_norm(x, block.ln1_gamma, block.ln1_beta, LN_EPS)?;
    let mut a = mhsa(g, h, block, config.num_heads)?;
    if let Some(d) = dropout.as_deref_mut() {
        a = d.apply(g, a)?;
    }
    let x = g.add(x, a)?;
    let h2 = g.layer_norm(x, block.ln2_gamma, block.ln2_beta, LN_EPS)?;
    let m = g.linear(h2, block.mlp_w1, Some(block.mlp_b1))?;
    let mut m = g.gelu(m)?;
    if let Some(d) = dropout.as_deref_mut() {
        m = d.apply(g, m)?;
    }
    let m = g.linear(m, block.mlp_w2, Some(block.mlp_b2))?;
    let output = g.add(x, m)?;
    Ok(BlockTrace { attn_input: h, output })
}

/// Graph-level forward pass for one image.
#[derive(Debug, Clone)]
pub struct ImageTrace {
    /// `[1 × 2]` logits.
    pub logits: Var,
    pub blocks: Vec<BlockTrace>,
}

pub fn forward_image(
    g: &mut Graph,
    params: &BoundParams,
    config: &VitConfig,
    image: &Tensor,
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<ImageTrace> {
    let patches = g.constant(patchify(image, config)?)?;
    let tokens = patch_embed(g, params, patches)?;
    let d = config.embed_dim;
    let cls = g.reshape(params.class_token, &[1, d])?;
    let x = g.concat_rows(&[cls, tokens])?;
    let mut x = g.add(x, params.pos_embed)?;
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for (i, block) in params.blocks.iter().enumerate() {
        let trace = encoder_block(g, x, block, config, dropout.as_deref_mut()).map_err(|e| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("encoder block {i}: {m}")),
            other => other,
        })?;
        x = trace.output;
        blocks.push(trace);
    }
    let x = g.layer_norm(x, params.norm_gamma, params.norm_beta, LN_EPS)?;
    let cls_out = g.slice_rows(x, 0, 1)?;
    let logits = g.linear(cls_out, params.head_weight, Some(params.head_bias))?;
    Ok(ImageTrace { logits, blocks })
}

/// Forward a batch of `[3 × S × S]` images; returns a `[B × 2]` logits var.
pub fn forward_batch(
    g: &mut Graph,
    params: &BoundParams,
    config: &VitConfig,
    images: &[&Tensor],
    mut dropout: Option<&mut Dropout<'_>>,
) -> Result<Var> {
    if images.is_empty() {
        bail!(Shape, "empty batch");
    }
    let mut rows = Vec::with_capacity(images.len());
    for img in images {
        rows.push(forward_image(g, params, config, img, dropout.as_deref_mut())?.logits);
    }
    if rows.len() == 1 {
        Ok(rows[0])
    } else {
        g.concat_rows(&rows)
    }
}

/// Logits `[B × 2]` for a `[B × 3 × S × S]` batch.
///
/// With `training = false` the pass is deterministic; with `training = true`
/// dropout masks are drawn from a generator seeded with `seed`.
pub fn vit_forward(
    batch: &Tensor,
    params: &VitParams,
    config: &VitConfig,
    training: bool,
    seed: u64,
) -> Result<Tensor> {
    config.validate()?;
    let s = config.image_size;
    if batch.rank() != 4 || batch.shape()[1..] != [3, s, s] {
        bail!(Shape, "expected batch [B, 3, {s}, {s}], got {:?}", batch.shape());
    }
    if !batch.is_finite() {
        bail!(NonFinite, "input batch contains non-finite values");
    }
    let images: Vec<Tensor> = (0..batch.shape()[0]).map(|i| batch.index_outer(i)).collect();
    let refs: Vec<&Tensor> = images.iter().collect();
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drop = Dropout { rate: config.dropout_rate, rng: &mut rng };
    let logits = forward_batch(&mut g, &bound, config, &refs, training.then_some(&mut drop))?;
    Ok(g.value(logits).clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> VitConfig {
        VitConfig { image_size: 16, patch_size: 4, embed_dim: 8, depth: 2, num_heads: 2, mlp_ratio: 2.0, num_classes: 2, dropout_rate: 0.0 }
    }

    fn image(seed: u64, s: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(&[3, s, s], (0..3 * s * s).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(tiny().validate().is_ok());
        assert!(VitConfig { patch_size: 5, ..tiny() }.validate().is_err());
        assert!(VitConfig { num_heads: 3, ..tiny() }.validate().is_err());
        assert!(VitConfig { num_classes: 3, ..tiny() }.validate().is_err());
        assert!(VitConfig { dropout_rate: 1.0, ..tiny() }.validate().is_err());
    }

    #[test]
    fn param_count_hand_counts() {
        // d=8, P=4 (patch_dim 48), N=16, depth 2, hidden 16
        // patch 8·48+8=392, cls 8, pos 17·8=136
        // block: ln 2·8 + attn 4·64 + ln 2·8 + mlp 16·8+16+8·16+8 = 16+256+16+280 = 568
        // final norm 16, head 2·8+2 = 18
        assert_eq!(tiny().param_count(), 392 + 8 + 136 + 2 * 568 + 16 + 18);
        // d=16, P=8 on 32² (patch_dim 192), N=16, depth 1, heads 4, hidden 32
        let c = VitConfig { image_size: 32, patch_size: 8, embed_dim: 16, depth: 1, num_heads: 4, mlp_ratio: 2.0, ..tiny() };
        // patch 16·192+16=3088, cls 16, pos 17·16=272, block 32+1024+32+(512+32+512+16)=2160, norm 32, head 34
        assert_eq!(c.param_count(), 3088 + 16 + 272 + 2160 + 32 + 34);
        // ViT-Tiny-like widths: d=192, P=16 on 224², depth 12, heads 3, hidden 768
        let t = VitConfig { image_size: 224, patch_size: 16, embed_dim: 192, depth: 12, num_heads: 3, mlp_ratio: 4.0, ..tiny() };
        let patch = 192 * 768 + 192;
        let pos = 197 * 192;
        let block = 4 * 192 + 4 * 192 * 192 + (768 * 192 + 768 + 192 * 768 + 192);
        assert_eq!(t.param_count(), patch + 192 + pos + 12 * block + 2 * 192 + 2 * 192 + 2);
        let p = init_params(&c, 1).unwrap();
        assert_eq!(p.num_values(), c.param_count());
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let c = tiny();
        let a = init_params(&c, 7).unwrap();
        let b = init_params(&c, 7).unwrap();
        assert_eq!(a, b);
        let other = init_params(&c, 8).unwrap();
        let max_diff = a.tensors().iter().zip(other.tensors()).map(|(x, y)| x.max_abs_diff(y)).fold(0.0, f64::max);
        assert!(max_diff > 0.0);
        for ((name, _), t) in c.param_shapes().iter().zip(a.tensors()) {
            if !name.ends_with(".gamma") {
                assert!(t.data().iter().all(|v| v.abs() <= 2.0 * INIT_STD), "{name}");
            }
        }
        assert!(a.head_bias.data().iter().all(|&v| v == 0.0));
        assert!(a.blocks[0].ln1_gamma.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn patch_count_and_order() {
        let c = VitConfig { image_size: 32, patch_size: 8, ..tiny() };
        let p = patchify(&image(1, 32), &c).unwrap();
        assert_eq!(p.shape(), &[16, 192]);
        // constant image gives identical patches
        let p = patchify(&Tensor::full(&[3, 32, 32], 0.25), &c).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.25));
        assert!(patchify(&image(1, 16), &c).is_err());
    }

    #[test]
    fn patch_embed_one_hot_projection_picks_top_left_pixel() {
        let c = VitConfig { image_size: 16, patch_size: 4, embed_dim: 2, num_heads: 1, ..tiny() };
        let img = image(3, 16);
        let mut params = init_params(&c, 0).unwrap();
        params.patch_weight = Tensor::zeros(&[2, c.patch_dim()]);
        // channel 0 ← red pixel (0,0) of the patch, channel 1 ← green pixel (0,0)
        params.patch_weight.set2(0, 0, 1.0);
        params.patch_weight.set2(1, 16, 1.0);
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false).unwrap();
        let patches = g.constant(patchify(&img, &c).unwrap()).unwrap();
        let tokens = patch_embed(&mut g, &bound, patches).unwrap();
        let t = g.value(tokens);
        for gy in 0..4 {
            for gx in 0..4 {
                let idx = gy * 4 + gx;
                let (y, x) = (gy * 4, gx * 4);
                assert_eq!(t.get2(idx, 0), img.data()[y * 16 + x]);
                assert_eq!(t.get2(idx, 1), img.data()[256 + y * 16 + x]);
            }
        }
    }

    #[test]
    fn forward_shapes_and_determinism() {
        let c = tiny();
        let p = init_params(&c, 3).unwrap();
        let batch = Tensor::stack(&[image(1, 16), image(2, 16), image(3, 16)]).unwrap();
        let a = vit_forward(&batch, &p, &c, false, 0).unwrap();
        let b = vit_forward(&batch, &p, &c, false, 99).unwrap();
        assert_eq!(a.shape(), &[3, 2]);
        assert_eq!(a, b);
    }

    #[test]
    fn zero_head_gives_bias() {
        let c = tiny();
        let mut p = init_params(&c, 3).unwrap();
        p.head_weight = Tensor::zeros(&[2, 8]);
        p.head_bias = Tensor::new(&[2], vec![0.25, -1.5]).unwrap();
        let batch = Tensor::stack(&[image(1, 16), image(2, 16)]).unwrap();
        let out = vit_forward(&batch, &p, &c, false, 0).unwrap();
        assert_eq!(out.data(), &[0.25, -1.5, 0.25, -1.5]);
    }

    #[test]
    fn dropout_only_in_training() {
        let c = VitConfig { dropout_rate: 0.5, ..tiny() };
        let p = init_params(&c, 3).unwrap();
        let batch = Tensor::stack(&[image(1, 16)]).unwrap();
        let eval = vit_forward(&batch, &p, &c, false, 1).unwrap();
        let t1 = vit_forward(&batch, &p, &c, true, 1).unwrap();
        let t2 = vit_forward(&batch, &p, &c, true, 2).unwrap();
        assert_ne!(eval, t1);
        assert_ne!(t1, t2);
        assert_eq!(t1, vit_forward(&batch, &p, &c, true, 1).unwrap());
    }

    #[test]
    fn nan_in_parameters_names_block() {
        let c = tiny();
        let mut p = init_params(&c, 3).unwrap();
        p.blocks[1].mlp_w1.data_mut()[0] = 1e308;
        p.blocks[1].mlp_w2.data_mut()[0] = 1e308;
        let batch = Tensor::stack(&[Tensor::full(&[3, 16, 16], 100.0)]).unwrap();
        match vit_forward(&batch, &p, &c, false, 0) {
            Err(Error::NonFinite(m)) => assert!(m.contains("block 1"), "{m}"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }
}
