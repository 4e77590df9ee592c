//! Pixel-level helpers on `[C × H × W]` planar images.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::tensor::Tensor;

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

fn check_rgb(img: &Tensor) -> Result<usize> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 || s[1] != s[2] {
        bail!(Shape, "expected a square [3 × S × S] image, got {:?}", s);
    }
    Ok(s[1])
}

/// Per-channel `(x − mean_c) / std_c` with the ImageNet statistics.
pub fn normalize_image(img: &Tensor) -> Result<Tensor> {
    let s = check_rgb(img)?;
    let mut out = img.clone();
    for (c, plane) in out.data_mut().chunks_mut(s * s).enumerate() {
        for v in plane {
            *v = (*v - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
        }
    }
    Ok(out)
}

pub fn denormalize_image(img: &Tensor) -> Result<Tensor> {
    let s = check_rgb(img)?;
    let mut out = img.clone();
    for (c, plane) in out.data_mut().chunks_mut(s * s).enumerate() {
        for v in plane {
            *v = *v * IMAGENET_STD[c] + IMAGENET_MEAN[c];
        }
    }
    Ok(out)
}

/// Bilinear resize of one plane with half-pixel centres: output pixel `i`
/// samples source coordinate `(i + ½)·in/out − ½`, clamped to the edges.
pub fn resize_plane(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let mut out = vec![0.0; out_h * out_w];
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            let top = src[y0 * w + x0] * (1.0 - tx) + src[y0 * w + x1] * tx;
            let bottom = src[y1 * w + x0] * (1.0 - tx) + src[y1 * w + x1] * tx;
            out[oy * out_w + ox] = top * (1.0 - ty) + bottom * ty;
        }
    }
    out
}

/// Resize a planar `[C × H × W]` image to `[C × size × size]`.
pub fn resize_bilinear(img: &Tensor, size: usize) -> Result<Tensor> {
    let s = img.shape();
    if s.len() != 3 || size == 0 {
        bail!(Shape, "expected [C × H × W] and a positive size, got {:?} → {}", s, size);
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut data = Vec::with_capacity(c * size * size);
    for plane in img.data().chunks(h * w) {
        data.extend(resize_plane(plane, h, w, size, size));
    }
    Tensor::new(&[c, size, size], data)
}

pub fn hflip(img: &Tensor) -> Tensor {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let mut out = img.clone();
    for row in out.data_mut().chunks_mut(w) {
        row.reverse();
    }
    debug_assert_eq!(out.len() % (h * w), 0);
    out
}

/// Mirror a continuous coordinate into `[0, n − 1]` (reflection without
/// repeating the edge sample).
pub fn reflect(x: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let max = (n - 1) as f64;
    let period = 2.0 * max;
    let mut r = libm::fmod(libm::fabs(x), period);
    if r > max {
        r = period - r;
    }
    r
}

/// Bilinear sample at a continuous position with reflection padding.
pub fn sample_reflect(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = reflect(y, h);
    let x = reflect(x, w);
    let y0 = (y as usize).min(h - 1);
    let x0 = (x as usize).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let ty = y - y0 as f64;
    let tx = x - x0 as f64;
    let top = plane[y0 * w + x0] * (1.0 - tx) + plane[y0 * w + x1] * tx;
    let bottom = plane[y1 * w + x0] * (1.0 - tx) + plane[y1 * w + x1] * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Separable Gaussian blur of one plane with reflection padding.
pub fn gaussian_blur_plane(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 1e-3 {
        return plane.to_vec();
    }
    let radius = libm::ceil(3.0 * sigma) as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| libm::exp(-((i * i) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let idx = |i: isize, n: usize| reflect(i as f64, n) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * plane[y * w + idx(x as isize + k as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * tmp[idx(y as isize + k as isize - radius, h) * w + x])
                .sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_constants() {
        let mut img = Tensor::full(&[3, 2, 2], 0.485);
        img.data_mut()[4..].fill(1.0);
        let n = normalize_image(&img).unwrap();
        assert_eq!(n.data()[0], 0.0);
        assert!((n.data()[4] - (1.0 - 0.456) / 0.224).abs() < 1e-15);
        let red_one = normalize_image(&Tensor::ones(&[3, 1, 1])).unwrap().data()[0];
        assert!((red_one - 2.2489).abs() < 1e-4);
        let back = denormalize_image(&n).unwrap();
        assert!(back.max_abs_diff(&img) < 1e-12);
    }

    #[test]
    fn resize_constant_and_average() {
        let white = Tensor::ones(&[3, 1, 1]);
        let r = resize_bilinear(&white, 4).unwrap();
        assert!(r.data().iter().all(|&v| v == 1.0));
        let g = Tensor::new(&[1, 2, 2], alloc::vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        assert_eq!(resize_bilinear(&g, 1).unwrap().data(), &[0.5]);
    }

    #[test]
    fn flip_is_involution() {
        let img = Tensor::new(&[3, 2, 2], (0..12).map(|v| v as f64).collect()).unwrap();
        assert_eq!(hflip(&img).data()[..2], [1.0, 0.0]);
        assert_eq!(hflip(&hflip(&img)), img);
    }

    #[test]
    fn reflection() {
        assert_eq!(reflect(-1.0, 5), 1.0);
        assert_eq!(reflect(5.0, 5), 3.0);
        assert_eq!(reflect(2.5, 5), 2.5);
        assert_eq!(reflect(9.0, 5), 1.0);
    }

    #[test]
    fn blur_preserves_constant() {
        let plane = alloc::vec![0.7; 25];
        let out = gaussian_blur_plane(&plane, 5, 5, 1.0);
        assert!(out.iter().all(|v| (v - 0.7).abs() < 1e-12));
    }
}
