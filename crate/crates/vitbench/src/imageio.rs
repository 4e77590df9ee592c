//! PNG/BMP decoding into `[3 × S × S]` tensors and PNG encoding.

use std::io::Cursor;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageError, ImageReader};
use vitbench_core::data::resize_bilinear;
use vitbench_core::interpret::RegionMask;
use vitbench_core::Tensor;

use crate::error::{Error, IoContext, Result};

fn decode_error(path: &Path, e: ImageError) -> Error {
    match e {
        ImageError::IoError(io) => Error::io(path, io),
        ImageError::Unsupported(u) => Error::Format { path: path.into(), message: u.to_string() },
        other => Error::Decode { path: path.into(), message: other.to_string() },
    }
}

fn open(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path).at(path)?.with_guessed_format().at(path)?;
    reader.decode().map_err(|e| decode_error(path, e))
}

/// Decode an 8-bit grey or RGB(A) image to planar `[3 × H × W]` in `[0, 1]`.
/// Grey is replicated to three channels; alpha is dropped.
pub fn decode_image(path: &Path) -> Result<Tensor> {
    let img = open(path)?;
    let rgb = match img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => img.to_rgb8(),
        other => {
            return Err(Error::Format {
                path: path.into(),
                message: format!("{:?} pixels; only 8-bit grey or RGB are accepted", other.color()),
            })
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0; 3 * w * h];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * w * h + i] = px.0[c] as f64 / 255.0;
        }
    }
    Ok(Tensor::new(&[3, h, w], data)?)
}

/// Decode and bilinearly resize to `[3 × size × size]`.
pub fn decode_and_resize(path: &Path, size: usize) -> Result<Tensor> {
    Ok(resize_bilinear(&decode_image(path)?, size)?)
}

/// Cheap readability check: the header must parse as a supported image.
pub fn probe(path: &Path) -> Result<(u32, u32)> {
    let reader = ImageReader::open(path).at(path)?.with_guessed_format().at(path)?;
    reader.into_dimensions().map_err(|e| decode_error(path, e))
}

/// Encode interleaved 8-bit RGB as PNG with fixed encoder settings, so equal
/// pixels always give equal bytes.
pub fn encode_png(width: usize, height: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    PngEncoder::new(Cursor::new(&mut out))
        .write_image(rgb, width as u32, height as u32, ExtendedColorType::Rgb8)
        .map_err(|e| Error::Decode { path: "<png encoder>".into(), message: e.to_string() })?;
    Ok(out)
}

/// Planar `[3 × H × W]` tensor in `[0, 1]` to interleaved 8-bit RGB.
pub fn to_rgb8(img: &Tensor) -> Vec<u8> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let plane = h * w;
    let d = img.data();
    (0..plane)
        .flat_map(|i| (0..3).map(move |c| (d[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect()
}

/// Binary mask from an image file: pixels brighter than half are inside.
/// The mask is resized to `size × size` first.
pub fn load_mask(name: &str, path: &Path, size: usize) -> Result<RegionMask> {
    let img = decode_and_resize(path, size)?;
    let plane = size * size;
    let d = img.data();
    let mask = (0..plane).map(|i| (d[i] + d[plane + i] + d[2 * plane + i]) / 3.0 > 0.5).collect();
    Ok(RegionMask::new(name, size, mask)?)
}
