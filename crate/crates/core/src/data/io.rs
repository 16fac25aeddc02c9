//! 8-bit PNG reading and writing for `C×H×W` tensors in `[0, 1]`.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageReader, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn image_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Decodes a 1- or 3-channel 8-bit PNG, dividing by 255.
pub fn read_png(path: &Path) -> Result<Tensor<f32>> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let img = reader
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| image_err(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, raw) = match img {
        DynamicImage::ImageLuma8(g) => (1, g.into_raw()),
        DynamicImage::ImageRgb8(rgb) => (3, rgb.into_raw()),
        other => {
            return Err(image_err(
                path,
                format!(
                    "unsupported pixel format {:?}; need 8-bit gray or RGB",
                    other.color()
                ),
            ))
        }
    };
    // interleaved HWC → planar CHW
    let data = Tensor::from_fn(&[channels, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        raw[p * channels + c] as f32 / 255.0
    });
    Ok(data)
}

/// Round-half-up quantization of `[0, 1]` to a byte.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) as f64 * 255.0 + 0.5).floor() as u8
}

/// Encodes a 1- or 3-channel tensor as an 8-bit PNG.
pub fn write_png(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let shape = image.shape();
    if shape.len() != 3 || !(shape[0] == 1 || shape[0] == 3) {
        return Err(image_err(
            path,
            format!("cannot encode tensor of shape {shape:?} as PNG"),
        ));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let mut raw = vec![0u8; c * h * w];
    for (i, &v) in image.data().iter().enumerate() {
        let (ch, p) = (i / (h * w), i % (h * w));
        raw[p * c + ch] = quantize(v);
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let (w32, h32) = (w as u32, h as u32);
    let result = if c == 1 {
        GrayImage::from_raw(w32, h32, raw)
            .expect("buffer sized from shape")
            .save(path)
    } else {
        RgbImage::from_raw(w32, h32, raw)
            .expect("buffer sized from shape")
            .save(path)
    };
    result.map_err(|e| image_err(path, e.to_string()))
}
