//! 8-bit RGB PNG files to and from `[3,H,W]` tensors in `[0,1]`.

use std::path::Path;

use image::{ColorType, DynamicImage, ImageFormat, ImageReader, RgbImage};
use snowformer_tensor::{Scalar, Tensor};

use crate::error::{io_err, Error, Result};

/// Reads an 8-bit PNG as `[3,H,W]` scaled by 1/255.
///
/// Grayscale is replicated to three channels and alpha is dropped;
/// 16-bit and float images are rejected.
pub fn png_read<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    let reader = ImageReader::open(path).map_err(io_err(path))?;
    let img = reader.decode().map_err(|e| match e {
        image::ImageError::IoError(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => Error::UnsupportedFormat {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    })?;
    let rgb = match img.color() {
        ColorType::Rgb8 | ColorType::Rgba8 | ColorType::L8 | ColorType::La8 => img.to_rgb8(),
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: format!("{other:?}, only 8-bit images are supported"),
            })
        }
    };
    Ok(rgb_to_tensor(&rgb))
}

pub fn rgb_to_tensor<T: Scalar>(rgb: &RgbImage) -> Tensor<T> {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.as_raw();
    Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        T::from_f64_lossy(raw[p * 3 + c] as f64 / 255.0)
    })
}

/// Clips to `[0,1]` and quantizes round-half-up to 8 bits.
pub fn quantize<T: Scalar>(v: T) -> u8 {
    let v = v.as_f64().clamp(0.0, 1.0);
    (v * 255.0 + 0.5).floor() as u8
}

pub fn tensor_to_rgb<T: Scalar>(img: &Tensor<T>) -> Result<RgbImage> {
    let [3, h, w] = img.shape()[..] else {
        return Err(Error::InvalidConfig(format!(
            "expected a [3,H,W] image, got {:?}",
            img.shape()
        )));
    };
    let d = img.data();
    let mut raw = vec![0u8; h * w * 3];
    for c in 0..3 {
        for p in 0..h * w {
            raw[p * 3 + c] = quantize(d[c * h * w + p]);
        }
    }
    Ok(RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer sized to image"))
}

pub fn png_write<T: Scalar>(img: &Tensor<T>, path: &Path) -> Result<()> {
    let rgb = tensor_to_rgb(img)?;
    DynamicImage::ImageRgb8(rgb)
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(source) => Error::Io {
                path: path.to_path_buf(),
                source,
            },
            other => Error::UnsupportedFormat {
                path: path.to_path_buf(),
                detail: other.to_string(),
            },
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_rounds_half_up_and_clips() {
        assert_eq!(quantize(0.5f64 / 255.0), 1);
        assert_eq!(quantize(0.49f64 / 255.0), 0);
        assert_eq!(quantize(-0.3f64), 0);
        assert_eq!(quantize(1.7f64), 255);
    }
}
