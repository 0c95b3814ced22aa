use rand::Rng;
use serde::{Deserialize, Serialize};
use snowformer_tensor::{Scalar, Tensor};

use crate::error::{Error, Result};

/// One random geometric transform, applied identically to both images of a pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transform {
    pub flip: bool,
    /// Counter-clockwise quarter turns.
    pub quarter_turns: u8,
    pub crop_y: usize,
    pub crop_x: usize,
    pub crop: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub crop: usize,
    pub flip: bool,
    pub rotate: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop: 256,
            flip: true,
            rotate: true,
        }
    }
}

impl Transform {
    pub fn sample(rng: &mut impl Rng, cfg: &AugmentConfig, h: usize, w: usize) -> Result<Self> {
        if h < cfg.crop || w < cfg.crop {
            return Err(Error::ImageTooSmall {
                h,
                w,
                need_h: cfg.crop,
                need_w: cfg.crop,
            });
        }
        Ok(Self {
            crop_y: rng.gen_range(0..=h - cfg.crop),
            crop_x: rng.gen_range(0..=w - cfg.crop),
            crop: cfg.crop,
            flip: cfg.flip && rng.gen_bool(0.5),
            quarter_turns: if cfg.rotate { rng.gen_range(0..4) } else { 0 },
        })
    }

    pub fn apply<T: Scalar>(&self, img: &Tensor<T>) -> Tensor<T> {
        let mut out = crop(img, self.crop_y, self.crop_x, self.crop, self.crop);
        if self.flip {
            out = hflip(&out);
        }
        rot90(&out, self.quarter_turns)
    }
}

fn dims<T: Scalar>(img: &Tensor<T>) -> (usize, usize, usize) {
    let s = img.shape();
    (s[0], s[1], s[2])
}

pub fn crop<T: Scalar>(img: &Tensor<T>, y: usize, x: usize, ch: usize, cw: usize) -> Tensor<T> {
    let (c, h, w) = dims(img);
    assert!(y + ch <= h && x + cw <= w, "crop outside image");
    let d = img.data();
    Tensor::from_fn(&[c, ch, cw], |i| {
        let (k, yy, xx) = (i / (ch * cw), i / cw % ch, i % cw);
        d[(k * h + y + yy) * w + x + xx]
    })
}

pub fn hflip<T: Scalar>(img: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = dims(img);
    let d = img.data();
    Tensor::from_fn(&[c, h, w], |i| {
        let (row, xx) = (i / w, i % w);
        d[row * w + (w - 1 - xx)]
    })
}

/// Rotates `[C,H,W]` by `k` counter-clockwise quarter turns.
pub fn rot90<T: Scalar>(img: &Tensor<T>, k: u8) -> Tensor<T> {
    let mut out = img.clone();
    for _ in 0..k % 4 {
        let (c, h, w) = dims(&out);
        let d = out.data().to_vec();
        // new[y][x] = old[x][w-1-y], shape [c, w, h]
        out = Tensor::from_fn(&[c, w, h], |i| {
            let (k, y, x) = (i / (w * h), i / h % w, i % h);
            d[(k * h + x) * w + (w - 1 - y)]
        });
    }
    out
}
