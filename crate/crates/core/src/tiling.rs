//! Overlapping-tile inference for images of any size at or above one tile.
//!
//! Tiles never leave the image: the last tile along an axis is shifted
//! inward instead of padding. Overlap bands get a raised-cosine ramp on
//! edges shared with a neighbour, and the weights are normalised per axis
//! so they sum to one at every pixel.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use snowformer_tensor::{Scalar, Tensor};

use crate::error::{Error, Result};
use crate::model::Model;

/// Tile sizes are multiples of this so every tile satisfies the model's
/// input constraint.
pub const TILE_MULTIPLE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TileConfig {
    pub tile: usize,
    pub overlap: usize,
}

impl Default for TileConfig {
    fn default() -> Self {
        Self {
            tile: 256,
            overlap: 32,
        }
    }
}

/// Tile layout along one axis.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisPlan {
    pub len: usize,
    pub tile: usize,
    pub origins: Vec<usize>,
    /// `weights[i][p]`: normalised weight of tile `i` at offset `p`.
    pub weights: Vec<Vec<f64>>,
}

impl AxisPlan {
    fn new(len: usize, tile: usize, overlap: usize) -> Self {
        let tile = tile.min(len / TILE_MULTIPLE * TILE_MULTIPLE);
        let overlap = overlap.min(tile - 1);
        let stride = tile - overlap;
        let mut origins = vec![0];
        while origins.last().unwrap() + tile < len {
            origins.push((origins.last().unwrap() + stride).min(len - tile));
        }
        let count = origins.len();
        let raw: Vec<Vec<f64>> = origins
            .iter()
            .enumerate()
            .map(|(i, &o)| {
                let lead = if i > 0 { origins[i - 1] + tile - o } else { 0 };
                let trail = if i + 1 < count { o + tile - origins[i + 1] } else { 0 };
                (0..tile).map(|p| ramp(p, lead) * ramp(tile - 1 - p, trail)).collect()
            })
            .collect();
        let mut sum = vec![0.0; len];
        for (o, w) in origins.iter().zip(&raw) {
            for (p, v) in w.iter().enumerate() {
                sum[o + p] += v;
            }
        }
        let weights = origins
            .iter()
            .zip(raw)
            .map(|(o, w)| w.iter().enumerate().map(|(p, v)| v / sum[o + p]).collect())
            .collect();
        Self {
            len,
            tile,
            origins,
            weights,
        }
    }
}

/// Half-Hann rise over the first `band` samples; 1 beyond it.
fn ramp(p: usize, band: usize) -> f64 {
    if p >= band {
        1.0
    } else {
        0.5 - 0.5 * (PI * (p as f64 + 0.5) / band as f64).cos()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TilePlan {
    pub rows: AxisPlan,
    pub cols: AxisPlan,
}

impl TilePlan {
    pub fn tile_count(&self) -> usize {
        self.rows.origins.len() * self.cols.origins.len()
    }

    /// Normalised `[tile_h, tile_w]` weights of tile `(i, j)`.
    pub fn weight_map(&self, i: usize, j: usize) -> Vec<f64> {
        let (wy, wx) = (&self.rows.weights[i], &self.cols.weights[j]);
        wy.iter().flat_map(|a| wx.iter().map(move |b| a * b)).collect()
    }
}

/// Plans tiles for an `h × w` image. Along each axis the tile shrinks to the
/// largest multiple of 64 that fits when the image is smaller than `tile`.
pub fn plan_tiles(h: usize, w: usize, cfg: TileConfig) -> Result<TilePlan> {
    let TileConfig { tile, overlap } = cfg;
    if tile == 0 || tile % TILE_MULTIPLE != 0 {
        return Err(Error::InvalidTile(format!("tile {tile} is not a positive multiple of {TILE_MULTIPLE}")));
    }
    if overlap >= tile {
        return Err(Error::InvalidTile(format!("overlap {overlap} must be smaller than tile {tile}")));
    }
    if h < TILE_MULTIPLE || w < TILE_MULTIPLE {
        return Err(Error::InvalidTile(format!(
            "image {h}x{w} is smaller than the minimum tile {TILE_MULTIPLE}"
        )));
    }
    Ok(TilePlan {
        rows: AxisPlan::new(h, tile, overlap),
        cols: AxisPlan::new(w, tile, overlap),
    })
}

/// Anything that maps a `[3,h,w]` tile to a restored tile of the same shape.
pub trait Restorer<T: Scalar> {
    fn restore(&self, tile: &Tensor<T>) -> Result<Tensor<T>>;
}

impl<T: Scalar> Restorer<T> for Model<T> {
    fn restore(&self, tile: &Tensor<T>) -> Result<Tensor<T>> {
        self.predict(tile)
    }
}

/// Returns its input; the reference for blending tests.
#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl<T: Scalar> Restorer<T> for Identity {
    fn restore(&self, tile: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(tile.clone())
    }
}

fn crop<T: Scalar>(img: &Tensor<T>, y: usize, x: usize, th: usize, tw: usize) -> Tensor<T> {
    crate::train::augment::crop(img, y, x, th, tw)
}

/// Restores `[3,H,W]` tile by tile, blends in `f64`, clips to `[0,1]`.
pub fn tiled_inference<T: Scalar, R: Restorer<T> + ?Sized>(
    restorer: &R,
    image: &Tensor<T>,
    plan: &TilePlan,
) -> Result<Tensor<T>> {
    let s = image.shape();
    if s.len() != 3 || s[1] != plan.rows.len || s[2] != plan.cols.len {
        return Err(Error::InvalidTile(format!(
            "plan is for {}x{}, image has shape {s:?}",
            plan.rows.len, plan.cols.len
        )));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let (th, tw) = (plan.rows.tile, plan.cols.tile);
    let mut acc = vec![0.0f64; c * h * w];
    for (i, &oy) in plan.rows.origins.iter().enumerate() {
        for (j, &ox) in plan.cols.origins.iter().enumerate() {
            let out = restorer.restore(&crop(image, oy, ox, th, tw))?;
            if out.shape() != [c, th, tw] {
                return Err(Error::InvalidTile(format!(
                    "restorer returned {:?} for a {th}x{tw} tile",
                    out.shape()
                )));
            }
            let (wy, wx) = (&plan.rows.weights[i], &plan.cols.weights[j]);
            let d = out.data();
            for k in 0..c {
                for y in 0..th {
                    let row = &d[(k * th + y) * tw..(k * th + y + 1) * tw];
                    let base = (k * h + oy + y) * w + ox;
                    for (x, v) in row.iter().enumerate() {
                        acc[base + x] += wy[y] * wx[x] * v.as_f64();
                    }
                }
            }
        }
    }
    Ok(Tensor::new(
        &[c, h, w],
        acc.into_iter().map(|v| T::from_f64_lossy(v.clamp(0.0, 1.0))).collect(),
    )?)
}
