use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::{psnr, ssim};
use crate::synth::dataset_read;
use crate::tiling::{plan_tiles, tiled_inference, Restorer, TileConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Describes the model being evaluated; copied verbatim into the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub param_count: usize,
    pub mac_estimate: u64,
    pub config_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: Vec<ImageScore>,
    pub count: usize,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    pub param_count: usize,
    pub mac_estimate: u64,
    pub config_sha256: String,
}

impl EvalReport {
    pub fn new(images: Vec<ImageScore>, summary: ModelSummary) -> Self {
        let n = images.len();
        let mean = |f: fn(&ImageScore) -> f64| {
            if n == 0 {
                0.0
            } else {
                images.iter().map(f).sum::<f64>() / n as f64
            }
        };
        Self {
            mean_psnr_db: mean(|s| s.psnr_db),
            mean_ssim: mean(|s| s.ssim),
            count: n,
            images,
            param_count: summary.param_count,
            mac_estimate: summary.mac_estimate,
            config_sha256: summary.config_sha256,
        }
    }
}

/// Restores every snowy image of a dataset directory and scores it against
/// its ground truth.
pub fn evaluate_dataset<R: Restorer<f32> + ?Sized>(
    restorer: &R,
    dir: &Path,
    tiles: TileConfig,
    summary: ModelSummary,
) -> Result<EvalReport> {
    let data = dataset_read::<f32>(dir, None)?;
    let mut images = Vec::with_capacity(data.pairs.len());
    for pair in &data.pairs {
        let s = pair.snow.shape();
        let plan = plan_tiles(s[1], s[2], tiles)?;
        let out = tiled_inference(restorer, &pair.snow, &plan)?;
        images.push(ImageScore {
            name: pair.name.clone(),
            psnr_db: psnr(&out, &pair.gt)?,
            ssim: ssim(&out, &pair.gt)?,
        });
    }
    Ok(EvalReport::new(images, summary))
}
