use std::f64::consts::LN_10;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use snowformer_tensor::init::fan_in_uniform;
use snowformer_tensor::{ParamStore, Scalar, Session, Tensor, Var};

use crate::error::{Error, Result};
use crate::train::checkpoint::read_checkpoint;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PerceptualMode {
    Off,
    /// Frozen, seeded two-stage convolutional feature extractor.
    Surrogate { seed: u64 },
    /// Extractor weights read from a checkpoint-format file.
    External { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub psnr_cap_db: f64,
    pub perceptual: PerceptualMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.2,
            psnr_cap_db: 100.0,
            perceptual: PerceptualMode::Surrogate { seed: 19 },
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::InvalidConfig("loss weights must be non-negative".into()));
        }
        if !self.psnr_cap_db.is_finite() {
            return Err(Error::InvalidConfig("psnr_cap_db must be finite".into()));
        }
        Ok(())
    }
}

/// Mean squared error between two same-shape variables.
pub fn mse<T: Scalar>(s: &mut Session<T>, pred: Var, target: Var) -> Result<Var> {
    if s.shape(pred) != s.shape(target) {
        return Err(snowformer_tensor::TensorError::ShapeMismatch {
            op: "mse",
            lhs: s.shape(pred).to_vec(),
            rhs: s.shape(target).to_vec(),
        }
        .into());
    }
    let d = s.sub(pred, target)?;
    let d = s.square(d)?;
    Ok(s.mean(d)?)
}

/// Negative PSNR, `10·log10(MSE)`, floored at `-cap_db`.
///
/// At or below the cap the loss is a constant, so the degenerate
/// `MSE = 0` case never divides by zero.
pub fn psnr_loss<T: Scalar>(s: &mut Session<T>, pred: Var, target: Var, cap_db: f64) -> Result<Var> {
    let m = mse(s, pred, target)?;
    let value = s.value(m).item().as_f64();
    if value <= 10f64.powf(-cap_db / 10.0) {
        return Ok(s.constant(Tensor::scalar(T::from_f64_lossy(-cap_db))));
    }
    let l = s.ln(m)?;
    Ok(s.scale(l, T::from_f64_lossy(10.0 / LN_10))?)
}

pub const SURROGATE_NAMES: [&str; 4] = ["phi.conv1.w", "phi.conv1.b", "phi.conv2.w", "phi.conv2.b"];

/// Frozen feature extractor: stage 1 is conv3 3→8 + GELU, stage 2 is
/// 2×2 average pooling, conv3 8→16 + GELU.
pub struct Perceptual<T: Scalar> {
    weights: [Tensor<T>; 4],
}

impl<T: Scalar> Perceptual<T> {
    pub fn surrogate(seed: u64) -> Self {
        let mut rng = snowformer_tensor::init::rng(seed);
        Self {
            weights: [
                fan_in_uniform(&[8, 3, 3, 3], 27, &mut rng),
                Tensor::zeros(&[8]),
                fan_in_uniform(&[16, 8, 3, 3], 72, &mut rng),
                Tensor::zeros(&[16]),
            ],
        }
    }

    pub fn external(path: &std::path::Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingWeights(path.to_path_buf()));
        }
        let tensors: Vec<(String, Tensor<T>)> = read_checkpoint(path)?;
        let mut store = ParamStore::new();
        for (n, t) in tensors {
            store.add(n, t)?;
        }
        let get = |name: &str, shape: &[usize]| -> Result<Tensor<T>> {
            match store.by_name(name) {
                Some(t) if t.shape() == shape => Ok(t.clone()),
                Some(t) => Err(Error::ParamMismatch(vec![format!(
                    "{name}: expected shape {shape:?}, found {:?}",
                    t.shape()
                )])),
                None => Err(Error::MissingWeights(path.join(name))),
            }
        };
        Ok(Self {
            weights: [
                get(SURROGATE_NAMES[0], &[8, 3, 3, 3])?,
                get(SURROGATE_NAMES[1], &[8])?,
                get(SURROGATE_NAMES[2], &[16, 8, 3, 3])?,
                get(SURROGATE_NAMES[3], &[16])?,
            ],
        })
    }

    pub fn from_config(mode: &PerceptualMode) -> Result<Option<Self>> {
        Ok(match mode {
            PerceptualMode::Off => None,
            PerceptualMode::Surrogate { seed } => Some(Self::surrogate(*seed)),
            PerceptualMode::External { path } => Some(Self::external(path)?),
        })
    }

    pub fn weights(&self) -> &[Tensor<T>; 4] {
        &self.weights
    }

    /// Feature maps of both stages. Weights enter the tape as constants.
    pub fn features(&self, s: &mut Session<T>, x: Var) -> Result<[Var; 2]> {
        let w: Vec<Var> = self.weights.iter().map(|t| s.constant(t.clone())).collect();
        let f1 = s.conv2d(x, w[0], Some(w[1]), 1, 1)?;
        let f1 = s.gelu(f1)?;
        let p = s.avgpool2d(f1, 2, 2)?;
        let f2 = s.conv2d(p, w[2], Some(w[3]), 1, 1)?;
        let f2 = s.gelu(f2)?;
        Ok([f1, f2])
    }

    /// Σ over stages of the mean absolute feature difference.
    pub fn loss(&self, s: &mut Session<T>, pred: Var, target: Var) -> Result<Var> {
        let fp = self.features(s, pred)?;
        let ft = self.features(s, target)?;
        let mut total = None;
        for (a, b) in fp.into_iter().zip(ft) {
            let d = s.sub(a, b)?;
            let d = s.abs(d)?;
            let m = s.mean(d)?;
            total = Some(match total {
                None => m,
                Some(t) => s.add(t, m)?,
            });
        }
        Ok(total.expect("two stages"))
    }
}

/// `λ1·L_psnr + λ2·L_perceptual`; the perceptual term is skipped when `λ2 = 0`
/// or no extractor is given.
pub fn total_loss<T: Scalar>(
    s: &mut Session<T>,
    pred: Var,
    target: Var,
    cfg: &LossConfig,
    perceptual: Option<&Perceptual<T>>,
) -> Result<Var> {
    let lp = psnr_loss(s, pred, target, cfg.psnr_cap_db)?;
    let mut total = s.scale(lp, T::from_f64_lossy(cfg.lambda1))?;
    if let Some(p) = perceptual.filter(|_| cfg.lambda2 != 0.0) {
        let lq = p.loss(s, pred, target)?;
        let lq = s.scale(lq, T::from_f64_lossy(cfg.lambda2))?;
        total = s.add(total, lq)?;
    }
    Ok(total)
}
