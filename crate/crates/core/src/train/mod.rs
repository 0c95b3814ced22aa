//! Losses, optimiser, schedule, augmentation, the training loop and checkpoints.

pub mod augment;
pub mod checkpoint;
pub mod loss;
pub mod optim;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use snowformer_tensor::{Scalar, Session, Tensor, TensorError};

pub use augment::{AugmentConfig, Transform};
pub use checkpoint::{load_training, save_training};
pub use loss::{psnr_loss, total_loss, LossConfig, Perceptual, PerceptualMode};
pub use optim::{Adam, AdamConfig, LrSchedule};

use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::model::Model;
use crate::synth::Pair;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    /// Seeds batch sampling and augmentation; each step draws from its own stream.
    pub seed: u64,
    /// Write a checkpoint every this many steps; 0 keeps only the final one.
    pub checkpoint_every: u64,
    pub loss: LossConfig,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 1,
            seed: 0,
            checkpoint_every: 0,
            loss: LossConfig::default(),
            schedule: LrSchedule::default(),
            adam: AdamConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.schedule.lr0 > 0.0 && self.schedule.max_factor >= 1.0) {
            return Err(Error::InvalidConfig("schedule needs lr0 > 0 and max_factor >= 1".into()));
        }
        Ok(())
    }
}

/// One line of the JSONL training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    /// PSNR of the clipped prediction on this step's batch.
    pub psnr: f64,
}

pub struct Trainer<'m, T: Scalar> {
    pub model: &'m mut Model<T>,
    pub opt: Adam<T>,
    pub cfg: TrainConfig,
    perceptual: Option<Perceptual<T>>,
}

impl<'m, T: Scalar> Trainer<'m, T> {
    pub fn new(model: &'m mut Model<T>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let perceptual = if cfg.loss.lambda2 == 0.0 {
            None
        } else {
            Perceptual::from_config(&cfg.loss.perceptual)?
        };
        let opt = Adam::new(cfg.adam.clone(), model.params());
        Ok(Self {
            model,
            opt,
            cfg,
            perceptual,
        })
    }

    /// Restores weights and optimiser state from a checkpoint.
    pub fn resume(&mut self, path: &Path) -> Result<()> {
        let opt = load_training(path, self.model.params_mut(), self.cfg.adam.clone())?;
        self.opt = opt.unwrap_or_else(|| Adam::new(self.cfg.adam.clone(), self.model.params()));
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_training(path, self.model.params(), Some(&self.opt))
    }

    /// Index of the next step to run.
    pub fn step_index(&self) -> u64 {
        self.opt.step
    }

    /// Draws the batch for step `t`: `[B,3,c,c]` snowy and clean tensors.
    pub fn batch(&self, data: &[Pair<T>], t: u64) -> Result<(Tensor<T>, Tensor<T>)> {
        if data.is_empty() {
            return Err(Error::InvalidConfig("training set is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(t);
        let c = self.cfg.augment.crop;
        let (mut snow, mut gt) = (Vec::new(), Vec::new());
        for _ in 0..self.cfg.batch_size {
            let pair = &data[rng.gen_range(0..data.len())];
            let s = pair.snow.shape();
            if pair.gt.shape() != s {
                return Err(TensorError::ShapeMismatch {
                    op: "training pair",
                    lhs: s.to_vec(),
                    rhs: pair.gt.shape().to_vec(),
                }
                .into());
            }
            let tf = Transform::sample(&mut rng, &self.cfg.augment, s[1], s[2])?;
            snow.extend_from_slice(tf.apply(&pair.snow).data());
            gt.extend_from_slice(tf.apply(&pair.gt).data());
        }
        let shape = [self.cfg.batch_size, 3, c, c];
        Ok((Tensor::new(&shape, snow)?, Tensor::new(&shape, gt)?))
    }

    /// Runs one optimisation step.
    pub fn step(&mut self, data: &[Pair<T>]) -> Result<StepLog> {
        let t = self.opt.step;
        let non_finite = |e: Error| match e {
            Error::Tensor(TensorError::NonFinite { op }) => Error::NonFiniteLoss {
                step: t,
                detail: format!("non-finite value produced by {op}"),
            },
            e => e,
        };
        let (snow, gt) = self.batch(data, t)?;
        let lr = self.cfg.schedule.lr(t);
        let (loss, grads, pred) = {
            let mut s = Session::new(self.model.params());
            let x = s.constant(snow);
            let y = s.constant(gt.clone());
            let pred = self.model.forward(&mut s, x).map_err(non_finite)?;
            let loss = total_loss(&mut s, pred, y, &self.cfg.loss, self.perceptual.as_ref()).map_err(non_finite)?;
            let value = s.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: t,
                    detail: format!("loss = {value}"),
                });
            }
            let grads = s.backward(loss).map_err(|e| non_finite(e.into()))?;
            (value, s.param_grads(&grads), s.value(pred).clone())
        };
        self.opt.update(self.model.params_mut(), &grads, lr)?;
        let clipped = pred.map(|v| v.max(T::zero()).min(T::one()));
        Ok(StepLog {
            step: t,
            lr,
            loss,
            psnr: psnr(&clipped, &gt)?,
        })
    }

    /// Runs until `cfg.steps` total steps, calling `on_step` after each.
    pub fn run(
        &mut self,
        data: &[Pair<T>],
        mut on_step: impl FnMut(&Self, &StepLog) -> Result<()>,
    ) -> Result<()> {
        while self.opt.step < self.cfg.steps {
            let log = self.step(data)?;
            on_step(self, &log)?;
        }
        Ok(())
    }
}
