//! Finite-difference check of the training loss through a whole model.
//!
//! Checking every coordinate of a network is far too slow, so each seed runs
//! one directional derivative over all parameters plus central differences at
//! a few randomly chosen coordinates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use snowformer_tensor::gradcheck::{analytic_grads, directional_check, fd_step, rel_err};
use snowformer_tensor::{Session, Tape, TensorError, Var};

use crate::error::{Error, Result};
use crate::model::{build_model, Model, ModelConfig};
use crate::train::loss::{total_loss, LossConfig, Perceptual};
use crate::Tensor;

#[derive(Clone, Debug)]
pub struct ModelCheckOptions {
    /// Square input side; must satisfy the model's input contract.
    pub input: usize,
    /// Coordinates checked by central differences.
    pub points: usize,
    /// Step along the ±1 direction. Every parameter moves at once, so larger
    /// steps push max-pool selections across ties.
    pub direction_step: f64,
    pub loss: LossConfig,
    /// Absolute floor of the relative-error denominator, per unit of loss.
    /// Difference noise grows with |loss| (a PSNR loss sits in the tens), so
    /// the effective floor is `floor * max(1, |loss|)`.
    pub floor: f64,
    pub rel_tol: f64,
}

impl Default for ModelCheckOptions {
    fn default() -> Self {
        Self {
            input: 64,
            points: 4,
            direction_step: 1e-7,
            loss: LossConfig::default(),
            floor: 1e-6,
            rel_tol: 1e-3,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CoordCheck {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ModelCheck {
    pub seed: u64,
    pub directional_rel_err: f64,
    pub coords: Vec<CoordCheck>,
    pub rel_tol: f64,
}

impl ModelCheck {
    pub fn max_rel_err(&self) -> f64 {
        self.coords
            .iter()
            .map(|c| c.rel_err)
            .fold(self.directional_rel_err, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() <= self.rel_tol
    }
}

fn loss_program<'a>(
    model: &'a Model<f64>,
    perceptual: &'a Perceptual<f64>,
    input: &'a Tensor<f64>,
    target: &'a Tensor<f64>,
    loss_cfg: &'a LossConfig,
) -> impl Fn(&mut Tape<f64>, &[Var]) -> snowformer_tensor::Result<Var> + 'a {
    move |tape, vars| {
        let owned = std::mem::replace(tape, Tape::new());
        let mut s = Session::with_tape(model.params(), owned);
        for (id, &v) in model.params().ids().zip(vars) {
            s.bind(id, v);
        }
        let out = (|| {
            let x = s.constant(input.clone());
            let y = s.constant(target.clone());
            let pred = model.forward(&mut s, x)?;
            total_loss(&mut s, pred, y, loss_cfg, Some(perceptual))
        })();
        *tape = s.into_tape();
        out.map_err(|e| match e {
            Error::Tensor(t) => t,
            other => TensorError::InvalidArgument {
                op: "model",
                msg: other.to_string(),
            },
        })
    }
}

fn forward_value<F>(f: &F, params: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> snowformer_tensor::Result<Var>,
{
    let mut tape = Tape::inference();
    let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).item())
}

/// Checks gradients of the default training loss for a model built from `cfg` with `seed`.
pub fn check_model(cfg: &ModelConfig, seed: u64, opts: &ModelCheckOptions) -> Result<ModelCheck> {
    cfg.check_input(opts.input, opts.input)?;
    let model = build_model::<f64>(cfg, seed)?;
    let perceptual = Perceptual::<f64>::surrogate(19);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x67c4_ec4b);
    let shape = [1, 3, opts.input, opts.input];
    let input = Tensor::from_fn(&shape, |_| rng.gen::<f64>());
    let target = Tensor::from_fn(&shape, |_| rng.gen::<f64>());
    let program = loss_program(&model, &perceptual, &input, &target, &opts.loss);
    let params = model.params().values().to_vec();

    let floor = opts.floor * forward_value(&program, &params)?.abs().max(1.0);
    let directional = directional_check(&params, &program, seed, opts.direction_step, floor)?;

    let grads = analytic_grads(&params, &program, None)?;
    let total: usize = params.iter().map(|p| p.numel()).sum();
    let mut coords = Vec::with_capacity(opts.points);
    let mut work = params.clone();
    for _ in 0..opts.points {
        let mut flat = rng.gen_range(0..total);
        let pi = params
            .iter()
            .position(|p| {
                if flat < p.numel() {
                    true
                } else {
                    flat -= p.numel();
                    false
                }
            })
            .expect("index below total");
        let theta = params[pi].data()[flat];
        let h = fd_step(theta);
        work[pi].data_mut()[flat] = theta + h;
        let up = forward_value(&program, &work)?;
        work[pi].data_mut()[flat] = theta - h;
        let down = forward_value(&program, &work)?;
        work[pi].data_mut()[flat] = theta;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads[pi].data()[flat];
        let id = model.params().ids().nth(pi).expect("param index in range");
        coords.push(CoordCheck {
            param: model.params().name(id).to_string(),
            index: flat,
            analytic,
            numeric,
            rel_err: rel_err(analytic, numeric, floor),
        });
    }
    Ok(ModelCheck {
        seed,
        directional_rel_err: directional.rel_err,
        coords,
        rel_tol: opts.rel_tol,
    })
}
