//! Central-difference gradient checking.
//!
//! The relative error of one coordinate is `|a − n| / max(|a|, |n|, floor)`
//! where `a` is the analytic and `n` the numeric derivative; the floor keeps
//! coordinates whose true gradient is zero from dividing noise by noise.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::Result;
use crate::init::rng;
use crate::tape::{OpKind, Tape, Var};
use crate::tensor::Tensor;

/// Finite-difference step for a coordinate with value `theta`.
pub fn fd_step(theta: f64) -> f64 {
    1e-5 * theta.abs().max(1.0)
}

pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub rel_tol: f64,
    pub floor: f64,
    /// Check at most this many randomly chosen coordinates per parameter.
    pub max_points_per_param: Option<usize>,
    pub seed: u64,
    pub fault: Option<OpKind>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-4,
            floor: 1e-6,
            max_points_per_param: None,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub param: usize,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Coordinate, analytic and numeric value at the worst point.
    pub worst: (usize, f64, f64),
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub rel_tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() <= self.rel_tol
    }
}

fn eval<F>(f: &F, params: &[Tensor<f64>], fault: Option<OpKind>) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::inference();
    tape.inject_fault(fault);
    let vars: Vec<Var> = params.iter().map(|p| tape.constant(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).item())
}

/// Analytic gradients of `f` at `params`.
pub fn analytic_grads<F>(
    params: &[Tensor<f64>],
    f: &F,
    fault: Option<OpKind>,
) -> Result<Vec<Tensor<f64>>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    tape.inject_fault(fault);
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    Ok(vars.iter().map(|&v| grads.wrt(&tape, v)).collect())
}

/// Compares analytic and central-difference gradients of the scalar program `f`.
pub fn grad_check<F>(params: &[Tensor<f64>], f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let analytic = analytic_grads(params, &f, opts.fault)?;
    let mut rng = rng(opts.seed);
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut reports = Vec::with_capacity(params.len());
    for (pi, grad) in analytic.iter().enumerate() {
        let n = params[pi].numel();
        let coords: Vec<usize> = match opts.max_points_per_param {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let mut report = ParamCheck {
            param: pi,
            checked: coords.len(),
            max_rel_err: 0.0,
            worst: (0, 0.0, 0.0),
        };
        for &c in &coords {
            let theta = params[pi].data()[c];
            let h = fd_step(theta);
            work[pi].data_mut()[c] = theta + h;
            let up = eval(&f, &work, None)?;
            work[pi].data_mut()[c] = theta - h;
            let down = eval(&f, &work, None)?;
            work[pi].data_mut()[c] = theta;
            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[c];
            let e = rel_err(a, numeric, opts.floor);
            if e > report.max_rel_err || report.worst == (0, 0.0, 0.0) {
                report.max_rel_err = report.max_rel_err.max(e);
                report.worst = (c, a, numeric);
            }
        }
        reports.push(report);
    }
    Ok(GradCheckReport {
        rel_tol: opts.rel_tol,
        params: reports,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct DirectionalCheck {
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Checks the derivative of `f` along one random ±1 direction over all parameters,
/// using central differences with step `h`.
///
/// Cost is one backward and two forward passes regardless of parameter count.
pub fn directional_check<F>(
    params: &[Tensor<f64>],
    f: F,
    seed: u64,
    h: f64,
    floor: f64,
) -> Result<DirectionalCheck>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let grads = analytic_grads(params, &f, None)?;
    let mut rng = rng(seed);
    let dirs: Vec<Vec<f64>> = params
        .iter()
        .map(|p| {
            (0..p.numel())
                .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
                .collect()
        })
        .collect();
    let analytic: f64 = grads
        .iter()
        .zip(&dirs)
        .map(|(g, d)| g.data().iter().zip(d).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    let shifted = |sign: f64| -> Vec<Tensor<f64>> {
        params
            .iter()
            .zip(&dirs)
            .map(|(p, d)| {
                let mut t = p.clone();
                for (v, dv) in t.data_mut().iter_mut().zip(d) {
                    *v += sign * h * dv;
                }
                t
            })
            .collect()
    };
    let up = eval(&f, &shifted(1.0), None)?;
    let down = eval(&f, &shifted(-1.0), None)?;
    let numeric = (up - down) / (2.0 * h);
    Ok(DirectionalCheck {
        analytic,
        numeric,
        rel_err: rel_err(analytic, numeric, floor),
    })
}

pub mod suite {
    //! Randomised scalar programs exercising every differentiable op.

    use std::sync::Arc;

    use rand::Rng;

    use crate::error::Result;
    use crate::init::rng;
    use crate::tape::{OpKind, Tape, Var};
    use crate::tensor::Tensor;

    pub type Program = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

    pub struct OpCase {
        pub name: &'static str,
        pub kind: OpKind,
        pub params: Vec<Tensor<f64>>,
        pub program: Program,
    }

    fn rand_t(r: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
    }

    /// Values bounded away from zero, for `abs` and `ln`-style kinks.
    fn away_from_zero(r: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| {
            let v: f64 = r.gen_range(0.1..1.0);
            if r.gen::<bool>() {
                v
            } else {
                -v
            }
        })
    }

    /// Reduces `out` to a scalar through fixed random weights so every output
    /// element contributes with a distinct sensitivity.
    fn project(t: &mut Tape<f64>, out: Var, weights: &Tensor<f64>) -> Result<Var> {
        let w = t.constant(weights.reshape(t.shape(out))?);
        let p = t.mul(out, w)?;
        t.sum(p)
    }

    fn case(
        name: &'static str,
        kind: OpKind,
        params: Vec<Tensor<f64>>,
        out_numel: usize,
        seed: u64,
        body: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static,
    ) -> OpCase {
        let mut r = rng(seed ^ 0x5eed);
        let weights = rand_t(&mut r, &[out_numel]);
        OpCase {
            name,
            kind,
            params,
            program: Box::new(move |t, v| {
                let out = body(t, v)?;
                project(t, out, &weights)
            }),
        }
    }

    /// One randomised case per differentiable op for the given seed.
    pub fn op_cases(seed: u64) -> Vec<OpCase> {
        let mut r = rng(seed);
        let mut cases = Vec::new();

        cases.push(case(
            "add_broadcast",
            OpKind::Add,
            vec![rand_t(&mut r, &[2, 3, 4]), rand_t(&mut r, &[3, 1])],
            24,
            seed,
            |t, v| t.add(v[0], v[1]),
        ));
        cases.push(case(
            "sub",
            OpKind::Sub,
            vec![rand_t(&mut r, &[3, 4]), rand_t(&mut r, &[3, 4])],
            12,
            seed,
            |t, v| t.sub(v[0], v[1]),
        ));
        cases.push(case(
            "mul_broadcast",
            OpKind::Mul,
            vec![rand_t(&mut r, &[2, 3, 2, 2]), rand_t(&mut r, &[1, 3, 1, 1])],
            24,
            seed,
            |t, v| t.mul(v[0], v[1]),
        ));
        for (name, kind) in [
            ("sigmoid", OpKind::Sigmoid),
            ("gelu", OpKind::Gelu),
            ("exp", OpKind::Exp),
            ("square", OpKind::Square),
        ] {
            cases.push(case(
                name,
                kind,
                vec![rand_t(&mut r, &[3, 5])],
                15,
                seed,
                move |t, v| match kind {
                    OpKind::Sigmoid => t.sigmoid(v[0]),
                    OpKind::Gelu => t.gelu(v[0]),
                    OpKind::Exp => t.exp(v[0]),
                    _ => t.square(v[0]),
                },
            ));
        }
        cases.push(case(
            "abs",
            OpKind::Abs,
            vec![away_from_zero(&mut r, &[3, 5])],
            15,
            seed,
            |t, v| t.abs(v[0]),
        ));
        cases.push(case(
            "ln",
            OpKind::Ln,
            vec![Tensor::from_fn(&[3, 5], |_| r.gen_range(0.2..2.0))],
            15,
            seed,
            |t, v| t.ln(v[0]),
        ));
        cases.push(case(
            "scale",
            OpKind::Scale,
            vec![rand_t(&mut r, &[4])],
            4,
            seed,
            |t, v| t.scale(v[0], -2.5),
        ));
        cases.push(case(
            "add_scalar",
            OpKind::AddScalar,
            vec![rand_t(&mut r, &[4])],
            4,
            seed,
            |t, v| t.add_scalar(v[0], 0.7),
        ));
        cases.push(case(
            "sum",
            OpKind::SumAll,
            vec![rand_t(&mut r, &[2, 3])],
            1,
            seed,
            |t, v| {
                let s = t.square(v[0])?;
                t.sum(s)
            },
        ));
        cases.push(case(
            "mean",
            OpKind::MeanAll,
            vec![rand_t(&mut r, &[2, 3])],
            1,
            seed,
            |t, v| {
                let s = t.square(v[0])?;
                t.mean(s)
            },
        ));
        cases.push(case(
            "sum_axis",
            OpKind::SumAxis,
            vec![rand_t(&mut r, &[2, 3, 4])],
            8,
            seed,
            |t, v| t.sum_axis(v[0], 1),
        ));
        cases.push(case(
            "mean_axis",
            OpKind::MeanAxis,
            vec![rand_t(&mut r, &[2, 3, 4])],
            6,
            seed,
            |t, v| t.mean_axis(v[0], 2),
        ));
        cases.push(case(
            "max_axis",
            OpKind::MaxAxis,
            vec![rand_t(&mut r, &[2, 3, 4])],
            8,
            seed,
            |t, v| t.max_axis(v[0], 1),
        ));
        cases.push(case(
            "matmul",
            OpKind::MatMul,
            vec![rand_t(&mut r, &[3, 4]), rand_t(&mut r, &[4, 2])],
            6,
            seed,
            |t, v| t.matmul(v[0], v[1]),
        ));
        for (name, ta, tb) in [
            ("bmm_nt", false, true),
            ("bmm_tn", true, false),
            ("bmm_tt", true, true),
        ] {
            let a = if ta { [2, 4, 3] } else { [2, 3, 4] };
            let b = if tb { [2, 5, 4] } else { [2, 4, 5] };
            cases.push(case(
                name,
                OpKind::MatMul,
                vec![rand_t(&mut r, &a), rand_t(&mut r, &b)],
                30,
                seed,
                move |t, v| t.bmm(v[0], v[1], ta, tb),
            ));
        }
        cases.push(case(
            "linear",
            OpKind::Linear,
            vec![
                rand_t(&mut r, &[2, 3, 4]),
                rand_t(&mut r, &[5, 4]),
                rand_t(&mut r, &[5]),
            ],
            30,
            seed,
            |t, v| t.linear(v[0], v[1], Some(v[2])),
        ));
        for (name, k, stride, pad) in [
            ("conv3x3", 3, 1, 1),
            ("conv3x3_stride2", 3, 2, 1),
            ("conv1x1", 1, 1, 0),
        ] {
            let (h, w) = (6, 5);
            let (oh, ow) = ((h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1);
            cases.push(case(
                name,
                OpKind::Conv2d,
                vec![
                    rand_t(&mut r, &[2, 2, h, w]),
                    rand_t(&mut r, &[3, 2, k, k]),
                    rand_t(&mut r, &[3]),
                ],
                2 * 3 * oh * ow,
                seed,
                move |t, v| t.conv2d(v[0], v[1], Some(v[2]), stride, pad),
            ));
        }
        cases.push(case(
            "maxpool2d",
            OpKind::MaxPool2d,
            vec![rand_t(&mut r, &[1, 2, 4, 4])],
            8,
            seed,
            |t, v| t.maxpool2d(v[0], 2, 2),
        ));
        cases.push(case(
            "avgpool2d",
            OpKind::AvgPool2d,
            vec![rand_t(&mut r, &[1, 2, 4, 4])],
            8,
            seed,
            |t, v| t.avgpool2d(v[0], 2, 2),
        ));
        cases.push(case(
            "adaptive_avgpool2d",
            OpKind::AdaptiveAvgPool2d,
            vec![rand_t(&mut r, &[1, 2, 5, 3])],
            2 * 4 * 4,
            seed,
            |t, v| t.adaptive_avgpool2d(v[0], 4, 4),
        ));
        cases.push(case(
            "upsample_nearest",
            OpKind::Upsample,
            vec![rand_t(&mut r, &[1, 2, 2, 3])],
            2 * 4 * 6,
            seed,
            |t, v| t.upsample_nearest2x(v[0]),
        ));
        cases.push(case(
            "softmax",
            OpKind::Softmax,
            vec![rand_t(&mut r, &[3, 5])],
            15,
            seed,
            |t, v| t.softmax(v[0], 1),
        ));
        cases.push(case(
            "softmax_axis0",
            OpKind::Softmax,
            vec![rand_t(&mut r, &[3, 2, 2])],
            12,
            seed,
            |t, v| t.softmax(v[0], 0),
        ));
        cases.push(case(
            "layernorm",
            OpKind::LayerNorm,
            vec![
                rand_t(&mut r, &[3, 6]),
                rand_t(&mut r, &[6]),
                rand_t(&mut r, &[6]),
            ],
            18,
            seed,
            |t, v| t.layernorm(v[0], v[1], v[2], 1e-5),
        ));
        cases.push(case(
            "layernorm_channels",
            OpKind::LayerNorm,
            vec![
                rand_t(&mut r, &[1, 4, 2, 3]),
                rand_t(&mut r, &[4]),
                rand_t(&mut r, &[4]),
            ],
            24,
            seed,
            |t, v| t.layernorm_axis(v[0], v[1], v[2], 1, 1e-5),
        ));
        cases.push(case(
            "reshape",
            OpKind::Reshape,
            vec![rand_t(&mut r, &[2, 6])],
            12,
            seed,
            |t, v| t.reshape(v[0], &[3, 4]),
        ));
        cases.push(case(
            "permute",
            OpKind::Permute,
            vec![rand_t(&mut r, &[2, 3, 4])],
            24,
            seed,
            |t, v| t.permute(v[0], &[2, 0, 1]),
        ));
        cases.push(case(
            "concat",
            OpKind::Concat,
            vec![rand_t(&mut r, &[2, 1, 3]), rand_t(&mut r, &[2, 2, 3])],
            18,
            seed,
            |t, v| t.concat(&[v[0], v[1]], 1),
        ));
        cases.push(case(
            "slice",
            OpKind::Slice,
            vec![rand_t(&mut r, &[2, 5, 3])],
            12,
            seed,
            |t, v| t.slice(v[0], 1, 1, 2),
        ));
        cases.push(case(
            "window_partition",
            OpKind::WindowPartition,
            vec![rand_t(&mut r, &[1, 2, 4, 6])],
            48,
            seed,
            |t, v| t.window_partition(v[0], 2),
        ));
        cases.push(case(
            "window_merge",
            OpKind::WindowMerge,
            vec![rand_t(&mut r, &[6, 4, 2])],
            48,
            seed,
            |t, v| t.window_merge(v[0], 2, (1, 2, 4, 6)),
        ));
        let index = Arc::new(vec![2usize, 0, 2, 1, 3]);
        cases.push(case(
            "gather",
            OpKind::Gather,
            vec![rand_t(&mut r, &[4, 3])],
            15,
            seed,
            move |t, v| t.gather_rows(v[0], index.clone()),
        ));
        cases.push(case(
            "repeat_batch",
            OpKind::RepeatBatch,
            vec![rand_t(&mut r, &[2, 3])],
            18,
            seed,
            |t, v| t.repeat_batch(v[0], 3),
        ));
        cases.push(case(
            "ffn_gelu",
            OpKind::Linear,
            vec![
                rand_t(&mut r, &[4, 3]),
                rand_t(&mut r, &[8, 3]),
                rand_t(&mut r, &[8]),
                rand_t(&mut r, &[3, 8]),
                rand_t(&mut r, &[3]),
            ],
            12,
            seed,
            |t, v| {
                let h = t.linear(v[0], v[1], Some(v[2]))?;
                let h = t.gelu(h)?;
                t.linear(h, v[3], Some(v[4]))
            },
        ));
        cases
    }
}
