//! Central finite-difference gradient checking.
//!
//! The numeric side only ever runs forward passes on constant inputs, so it
//! shares no code with the backward rules it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::nn::{self, Mode, RunningStats};
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Entries whose analytic gradient is at most this large are compared in
/// absolute terms instead.
pub const MIN_ANALYTIC: f64 = 1e-8;
const SMALL_ABS_TOLERANCE: f64 = 1e-6;

/// Outcome of one finite-difference comparison.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Largest |analytic − numeric| among entries with |analytic| ≤ [`MIN_ANALYTIC`].
    pub max_small_abs_err: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err < tol && self.max_small_abs_err < SMALL_ABS_TOLERANCE && self.checked > 0
    }

    /// Folds several trials of the same op into one line.
    pub fn merge(name: impl Into<String>, parts: &[GradCheck]) -> GradCheck {
        GradCheck {
            name: name.into(),
            max_rel_err: parts.iter().map(|p| p.max_rel_err).fold(0.0, f64::max),
            max_small_abs_err: parts.iter().map(|p| p.max_small_abs_err).fold(0.0, f64::max),
            checked: parts.iter().map(|p| p.checked).sum(),
        }
    }
}

/// Compares the analytic gradient of the scalar `f(inputs)` against central
/// differences with step `h`.
pub fn check_gradients<F>(name: &str, inputs: &[Tensor], h: f64, f: F) -> Result<GradCheck>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let graph = Graph::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| graph.leaf(t.clone())).collect();
    let root = f(&graph, &vars)?;
    graph.backward(root)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| graph.grad(*v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let g = Graph::new();
        let vs: Vec<Var<'_>> = perturbed.iter().map(|t| g.constant(t.clone())).collect();
        Ok(f(&g, &vs)?.item())
    };

    let mut report = GradCheck {
        name: name.to_string(),
        max_rel_err: 0.0,
        max_small_abs_err: 0.0,
        checked: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let x0 = input.data()[j];
            work[i].data_mut()[j] = x0 + h;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = x0 - h;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = x0;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[i].data()[j];
            if a.abs() > MIN_ANALYTIC {
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs());
                report.max_rel_err = report.max_rel_err.max(rel);
                report.checked += 1;
            } else {
                report.max_small_abs_err = report.max_small_abs_err.max((a - numeric).abs());
            }
        }
    }
    Ok(report)
}

fn rand_shape(rng: &mut ChaCha8Rng, rank: usize, lo: usize, hi: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.gen_range(lo..=hi)).collect()
}

/// Uniform samples with magnitude at least `gap`, for ops with a kink at 0.
fn away_from_zero(shape: &[usize], gap: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| {
            let m = rng.gen_range(gap..2.0);
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data)
}

/// Weighted sum against a fixed random tensor, so every output entry carries
/// a distinct weight into the scalar root.
fn project<'g>(y: Var<'g>, rng: &mut ChaCha8Rng) -> Result<Var<'g>> {
    let w = Tensor::randn(&y.shape(), rng);
    Ok(y.mul(&y.graph().constant(w))?.sum())
}

type Objective = Box<dyn for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>>;
type Trial = (Vec<Tensor>, Objective);

fn boxed<F>(f: F) -> Objective
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>> + 'static,
{
    Box::new(f)
}

fn project_seeded(y: Var<'_>, seed: u64) -> Result<Var<'_>> {
    project(y, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Builds one random trial for `op`. Each op returns its inputs and a
/// closure producing a scalar.
fn trial(op: &str, rng: &mut ChaCha8Rng) -> Trial {
    let seed: u64 = rng.gen();
    macro_rules! unary {
        ($inputs:expr, |$x:ident| $body:expr) => {
            ($inputs, boxed(move |_g, v| {
                let $x = v[0];
                project_seeded($body, seed)
            }))
        };
    }
    macro_rules! binary {
        ($inputs:expr, |$a:ident, $b:ident| $body:expr) => {
            ($inputs, boxed(move |_g, v| {
                let ($a, $b) = (v[0], v[1]);
                project_seeded($body, seed)
            }))
        };
    }
    let rank = rng.gen_range(1..=3);
    let mut shape = rand_shape(rng, rank, 1, 4);
    // softmax rows of length 1 have identically zero gradient
    shape[rank - 1] = shape[rank - 1].max(2);
    match op {
        "add" => binary!(vec![Tensor::randn(&shape, rng), Tensor::randn(&shape, rng)], |a, b| a.add(&b)?),
        "sub" => binary!(vec![Tensor::randn(&shape, rng), Tensor::randn(&shape, rng)], |a, b| a.sub(&b)?),
        "mul" => binary!(vec![Tensor::randn(&shape, rng), Tensor::randn(&shape, rng)], |a, b| a.mul(&b)?),
        "div" => binary!(
            vec![Tensor::randn(&shape, rng), away_from_zero(&shape, 0.5, rng)],
            |a, b| a.div(&b)?
        ),
        "mul_scalar" => binary!(vec![Tensor::randn(&shape, rng), Tensor::randn(&[], rng)], |a, b| b.mul(&a)?),
        "neg" => unary!(vec![Tensor::randn(&shape, rng)], |x| x.neg()),
        "exp" => unary!(vec![Tensor::randn(&shape, rng)], |x| x.exp()),
        "log" => unary!(vec![Tensor::uniform(&shape, 0.2, 3.0, rng)], |x| x.log()?),
        "sqrt" => unary!(vec![Tensor::uniform(&shape, 0.2, 3.0, rng)], |x| x.sqrt()?),
        "pow" => unary!(vec![Tensor::uniform(&shape, 0.2, 3.0, rng)], |x| x.powf(1.7)?),
        "scale" => unary!(vec![Tensor::randn(&shape, rng)], |x| x.scale(-2.5).shift(0.3)),
        "relu" => unary!(vec![away_from_zero(&shape, 0.01, rng)], |x| x.relu()),
        "gelu" => unary!(vec![Tensor::uniform(&shape, -4.0, 4.0, rng)], |x| x.gelu()),
        "tanh" => unary!(vec![Tensor::randn(&shape, rng)], |x| x.tanh()),
        "softmax" => unary!(vec![Tensor::randn(&shape, rng)], |x| x.softmax()),
        "log_softmax" => unary!(vec![Tensor::randn(&shape, rng)], |x| x.log_softmax()),
        "sum" => (vec![Tensor::randn(&shape, rng)], boxed(|_g, v| Ok(v[0].square().sum()))),
        "mean" => (vec![Tensor::randn(&shape, rng)], boxed(|_g, v| v[0].exp().mean())),
        "sum_axis" => {
            let axis = rng.gen_range(0..rank);
            unary!(vec![Tensor::randn(&shape, rng)], |x| x.sum_axis(axis, false)?)
        }
        "mean_axis" => {
            let axis = rng.gen_range(0..rank);
            unary!(vec![Tensor::randn(&shape, rng)], |x| x.mean_axis(axis, true)?)
        }
        "var_axis" => {
            let mut s = shape.clone();
            let axis = rng.gen_range(0..rank);
            s[axis] = s[axis].max(2);
            unary!(vec![Tensor::randn(&s, rng)], |x| x.var_axis(axis, false)?)
        }
        "expand" => {
            let mut s = shape.clone();
            let axis = rng.gen_range(0..rank);
            s[axis] = 1;
            let n = rng.gen_range(2..4);
            unary!(vec![Tensor::randn(&s, rng)], |x| x.expand(axis, n)?)
        }
        "reshape" => {
            let numel: usize = shape.iter().product();
            unary!(vec![Tensor::randn(&shape, rng)], |x| x.reshape(&[numel])?)
        }
        "permute" => {
            let s = rand_shape(rng, 3, 1, 4);
            unary!(vec![Tensor::randn(&s, rng)], |x| x.permute(&[2, 0, 1])?)
        }
        "matmul" => {
            let (m, k, n) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5));
            binary!(vec![Tensor::randn(&[m, k], rng), Tensor::randn(&[k, n], rng)], |a, b| a.matmul(&b)?)
        }
        "bmm" => {
            let (bs, m, k, n) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4));
            binary!(
                vec![Tensor::randn(&[bs, m, k], rng), Tensor::randn(&[bs, k, n], rng)],
                |a, b| a.bmm(&b)?
            )
        }
        "conv2d" => {
            let (c, o) = (rng.gen_range(1..3), rng.gen_range(1..3));
            let (h, w) = (rng.gen_range(3..6), rng.gen_range(3..6));
            let stride = rng.gen_range(1..3);
            let padding = rng.gen_range(0..2);
            let inputs = vec![
                Tensor::randn(&[2, c, h, w], rng),
                Tensor::randn(&[o, c, 3, 3], rng),
                Tensor::randn(&[o], rng),
            ];
            (inputs, boxed(move |_g, v| {
                project_seeded(v[0].conv2d(&v[1], Some(&v[2]), stride, padding)?, seed)
            }))
        }
        "batchnorm_1d" => {
            let (b, d) = (rng.gen_range(2..6), rng.gen_range(1..4));
            let inputs = vec![
                Tensor::randn(&[b, d], rng),
                Tensor::uniform(&[d], 0.5, 1.5, rng),
                Tensor::randn(&[d], rng),
            ];
            (inputs, boxed(move |_g, v| {
                let mut stats = RunningStats::new(d);
                project_seeded(nn::batchnorm_1d(&v[0], &v[1], &v[2], &mut stats, Mode::Train)?, seed)
            }))
        }
        "layer_norm" => {
            let (n, d) = (rng.gen_range(1..4), rng.gen_range(2..5));
            let inputs = vec![
                Tensor::randn(&[n, d], rng),
                Tensor::uniform(&[d], 0.5, 1.5, rng),
                Tensor::randn(&[d], rng),
            ];
            (inputs, boxed(move |_g, v| {
                project_seeded(nn::layer_norm(&v[0], &v[1], &v[2], 1e-5)?, seed)
            }))
        }
        "affine" => {
            let (n, i, o) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4));
            let inputs = vec![
                Tensor::randn(&[2, n, i], rng),
                Tensor::randn(&[i, o], rng),
                Tensor::randn(&[o], rng),
            ];
            (inputs, boxed(move |_g, v| {
                project_seeded(nn::affine(&v[0], &v[1], &v[2])?, seed)
            }))
        }
        other => panic!("no gradcheck trial for op {other}"),
    }
}

/// Every differentiable primitive covered by [`primitive_suite`].
pub const PRIMITIVE_OPS: &[&str] = &[
    "add", "sub", "mul", "div", "mul_scalar", "neg", "exp", "log", "sqrt", "pow", "scale", "relu",
    "gelu", "tanh", "softmax", "log_softmax", "sum", "mean", "sum_axis", "mean_axis", "var_axis",
    "expand", "reshape", "permute", "matmul", "bmm", "conv2d", "batchnorm_1d", "layer_norm", "affine",
];

/// Runs `trials` seeded random instances of every primitive op.
pub fn primitive_suite(seed: u64, trials: usize) -> Result<Vec<GradCheck>> {
    let mut out = Vec::with_capacity(PRIMITIVE_OPS.len());
    for (k, op) in PRIMITIVE_OPS.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64 * 7919));
        let mut parts = Vec::with_capacity(trials);
        for t in 0..trials {
            let (inputs, f) = trial(op, &mut rng);
            parts.push(check_gradients(&format!("{op}#{t}"), &inputs, FD_STEP, f)?);
        }
        out.push(GradCheck::merge(*op, &parts));
    }
    Ok(out)
}
