//! Composite layer functions built from tape primitives.

use crate::error::{Result, TensorError};
use crate::graph::Var;
use crate::tensor::Tensor;

pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Broadcasts a `[D]` vector over the leading axes of `like` (`[..., D]`).
pub fn broadcast_last<'g>(v: &Var<'g>, like: &[usize]) -> Result<Var<'g>> {
    let d = *like.last().ok_or(TensorError::Axis {
        op: "broadcast_last",
        axis: 0,
        rank: 0,
    })?;
    if v.shape() != [d] {
        return Err(TensorError::Shape {
            op: "broadcast_last",
            lhs: v.shape(),
            rhs: like.to_vec(),
        });
    }
    let mut shape = vec![1; like.len()];
    shape[like.len() - 1] = d;
    let mut out = v.reshape(&shape)?;
    for (axis, &n) in like[..like.len() - 1].iter().enumerate() {
        out = out.expand(axis, n)?;
    }
    Ok(out)
}

/// `x · w + b` over the last axis of `x`, with `w[in×out]`, `b[out]`.
pub fn affine<'g>(x: &Var<'g>, w: &Var<'g>, b: &Var<'g>) -> Result<Var<'g>> {
    let shape = x.shape();
    let d_in = *shape.last().unwrap_or(&0);
    let rows: usize = shape[..shape.len().saturating_sub(1)].iter().product();
    let flat = x.reshape(&[rows, d_in])?;
    let y = flat.matmul(w)?;
    let d_out = y.shape()[1];
    let y = y.add(&broadcast_last(b, &[rows, d_out])?)?;
    let mut out_shape = shape.clone();
    *out_shape.last_mut().expect("non-empty shape") = d_out;
    y.reshape(&out_shape)
}

/// Layer normalization over the last axis with affine `gamma`, `beta`.
pub fn layer_norm<'g>(x: &Var<'g>, gamma: &Var<'g>, beta: &Var<'g>, eps: f64) -> Result<Var<'g>> {
    let shape = x.shape();
    let axis = shape.len() - 1;
    let d = shape[axis];
    let mean = x.mean_axis(axis, true)?.expand(axis, d)?;
    let centered = x.sub(&mean)?;
    let std = centered
        .square()
        .mean_axis(axis, true)?
        .shift(eps)
        .sqrt()?
        .expand(axis, d)?;
    let xhat = centered.div(&std)?;
    xhat.mul(&broadcast_last(gamma, &shape)?)?
        .add(&broadcast_last(beta, &shape)?)
}

/// Running mean/variance tracked by 1-D batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            momentum: BATCHNORM_MOMENTUM,
        }
    }

    fn update(&mut self, batch_mean: &[f64], batch_var: &[f64]) {
        let m = self.momentum;
        for (r, b) in self.mean.iter_mut().zip(batch_mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in self.var.iter_mut().zip(batch_var) {
            *r = (1.0 - m) * *r + m * b;
        }
    }
}

/// Batch normalization of `x[B×D]` per column.
///
/// Training mode standardizes with batch statistics (population variance)
/// and folds them into `stats`; eval mode uses `stats` unchanged.
pub fn batchnorm_1d<'g>(
    x: &Var<'g>,
    gamma: &Var<'g>,
    beta: &Var<'g>,
    stats: &mut RunningStats,
    mode: Mode,
) -> Result<Var<'g>> {
    let shape = x.shape();
    if shape.len() != 2 || stats.mean.len() != shape[1] {
        return Err(TensorError::Shape {
            op: "batchnorm_1d",
            lhs: shape,
            rhs: vec![stats.mean.len()],
        });
    }
    let (b, d) = (shape[0], shape[1]);
    let xhat = match mode {
        Mode::Train => {
            if b < 2 {
                return Err(TensorError::BatchTooSmall {
                    op: "batchnorm_1d",
                    batch: b,
                });
            }
            let mean = x.mean_axis(0, true)?;
            let centered = x.sub(&mean.expand(0, b)?)?;
            let var = centered.square().mean_axis(0, true)?;
            stats.update(mean.value().data(), var.value().data());
            let std = var.shift(BATCHNORM_EPS).sqrt()?.expand(0, b)?;
            centered.div(&std)?
        }
        Mode::Eval => {
            let g = x.graph();
            let mean = g.constant(Tensor::from_vec(&[1, d], stats.mean.clone()));
            let std = g.constant(Tensor::from_vec(
                &[1, d],
                stats.var.iter().map(|v| (v + BATCHNORM_EPS).sqrt()).collect(),
            ));
            x.sub(&mean.expand(0, b)?)?.div(&std.expand(0, b)?)?
        }
    };
    xhat.mul(&broadcast_last(gamma, &shape)?)?
        .add(&broadcast_last(beta, &shape)?)
}
