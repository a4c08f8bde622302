//! Cross-entropy and the two classic distillation baselines.

use rsd_autograd::{Tensor, TensorError, Var};

use crate::error::{Error, Result};
use crate::layers::Linear;

fn check_rows(op: &'static str, a: &Var<'_>, b: &Var<'_>) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
        return Err(TensorError::Shape { op, lhs: sa, rhs: sb }.into());
    }
    Ok(())
}

/// Row-wise one-hot matrix for `labels`.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        t.data_mut()[i * classes + y] = 1.0;
    }
    Ok(t)
}

/// Mean negative log-softmax at the label.
pub fn ce_loss<'g>(logits: &Var<'g>, labels: &[usize]) -> Result<Var<'g>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() || shape[0] == 0 {
        return Err(TensorError::Shape {
            op: "ce_loss",
            lhs: shape,
            rhs: vec![labels.len()],
        }
        .into());
    }
    let target = logits.graph().constant(one_hot(labels, shape[1])?);
    let picked = logits.log_softmax().mul(&target)?.sum();
    Ok(picked.scale(-1.0 / labels.len() as f64))
}

/// `τ² · mean_b KL(softmax(zt/τ) ‖ softmax(zs/τ))`.
pub fn kd_kld_loss<'g>(zs: &Var<'g>, zt: &Var<'g>, tau: f64) -> Result<Var<'g>> {
    check_rows("kd_kld_loss", zs, zt)?;
    if zs.shape() != zt.shape() {
        return Err(TensorError::Shape {
            op: "kd_kld_loss",
            lhs: zs.shape(),
            rhs: zt.shape(),
        }
        .into());
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {tau}")));
    }
    let b = zs.shape()[0] as f64;
    let inv = 1.0 / tau;
    let log_pt = zt.scale(inv).log_softmax();
    let pt = zt.scale(inv).softmax();
    let log_ps = zs.scale(inv).log_softmax();
    let kl = pt.mul(&log_pt.sub(&log_ps)?)?.sum();
    Ok(kl.scale(tau * tau / b))
}

/// Mean squared difference between `ψ(fs)` and `ft`.
pub fn feature_mse_loss<'g>(fs: &Var<'g>, ft: &Var<'g>, psi: &Linear) -> Result<Var<'g>> {
    check_rows("feature_mse_loss", fs, ft)?;
    let mapped = psi.forward(fs.graph(), fs)?;
    if mapped.shape() != ft.shape() {
        return Err(TensorError::Shape {
            op: "feature_mse_loss",
            lhs: mapped.shape(),
            rhs: ft.shape(),
        }
        .into());
    }
    Ok(mapped.sub(ft)?.square().mean()?)
}
