use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsd_autograd::gradcheck::{check_gradients, GradCheck, FD_STEP};
use rsd_autograd::nn::{Mode, RunningStats};
use rsd_autograd::{Graph, Tensor, TensorError, Var};
use serde::{Deserialize, Serialize};

use super::aad::{aad_forward_vars, AadModule, AadVars, DEFAULT_EXPANSION};
use super::baseline::ce_loss;
use super::correlation::{pearson_matrix, rsd_loss, EmbeddingBatch, Layer};
use crate::error::{Error, Result};

pub const DEFAULT_KAPPA: f64 = 5e-3;
pub const DEFAULT_LAMBDA: f64 = 2.0;
pub const DEFAULT_TEMPERATURE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ApplyTo {
    #[default]
    Penultimate,
    Logits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsdConfig {
    pub lambda: f64,
    pub kappa: f64,
    pub expansion_factor: f64,
    pub temperature: f64,
    pub apply_to: ApplyTo,
}

impl Default for RsdConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            kappa: DEFAULT_KAPPA,
            expansion_factor: DEFAULT_EXPANSION,
            temperature: DEFAULT_TEMPERATURE,
            apply_to: ApplyTo::Penultimate,
        }
    }
}

impl RsdConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")))
            }
        };
        nonneg("lambda", self.lambda)?;
        nonneg("kappa", self.kappa)?;
        if !(self.expansion_factor.is_finite() && self.expansion_factor > 0.0) {
            return Err(Error::Config(format!(
                "expansion_factor must be positive, got {}",
                self.expansion_factor
            )));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        Ok(())
    }
}

/// Per-step loss terms as plain numbers, as logged to the metrics stream.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub rsd_diag: f64,
    pub rsd_offdiag: f64,
    pub total: f64,
    /// KD or feature-MSE term of a baseline objective, already weighted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<f64>,
}

/// `CE(logits_s, labels) + λ · rsd_loss(P(zt, aad(zs_raw)), κ)`.
///
/// Without a decoupler `zs_raw` must already have the teacher's width. With
/// `λ = 0` the distillation branch is not built at all, so the graph and the
/// gradients are exactly those of plain cross-entropy.
pub fn full_objective<'g>(
    logits_s: &Var<'g>,
    labels: &[usize],
    zt: &Var<'g>,
    zs_raw: &Var<'g>,
    aad: Option<&mut AadModule>,
    cfg: &RsdConfig,
    mode: Mode,
) -> Result<(Var<'g>, LossBreakdown)> {
    cfg.validate()?;
    let b = logits_s.shape()[0];
    if zt.shape()[0] != b || zs_raw.shape()[0] != b || labels.len() != b {
        return Err(Error::Config(format!(
            "inconsistent batch sizes: logits {b}, labels {}, teacher {}, student {}",
            labels.len(),
            zt.shape()[0],
            zs_raw.shape()[0]
        )));
    }
    let ce = ce_loss(logits_s, labels)?;
    if cfg.lambda == 0.0 {
        let v = ce.item();
        return Ok((
            ce,
            LossBreakdown {
                ce: v,
                total: v,
                ..Default::default()
            },
        ));
    }
    let g = logits_s.graph();
    let zs = match aad {
        Some(m) => m.forward(g, zs_raw, mode)?,
        None => *zs_raw,
    };
    let layer = match cfg.apply_to {
        ApplyTo::Penultimate => Layer::Penultimate,
        ApplyTo::Logits => Layer::Logits,
    };
    let p = pearson_matrix(&EmbeddingBatch::teacher(*zt, layer)?, &EmbeddingBatch::student(zs, layer)?)?;
    let rsd = rsd_loss(&p, cfg.kappa)?;
    let total = ce.add(&rsd.total.scale(cfg.lambda))?;
    let breakdown = LossBreakdown {
        ce: ce.item(),
        rsd_diag: rsd.diag,
        rsd_offdiag: rsd.offdiag,
        total: total.item(),
        baseline: None,
    };
    Ok((total, breakdown))
}

fn to_tensor_error(e: Error) -> TensorError {
    match e {
        Error::Tensor(t) => t,
        other => TensorError::Domain {
            op: "full_objective",
            msg: other.to_string(),
        },
    }
}

/// Finite-difference check of the complete objective, differentiating with
/// respect to student logits, raw student embeddings and every decoupler
/// parameter. Batch normalization runs in training mode. Batch size and
/// widths are drawn from `seed`.
pub fn objective_gradcheck(seed: u64, kappa: f64, lambda: f64) -> Result<GradCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, d_s, d_t, classes) = (
        rng.gen_range(4..=9),
        rng.gen_range(2..=5),
        rng.gen_range(2..=5),
        rng.gen_range(2..=4),
    );
    let aad = AadModule::new(d_s, d_t, 2.0, &mut rng)?;
    let zt = Tensor::randn(&[b, d_t], &mut rng);
    let labels: Vec<usize> = (0..b).map(|i| i % classes).collect();
    let mut inputs = vec![Tensor::randn(&[b, classes], &mut rng), Tensor::randn(&[b, d_s], &mut rng)];
    let mut params = aad.tensors();
    // Perturb the normalization affine so its gradient is not trivially symmetric.
    for t in params.iter_mut().skip(2).take(2) {
        let noise = Tensor::uniform(t.shape(), -0.3, 0.3, &mut rng);
        t.add_assign(&noise);
    }
    inputs.extend(params);
    let d_e = aad.d_e();
    let cfg = RsdConfig {
        lambda,
        kappa,
        ..RsdConfig::default()
    };
    let report = check_gradients("full_objective", &inputs, FD_STEP, move |g: &Graph, v| {
        let zt_v = g.constant(zt.clone());
        let mut stats = RunningStats::new(d_e);
        let zs = aad_forward_vars(&v[1], &AadVars::from_slice(&v[2..]), &mut stats, Mode::Train)
            .map_err(to_tensor_error)?;
        let (total, _) =
            full_objective(&v[0], &labels, &zt_v, &zs, None, &cfg, Mode::Train).map_err(to_tensor_error)?;
        Ok(total)
    })?;
    Ok(report)
}
