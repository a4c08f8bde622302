//! Teacher-student Pearson cross-correlation and the redundancy suppression loss.

use rsd_autograd::{Tensor, TensorError, Var};

use crate::error::{Error, Result};

/// Added under the square root of each column's sum of squared deviations.
pub const STANDARDIZE_EPS: f64 = 1e-12;

/// Columns whose sum of squared deviations falls below this are reported as
/// degenerate.
const DEGENERATE_SS: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Teacher,
    Student,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Penultimate,
    Logits,
}

/// A `B×D` batch of activations from one network.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingBatch<'g> {
    pub values: Var<'g>,
    pub source: Source,
    pub layer: Layer,
}

impl<'g> EmbeddingBatch<'g> {
    pub fn new(values: Var<'g>, source: Source, layer: Layer) -> Result<Self> {
        let shape = values.shape();
        if shape.len() != 2 {
            return Err(Error::Config(format!("embedding batch must be B×D, got {shape:?}")));
        }
        if shape[0] < 2 {
            return Err(TensorError::BatchTooSmall {
                op: "embedding batch",
                batch: shape[0],
            }
            .into());
        }
        if !values.value().is_finite() {
            return Err(Error::Numerical(format!("{source:?} {layer:?} embeddings contain non-finite values")));
        }
        Ok(Self { values, source, layer })
    }

    pub fn teacher(values: Var<'g>, layer: Layer) -> Result<Self> {
        Self::new(values, Source::Teacher, layer)
    }

    pub fn student(values: Var<'g>, layer: Layer) -> Result<Self> {
        Self::new(values, Source::Student, layer)
    }

    pub fn batch_size(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[1]
    }
}

/// Indices of columns with (numerically) zero variance.
pub fn degenerate_columns(x: &Tensor) -> Vec<usize> {
    let (b, d) = (x.shape()[0], x.shape()[1]);
    (0..d)
        .filter(|&j| {
            let mean = (0..b).map(|i| x.at2(i, j)).sum::<f64>() / b as f64;
            let ss: f64 = (0..b).map(|i| (x.at2(i, j) - mean).powi(2)).sum();
            ss < DEGENERATE_SS
        })
        .collect()
}

/// Centers each column and scales it to unit L2 norm, so that
/// `standardize(a)ᵀ · standardize(b)` is the Pearson correlation matrix.
pub fn standardize_columns<'g>(x: &Var<'g>) -> Result<Var<'g>> {
    let shape = x.shape();
    if shape.len() != 2 {
        return Err(Error::Config(format!("standardize_columns needs B×D, got {shape:?}")));
    }
    let b = shape[0];
    if b < 2 {
        return Err(TensorError::BatchTooSmall {
            op: "standardize_columns",
            batch: b,
        }
        .into());
    }
    let dead = degenerate_columns(&x.value());
    if !dead.is_empty() {
        log::warn!("standardize_columns: constant columns {dead:?} yield near-zero correlations");
    }
    let centered = x.sub(&x.mean_axis(0, true)?.expand(0, b)?)?;
    let norm = centered
        .square()
        .sum_axis(0, true)?
        .shift(STANDARDIZE_EPS)
        .sqrt()?
        .expand(0, b)?;
    Ok(centered.div(&norm)?)
}

/// `D×D` Pearson cross-correlation between teacher and student units.
#[derive(Debug, Clone)]
pub struct CorrelationMatrix<'g> {
    pub p: Var<'g>,
    pub batch_size: usize,
    pub degenerate_teacher: Vec<usize>,
    pub degenerate_student: Vec<usize>,
}

impl CorrelationMatrix<'_> {
    pub fn dim(&self) -> usize {
        self.p.shape()[0]
    }

    pub fn values(&self) -> Tensor {
        (*self.p.value()).clone()
    }
}

/// `P_ij` = correlation of teacher unit `i` with student unit `j` across the batch.
pub fn pearson_matrix<'g>(zt: &EmbeddingBatch<'g>, zs: &EmbeddingBatch<'g>) -> Result<CorrelationMatrix<'g>> {
    if zt.dim() != zs.dim() {
        return Err(Error::AdaptStudentFirst {
            teacher: zt.dim(),
            student: zs.dim(),
        });
    }
    if zt.batch_size() != zs.batch_size() {
        return Err(Error::Config(format!(
            "teacher batch {} and student batch {} differ",
            zt.batch_size(),
            zs.batch_size()
        )));
    }
    let t = standardize_columns(&zt.values)?;
    let s = standardize_columns(&zs.values)?;
    Ok(CorrelationMatrix {
        p: t.transpose()?.matmul(&s)?,
        batch_size: zt.batch_size(),
        degenerate_teacher: degenerate_columns(&zt.values.value()),
        degenerate_student: degenerate_columns(&zs.values.value()),
    })
}

/// The identity target: ones on the diagonal (invariance), zeros elsewhere
/// (decorrelation).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TargetMatrix {
    pub dim: usize,
}

impl TargetMatrix {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        if i == j {
            1.0
        } else {
            0.0
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::eye(self.dim)
    }
}

/// The loss together with its diagonal and off-diagonal shares
/// (`total = diag + offdiag`).
#[derive(Debug, Clone, Copy)]
pub struct RsdLoss<'g> {
    pub total: Var<'g>,
    pub diag: f64,
    pub offdiag: f64,
}

/// Mean over all `D²` entries of `w_ij (P_ij − T_ij)²` with `w = 1` on the
/// diagonal and `kappa` off it.
pub fn rsd_loss<'g>(p: &CorrelationMatrix<'g>, kappa: f64) -> Result<RsdLoss<'g>> {
    let shape = p.p.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(Error::Config(format!("correlation matrix must be square, got {shape:?}")));
    }
    let d = shape[0];
    let g = p.p.graph();
    let target = TargetMatrix { dim: d };
    let mut weights = Tensor::full(&[d, d], kappa);
    for i in 0..d {
        weights.data_mut()[i * d + i] = 1.0;
    }
    let sq = p.p.sub(&g.constant(target.to_tensor()))?.square();
    let weighted = sq.mul(&g.constant(weights))?;

    let sqv = sq.value();
    let denom = (d * d) as f64;
    let mut diag = 0.0;
    let mut off = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i == j {
                diag += sqv.at2(i, j);
            } else {
                off += sqv.at2(i, j);
            }
        }
    }
    Ok(RsdLoss {
        total: weighted.mean()?,
        diag: diag / denom,
        offdiag: kappa * off / denom,
    })
}

/// RSD applied straight to teacher and student logits, without a decoupler.
pub fn rsd_on_logits<'g>(zt_logits: &Var<'g>, zs_logits: &Var<'g>, kappa: f64) -> Result<RsdLoss<'g>> {
    let (ct, cs) = (zt_logits.shape(), zs_logits.shape());
    if ct.len() != 2 || cs.len() != 2 || ct[1] != cs[1] {
        return Err(TensorError::Shape {
            op: "rsd_on_logits",
            lhs: ct,
            rhs: cs,
        }
        .into());
    }
    let zt = EmbeddingBatch::teacher(*zt_logits, Layer::Logits)?;
    let zs = EmbeddingBatch::student(*zs_logits, Layer::Logits)?;
    rsd_loss(&pearson_matrix(&zt, &zs)?, kappa)
}
