//! Expander/adaptor decoupler mapping student embeddings into the teacher's space.

use rand::Rng;
use rsd_autograd::nn::{self, Mode, RunningStats};
use rsd_autograd::{Graph, Param, Tensor, Var};

use crate::error::{Error, Result};
use crate::layers::{BatchNorm1d, Linear, Module};

pub const DEFAULT_EXPANSION: f64 = 4.0;

/// Expanded width `round(factor · d_s)`, at least 1.
pub fn expanded_dim(d_s: usize, factor: f64) -> usize {
    ((factor * d_s as f64).round() as usize).max(1)
}

/// `adaptor(gelu(batchnorm(expander(x))))`. Training only; never used at inference.
#[derive(Debug, Clone)]
pub struct AadModule {
    pub expander: Linear,
    pub norm: BatchNorm1d,
    pub adaptor: Linear,
    pub expansion_factor: f64,
}

impl AadModule {
    pub fn new<R: Rng + ?Sized>(d_s: usize, d_t: usize, expansion_factor: f64, rng: &mut R) -> Result<Self> {
        if !(expansion_factor.is_finite() && expansion_factor > 0.0) {
            return Err(Error::Config(format!("expansion factor must be positive, got {expansion_factor}")));
        }
        if d_s == 0 || d_t == 0 {
            return Err(Error::Config("decoupler dimensions must be positive".into()));
        }
        let d_e = expanded_dim(d_s, expansion_factor);
        Ok(Self {
            expander: Linear::new("aad.expander", d_s, d_e, rng),
            norm: BatchNorm1d::new("aad.norm", d_e),
            adaptor: Linear::new("aad.adaptor", d_e, d_t, rng),
            expansion_factor,
        })
    }

    pub fn d_s(&self) -> usize {
        self.expander.d_in()
    }

    pub fn d_e(&self) -> usize {
        self.expander.d_out()
    }

    pub fn d_t(&self) -> usize {
        self.adaptor.d_out()
    }

    pub fn forward<'g>(&mut self, g: &'g Graph, zs_raw: &Var<'g>, mode: Mode) -> Result<Var<'g>> {
        let shape = zs_raw.shape();
        if shape.len() != 2 || shape[1] != self.d_s() {
            return Err(Error::Config(format!(
                "decoupler expects B×{} input, got {shape:?}",
                self.d_s()
            )));
        }
        let vars = AadVars {
            w1: g.param(&self.expander.weight),
            b1: g.param(&self.expander.bias),
            gamma: g.param(&self.norm.gamma),
            beta: g.param(&self.norm.beta),
            w2: g.param(&self.adaptor.weight),
            b2: g.param(&self.adaptor.bias),
        };
        aad_forward_vars(zs_raw, &vars, &mut self.norm.stats, mode)
    }

    /// The parameters as plain tensors, in [`AadVars`] order.
    pub fn tensors(&self) -> Vec<Tensor> {
        self.params().into_iter().map(|p| p.value().clone()).collect()
    }
}

impl Module for AadModule {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.expander.params();
        v.extend(self.norm.params());
        v.extend(self.adaptor.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.expander.params_mut();
        v.extend(self.norm.params_mut());
        v.extend(self.adaptor.params_mut());
        v
    }
}

/// Decoupler weights already bound to a graph.
#[derive(Debug, Clone, Copy)]
pub struct AadVars<'g> {
    pub w1: Var<'g>,
    pub b1: Var<'g>,
    pub gamma: Var<'g>,
    pub beta: Var<'g>,
    pub w2: Var<'g>,
    pub b2: Var<'g>,
}

impl<'g> AadVars<'g> {
    pub fn from_slice(v: &[Var<'g>]) -> Self {
        Self {
            w1: v[0],
            b1: v[1],
            gamma: v[2],
            beta: v[3],
            w2: v[4],
            b2: v[5],
        }
    }
}

pub fn aad_forward_vars<'g>(
    x: &Var<'g>,
    p: &AadVars<'g>,
    stats: &mut RunningStats,
    mode: Mode,
) -> Result<Var<'g>> {
    let h_e = nn::affine(x, &p.w1, &p.b1)?;
    let h = nn::batchnorm_1d(&h_e, &p.gamma, &p.beta, stats, mode)?.gelu();
    Ok(nn::affine(&h, &p.w2, &p.b2)?)
}
