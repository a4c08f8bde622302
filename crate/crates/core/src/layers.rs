//! Parameter-holding building blocks shared by the models and the decoupler.

use rand::Rng;
use rsd_autograd::nn::{self, Mode, RunningStats};
use rsd_autograd::{Graph, Param, Tensor, Var};

use crate::error::Result;

/// Anything that owns parameters, visited in a fixed order.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }
}

fn uniform_init<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

/// Affine map over the last axis: `x · W + b`, `W[in×out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::new(format!("{name}.weight"), uniform_init(&[d_in, d_out], d_in, rng)),
            bias: Param::new(format!("{name}.bias"), uniform_init(&[d_out], d_in, rng)),
        }
    }

    pub fn from_tensors(name: &str, weight: Tensor, bias: Tensor) -> Self {
        Self {
            weight: Param::new(format!("{name}.weight"), weight),
            bias: Param::new(format!("{name}.bias"), bias),
        }
    }

    pub fn identity(name: &str, d: usize) -> Self {
        Self::from_tensors(name, Tensor::eye(d), Tensor::zeros(&[d]))
    }

    pub fn d_in(&self) -> usize {
        self.weight.value().shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.value().shape()[1]
    }

    pub fn forward<'g>(&self, g: &'g Graph, x: &Var<'g>) -> Result<Var<'g>> {
        Ok(nn::affine(x, &g.param(&self.weight), &g.param(&self.bias))?)
    }

    /// Forward on plain values, outside any tape.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let g = Graph::new();
        let y = self.forward(&g, &g.constant(x.clone()))?;
        let v = y.value();
        Ok((*v).clone())
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Param,
    pub beta: Param,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(name: &str, d: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), Tensor::ones(&[d])),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[d])),
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph, x: &Var<'g>) -> Result<Var<'g>> {
        Ok(nn::layer_norm(x, &g.param(&self.gamma), &g.param(&self.beta), Self::EPS)?)
    }
}

impl Module for LayerNorm {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: Param,
    pub beta: Param,
    pub stats: RunningStats,
}

impl BatchNorm1d {
    pub fn new(name: &str, d: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), Tensor::ones(&[d])),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[d])),
            stats: RunningStats::new(d),
        }
    }

    pub fn forward<'g>(&mut self, g: &'g Graph, x: &Var<'g>, mode: Mode) -> Result<Var<'g>> {
        Ok(nn::batchnorm_1d(
            x,
            &g.param(&self.gamma),
            &g.param(&self.beta),
            &mut self.stats,
            mode,
        )?)
    }
}

impl Module for BatchNorm1d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        Self {
            weight: Param::new(
                format!("{name}.weight"),
                uniform_init(&[c_out, c_in, kernel, kernel], fan_in, rng),
            ),
            bias: Param::new(format!("{name}.bias"), uniform_init(&[c_out], fan_in, rng)),
            stride,
            padding,
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph, x: &Var<'g>) -> Result<Var<'g>> {
        Ok(x.conv2d(&g.param(&self.weight), Some(&g.param(&self.bias)), self.stride, self.padding)?)
    }
}

impl Module for Conv2d {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}
