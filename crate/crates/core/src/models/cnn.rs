use rand::Rng;
use rsd_autograd::{Graph, Param, Var};

use super::spec::ModelSpec;
use crate::error::Result;
use crate::layers::{Conv2d, Module};

/// Stride-2 3×3 conv + ReLU blocks followed by global average pooling.
#[derive(Debug, Clone)]
pub struct CnnBody {
    pub blocks: Vec<Conv2d>,
}

impl CnnBody {
    pub fn new<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Self {
        let mut c_in = spec.in_channels;
        let blocks = spec
            .cnn_channels()
            .into_iter()
            .enumerate()
            .map(|(i, c_out)| {
                let conv = Conv2d::new(&format!("conv{i}"), c_in, c_out, 3, 2, 1, rng);
                c_in = c_out;
                conv
            })
            .collect();
        Self { blocks }
    }

    /// Pooled embedding; each block's output is pushed onto `taps`.
    pub fn forward<'g>(&self, g: &'g Graph, x: &Var<'g>, taps: &mut Vec<Var<'g>>) -> Result<Var<'g>> {
        let mut h = *x;
        for conv in &self.blocks {
            h = conv.forward(g, &h)?.relu();
            taps.push(h);
        }
        let s = h.shape();
        let pooled = h.reshape(&[s[0], s[1], s[2] * s[3]])?.mean_axis(2, false)?;
        Ok(pooled)
    }
}

impl Module for CnnBody {
    fn params(&self) -> Vec<&Param> {
        self.blocks.iter().flat_map(|b| b.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.blocks.iter_mut().flat_map(|b| b.params_mut()).collect()
    }
}
