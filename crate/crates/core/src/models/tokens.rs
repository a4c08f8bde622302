//! Patch-token models: single-head attention transformer and MLP mixer.

use rand::Rng;
use rsd_autograd::{Graph, Param, Tensor, Var};

use super::spec::ModelSpec;
use crate::error::Result;
use crate::layers::{LayerNorm, Linear, Module};

/// `[B, C, H, W]` → `[B, N, C·p·p]`, patches in row-major grid order.
pub fn patchify<'g>(x: &Var<'g>, p: usize) -> Result<Var<'g>> {
    let s = x.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (gh, gw) = (h / p, w / p);
    Ok(x.reshape(&[b, c, gh, p, gw, p])?
        .permute(&[0, 2, 4, 1, 3, 5])?
        .reshape(&[b, gh * gw, c * p * p])?)
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(name: &str, d: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            fc1: Linear::new(&format!("{name}.fc1"), d, hidden, rng),
            fc2: Linear::new(&format!("{name}.fc2"), hidden, d, rng),
        }
    }

    pub fn forward<'g>(&self, g: &'g Graph, x: &Var<'g>) -> Result<Var<'g>> {
        let h = self.fc1.forward(g, x)?.gelu();
        self.fc2.forward(g, &h)
    }
}

impl Module for Mlp {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.fc1.params();
        v.extend(self.fc2.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.fc1.params_mut();
        v.extend(self.fc2.params_mut());
        v
    }
}

#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub norm1: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub proj: Linear,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

impl AttentionBlock {
    fn new<R: Rng + ?Sized>(name: &str, d: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            norm1: LayerNorm::new(&format!("{name}.norm1"), d),
            query: Linear::new(&format!("{name}.query"), d, d, rng),
            key: Linear::new(&format!("{name}.key"), d, d, rng),
            value: Linear::new(&format!("{name}.value"), d, d, rng),
            proj: Linear::new(&format!("{name}.proj"), d, d, rng),
            norm2: LayerNorm::new(&format!("{name}.norm2"), d),
            mlp: Mlp::new(&format!("{name}.mlp"), d, hidden, rng),
        }
    }

    fn forward<'g>(&self, g: &'g Graph, x: &Var<'g>) -> Result<Var<'g>> {
        let d = x.shape()[2];
        let h = self.norm1.forward(g, x)?;
        let q = self.query.forward(g, &h)?;
        let k = self.key.forward(g, &h)?;
        let v = self.value.forward(g, &h)?;
        let attn = q.bmm(&k.transpose()?)?.scale(1.0 / (d as f64).sqrt()).softmax();
        let mixed = self.proj.forward(g, &attn.bmm(&v)?)?;
        let x = x.add(&mixed)?;
        let h = self.mlp.forward(g, &self.norm2.forward(g, &x)?)?;
        Ok(x.add(&h)?)
    }
}

impl Module for AttentionBlock {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.norm1.params();
        for l in [&self.query, &self.key, &self.value, &self.proj] {
            v.extend(l.params());
        }
        v.extend(self.norm2.params());
        v.extend(self.mlp.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.norm1.params_mut();
        for l in [&mut self.query, &mut self.key, &mut self.value, &mut self.proj] {
            v.extend(l.params_mut());
        }
        v.extend(self.norm2.params_mut());
        v.extend(self.mlp.params_mut());
        v
    }
}

#[derive(Debug, Clone)]
pub struct MixerBlock {
    pub norm1: LayerNorm,
    pub token_mlp: Mlp,
    pub norm2: LayerNorm,
    pub channel_mlp: Mlp,
}

impl MixerBlock {
    fn new<R: Rng + ?Sized>(name: &str, d: usize, tokens: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            norm1: LayerNorm::new(&format!("{name}.norm1"), d),
            token_mlp: Mlp::new(&format!("{name}.token_mlp"), tokens, hidden, rng),
            norm2: LayerNorm::new(&format!("{name}.norm2"), d),
            channel_mlp: Mlp::new(&format!("{name}.channel_mlp"), d, hidden, rng),
        }
    }

    fn forward<'g>(&self, g: &'g Graph, x: &Var<'g>) -> Result<Var<'g>> {
        let h = self.norm1.forward(g, x)?.transpose()?;
        let mixed = self.token_mlp.forward(g, &h)?.transpose()?;
        let x = x.add(&mixed)?;
        let h = self.channel_mlp.forward(g, &self.norm2.forward(g, &x)?)?;
        Ok(x.add(&h)?)
    }
}

impl Module for MixerBlock {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.norm1.params();
        v.extend(self.token_mlp.params());
        v.extend(self.norm2.params());
        v.extend(self.channel_mlp.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.norm1.params_mut();
        v.extend(self.token_mlp.params_mut());
        v.extend(self.norm2.params_mut());
        v.extend(self.channel_mlp.params_mut());
        v
    }
}

#[derive(Debug, Clone)]
pub enum Blocks {
    Attention(Vec<AttentionBlock>),
    Mixer(Vec<MixerBlock>),
}

/// Patch embedding, residual blocks, final norm, and mean pooling over tokens.
#[derive(Debug, Clone)]
pub struct TokenBody {
    pub patch_size: usize,
    pub embed: Linear,
    /// Learned positional embedding `[N, D]`; transformer only.
    pub pos: Option<Param>,
    pub blocks: Blocks,
    pub norm: LayerNorm,
}

impl TokenBody {
    pub fn transformer<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Self {
        let d = spec.embed_dim;
        let embed = Linear::new("embed", spec.patch_dim(), d, rng);
        let pos = Param::new("pos", Tensor::randn(&[spec.num_patches(), d], rng).map(|v| 0.02 * v));
        let blocks = (0..spec.depth)
            .map(|i| AttentionBlock::new(&format!("block{i}"), d, spec.width, rng))
            .collect();
        Self {
            patch_size: spec.patch_size,
            embed,
            pos: Some(pos),
            blocks: Blocks::Attention(blocks),
            norm: LayerNorm::new("norm", d),
        }
    }

    pub fn mixer<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Self {
        let d = spec.embed_dim;
        let embed = Linear::new("embed", spec.patch_dim(), d, rng);
        let blocks = (0..spec.depth)
            .map(|i| MixerBlock::new(&format!("block{i}"), d, spec.num_patches(), spec.width, rng))
            .collect();
        Self {
            patch_size: spec.patch_size,
            embed,
            pos: None,
            blocks: Blocks::Mixer(blocks),
            norm: LayerNorm::new("norm", d),
        }
    }

    /// Pooled embedding; each block's output is pushed onto `taps`.
    pub fn forward<'g>(&self, g: &'g Graph, x: &Var<'g>, taps: &mut Vec<Var<'g>>) -> Result<Var<'g>> {
        let b = x.shape()[0];
        let mut h = self.embed.forward(g, &patchify(x, self.patch_size)?)?;
        if let Some(pos) = &self.pos {
            let s = pos.value().shape().to_vec();
            let p = g.param(pos).reshape(&[1, s[0], s[1]])?.expand(0, b)?;
            h = h.add(&p)?;
        }
        match &self.blocks {
            Blocks::Attention(bs) => {
                for blk in bs {
                    h = blk.forward(g, &h)?;
                    taps.push(h);
                }
            }
            Blocks::Mixer(bs) => {
                for blk in bs {
                    h = blk.forward(g, &h)?;
                    taps.push(h);
                }
            }
        }
        Ok(self.norm.forward(g, &h)?.mean_axis(1, false)?)
    }
}

impl Module for TokenBody {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.embed.params();
        v.extend(self.pos.iter());
        match &self.blocks {
            Blocks::Attention(bs) => bs.iter().for_each(|b| v.extend(b.params())),
            Blocks::Mixer(bs) => bs.iter().for_each(|b| v.extend(b.params())),
        }
        v.extend(self.norm.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.embed.params_mut();
        v.extend(self.pos.iter_mut());
        match &mut self.blocks {
            Blocks::Attention(bs) => bs.iter_mut().for_each(|b| v.extend(b.params_mut())),
            Blocks::Mixer(bs) => bs.iter_mut().for_each(|b| v.extend(b.params_mut())),
        }
        v.extend(self.norm.params_mut());
        v
    }
}
