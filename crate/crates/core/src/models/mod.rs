//! Tiny CNN, transformer, and mixer classifiers exposing penultimate embeddings.

mod cnn;
mod spec;
mod tokens;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rsd_autograd::nn::Mode;
use rsd_autograd::record::{read_record, write_record};
use rsd_autograd::{Graph, Param, Tensor, TensorError, Var};
use sha2::{Digest, Sha256};

pub use cnn::CnnBody;
pub use spec::{Family, ModelSpec, DEFAULT_EMBED_DIM, NARROW_EMBED_DIM};
pub use tokens::{patchify, AttentionBlock, Blocks, MixerBlock, Mlp, TokenBody};

use crate::error::{Error, Result};
use crate::layers::{Linear, Module};

pub const PENULTIMATE_TAP: &str = "penultimate";

#[derive(Debug, Clone)]
pub enum Body {
    Cnn(CnnBody),
    Tokens(TokenBody),
}

/// Logits and the embedding fed to the classifier, from one pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput<'g> {
    pub logits: Var<'g>,
    pub penultimate: Var<'g>,
}

#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    pub body: Body,
    pub head: Linear,
}

impl Model {
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let body = match spec.family {
            Family::Cnn => Body::Cnn(CnnBody::new(spec, &mut rng)),
            Family::Transformer => Body::Tokens(TokenBody::transformer(spec, &mut rng)),
            Family::Mixer => Body::Tokens(TokenBody::mixer(spec, &mut rng)),
        };
        let head = Linear::new("head", spec.embed_dim, spec.num_classes, &mut rng);
        Ok(Self {
            spec: spec.clone(),
            body,
            head,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn family(&self) -> Family {
        self.spec.family
    }

    pub fn embed_dim(&self) -> usize {
        self.spec.embed_dim
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let want = self.spec.input_shape(shape.first().copied().unwrap_or(0));
        if shape != want || shape[0] == 0 {
            return Err(TensorError::Shape {
                op: "model input",
                lhs: shape.to_vec(),
                rhs: want.to_vec(),
            }
            .into());
        }
        Ok(())
    }

    /// None of the families carry running statistics, so `mode` only matters
    /// for callers that pair the model with a decoupler.
    pub fn forward<'g>(&self, g: &'g Graph, x: &Var<'g>, _mode: Mode) -> Result<ForwardOutput<'g>> {
        self.forward_taps(g, x, &mut Vec::new())
    }

    /// Like [`Model::forward`], also collecting the output of every block in
    /// the order of [`Model::tap_names`] (the penultimate embedding excluded).
    pub fn forward_taps<'g>(&self, g: &'g Graph, x: &Var<'g>, taps: &mut Vec<Var<'g>>) -> Result<ForwardOutput<'g>> {
        self.check_input(&x.shape())?;
        let penultimate = match &self.body {
            Body::Cnn(b) => b.forward(g, x, taps)?,
            Body::Tokens(b) => b.forward(g, x, taps)?,
        };
        let logits = self.head.forward(g, &penultimate)?;
        Ok(ForwardOutput { logits, penultimate })
    }

    /// `block0`, `block1`, ... then `penultimate`.
    pub fn tap_names(&self) -> Vec<String> {
        let blocks = match &self.body {
            Body::Cnn(b) => b.blocks.len(),
            Body::Tokens(b) => match &b.blocks {
                Blocks::Attention(v) => v.len(),
                Blocks::Mixer(v) => v.len(),
            },
        };
        (0..blocks)
            .map(|i| format!("block{i}"))
            .chain(std::iter::once(PENULTIMATE_TAP.to_string()))
            .collect()
    }

    /// Eval-mode pass on plain values; returns `(logits, penultimate)`.
    pub fn predict(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let g = Graph::new();
        let out = self.forward(&g, &g.constant(x.clone()), Mode::Eval)?;
        let logits = (*out.logits.value()).clone();
        let pen = (*out.penultimate.value()).clone();
        Ok((logits, pen))
    }

    /// SHA-256 over parameter names, shapes and values, hex-encoded.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for p in self.params() {
            h.update(p.name().as_bytes());
            for &d in p.value().shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in p.value().data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn freeze(mut self) -> FrozenModel {
        for p in self.params_mut() {
            p.set_frozen(true);
        }
        FrozenModel { inner: self }
    }

    /// Header (u32 LE length + JSON spec) followed by one tensor record per parameter.
    pub fn write_checkpoint<W: Write>(&self, w: &mut W) -> Result<()> {
        let header = serde_json::to_vec(&self.spec)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for p in self.params() {
            write_record(w, p.name(), p.value())?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(r: &mut R, path: &Path) -> Result<Self> {
        let format = |offset: u64, msg: String| Error::Format {
            path: path.to_path_buf(),
            offset,
            msg,
        };
        let mut len = [0u8; 4];
        r.read_exact(&mut len)
            .map_err(|_| format(0, "missing checkpoint header".into()))?;
        let n = u32::from_le_bytes(len) as usize;
        let mut header = vec![0u8; n];
        r.read_exact(&mut header)
            .map_err(|_| format(4, "truncated checkpoint header".into()))?;
        let spec: ModelSpec =
            serde_json::from_slice(&header).map_err(|e| format(4, format!("bad spec header: {e}")))?;
        let mut model = Model::build(&spec)?;
        let mut offset = 4 + n as u64;
        let mut params = model.params_mut().into_iter();
        loop {
            let start = offset;
            let rec = read_record(r, &mut offset).map_err(|e| match e {
                TensorError::Format { offset, msg } => format(offset, msg),
                other => Error::Tensor(other),
            })?;
            match (rec, params.next()) {
                (None, None) => break,
                (Some((name, t)), Some(p)) => {
                    if name != p.name() || t.shape() != p.value().shape() {
                        return Err(format(
                            start,
                            format!(
                                "record `{name}` {:?} does not match parameter `{}` {:?}",
                                t.shape(),
                                p.name(),
                                p.value().shape()
                            ),
                        ));
                    }
                    *p.value_mut() = t;
                }
                (None, Some(p)) => return Err(format(start, format!("missing parameter `{}`", p.name()))),
                (Some((name, _)), None) => return Err(format(start, format!("unexpected record `{name}`"))),
            }
        }
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_checkpoint(&mut r, path)
    }
}

impl Module for Model {
    fn params(&self) -> Vec<&Param> {
        let mut v = match &self.body {
            Body::Cnn(b) => b.params(),
            Body::Tokens(b) => b.params(),
        };
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = match &mut self.body {
            Body::Cnn(b) => b.params_mut(),
            Body::Tokens(b) => b.params_mut(),
        };
        v.extend(self.head.params_mut());
        v
    }
}

/// A model whose parameters enter every graph as constants and which always
/// runs in eval mode.
#[derive(Debug, Clone)]
pub struct FrozenModel {
    inner: Model,
}

impl FrozenModel {
    pub fn forward<'g>(&self, g: &'g Graph, x: &Var<'g>) -> Result<ForwardOutput<'g>> {
        self.inner.forward(g, x, Mode::Eval)
    }

    pub fn predict(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.inner.predict(x)
    }

    pub fn model(&self) -> &Model {
        &self.inner
    }

    pub fn checksum(&self) -> String {
        self.inner.checksum()
    }

    pub fn into_inner(self) -> Model {
        self.inner
    }
}
