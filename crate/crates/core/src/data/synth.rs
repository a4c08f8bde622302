//! Class-conditional synthetic images: an oriented grating with random phase
//! plus a Gaussian blob jittered around a class anchor, under pixel noise.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsd_autograd::standard_normal;
use serde::{Deserialize, Serialize};

use super::{RawImages, SplitDataset};
use crate::error::{Error, Result};

pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub classes: usize,
    pub n_per_class: usize,
    pub size: usize,
    pub seed: u64,
    /// Standard deviation of additive pixel noise on the `[0,1]` scale.
    pub noise: f64,
    /// Blob-center jitter as a fraction of the image side.
    pub jitter: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            classes: 3,
            n_per_class: 100,
            size: 16,
            seed: 7,
            noise: 0.25,
            jitter: 0.12,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!("synthetic task needs C >= 2, got {}", self.classes)));
        }
        if self.n_per_class < 2 || self.size < 4 {
            return Err(Error::Config("synthetic task needs n >= 2 and size >= 4".into()));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0 && self.jitter.is_finite() && self.jitter >= 0.0) {
            return Err(Error::Config("noise and jitter must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn train_per_class(&self) -> usize {
        (self.n_per_class as f64 * TRAIN_FRACTION).round() as usize
    }
}

fn render<R: Rng>(p: &SynthParams, class: usize, rng: &mut R) -> Vec<u8> {
    let s = p.size as f64;
    let theta = PI * class as f64 / p.classes as f64;
    let freq = 2.0 + (class % 2) as f64;
    let phase = rng.gen_range(0.0..2.0 * PI);
    let angle = 2.0 * PI * class as f64 / p.classes as f64;
    let cx = 0.5 * s + 0.25 * s * angle.cos() + p.jitter * s * standard_normal(rng);
    let cy = 0.5 * s + 0.25 * s * angle.sin() + p.jitter * s * standard_normal(rng);
    let width = s / 6.0;
    let contrast = rng.gen_range(0.6..1.0);
    let mut out = Vec::with_capacity(p.size * p.size);
    for y in 0..p.size {
        for x in 0..p.size {
            let (fx, fy) = (x as f64, y as f64);
            let proj = (fx * theta.cos() + fy * theta.sin()) / s;
            let grating = (2.0 * PI * freq * proj + phase).cos();
            let r2 = (fx - cx).powi(2) + (fy - cy).powi(2);
            let blob = (-r2 / (2.0 * width * width)).exp();
            let v = 0.5 + contrast * (0.2 * grating + 0.35 * blob - 0.1) + p.noise * standard_normal(rng);
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

/// Stratified 80/20 split; both splits are shuffled by the seed.
pub fn synth_gaussian_task(p: &SynthParams) -> Result<SplitDataset> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let n_train = p.train_per_class();
    let mut train: Vec<(Vec<u8>, usize)> = Vec::new();
    let mut test: Vec<(Vec<u8>, usize)> = Vec::new();
    for class in 0..p.classes {
        let mut samples: Vec<Vec<u8>> = (0..p.n_per_class).map(|_| render(p, class, &mut rng)).collect();
        samples.shuffle(&mut rng);
        for (i, img) in samples.into_iter().enumerate() {
            if i < n_train {
                train.push((img, class));
            } else {
                test.push((img, class));
            }
        }
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);
    let pack = |items: Vec<(Vec<u8>, usize)>| RawImages {
        shape: [items.len(), 1, p.size, p.size],
        labels: items.iter().map(|(_, y)| *y).collect(),
        pixels: items.into_iter().flat_map(|(img, _)| img).collect(),
    };
    let mut ds = SplitDataset::from_raw(pack(train), pack(test))?;
    ds.train.num_classes = p.classes;
    ds.test.num_classes = p.classes;
    Ok(ds)
}
