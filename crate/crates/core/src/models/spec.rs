use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Cnn,
    Transformer,
    Mixer,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Cnn, Family::Transformer, Family::Mixer];

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Cnn => "cnn",
            Family::Transformer => "transformer",
            Family::Mixer => "mixer",
        }
    }

    pub fn is_token_model(&self) -> bool {
        !matches!(self, Family::Cnn)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn" => Ok(Family::Cnn),
            "transformer" => Ok(Family::Transformer),
            "mixer" => Ok(Family::Mixer),
            other => Err(Error::Spec(format!("unknown family `{other}` (cnn, transformer, mixer)"))),
        }
    }
}

/// Architecture hyperparameters. For the CNN `depth` counts conv blocks and
/// `width` is the first block's channel count (doubling per block, last block
/// = `embed_dim`). For token models `depth` counts residual blocks and
/// `width` is the hidden size of every MLP.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: Family,
    pub depth: usize,
    pub width: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_classes: usize,
    pub in_channels: usize,
    pub image_size: usize,
    pub seed: u64,
}

pub const DEFAULT_EMBED_DIM: usize = 32;
pub const NARROW_EMBED_DIM: usize = 24;

impl ModelSpec {
    /// The default configuration of a family for a given input geometry.
    pub fn default_for(family: Family, num_classes: usize, in_channels: usize, image_size: usize, seed: u64) -> Self {
        let (depth, width) = match family {
            Family::Cnn => (3, 8),
            Family::Transformer | Family::Mixer => (2, 2 * DEFAULT_EMBED_DIM),
        };
        Self {
            family,
            depth,
            width,
            patch_size: 4,
            embed_dim: DEFAULT_EMBED_DIM,
            num_classes,
            in_channels,
            image_size,
            seed,
        }
    }

    /// Same architecture with embedding width `d`; token-model MLPs keep ratio 2.
    pub fn with_embed_dim(mut self, d: usize) -> Self {
        self.embed_dim = d;
        if self.family.is_token_model() {
            self.width = 2 * d;
        }
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Spec(m));
        if self.embed_dim < 2 {
            return fail(format!("embed_dim must be at least 2, got {}", self.embed_dim));
        }
        if self.num_classes < 2 {
            return fail(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.depth == 0 || self.width == 0 || self.in_channels == 0 || self.image_size == 0 {
            return fail("depth, width, in_channels and image_size must be positive".into());
        }
        if self.family.is_token_model() && (self.patch_size == 0 || self.image_size % self.patch_size != 0) {
            return fail(format!(
                "image size {} is not divisible by patch size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.depth > 16 {
            return fail(format!("depth {} is beyond the supported 16", self.depth));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        let side = self.image_size / self.patch_size.max(1);
        side * side
    }

    pub fn patch_dim(&self) -> usize {
        self.in_channels * self.patch_size * self.patch_size
    }

    /// Output channels of each CNN block.
    pub fn cnn_channels(&self) -> Vec<usize> {
        (0..self.depth)
            .map(|i| {
                if i + 1 == self.depth {
                    self.embed_dim
                } else {
                    self.width << i
                }
            })
            .collect()
    }

    pub fn input_shape(&self, batch: usize) -> [usize; 4] {
        [batch, self.in_channels, self.image_size, self.image_size]
    }
}
