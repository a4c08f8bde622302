//! Image datasets: IDX and CSV ingestion, a synthetic task, and fixed-size batching.

mod batch;
mod csv_io;
mod idx;
mod source;
mod synth;

use rsd_autograd::Tensor;
use serde::{Deserialize, Serialize};

pub use batch::{Batch, BatchPlan};
pub use csv_io::{read_csv, write_csv};
pub use idx::{read_idx, write_idx, IMAGE_MAGIC, LABEL_MAGIC};
pub use source::DataSource;
pub use synth::{synth_gaussian_task, SynthParams};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Per-channel mean and standard deviation of `[0,1]`-scaled pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Population statistics over all pixels of each channel. Flat channels
    /// get `std = 1` so standardization stays finite.
    pub fn compute(raw: &RawImages) -> Self {
        let [n, c, h, w] = raw.shape;
        let plane = h * w;
        let mut mean = vec![0.0; c];
        let mut std = vec![0.0; c];
        for ch in 0..c {
            let values = (0..n).flat_map(|i| {
                let start = (i * c + ch) * plane;
                raw.pixels[start..start + plane].iter().map(|&p| p as f64 / 255.0)
            });
            let count = (n * plane) as f64;
            let m = values.clone().sum::<f64>() / count;
            let v = values.map(|x| (x - m).powi(2)).sum::<f64>() / count;
            mean[ch] = m;
            std[ch] = if v > 0.0 { v.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }
}

/// Undecoded 8-bit images `[N, C, H, W]` with labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImages {
    pub shape: [usize; 4],
    pub pixels: Vec<u8>,
    pub labels: Vec<usize>,
}

impl RawImages {
    pub fn len(&self) -> usize {
        self.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        self.shape[0] == 0
    }

    pub fn max_label(&self) -> Option<usize> {
        self.labels.iter().copied().max()
    }
}

/// Standardized images plus the raw pixels and statistics they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub split: Split,
    pub stats: ChannelStats,
    pub raw: RawImages,
}

impl Dataset {
    /// Scales pixels to `[0,1]` and standardizes each channel with `stats`.
    pub fn from_raw(raw: RawImages, num_classes: usize, split: Split, stats: ChannelStats) -> Result<Self> {
        let [n, c, h, w] = raw.shape;
        if n == 0 {
            return Err(Error::Consistency("dataset is empty".into()));
        }
        if raw.labels.len() != n || raw.pixels.len() != n * c * h * w {
            return Err(Error::Consistency(format!(
                "{} labels and {} pixels for shape {:?}",
                raw.labels.len(),
                raw.pixels.len(),
                raw.shape
            )));
        }
        if stats.mean.len() != c {
            return Err(Error::Consistency(format!(
                "statistics for {} channels, images have {c}",
                stats.mean.len()
            )));
        }
        if let Some(&bad) = raw.labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: num_classes,
            });
        }
        let plane = h * w;
        let data = raw
            .pixels
            .iter()
            .enumerate()
            .map(|(k, &p)| {
                let ch = (k / plane) % c;
                (p as f64 / 255.0 - stats.mean[ch]) / stats.std[ch]
            })
            .collect();
        Ok(Self {
            images: Tensor::from_vec(&raw.shape, data),
            labels: raw.labels.clone(),
            num_classes,
            split,
            stats,
            raw,
        })
    }

    /// Standardizes with statistics of these images themselves.
    pub fn from_raw_self_stats(raw: RawImages, num_classes: usize, split: Split) -> Result<Self> {
        let stats = ChannelStats::compute(&raw);
        Self::from_raw(raw, num_classes, split, stats)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn image_size(&self) -> usize {
        self.images.shape()[2]
    }

    /// Images at `idx` stacked into `[idx.len(), C, H, W]`.
    pub fn gather(&self, idx: &[usize]) -> Tensor {
        let s = self.images.shape();
        let per = s[1] * s[2] * s[3];
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        Tensor::from_vec(&[idx.len(), s[1], s[2], s[3]], data)
    }

    /// Flattened `[N, C·H·W]` view of the standardized images.
    pub fn flat(&self) -> Tensor {
        let n = self.len();
        let per = self.images.numel() / n;
        Tensor::from_vec(&[n, per], self.images.data().to_vec())
    }
}

/// Train and test splits sharing the train split's channel statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Dataset,
    pub test: Dataset,
}

impl SplitDataset {
    pub fn from_raw(train: RawImages, test: RawImages) -> Result<Self> {
        if train.shape[1..] != test.shape[1..] {
            return Err(Error::Consistency(format!(
                "train images {:?} and test images {:?} differ in geometry",
                train.shape, test.shape
            )));
        }
        let classes = train.max_label().max(test.max_label()).map_or(0, |m| m + 1).max(2);
        let stats = ChannelStats::compute(&train);
        Ok(Self {
            train: Dataset::from_raw(train, classes, Split::Train, stats.clone())?,
            test: Dataset::from_raw(test, classes, Split::Test, stats)?,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.train.num_classes
    }

    pub fn channels(&self) -> usize {
        self.train.channels()
    }

    pub fn image_size(&self) -> usize {
        self.train.image_size()
    }
}
