use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use url::Url;

use super::{read_csv, read_idx, synth_gaussian_task, SplitDataset, SynthParams};
use crate::error::{Error, Result};

/// Where a train/test pair comes from.
///
/// * `synth://gauss?C=3&n=100&size=16&seed=7[&noise=..][&jitter=..]`
/// * `idx:<dir>` reading `train-images.idx`, `train-labels.idx`,
///   `test-images.idx`, `test-labels.idx`
/// * `csv:<dir>` reading `train.csv` and `test.csv` (single channel)
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synth(SynthParams),
    Idx(PathBuf),
    Csv(PathBuf),
}

impl DataSource {
    pub fn load(&self) -> Result<SplitDataset> {
        match self {
            DataSource::Synth(p) => synth_gaussian_task(p),
            DataSource::Idx(dir) => {
                let train = read_idx(&dir.join("train-images.idx"), &dir.join("train-labels.idx"))?;
                let test = read_idx(&dir.join("test-images.idx"), &dir.join("test-labels.idx"))?;
                SplitDataset::from_raw(train, test)
            }
            DataSource::Csv(dir) => {
                let train = read_csv(&dir.join("train.csv"), 1)?;
                let test = read_csv(&dir.join("test.csv"), 1)?;
                SplitDataset::from_raw(train, test)
            }
        }
    }

    /// Files the source reads; empty for synthetic data.
    pub fn files(&self) -> Vec<PathBuf> {
        match self {
            DataSource::Synth(_) => vec![],
            DataSource::Idx(d) => ["train-images.idx", "train-labels.idx", "test-images.idx", "test-labels.idx"]
                .iter()
                .map(|f| d.join(f))
                .collect(),
            DataSource::Csv(d) => vec![d.join("train.csv"), d.join("test.csv")],
        }
    }
}

fn parse_synth(url: &Url) -> Result<SynthParams> {
    if url.host_str() != Some("gauss") {
        return Err(Error::Config(format!(
            "unknown synthetic generator `{}` (expected synth://gauss)",
            url.host_str().unwrap_or("")
        )));
    }
    let mut p = SynthParams::default();
    for (k, v) in url.query_pairs() {
        let bad = || Error::Config(format!("bad value `{v}` for `{k}` in data URI"));
        match k.as_ref() {
            "C" => p.classes = v.parse().map_err(|_| bad())?,
            "n" => p.n_per_class = v.parse().map_err(|_| bad())?,
            "size" => p.size = v.parse().map_err(|_| bad())?,
            "seed" => p.seed = v.parse().map_err(|_| bad())?,
            "noise" => p.noise = v.parse().map_err(|_| bad())?,
            "jitter" => p.jitter = v.parse().map_err(|_| bad())?,
            other => return Err(Error::Config(format!("unknown data URI parameter `{other}`"))),
        }
    }
    p.validate()?;
    Ok(p)
}

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let url = Url::parse(s).map_err(|e| Error::Config(format!("invalid data URI `{s}`: {e}")))?;
        let path = || {
            let p = url.path();
            if p.is_empty() {
                Err(Error::Config(format!("data URI `{s}` has no path")))
            } else {
                Ok(PathBuf::from(p))
            }
        };
        match url.scheme() {
            "synth" => Ok(DataSource::Synth(parse_synth(&url)?)),
            "idx" => Ok(DataSource::Idx(path()?)),
            "csv" => Ok(DataSource::Csv(path()?)),
            other => Err(Error::Config(format!(
                "unsupported data URI scheme `{other}` (synth, idx, csv)"
            ))),
        }
    }
}

fn show(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Synth(p) => {
                let d = SynthParams::default();
                write!(f, "synth://gauss?C={}&n={}&size={}&seed={}", p.classes, p.n_per_class, p.size, p.seed)?;
                if p.noise != d.noise {
                    write!(f, "&noise={}", p.noise)?;
                }
                if p.jitter != d.jitter {
                    write!(f, "&jitter={}", p.jitter)?;
                }
                Ok(())
            }
            DataSource::Idx(d) => write!(f, "idx:{}", show(d)),
            DataSource::Csv(d) => write!(f, "csv:{}", show(d)),
        }
    }
}
