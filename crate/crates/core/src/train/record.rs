use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{Objective, TrainConfig};
use crate::error::Result;
use crate::models::ModelSpec;
use crate::rsd::LossBreakdown;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.json";
pub const CKPT_DIR: &str = "ckpt";
pub const BEST_CKPT: &str = "best.ckpt";
pub const LAST_CKPT: &str = "last.ckpt";

/// One line of `metrics.jsonl`. Wall-clock time is kept out so that equal
/// runs produce equal bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub steps: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    /// Accuracy over the epoch's training batches, each measured just before its step.
    pub train_acc: f64,
    pub test_acc: f64,
}

/// Everything that determines a run's numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunIdentity {
    pub config: TrainConfig,
    pub student: ModelSpec,
    pub data: String,
    pub teacher_checksum: Option<String>,
}

impl RunIdentity {
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("identity serializes")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub arm: String,
    pub identity: RunIdentity,
    pub config_hash: String,
    pub epochs: Vec<EpochMetrics>,
    pub optimizer_steps: u64,
    pub final_train_acc: f64,
    pub final_test_acc: f64,
    pub best_test_acc: f64,
    pub best_epoch: usize,
    pub param_overhead_count: usize,
    pub student_param_count: usize,
    pub student_checksum: String,
    pub content_id: String,
    /// Per-epoch wall-clock milliseconds; excluded from the content id.
    pub wall_ms: Vec<u64>,
}

#[derive(Serialize)]
struct ContentView<'a> {
    config_hash: &'a str,
    epochs: &'a [EpochMetrics],
    optimizer_steps: u64,
    final_test_acc: f64,
    best_test_acc: f64,
    best_epoch: usize,
    param_overhead_count: usize,
    student_checksum: &'a str,
}

impl RunRecord {
    /// Git-style object id: SHA-256 over `"run <len>\0"` and the canonical
    /// JSON of the deterministic fields.
    pub fn compute_content_id(&self) -> String {
        let body = serde_json::to_vec(&ContentView {
            config_hash: &self.config_hash,
            epochs: &self.epochs,
            optimizer_steps: self.optimizer_steps,
            final_test_acc: self.final_test_acc,
            best_test_acc: self.best_test_acc,
            best_epoch: self.best_epoch,
            param_overhead_count: self.param_overhead_count,
            student_checksum: &self.student_checksum,
        })
        .expect("record serializes");
        let mut h = Sha256::new();
        h.update(format!("run {}\0", body.len()).as_bytes());
        h.update(&body);
        hex::encode(h.finalize())
    }
}

/// Ablation arm label for a configuration.
pub fn arm_tag(cfg: &TrainConfig, aad_used: bool) -> String {
    match cfg.objective {
        Objective::Ce => "baseline".into(),
        _ if cfg.rsd.lambda == 0.0 => "baseline".into(),
        Objective::Kd => "kd".into(),
        Objective::FeatureMse => "feature-mse".into(),
        Objective::RsdLogits => "rsd-logits".into(),
        Objective::Rsd => {
            let base = if cfg.rsd.kappa == 0.0 { "rsd-corr" } else { "rsd-decorr" };
            if aad_used {
                base.into()
            } else {
                format!("{base}-no-aad")
            }
        }
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Layout of a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root.join(CKPT_DIR))?;
        let dir = Self { root: root.to_path_buf() };
        File::create(dir.metrics())?;
        Ok(dir)
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join(METRICS_FILE)
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join(SUMMARY_FILE)
    }

    pub fn config(&self) -> PathBuf {
        self.root.join(CONFIG_FILE)
    }

    pub fn best_ckpt(&self) -> PathBuf {
        self.root.join(CKPT_DIR).join(BEST_CKPT)
    }

    pub fn last_ckpt(&self) -> PathBuf {
        self.root.join(CKPT_DIR).join(LAST_CKPT)
    }

    pub fn append_metrics(&self, m: &EpochMetrics) -> Result<()> {
        let f = OpenOptions::new().append(true).open(self.metrics())?;
        let mut w = BufWriter::new(f);
        serde_json::to_writer(&mut w, m)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Summary<C> {
    pub config: C,
    pub run_id: String,
    pub record: RunRecord,
}

/// Writes the resolved configuration and, last, the summary.
pub fn finalize_run_dir<C: Serialize + Clone>(dir: &RunDir, config: &C, record: &RunRecord) -> Result<()> {
    write_json_atomic(&dir.config(), config)?;
    write_json_atomic(
        &dir.summary(),
        &Summary {
            config: config.clone(),
            run_id: record.content_id.clone(),
            record: record.clone(),
        },
    )
}
