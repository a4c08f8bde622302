//! Deterministic training and distillation runs, run records, and sweeps.

mod config;
mod fit;
mod optim;
mod record;
mod sweep;

pub use config::{AadMode, Objective, OptimizerConfig, Schedule, TrainConfig};
pub use fit::{accuracy_from_logits, argmax_rows, distill, evaluate, fit, predict_all, train_teacher, Job, Trained};
pub use optim::{scheduled_lr, Optimizer};
pub use record::{
    arm_tag, finalize_run_dir, write_atomic, write_json_atomic, EpochMetrics, RunDir, RunIdentity, RunRecord,
    Summary, BEST_CKPT, CKPT_DIR, CONFIG_FILE, LAST_CKPT, METRICS_FILE, SUMMARY_FILE,
};
pub use sweep::{aggregate, sweep, AggregateRow, RunSpec, Spread, SweepCell, SweepGrid, SweepPoint};
