use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::fit::{distill, Job};
use super::record::{finalize_run_dir, RunDir, RunRecord};
use crate::error::{Error, Result};
use crate::models::{FrozenModel, ModelSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub lambdas: Vec<f64>,
    pub kappas: Vec<f64>,
    pub expansions: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() || self.kappas.is_empty() || self.expansions.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("every sweep axis needs at least one value".into()));
        }
        let all = self.lambdas.iter().chain(&self.kappas).chain(&self.expansions);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("sweep values must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.lambdas.len() * self.kappas.len() * self.expansions.len() * self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cells in λ-major, then κ, expansion, seed order.
    pub fn cells(&self) -> Vec<SweepPoint> {
        let mut out = Vec::with_capacity(self.len());
        for &lambda in &self.lambdas {
            for &kappa in &self.kappas {
                for &expansion in &self.expansions {
                    for &seed in &self.seeds {
                        out.push(SweepPoint {
                            lambda,
                            kappa,
                            expansion,
                            seed,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub lambda: f64,
    pub kappa: f64,
    pub expansion: f64,
    pub seed: u64,
}

impl SweepPoint {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        cfg.rsd.lambda = self.lambda;
        cfg.rsd.kappa = self.kappa;
        cfg.rsd.expansion_factor = self.expansion;
        cfg.seed = self.seed;
        cfg
    }

    pub fn dir_name(&self) -> String {
        format!(
            "lambda{}_kappa{}_exp{}_seed{}",
            self.lambda, self.kappa, self.expansion, self.seed
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub point: SweepPoint,
    pub dir: Option<PathBuf>,
    pub record: Option<RunRecord>,
    pub error: Option<String>,
}

/// Median, minimum and maximum of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Some(Self {
            median,
            min: v[0],
            max: v[n - 1],
            n,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateRow {
    pub lambda: f64,
    pub kappa: f64,
    pub expansion: f64,
    pub final_test_acc: Option<Spread>,
    pub failures: usize,
}

/// Groups cells by (λ, κ, expansion) in grid order and summarizes final
/// test accuracy across seeds.
pub fn aggregate(cells: &[SweepCell]) -> Vec<AggregateRow> {
    let mut rows: Vec<(SweepPoint, Vec<f64>, usize)> = Vec::new();
    for c in cells {
        let key = |p: &SweepPoint| (p.lambda.to_bits(), p.kappa.to_bits(), p.expansion.to_bits());
        let pos = rows.iter().position(|(p, _, _)| key(p) == key(&c.point));
        let entry = match pos {
            Some(i) => &mut rows[i],
            None => {
                rows.push((c.point, Vec::new(), 0));
                rows.last_mut().expect("just pushed")
            }
        };
        match &c.record {
            Some(r) => entry.1.push(r.final_test_acc),
            None => entry.2 += 1,
        }
    }
    rows.into_iter()
        .map(|(p, accs, failures)| AggregateRow {
            lambda: p.lambda,
            kappa: p.kappa,
            expansion: p.expansion,
            final_test_acc: Spread::of(&accs),
            failures,
        })
        .collect()
}

/// Everything needed to reproduce one run; written as `config.json` and
/// accepted back as a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    /// Canonical data URI.
    pub data: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher: Option<PathBuf>,
    pub model: ModelSpec,
    pub train: TrainConfig,
}

impl RunSpec {
    /// The same run with `train` replaced.
    pub fn with_train(&self, train: TrainConfig) -> Self {
        Self {
            train,
            ..self.clone()
        }
    }
}

/// Runs every grid cell of `base` as an independent distillation. Cells run
/// in parallel; a failing cell is recorded and the sweep continues.
pub fn sweep(teacher: &FrozenModel, job: Job<'_>, base: &RunSpec, grid: &SweepGrid) -> Result<Vec<SweepCell>> {
    grid.validate()?;
    base.train.validate()?;
    let points = grid.cells();
    let cells = points
        .par_iter()
        .map(|point| {
            let run = base.with_train(point.apply(&base.train));
            let dir = job.out.map(|root| root.join(point.dir_name()));
            let outcome = run_cell(teacher, job, &run, dir.as_deref());
            match outcome {
                Ok(record) => SweepCell {
                    point: *point,
                    dir,
                    record: Some(record),
                    error: None,
                },
                Err(e) => {
                    log::warn!("sweep cell {} failed: {e}", point.dir_name());
                    SweepCell {
                        point: *point,
                        dir,
                        record: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect();
    Ok(cells)
}

fn run_cell(teacher: &FrozenModel, job: Job<'_>, run: &RunSpec, dir: Option<&Path>) -> Result<RunRecord> {
    let (_, record) = distill(teacher, &run.model, Job { out: dir, ..job }, &run.train)?;
    if let Some(d) = dir {
        finalize_run_dir(&RunDir { root: d.to_path_buf() }, run, &record)?;
    }
    Ok(record)
}
