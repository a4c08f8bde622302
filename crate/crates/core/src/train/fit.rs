use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rsd_autograd::nn::Mode;
use rsd_autograd::{Graph, Param, Tensor, Var};

use super::config::{AadMode, Objective, TrainConfig};
use super::optim::{scheduled_lr, Optimizer};
use super::record::{arm_tag, EpochMetrics, RunDir, RunIdentity, RunRecord};
use crate::data::{BatchPlan, Dataset, SplitDataset};
use crate::error::{Error, Result};
use crate::layers::{Linear, Module};
use crate::models::{FrozenModel, Model, ModelSpec};
use crate::rsd::{
    ce_loss, feature_mse_loss, full_objective, kd_kld_loss, AadModule, ApplyTo, LossBreakdown, RsdConfig,
};

const PLAN_SALT: u64 = 0x6261_7463_6865_7321;
const AUX_SALT: u64 = 0x6175_7869_6c69_6172;
const EVAL_CHUNK: usize = 128;

/// Data and output location shared by one run.
#[derive(Debug, Clone, Copy)]
pub struct Job<'a> {
    pub data: &'a SplitDataset,
    /// Canonical data URI, part of the run identity.
    pub data_uri: &'a str,
    /// Run directory; `None` keeps everything in memory.
    pub out: Option<&'a Path>,
}

/// Eval-mode logits and penultimate embeddings for every example, in order.
pub fn predict_all(model: &Model, ds: &Dataset) -> Result<(Tensor, Tensor)> {
    let n = ds.len();
    let mut logits = Vec::with_capacity(n * model.num_classes());
    let mut pen = Vec::with_capacity(n * model.embed_dim());
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (l, p) = model.predict(&ds.gather(chunk))?;
        logits.extend_from_slice(l.data());
        pen.extend_from_slice(p.data());
    }
    Ok((
        Tensor::from_vec(&[n, model.num_classes()], logits),
        Tensor::from_vec(&[n, model.embed_dim()], pen),
    ))
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    (0..n)
        .map(|i| {
            let row = &logits.data()[i * c..(i + 1) * c];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy_from_logits(logits: &Tensor, labels: &[usize]) -> f64 {
    let hits = argmax_rows(logits).iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Top-1 accuracy in eval mode.
pub fn evaluate(model: &Model, ds: &Dataset) -> Result<f64> {
    let (logits, _) = predict_all(model, ds)?;
    Ok(accuracy_from_logits(&logits, &ds.labels))
}

/// Trainable distillation machinery attached to the student for one run.
#[derive(Debug, Clone)]
enum Aux {
    None,
    Aad(AadModule),
    Psi(Linear),
}

impl Aux {
    fn param_count(&self) -> usize {
        match self {
            Aux::None => 0,
            Aux::Aad(m) => m.param_count(),
            Aux::Psi(l) => l.param_count(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Aux::None => vec![],
            Aux::Aad(m) => m.params_mut(),
            Aux::Psi(l) => l.params_mut(),
        }
    }
}

/// Teacher outputs over the training split, computed once in eval mode.
struct TeacherTargets {
    logits: Tensor,
    penultimate: Tensor,
    checksum: String,
}

fn check_geometry(spec: &ModelSpec, data: &SplitDataset, who: &str) -> Result<()> {
    if spec.in_channels != data.channels() || spec.image_size != data.image_size() {
        return Err(Error::Config(format!(
            "{who} expects {}×{}×{} inputs but the data is {}×{}×{}",
            spec.in_channels,
            spec.image_size,
            spec.image_size,
            data.channels(),
            data.image_size(),
            data.image_size()
        )));
    }
    if spec.num_classes != data.num_classes() {
        return Err(Error::Config(format!(
            "{who} has {} classes but the data has {}",
            spec.num_classes,
            data.num_classes()
        )));
    }
    Ok(())
}

fn build_aux(cfg: &TrainConfig, student: &ModelSpec, teacher: Option<&ModelSpec>) -> Result<Aux> {
    let Some(t) = teacher else {
        return Ok(Aux::None);
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ AUX_SALT);
    let (d_s, d_t) = (student.embed_dim, t.embed_dim);
    match cfg.objective {
        Objective::Ce | Objective::Kd | Objective::RsdLogits => Ok(Aux::None),
        Objective::FeatureMse => Ok(Aux::Psi(Linear::new("psi", d_s, d_t, &mut rng))),
        Objective::Rsd => {
            let (ds, dt) = match cfg.rsd.apply_to {
                ApplyTo::Penultimate => (d_s, d_t),
                ApplyTo::Logits => (student.num_classes, t.num_classes),
            };
            let build = match cfg.aad {
                AadMode::On => true,
                AadMode::Auto => ds != dt,
                AadMode::Off => {
                    if ds != dt {
                        return Err(Error::AdaptStudentFirst {
                            teacher: dt,
                            student: ds,
                        });
                    }
                    false
                }
            };
            if build {
                Ok(Aux::Aad(AadModule::new(ds, dt, cfg.rsd.expansion_factor, &mut rng)?))
            } else {
                Ok(Aux::None)
            }
        }
    }
}

fn distill_loss<'g>(
    g: &'g Graph,
    cfg: &TrainConfig,
    logits: &Var<'g>,
    pen: &Var<'g>,
    labels: &[usize],
    targets: Option<(&Tensor, &Tensor)>,
    aux: &mut Aux,
) -> Result<(Var<'g>, LossBreakdown)> {
    let lambda = cfg.rsd.lambda;
    let plain = |ce: Var<'g>| {
        let v = ce.item();
        (
            ce,
            LossBreakdown {
                ce: v,
                total: v,
                ..Default::default()
            },
        )
    };
    let Some((t_logits, t_pen)) = targets else {
        return Ok(plain(ce_loss(logits, labels)?));
    };
    match cfg.objective {
        Objective::Ce => Ok(plain(ce_loss(logits, labels)?)),
        Objective::Kd | Objective::FeatureMse if lambda == 0.0 => Ok(plain(ce_loss(logits, labels)?)),
        Objective::Kd | Objective::FeatureMse => {
            let ce = ce_loss(logits, labels)?;
            let term = if cfg.objective == Objective::Kd {
                kd_kld_loss(logits, &g.constant(t_logits.clone()), cfg.rsd.temperature)?
            } else {
                let Aux::Psi(psi) = aux else {
                    unreachable!("feature_mse runs with an adaptor");
                };
                feature_mse_loss(pen, &g.constant(t_pen.clone()), psi)?
            };
            let weighted = term.scale(lambda);
            let total = ce.add(&weighted)?;
            Ok((
                total,
                LossBreakdown {
                    ce: ce.item(),
                    total: total.item(),
                    baseline: Some(weighted.item()),
                    ..Default::default()
                },
            ))
        }
        Objective::Rsd | Objective::RsdLogits => {
            let on_logits = cfg.objective == Objective::RsdLogits || cfg.rsd.apply_to == ApplyTo::Logits;
            let rsd = RsdConfig {
                apply_to: if on_logits { ApplyTo::Logits } else { ApplyTo::Penultimate },
                ..cfg.rsd.clone()
            };
            let (zt, zs) = if on_logits { (t_logits, logits) } else { (t_pen, pen) };
            let aad = match aux {
                Aux::Aad(m) => Some(m),
                _ => None,
            };
            full_objective(logits, labels, &g.constant(zt.clone()), zs, aad, &rsd, Mode::Train)
        }
    }
}

fn mean_breakdown(parts: &[LossBreakdown]) -> LossBreakdown {
    let n = parts.len().max(1) as f64;
    let avg = |f: fn(&LossBreakdown) -> f64| parts.iter().map(f).sum::<f64>() / n;
    LossBreakdown {
        ce: avg(|b| b.ce),
        rsd_diag: avg(|b| b.rsd_diag),
        rsd_offdiag: avg(|b| b.rsd_offdiag),
        total: avg(|b| b.total),
        baseline: parts
            .iter()
            .map(|b| b.baseline)
            .sum::<Option<f64>>()
            .map(|s| s / n),
    }
}

/// Result of a completed run.
#[derive(Debug, Clone)]
pub struct Trained {
    /// Weights after the last epoch.
    pub last: Model,
    /// Weights of the epoch with the highest test accuracy (earliest on ties).
    pub best: Model,
    pub record: RunRecord,
}

/// Trains `spec` (re-seeded with `cfg.seed`) on `job.data`, distilling from
/// `teacher` when the objective asks for one.
pub fn fit(teacher: Option<&FrozenModel>, spec: &ModelSpec, job: Job<'_>, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    let spec = spec.clone().with_seed(cfg.seed);
    spec.validate()?;
    check_geometry(&spec, job.data, "student")?;
    let teacher = match (cfg.objective.needs_teacher(), teacher) {
        (true, None) => {
            return Err(Error::Config(format!(
                "objective `{}` needs a teacher",
                cfg.objective
            )))
        }
        (false, _) => None,
        (true, Some(t)) => {
            check_geometry(t.model().spec(), job.data, "teacher")?;
            Some(t)
        }
    };
    let train = &job.data.train;
    let plan = BatchPlan::new(cfg.batch_size, cfg.seed ^ PLAN_SALT)?;
    if cfg.batch_size > train.len() {
        return Err(Error::Plan(format!(
            "batch size {} exceeds the {} training examples",
            cfg.batch_size,
            train.len()
        )));
    }
    let mut aux = build_aux(cfg, &spec, teacher.map(|t| t.model().spec()))?;
    let targets = match teacher {
        Some(t) => {
            let (logits, penultimate) = predict_all(t.model(), train)?;
            Some(TeacherTargets {
                logits,
                penultimate,
                checksum: t.checksum(),
            })
        }
        None => None,
    };

    let dir = job.out.map(RunDir::create).transpose()?;
    let mut student = Model::build(&spec)?;
    if let Some(d) = &dir {
        student.save(&d.last_ckpt())?;
    }
    let mut opt = Optimizer::new(cfg.optimizer);
    let steps_per_epoch = plan.batches_per_epoch(train.len());
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut step = 0usize;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut wall_ms = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Model)> = None;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut parts = Vec::with_capacity(steps_per_epoch);
        let (mut hits, mut seen) = (0usize, 0usize);
        let mut lr = cfg.optimizer.lr();
        for batch in plan.batches(train, epoch as u64)? {
            lr = scheduled_lr(cfg.optimizer.lr(), cfg.schedule, step, total_steps);
            let g = Graph::new();
            let x = g.constant(batch.x);
            let out = student.forward(&g, &x, Mode::Train)?;
            let predicted = argmax_rows(&out.logits.value());
            hits += predicted.iter().zip(&batch.y).filter(|(p, y)| p == y).count();
            seen += batch.y.len();
            let batch_targets = targets
                .as_ref()
                .map(|t| (t.logits.select_rows(&batch.indices), t.penultimate.select_rows(&batch.indices)));
            let (loss, breakdown) = distill_loss(
                &g,
                cfg,
                &out.logits,
                &out.penultimate,
                &batch.y,
                batch_targets.as_ref().map(|(l, p)| (l, p)),
                &mut aux,
            )?;
            if !loss.item().is_finite() {
                let kept = dir
                    .as_ref()
                    .map(|d| format!("; last good weights in {}", d.last_ckpt().display()))
                    .unwrap_or_default();
                return Err(Error::Numerical(format!(
                    "non-finite loss at epoch {epoch}, step {step}{kept}"
                )));
            }
            g.backward(loss)?;
            let mut params: Vec<&mut Param> = student.params_mut();
            params.extend(aux.params_mut());
            for p in params.iter_mut() {
                p.accumulate_grad(&g);
                if p.grad().is_some_and(|t| !t.is_finite()) {
                    return Err(Error::Numerical(format!(
                        "non-finite gradient for `{}` at epoch {epoch}, step {step}",
                        p.name()
                    )));
                }
            }
            opt.step(&mut params, lr);
            for p in params.iter_mut() {
                p.zero_grad();
            }
            parts.push(breakdown);
            step += 1;
        }
        let train_acc = hits as f64 / seen.max(1) as f64;
        let test_acc = evaluate(&student, &job.data.test)?;
        let m = EpochMetrics {
            epoch,
            steps: parts.len(),
            lr,
            loss: mean_breakdown(&parts),
            train_acc,
            test_acc,
        };
        if best.as_ref().is_none_or(|(acc, _, _)| test_acc > *acc) {
            best = Some((test_acc, epoch, student.clone()));
            if let Some(d) = &dir {
                student.save(&d.best_ckpt())?;
            }
        }
        if let Some(d) = &dir {
            d.append_metrics(&m)?;
            student.save(&d.last_ckpt())?;
        }
        log::info!(
            "epoch {epoch}: loss {:.4} train {:.3} test {:.3}",
            m.loss.total,
            train_acc,
            test_acc
        );
        epochs.push(m);
        wall_ms.push(started.elapsed().as_millis() as u64);
    }

    let (best_test_acc, best_epoch, best_model) = best.expect("at least one epoch");
    let last = epochs.last().expect("at least one epoch");
    let identity = RunIdentity {
        config: cfg.clone(),
        student: spec.clone(),
        data: job.data_uri.to_string(),
        teacher_checksum: targets.as_ref().map(|t| t.checksum.clone()),
    };
    let mut record = RunRecord {
        arm: arm_tag(cfg, matches!(aux, Aux::Aad(_))),
        config_hash: identity.hash(),
        identity,
        final_train_acc: last.train_acc,
        final_test_acc: last.test_acc,
        epochs,
        optimizer_steps: opt.steps(),
        best_test_acc,
        best_epoch,
        param_overhead_count: aux.param_count(),
        student_param_count: student.param_count(),
        student_checksum: student.checksum(),
        content_id: String::new(),
        wall_ms,
    };
    record.content_id = record.compute_content_id();
    Ok(Trained {
        last: student,
        best: best_model,
        record,
    })
}

/// Plain cross-entropy training; returns the best-test-accuracy weights, frozen.
pub fn train_teacher(spec: &ModelSpec, job: Job<'_>, cfg: &TrainConfig) -> Result<(FrozenModel, RunRecord)> {
    if cfg.objective != Objective::Ce {
        return Err(Error::Config(format!(
            "teachers train with objective `ce`, got `{}`",
            cfg.objective
        )));
    }
    let t = fit(None, spec, job, cfg)?;
    Ok((t.best.freeze(), t.record))
}

/// Trains a student against a frozen teacher; returns the final weights.
/// Decoupler and adaptor weights are never part of the returned model or
/// its checkpoints.
pub fn distill(teacher: &FrozenModel, spec: &ModelSpec, job: Job<'_>, cfg: &TrainConfig) -> Result<(Model, RunRecord)> {
    let t = fit(Some(teacher), spec, job, cfg)?;
    Ok((t.last, t.record))
}
