use std::fs;

use rsd_core::data::{DataSource, SplitDataset};
use rsd_core::models::{Family, ModelSpec};
use rsd_core::rsd::ApplyTo;
use rsd_core::train::{AadMode, Objective, OptimizerConfig, RunSpec, Schedule, TrainConfig};
use rsd_core::{Error, Result};

use crate::args::{AadArg, ApplyToArg, ConfigFlags, OptimizerKind, RunArgs, ScheduleArg};

pub const DEFAULT_DATA: &str = "synth://gauss?C=3&n=100&size=16&seed=7";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    Teacher,
    Distill,
}

impl RunKind {
    fn default_family(self) -> Family {
        match self {
            RunKind::Teacher => Family::Cnn,
            RunKind::Distill => Family::Mixer,
        }
    }

    fn default_objective(self) -> Objective {
        match self {
            RunKind::Teacher => Objective::Ce,
            RunKind::Distill => Objective::Rsd,
        }
    }
}

/// A fully resolved run and its loaded data.
#[derive(Debug)]
pub struct Resolved {
    pub spec: RunSpec,
    pub data: SplitDataset,
}

/// Flags given on the command line, by name.
pub fn explicit_flags(f: &ConfigFlags) -> Vec<&'static str> {
    let set = [
        ("--data", f.data.is_some()),
        ("--teacher", f.teacher.is_some()),
        ("--family", f.family.is_some()),
        ("--embed-dim", f.embed_dim.is_some()),
        ("--depth", f.depth.is_some()),
        ("--width", f.width.is_some()),
        ("--patch-size", f.patch_size.is_some()),
        ("--objective", f.objective.is_some()),
        ("--optimizer", f.optimizer.is_some()),
        ("--lr", f.lr.is_some()),
        ("--momentum", f.momentum.is_some()),
        ("--weight-decay", f.weight_decay.is_some()),
        ("--schedule", f.schedule.is_some()),
        ("--epochs", f.epochs.is_some()),
        ("--batch-size", f.batch_size.is_some()),
        ("--seed", f.seed.is_some()),
        ("--lambda", f.lambda.is_some()),
        ("--kappa", f.kappa.is_some()),
        ("--expansion", f.expansion.is_some()),
        ("--temperature", f.temperature.is_some()),
        ("--apply-to", f.apply_to.is_some()),
        ("--aad", f.aad.is_some()),
        ("--no-aad", f.no_aad),
    ];
    set.iter().filter(|(_, on)| *on).map(|(name, _)| *name).collect()
}

fn read_config(args: &RunArgs) -> Result<Option<RunSpec>> {
    let Some(path) = &args.config else {
        return Ok(None);
    };
    if !path.is_file() {
        return Err(Error::Config(format!("--config {}: no such file", path.display())));
    }
    let spec: RunSpec = serde_json::from_slice(&fs::read(path)?)
        .map_err(|e| Error::Config(format!("--config {}: {e}", path.display())))?;
    let explicit = explicit_flags(&args.flags);
    if !explicit.is_empty() && !args.r#override {
        return Err(Error::Config(format!(
            "--config conflicts with {}; pass --override to let the flags win",
            explicit.join(", ")
        )));
    }
    Ok(Some(spec))
}

fn model_spec(base: Option<&RunSpec>, f: &ConfigFlags, kind: RunKind, data: &SplitDataset) -> ModelSpec {
    let family = f
        .family
        .or(base.map(|b| b.model.family))
        .unwrap_or(kind.default_family());
    let mut m = match base {
        Some(b) if b.model.family == family => b.model.clone(),
        _ => ModelSpec::default_for(family, 0, 0, 0, 0),
    };
    m.num_classes = data.num_classes();
    m.in_channels = data.channels();
    m.image_size = data.image_size();
    if let Some(d) = f.embed_dim {
        m = m.with_embed_dim(d);
    }
    if let Some(d) = f.depth {
        m.depth = d;
    }
    if let Some(w) = f.width {
        m.width = w;
    }
    if let Some(p) = f.patch_size {
        m.patch_size = p;
    }
    m
}

fn optimizer(base: OptimizerConfig, f: &ConfigFlags) -> Result<OptimizerConfig> {
    let mut opt = match f.optimizer {
        Some(OptimizerKind::SgdMomentum) if !matches!(base, OptimizerConfig::SgdMomentum { .. }) => {
            OptimizerConfig::sgd_default()
        }
        Some(OptimizerKind::Adam) if !matches!(base, OptimizerConfig::Adam { .. }) => OptimizerConfig::adam_default(),
        _ => base,
    };
    if let Some(lr) = f.lr {
        opt.set_lr(lr);
    }
    match &mut opt {
        OptimizerConfig::SgdMomentum {
            momentum, weight_decay, ..
        } => {
            if let Some(m) = f.momentum {
                *momentum = m;
            }
            if let Some(w) = f.weight_decay {
                *weight_decay = w;
            }
        }
        OptimizerConfig::Adam { weight_decay, .. } => {
            if f.momentum.is_some() {
                return Err(Error::Config("--momentum applies to --optimizer sgd-momentum only".into()));
            }
            if let Some(w) = f.weight_decay {
                *weight_decay = w;
            }
        }
    }
    Ok(opt)
}

fn train_config(base: Option<&RunSpec>, f: &ConfigFlags, kind: RunKind, family: Family) -> Result<TrainConfig> {
    let objective = f
        .objective
        .or(base.map(|b| b.train.objective))
        .unwrap_or(kind.default_objective());
    let mut t = match base {
        Some(b) => b.train.clone(),
        None => TrainConfig::default_for(family, objective),
    };
    t.objective = objective;
    t.optimizer = optimizer(t.optimizer, f)?;
    if let Some(s) = f.schedule {
        t.schedule = match s {
            ScheduleArg::Constant => Schedule::Constant,
            ScheduleArg::Cosine => Schedule::Cosine,
        };
    }
    if let Some(v) = f.epochs {
        t.epochs = v;
    }
    if let Some(v) = f.batch_size {
        t.batch_size = v;
    }
    if let Some(v) = f.seed {
        t.seed = v;
    }
    if let Some(v) = f.lambda {
        t.rsd.lambda = v;
    }
    if let Some(v) = f.kappa {
        t.rsd.kappa = v;
    }
    if let Some(v) = f.expansion {
        t.rsd.expansion_factor = v;
    }
    if let Some(v) = f.temperature {
        t.rsd.temperature = v;
    }
    if let Some(a) = f.apply_to {
        t.rsd.apply_to = match a {
            ApplyToArg::Penultimate => ApplyTo::Penultimate,
            ApplyToArg::Logits => ApplyTo::Logits,
        };
    }
    if let Some(a) = f.aad {
        t.aad = match a {
            AadArg::Auto => AadMode::Auto,
            AadArg::On => AadMode::On,
            AadArg::Off => AadMode::Off,
        };
    }
    if f.no_aad {
        t.aad = AadMode::Off;
    }
    t.validate()?;
    Ok(t)
}

/// Merges defaults, `--config` and explicit flags, loads the data and
/// validates everything that can be checked before a model is built.
pub fn resolve(kind: RunKind, args: &RunArgs) -> Result<Resolved> {
    let base = read_config(args)?;
    let f = &args.flags;
    let uri = f
        .data
        .clone()
        .or(base.as_ref().map(|b| b.data.clone()))
        .unwrap_or_else(|| DEFAULT_DATA.to_string());
    let source: DataSource = uri.parse()?;
    let data = source.load()?;

    let model = model_spec(base.as_ref(), f, kind, &data);
    let train = train_config(base.as_ref(), f, kind, model.family)?;
    let model = model.with_seed(train.seed);
    model.validate()?;

    let teacher = f.teacher.clone().or(base.as_ref().and_then(|b| b.teacher.clone()));
    match kind {
        RunKind::Teacher => {
            if train.objective != Objective::Ce {
                return Err(Error::Config(format!(
                    "train-teacher uses --objective ce, got `{}`",
                    train.objective
                )));
            }
            if teacher.is_some() {
                return Err(Error::Config("train-teacher does not take --teacher".into()));
            }
        }
        RunKind::Distill => match &teacher {
            None => {
                return Err(Error::Config(
                    "distillation needs a teacher checkpoint: pass --teacher <path>".into(),
                ))
            }
            Some(p) if !p.is_file() => {
                return Err(Error::Config(format!("--teacher {}: no such file", p.display())));
            }
            Some(_) => {}
        },
    }

    Ok(Resolved {
        spec: RunSpec {
            data: source.to_string(),
            teacher,
            model,
            train,
        },
        data,
    })
}
