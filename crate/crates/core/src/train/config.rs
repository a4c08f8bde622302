use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Family;
use crate::rsd::RsdConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Ce,
    Kd,
    FeatureMse,
    Rsd,
    RsdLogits,
}

impl Objective {
    pub fn as_str(&self) -> &'static str {
        match self {
            Objective::Ce => "ce",
            Objective::Kd => "kd",
            Objective::FeatureMse => "feature_mse",
            Objective::Rsd => "rsd",
            Objective::RsdLogits => "rsd_logits",
        }
    }

    pub fn needs_teacher(&self) -> bool {
        !matches!(self, Objective::Ce)
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(Objective::Ce),
            "kd" => Ok(Objective::Kd),
            "feature_mse" => Ok(Objective::FeatureMse),
            "rsd" => Ok(Objective::Rsd),
            "rsd_logits" => Ok(Objective::RsdLogits),
            other => Err(Error::Config(format!(
                "unknown objective `{other}` (ce, kd, feature_mse, rsd, rsd_logits)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OptimizerConfig {
    SgdMomentum {
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    },
}

impl OptimizerConfig {
    pub fn sgd_default() -> Self {
        OptimizerConfig::SgdMomentum {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }

    pub fn adam_default() -> Self {
        OptimizerConfig::Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn default_for(family: Family) -> Self {
        match family {
            Family::Cnn => Self::sgd_default(),
            Family::Transformer | Family::Mixer => Self::adam_default(),
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::SgdMomentum { lr, .. } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }

    pub fn set_lr(&mut self, value: f64) {
        match self {
            OptimizerConfig::SgdMomentum { lr, .. } | OptimizerConfig::Adam { lr, .. } => *lr = value,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerConfig::SgdMomentum { .. } => "sgd-momentum",
            OptimizerConfig::Adam { .. } => "adam",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.lr();
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        match *self {
            OptimizerConfig::SgdMomentum {
                momentum, weight_decay, ..
            } => {
                if !(0.0..1.0).contains(&momentum) || !(weight_decay.is_finite() && weight_decay >= 0.0) {
                    return Err(Error::Config("momentum must be in [0,1) and weight_decay >= 0".into()));
                }
            }
            OptimizerConfig::Adam {
                beta1,
                beta2,
                eps,
                weight_decay,
                ..
            } => {
                if !(0.0..1.0).contains(&beta1)
                    || !(0.0..1.0).contains(&beta2)
                    || !(eps > 0.0)
                    || !(weight_decay.is_finite() && weight_decay >= 0.0)
                {
                    return Err(Error::Config(
                        "adam needs beta1, beta2 in [0,1), eps > 0, weight_decay >= 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Constant,
    Cosine,
}

/// Whether distillation routes the student embedding through the decoupler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AadMode {
    /// Only when the student and teacher embedding widths differ.
    #[default]
    Auto,
    On,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub objective: Objective,
    pub optimizer: OptimizerConfig,
    pub schedule: Schedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Loss weights; `rsd.lambda` also weights the kd and feature_mse terms.
    pub rsd: RsdConfig,
    pub aad: AadMode,
}

impl TrainConfig {
    pub fn default_for(family: Family, objective: Objective) -> Self {
        Self {
            objective,
            optimizer: OptimizerConfig::default_for(family),
            schedule: Schedule::Cosine,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            rsd: RsdConfig::default(),
            aad: AadMode::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        self.optimizer.validate()?;
        self.rsd.validate()
    }
}
