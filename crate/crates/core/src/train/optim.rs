use std::f64::consts::PI;

use rsd_autograd::{Param, Tensor};

use super::config::{OptimizerConfig, Schedule};

/// Learning rate for step `t` of `total`.
pub fn scheduled_lr(base: f64, schedule: Schedule, t: usize, total: usize) -> f64 {
    match schedule {
        Schedule::Constant => base,
        Schedule::Cosine => 0.5 * base * (1.0 + (PI * t as f64 / total.max(1) as f64).cos()),
    }
}

#[derive(Debug, Clone)]
struct Slot {
    m: Tensor,
    v: Option<Tensor>,
}

/// SGD with momentum or Adam over a fixed, ordered parameter list. Parameters
/// without a gradient in a step are left untouched.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    slots: Vec<Option<Slot>>,
    steps: u64,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig) -> Self {
        Self {
            cfg,
            slots: Vec::new(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) {
        if self.slots.len() < params.len() {
            self.slots.resize(params.len(), None);
        }
        self.steps += 1;
        let t = self.steps as i32;
        for (p, slot) in params.iter_mut().zip(self.slots.iter_mut()) {
            let Some(grad) = p.grad().cloned() else {
                continue;
            };
            if p.is_frozen() {
                continue;
            }
            let slot = slot.get_or_insert_with(|| Slot {
                m: Tensor::zeros(grad.shape()),
                v: matches!(self.cfg, OptimizerConfig::Adam { .. }).then(|| Tensor::zeros(grad.shape())),
            });
            match self.cfg {
                OptimizerConfig::SgdMomentum {
                    momentum, weight_decay, ..
                } => {
                    let w = p.value_mut();
                    for ((wi, gi), mi) in w.data_mut().iter_mut().zip(grad.data()).zip(slot.m.data_mut()) {
                        let g = gi + weight_decay * *wi;
                        *mi = momentum * *mi + g;
                        *wi -= lr * *mi;
                    }
                }
                OptimizerConfig::Adam {
                    beta1,
                    beta2,
                    eps,
                    weight_decay,
                    ..
                } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let v = slot.v.as_mut().expect("adam second moment");
                    let w = p.value_mut();
                    for (((wi, gi), mi), vi) in w
                        .data_mut()
                        .iter_mut()
                        .zip(grad.data())
                        .zip(slot.m.data_mut())
                        .zip(v.data_mut())
                    {
                        let g = gi + weight_decay * *wi;
                        *mi = beta1 * *mi + (1.0 - beta1) * g;
                        *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                        *wi -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}
