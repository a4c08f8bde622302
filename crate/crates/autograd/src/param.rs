use std::sync::atomic::{AtomicU64, Ordering};

use crate::graph::Graph;
use crate::tensor::Tensor;

static NEXT_KEY: AtomicU64 = AtomicU64::new(1);

fn fresh_key() -> u64 {
    NEXT_KEY.fetch_add(1, Ordering::Relaxed)
}

/// A named trainable tensor with its accumulated gradient.
///
/// The key only identifies the parameter on a tape; it never influences
/// numerical results. Clones receive a fresh key.
#[derive(Debug)]
pub struct Param {
    name: String,
    value: Tensor,
    grad: Option<Tensor>,
    frozen: bool,
    key: u64,
}

impl Clone for Param {
    fn clone(&self) -> Self {
        Self {
            name: self.name.clone(),
            value: self.value.clone(),
            grad: self.grad.clone(),
            frozen: self.frozen,
            key: fresh_key(),
        }
    }
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Self {
            name: name.into(),
            value,
            grad: None,
            frozen: false,
            key: fresh_key(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor {
        &mut self.value
    }

    pub fn grad(&self) -> Option<&Tensor> {
        self.grad.as_ref()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub(crate) fn key(&self) -> u64 {
        self.key
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    /// Adds the gradient this parameter received on `graph`, if any.
    /// Returns whether a gradient was found.
    pub fn accumulate_grad(&mut self, graph: &Graph) -> bool {
        if self.frozen {
            return false;
        }
        let Some(g) = graph.param_grad(self) else {
            return false;
        };
        match &mut self.grad {
            Some(acc) => acc.add_assign(&g),
            None => self.grad = Some(g),
        }
        true
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}
