use std::collections::BTreeMap;

use super::ParamStore;
use crate::error::{Error, Result};

/// Stochastic gradient descent with classical momentum:
/// `v ← μ·v + g`, `p ← p − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: BTreeMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!("momentum must be in [0, 1), got {momentum}")));
        }
        Ok(Sgd {
            lr,
            momentum,
            velocity: BTreeMap::new(),
        })
    }

    /// Applies one update to every parameter and clears the gradients.
    /// Fails without touching anything if some parameter lacks a gradient.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        if let Some((name, _)) = params.iter().find(|(_, t)| t.grad().is_none()) {
            return Err(Error::MissingGrad(name.to_string()));
        }
        for (name, tensor) in params.iter_mut() {
            let grad = tensor.take_grad().expect("checked above");
            let v = self.velocity.entry(name.to_string()).or_insert_with(|| vec![0.0; grad.len()]);
            for ((p, vi), g) in tensor.data_mut().iter_mut().zip(v.iter_mut()).zip(&grad) {
                *vi = self.momentum * *vi + g;
                *p -= self.lr * *vi;
            }
        }
        Ok(())
    }
}
