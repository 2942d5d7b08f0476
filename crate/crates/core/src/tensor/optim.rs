use crate::error::{Error, Result};

use super::Tensor;

/// Stochastic gradient descent with heavy-ball momentum:
/// `v ← μ·v + g`, `p ← p − η·v`, then the gradient is zeroed.
#[derive(Debug, Clone)]
pub struct Sgd {
    lr: f64,
    momentum: f64,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr.is_finite() && lr >= 0.0) {
            return Err(Error::Config(format!("learning rate {lr} must be finite and non-negative")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum {momentum} outside [0, 1)")));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Updates every parameter in place. The parameter list must be the same
    /// (in count and shapes) on every call, since velocities are positional.
    pub fn step(&mut self, params: &mut [Tensor]) -> Result<()> {
        if let Some(i) = params.iter().position(|p| p.grad().is_none()) {
            return Err(Error::State(format!("parameter {i} has no gradient")));
        }
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} parameters, got {}",
                self.velocity.len(),
                params.len()
            )));
        }
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            if v.len() != p.numel() {
                return Err(Error::State("parameter size changed between steps".into()));
            }
            {
                let (grad, data) = p.grad_and_data_mut();
                let grad = grad.expect("checked above");
                for ((x, vel), g) in data.iter_mut().zip(v.iter_mut()).zip(grad) {
                    *vel = self.momentum * *vel + g;
                    *x -= self.lr * *vel;
                }
            }
            if let Some(g) = p.grad_mut() {
                g.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        Ok(())
    }
}
