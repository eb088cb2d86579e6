use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

/// First and second moment estimates for one parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shape: &[usize], beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            step_count: 0,
            beta1,
            beta2,
            eps,
        }
    }

    /// One bias-corrected Adam update of `value` given `grad`, using the
    /// folded step size `lr * sqrt(1 - beta2^t) / (1 - beta1^t)`.
    pub fn step(&mut self, value: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()> {
        if value.shape() != grad.shape() || value.shape() != self.m.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: value.shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        if !(lr > 0.0) {
            return Err(Error::config(format!("learning rate must be positive, got {lr}")));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let step = lr * (1.0 - self.beta2.powi(t)).sqrt() / (1.0 - self.beta1.powi(t));
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let m = self.m.data_mut();
        let v = self.v.data_mut();
        for (((p, g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(m).zip(v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step * *m / (v.sqrt() + eps);
        }
        Ok(())
    }
}

/// Adam over every trainable parameter of one [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(set: &ParamSet, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let states = set
            .iter()
            .map(|(_, p)| AdamState::new(p.value.shape(), beta1, beta2, eps))
            .collect();
        Adam { lr, states }
    }

    pub fn with_defaults(set: &ParamSet, lr: f64) -> Self {
        Self::new(set, lr, 0.9, 0.999, 1e-8)
    }

    pub fn states(&self) -> &[AdamState] {
        &self.states
    }

    /// Applies the accumulated gradients of `set`. Any non-finite gradient
    /// rejects the whole update and leaves parameters and moments untouched.
    pub fn step(&mut self, set: &mut ParamSet) -> Result<()> {
        if let Some((name, _)) = set.iter().find(|(_, p)| p.trainable && !p.grad.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite gradient for parameter {name}; update rejected"
            )));
        }
        for (p, st) in set.params_mut().iter_mut().zip(&mut self.states) {
            if p.trainable {
                st.step(&mut p.value, &p.grad, self.lr)?;
            }
        }
        Ok(())
    }
}
