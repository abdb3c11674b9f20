use crate::error::{Error, Result};
use crate::tensor::ParamStore;

/// Adam with bias correction, taking β₁ per step so a schedule can cycle it.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        Self::with(store, 0.999, 1e-8)
    }

    pub fn with(store: &ParamStore, beta2: f64, eps: f64) -> Self {
        let zeros = || store.iter().map(|(_, p)| vec![0.0; p.value.numel()]).collect();
        Adam { beta2, eps, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients accumulated in `store`. Bias
    /// correction uses the current β₁ raised to the step count. A non-finite
    /// gradient aborts before any parameter is touched.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64, beta1: f64) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::Config("optimizer state does not match the parameter store".into()));
        }
        for (_, p) in store.iter() {
            if p.requires_grad {
                if let Some(i) = p.grad.iter().position(|g| !g.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "gradient of {} at index {i} is {} (step {})",
                        p.name,
                        p.grad[i],
                        self.step + 1
                    )));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b2, eps) = (self.beta2, self.eps);
        for ((_, p), (m, v)) in store.iter_mut().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            if !p.requires_grad {
                continue;
            }
            let w = p.value.data_mut();
            for i in 0..w.len() {
                let g = p.grad[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
