use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::Param;

/// Adam with decoupled weight decay. Decay multiplies each decaying
/// parameter by `1 - lr·λ` before the moment update is applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(params: &[Param]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    pub fn update(&mut self, params: &mut [Param], grads: &[Vec<f64>], lr: f64, weight_decay: f64) -> Result<(), TrainError> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(TrainError::ShapeMismatch(format!(
                "{} params, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.value.len() != g.len() {
                return Err(TrainError::ShapeMismatch(format!(
                    "{}: {} values, {} gradient entries",
                    p.name,
                    p.value.len(),
                    g.len()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let shrink = if p.decay { 1.0 - lr * weight_decay } else { 1.0 };
            for (((x, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *x = *x * shrink - lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
