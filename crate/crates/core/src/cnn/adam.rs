use serde::{Deserialize, Serialize};

use super::network::Parameters;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    m: Vec<S>,
    v: Vec<S>,
    t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![S::zero(); len],
            v: vec![S::zero(); len],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<S: Scalar>(
    params: &mut Parameters<S>,
    grads: &[S],
    state: &mut AdamState<S>,
    config: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Shape(format!(
            "adam: {} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let (b1, b2) = (S::lit(config.beta1), S::lit(config.beta2));
    let c1 = S::one() - b1.powi(state.t as i32);
    let c2 = S::one() - b2.powi(state.t as i32);
    let lr = S::lit(config.learning_rate);
    let eps = S::lit(config.epsilon);
    for (((p, &g), m), v) in params
        .as_mut_slice()
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (S::one() - b1) * g;
        *v = b2 * *v + (S::one() - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
