use super::Scalar;
use crate::error::{GeodistError, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub params: AdamParams,
}

impl AdamState {
    pub fn new(n_params: usize, params: AdamParams) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            params,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update, in place. Moments are held in f64 so the
/// update is the same whatever the storage precision.
pub fn adam_step<S: Scalar>(state: &mut AdamState, params: &mut [S], grads: &[S]) -> Result<()> {
    if params.len() != state.m.len() || grads.len() != params.len() {
        return Err(GeodistError::LengthMismatch {
            expected: state.m.len(),
            got: if params.len() != state.m.len() {
                params.len()
            } else {
                grads.len()
            },
        });
    }
    state.step += 1;
    let hp = state.params;
    let bc1 = 1.0 - hp.beta1.powi(state.step as i32);
    let bc2 = 1.0 - hp.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i].as_f64();
        state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
        state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        let upd = hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
        params[i] = S::from_f64(params[i].as_f64() - upd);
    }
    Ok(())
}
