use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::ndcore::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config_err(format!("adam.lr must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(config_err(format!("adam.{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(config_err(format!("adam.eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub t: u64,
}

impl AdamState {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a Matrix>) -> Self {
        let (m, v) = shapes
            .into_iter()
            .map(|p| (Matrix::zeros(p.rows(), p.cols()), Matrix::zeros(p.rows(), p.cols())))
            .unzip();
        Self { m, v, t: 0 }
    }
}

/// One bias-corrected Adam update.
///
/// Moments that decay below the smallest normal `f64` are flushed to zero,
/// as subnormal arithmetic is very slow.
///
/// All gradients are checked before any parameter moves, so a non-finite
/// gradient leaves params and state untouched.
pub fn adam_step(
    params: &mut [&mut Matrix],
    grads: &[Matrix],
    names: &[String],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || names.len() != params.len() {
        return Err(config_err(format!(
            "adam: {} params, {} grads, {} moments, {} names",
            params.len(),
            grads.len(),
            state.m.len(),
            names.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::Dimension {
                op: "adam_step",
                left: p.shape(),
                right: g.shape(),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient {
                param: names[i].clone(),
            });
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = flush(cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j]);
            v[j] = flush(cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j]);
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[inline]
fn flush(x: f64) -> f64 {
    if x.abs() < f64::MIN_POSITIVE {
        0.0
    } else {
        x
    }
}
