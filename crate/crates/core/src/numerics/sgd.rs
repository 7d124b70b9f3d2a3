use serde::{Deserialize, Serialize};

use super::{NumericsError, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayUnit {
    #[default]
    PerEpoch,
}

/// Plain SGD with per-epoch exponential learning-rate decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub decay_factor: f64,
    pub decay_unit: DecayUnit,
    /// Optional global gradient-norm clip applied before the update.
    pub clip_norm: Option<f64>,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            decay_factor: 0.1,
            decay_unit: DecayUnit::PerEpoch,
            clip_norm: None,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<(), NumericsError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NumericsError::Contract(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(NumericsError::Contract(format!(
                "decay_factor must lie in (0, 1], got {}",
                self.decay_factor
            )));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(NumericsError::Contract(format!(
                    "clip_norm must be positive, got {c}"
                )));
            }
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay_factor.powi(epoch as i32)
    }
}

/// `p <- p - lr_epoch * grad(p)`, then zeroes the gradients.
///
/// Every tensor passed in must be tracked; a tensor without a gradient
/// buffer is a contract error and nothing is updated.
pub fn sgd_step(
    params: &mut [Tensor],
    config: &SgdConfig,
    epoch: usize,
) -> Result<(), NumericsError> {
    if let Some(pos) = params.iter().position(|p| !p.requires_grad()) {
        return Err(NumericsError::Contract(format!(
            "parameter {pos} has no gradient"
        )));
    }
    let mut lr = config.learning_rate_at(epoch);
    if let Some(limit) = config.clip_norm {
        let sq: f64 = params
            .iter()
            .flat_map(|p| p.grad().unwrap_or(&[]).iter())
            .map(|g| g * g)
            .sum();
        let norm = sq.sqrt();
        if norm > limit {
            lr *= limit / norm;
        }
    }
    for p in params.iter_mut() {
        let (data, grad) = p.data_and_grad_mut();
        let grad = grad.expect("checked above");
        for (v, g) in data.iter_mut().zip(grad.iter_mut()) {
            *v -= lr * *g;
            *g = 0.0;
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite { op: "sgd_step" });
        }
    }
    Ok(())
}
