//! Generalized Kullback-Leibler divergence, mean-reduced, with an optional
//! L1 penalty on the two outer weight matrices.

use crate::error::{bail, Result};
use crate::matrix::Matrix;
use crate::model::NaeModel;

/// Floor applied inside logarithms.
pub const DEFAULT_LOSS_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossBreakdown {
    pub total: f64,
    pub data: f64,
    pub penalty: f64,
}

/// `(1/FT) Σ [X (log X − log X̂) − X + X̂]`.
///
/// Both arguments are floored to `eps` inside the logarithms and
/// `0 · log 0` counts as zero.
pub fn gkl_loss(x: &Matrix, x_hat: &Matrix, eps: f64) -> Result<f64> {
    x.check_same_shape(x_hat)?;
    let n = x.as_slice().len();
    if n == 0 {
        bail!(Shape, "empty matrices");
    }
    let mut acc = 0.0;
    for (&xv, &yv) in x.as_slice().iter().zip(x_hat.as_slice()) {
        if xv.is_nan() || yv.is_nan() {
            bail!(Numeric, "NaN in loss inputs");
        }
        acc += gkl_term(xv, yv, eps);
    }
    Ok(acc / n as f64)
}

#[inline]
pub(crate) fn gkl_term(x: f64, x_hat: f64, eps: f64) -> f64 {
    let log_ratio = if x == 0.0 { 0.0 } else { x * (libm::log(x.max(eps)) - libm::log(x_hat.max(eps))) };
    log_ratio - x + x_hat
}

/// `λ (‖W_eL‖₁ + ‖W_dL‖₁)`.
pub fn sparsity_penalty(model: &NaeModel, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let l = model.depth();
    lambda * (model.encoder_layer(l).abs_sum() + model.decoder_layer(l).abs_sum())
}

pub fn loss_with_sparsity(model: &NaeModel, x: &Matrix, lambda: f64, eps: f64) -> Result<LossBreakdown> {
    let x_hat = model.forward(x)?;
    let data = gkl_loss(x, &x_hat, eps)?;
    let penalty = sparsity_penalty(model, lambda);
    Ok(LossBreakdown { total: data + penalty, data, penalty })
}
