//! Log-cosh loss on the log-domain residual.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor4};

/// `ln(cosh(z))` without overflow or cancellation.
///
/// Large arguments use `|z| + ln1p(exp(-2|z|)) - ln 2`; for `|z| <= 1` that
/// form cancels, so `ln1p(sinh(z)^2) / 2` is used instead.
pub fn log_cosh<T: Real>(z: T) -> T {
    let a = z.abs();
    if a <= T::one() {
        let s = a.sinh();
        T::lit(0.5) * (s * s).ln_1p()
    } else {
        a + (T::lit(-2.0) * a).exp().ln_1p() - T::lit(std::f64::consts::LN_2)
    }
}

/// Network prediction and target for the loss.
pub struct LossInputs<'a, T> {
    /// Predicted residual for the log-noisy input.
    pub residual_pred: &'a Tensor4<T>,
    /// `ln(noisy / clean)` element-wise.
    pub log_ratio: &'a Tensor4<T>,
    /// Mean of the log-speckle.
    pub c: T,
}

/// Summed log-cosh of `residual_pred + c - log_ratio` over every element,
/// with its gradient `tanh(z)` with respect to `residual_pred`.
pub fn loss<T: Real>(inputs: &LossInputs<'_, T>) -> Result<(f64, Tensor4<T>)> {
    let (pred, target) = (inputs.residual_pred, inputs.log_ratio);
    if pred.dims() != target.dims() {
        return Err(Error::shape(format!(
            "prediction {:?} vs log ratio {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let mut value = 0.0f64;
    let mut grad = Vec::with_capacity(pred.len());
    for (i, (&p, &t)) in pred.data().iter().zip(target.data()).enumerate() {
        let z = p + inputs.c - t;
        if !z.is_finite() {
            return Err(Error::numeric(format!("loss argument {i} is not finite")));
        }
        value += log_cosh(z).as_f64();
        grad.push(z.tanh());
    }
    Ok((value, Tensor4::from_vec(pred.dims(), grad)?))
}
