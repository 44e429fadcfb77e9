use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor4};

pub fn relu_forward<T: Real>(x: &Tensor4<T>) -> Result<Tensor4<T>> {
    x.ensure_finite("relu input")?;
    Ok(x.map(|v| v.max(T::zero())))
}

/// Passes `grad_out` where `x > 0`; the subgradient at zero is zero.
pub fn relu_backward<T: Real>(x: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    if x.dims() != grad_out.dims() {
        return Err(Error::shape(format!(
            "relu input {:?} vs gradient {:?}",
            x.dims(),
            grad_out.dims()
        )));
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor4::from_vec(x.dims(), data)
}
