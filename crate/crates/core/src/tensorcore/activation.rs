use super::{Scalar, Tensor4};
use crate::error::Result;

/// Parametric ReLU with a single slope shared by all positions.
pub fn prelu<T: Scalar>(x: &Tensor4<T>, slope: T) -> Tensor4<T> {
    x.map(|v| if v >= T::zero() { v } else { slope * v })
}

/// Returns (grad_input, grad_slope).
pub fn prelu_backward<T: Scalar>(
    x: &Tensor4<T>,
    slope: T,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, T)> {
    x.expect_same_dims(grad_out)?;
    let mut da = 0.0f64;
    let gx = x.zip_map(grad_out, |v, g| if v >= T::zero() { g } else { slope * g })?;
    for (&v, &g) in x.data().iter().zip(grad_out.data()) {
        if v < T::zero() {
            da += (v * g).as_f64();
        }
    }
    Ok((gx, T::of(da)))
}

pub fn sigmoid<T: Scalar>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| {
        // split by sign so exp never overflows
        if v >= T::zero() {
            T::one() / (T::one() + (-v).exp())
        } else {
            let e = v.exp();
            e / (T::one() + e)
        }
    })
}

/// Gradient of [`sigmoid`] given its output.
pub fn sigmoid_backward<T: Scalar>(out: &Tensor4<T>, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
    out.zip_map(grad_out, |s, g| g * s * (T::one() - s))
}
