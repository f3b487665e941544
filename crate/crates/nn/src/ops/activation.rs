use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn leaky_relu_forward<T: Scalar>(input: &Tensor<T>, slope: f64) -> Tensor<T> {
    let s = T::of_f64(slope);
    input.map(|v| if v > T::zero() { v } else { v * s })
}

pub fn leaky_relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>, slope: f64) -> Result<Tensor<T>> {
    input.check_same_shape(grad_out)?;
    let s = T::of_f64(slope);
    let data = input.data().iter().zip(grad_out.data()).map(|(&x, &g)| if x > T::zero() { g } else { g * s }).collect();
    Tensor::from_vec(input.shape(), data)
}

/// Logistic function, evaluated without overflow for large |x|.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid)
}

/// Uses the cached forward output `s`: `ds/dx = s·(1 − s)`.
pub fn sigmoid_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    output.check_same_shape(grad_out)?;
    let data = output.data().iter().zip(grad_out.data()).map(|(&s, &g)| g * s * (T::one() - s)).collect();
    Tensor::from_vec(output.shape(), data)
}
