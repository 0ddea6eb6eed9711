use super::GradPair;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `max(0, x)`; the backward pass reads the stored output.
pub fn relu<T: Scalar>(x: &Tensor<T>) -> GradPair<T, ()> {
    GradPair {
        value: x.map(|v| if v > T::zero() { v } else { T::zero() }),
        saved: (),
    }
}

/// Subgradient 0 at exactly 0.
pub fn relu_backward<T: Scalar>(g: &Tensor<T>, forward: &GradPair<T, ()>) -> Result<Tensor<T>> {
    zip_grad(g, &forward.value, "relu_backward", |gv, y| {
        if y > T::zero() {
            gv
        } else {
            T::zero()
        }
    })
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> GradPair<T, ()> {
    GradPair {
        value: x.map(sigmoid_scalar),
        saved: (),
    }
}

pub fn sigmoid_backward<T: Scalar>(g: &Tensor<T>, forward: &GradPair<T, ()>) -> Result<Tensor<T>> {
    zip_grad(g, &forward.value, "sigmoid_backward", |gv, s| gv * s * (T::one() - s))
}

fn zip_grad<T: Scalar>(
    g: &Tensor<T>,
    y: &Tensor<T>,
    op: &'static str,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if g.shape() != y.shape() {
        return Err(Error::ShapeMismatch {
            op,
            expected: y.shape(),
            actual: g.shape(),
        });
    }
    let data = g.data().iter().zip(y.data()).map(|(&gv, &yv)| f(gv, yv)).collect();
    Tensor::from_vec(g.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_values_and_kink() {
        let x = Tensor::<f64>::from_vec([1, 1, 1, 1, 3], vec![-1.0, 2.0, 0.0]).unwrap();
        let y = relu(&x);
        assert_eq!(y.value.data(), &[0.0, 2.0, 0.0]);
        let g = relu_backward(&Tensor::full(x.shape(), 1.0), &y).unwrap();
        assert_eq!(g.data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
        // 1 / (1 + e^-4) and its mirror, evaluated independently
        let e4 = (4.0f64).exp();
        assert!((sigmoid_scalar(4.0f64) - e4 / (1.0 + e4)).abs() < 1e-15);
        assert!((sigmoid_scalar(4.0f64) - 0.9820).abs() < 5e-5);
        assert!((sigmoid_scalar(-4.0f64) - 0.0180).abs() < 5e-5);
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        let x = Tensor::<f64>::zeros([1, 1, 1, 1, 1]);
        let s = sigmoid(&x);
        let g = sigmoid_backward(&Tensor::full(x.shape(), 1.0), &s).unwrap();
        assert_eq!(g.data(), &[0.25]);
    }
}
