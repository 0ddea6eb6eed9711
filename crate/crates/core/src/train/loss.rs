use crate::density::RoiMask;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mean squared error over in-ROI cells of every `(h, w)` plane.
///
/// The denominator is `|ROI cells| x planes`; the gradient is `2 (pred - target) / denom`
/// inside the ROI and exactly zero outside it.
pub fn masked_mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, roi: &RoiMask) -> Result<(T, Tensor<T>)> {
    let s = pred.shape();
    if target.shape() != s {
        return Err(Error::ShapeMismatch {
            op: "masked_mse_loss",
            expected: s,
            actual: target.shape(),
        });
    }
    roi.check_dims(s.h(), s.w(), "masked_mse_loss")?;
    let planes = s.n() * s.c() * s.d();
    let denom = T::from_usize(roi.count_inside() * planes).expect("count fits the scalar type");
    let two = T::one() + T::one();
    let mut grad = Tensor::zeros(s);
    let mut total = T::zero();
    let plane = s.plane();
    if plane > 0 {
        for ((g, p), t) in grad
            .data_mut()
            .chunks_exact_mut(plane)
            .zip(pred.data().chunks_exact(plane))
            .zip(target.data().chunks_exact(plane))
        {
            for (i, &inside) in roi.cells().iter().enumerate() {
                if inside {
                    let diff = p[i] - t[i];
                    total += diff * diff;
                    g[i] = two * diff / denom;
                }
            }
        }
    }
    Ok((total / denom, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn equal_maps_give_zero_loss_and_gradient() {
        let t = Tensor::<f64>::from_fn(Shape::new(1, 1, 2, 2, 3), |i| i as f64);
        let (loss, g) = masked_mse_loss(&t, &t, &RoiMask::full(2, 3)).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_cell_roi() {
        let pred = Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 2, 2), vec![3.0, 5.0, -1.0, 2.0]).unwrap();
        let target = Tensor::from_vec(Shape::new(1, 1, 1, 2, 2), vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        let roi = RoiMask::new(2, 2, vec![true, false, false, false]).unwrap();
        let (loss, g) = masked_mse_loss(&pred, &target, &roi).unwrap();
        assert_eq!(loss, 9.0);
        assert_eq!(g.data(), &[6.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn full_roi_is_plain_mse() {
        let pred = Tensor::<f32>::from_fn(Shape::new(1, 1, 3, 2, 2), |i| i as f32 * 0.5);
        let target = Tensor::<f32>::from_fn(Shape::new(1, 1, 3, 2, 2), |i| (i % 3) as f32);
        let (loss, _) = masked_mse_loss(&pred, &target, &RoiMask::full(2, 2)).unwrap();
        let plain: f32 = pred
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f32>()
            / 12.0;
        assert!((loss - plain).abs() < 1e-6);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = Tensor::<f64>::zeros(Shape::new(1, 1, 1, 2, 2));
        let b = Tensor::<f64>::zeros(Shape::new(1, 1, 2, 2, 2));
        assert!(masked_mse_loss(&a, &b, &RoiMask::full(2, 2)).is_err());
        assert!(masked_mse_loss(&a, &a, &RoiMask::full(3, 2)).is_err());
    }
}
