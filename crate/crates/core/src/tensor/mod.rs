//! Dense `(n, c, d, h, w)` arrays in row-major order, `w` fastest.

mod dmap;

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use dmap::{load_dmap, read_dmap, save_dmap, write_dmap, DMAP_MAGIC, DMAP_VERSION};

/// Extents of the five tensor axes: batch, channel, depth (time), height, width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
pub struct Shape(pub [usize; 5]);

impl Shape {
    pub const fn new(n: usize, c: usize, d: usize, h: usize, w: usize) -> Self {
        Shape([n, c, d, h, w])
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.0[0]
    }
    #[inline]
    pub fn c(&self) -> usize {
        self.0[1]
    }
    #[inline]
    pub fn d(&self) -> usize {
        self.0[2]
    }
    #[inline]
    pub fn h(&self) -> usize {
        self.0[3]
    }
    #[inline]
    pub fn w(&self) -> usize {
        self.0[4]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Elements in one `(d, h, w)` volume.
    #[inline]
    pub fn volume(&self) -> usize {
        self.d() * self.h() * self.w()
    }

    #[inline]
    pub fn plane(&self) -> usize {
        self.h() * self.w()
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, z: usize, y: usize, x: usize) -> usize {
        (((n * self.c() + c) * self.d() + z) * self.h() + y) * self.w() + x
    }

    pub fn with_channels(mut self, c: usize) -> Self {
        self.0[1] = c;
        self
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, d, h, w] = self.0;
        write!(f, "({n}, {c}, {d}, {h}, {w})")
    }
}

impl From<[usize; 5]> for Shape {
    fn from(dims: [usize; 5]) -> Self {
        Shape(dims)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Shape>, value: T) -> Self {
        let shape = shape.into();
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn from_vec(shape: impl Into<Shape>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if data.len() != shape.numel() {
            return Err(Error::LengthMismatch {
                op: "Tensor::from_vec",
                expected: shape.numel(),
                actual: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: impl Into<Shape>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let data = (0..shape.numel()).map(&mut f).collect();
        Tensor { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, z: usize, y: usize, x: usize) -> T {
        self.data[self.shape.offset(n, c, z, y, x)]
    }

    /// The contiguous `(d, h, w)` volume of one batch item and channel.
    pub fn volume(&self, n: usize, c: usize) -> &[T] {
        let v = self.shape.volume();
        let start = (n * self.shape.c() + c) * v;
        &self.data[start..start + v]
    }

    /// The contiguous `(h, w)` plane at one batch item, channel and depth.
    pub fn plane(&self, n: usize, c: usize, z: usize) -> &[T] {
        let p = self.shape.plane();
        let start = self.shape.offset(n, c, z, 0, 0);
        &self.data[start..start + p]
    }

    pub fn reshape(self, shape: impl Into<Shape>) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|&v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    /// Index of the first non-finite element, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                expected: self.shape,
                actual: other.shape,
            });
        }
        Ok(())
    }

    /// Elementwise sum of two tensors of identical shape.
    pub fn elem_add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "elem_add")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape,
            data,
        })
    }

    /// In-place accumulation, used for gradient sums.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Scales every channel `ch` by `u[ch]`, for all batch items.
    pub fn channel_broadcast_mul(&self, u: &[T]) -> Result<Self> {
        let c = self.shape.c();
        if u.len() != c {
            return Err(Error::LengthMismatch {
                op: "channel_broadcast_mul",
                expected: c,
                actual: u.len(),
            });
        }
        let per_item: Vec<T> = (0..self.shape.n()).flat_map(|_| u.iter().copied()).collect();
        self.scale_channels(&per_item)
    }

    /// Scales channel `ch` of batch item `n` by `u[n * c + ch]`.
    pub fn scale_channels(&self, u: &[T]) -> Result<Self> {
        let nc = self.shape.n() * self.shape.c();
        if u.len() != nc {
            return Err(Error::LengthMismatch {
                op: "scale_channels",
                expected: nc,
                actual: u.len(),
            });
        }
        let vol = self.shape.volume();
        let mut data = Vec::with_capacity(self.data.len());
        if vol > 0 {
            for (chunk, &s) in self.data.chunks_exact(vol).zip(u) {
                data.extend(chunk.iter().map(|&v| v * s));
            }
        }
        Ok(Tensor {
            shape: self.shape,
            data,
        })
    }

    /// Bilinear resampling of the `h` and `w` axes by the given scale factors.
    ///
    /// Output extents are `round(h * fy)` and `round(w * fx)`. Sample positions use
    /// half-pixel-centred alignment, `src = (dst + 0.5) * in / out - 0.5`, clamped to the
    /// image, so a constant input stays exactly constant.
    pub fn bilinear_resize(&self, fy: f64, fx: f64) -> Result<Self> {
        if !(fy > 0.0 && fx > 0.0 && fy.is_finite() && fx.is_finite()) {
            return Err(Error::invalid(
                "bilinear_resize",
                format!("scale factors must be positive, got ({fy}, {fx})"),
            ));
        }
        let [n, c, d, h, w] = self.shape.0;
        let oh = (h as f64 * fy).round() as usize;
        let ow = (w as f64 * fx).round() as usize;
        if oh == 0 || ow == 0 {
            return Err(Error::invalid(
                "bilinear_resize",
                format!("output would be {oh}x{ow} for input {h}x{w}"),
            ));
        }
        let ys = axis_taps(h, oh);
        let xs = axis_taps(w, ow);
        let out_shape = Shape::new(n, c, d, oh, ow);
        let mut out = Vec::with_capacity(out_shape.numel());
        for plane in self.data.chunks_exact(h * w) {
            for &(y0, y1, ty) in &ys {
                let ty = T::from_f64_lossy(ty);
                let r0 = &plane[y0 * w..(y0 + 1) * w];
                let r1 = &plane[y1 * w..(y1 + 1) * w];
                for &(x0, x1, tx) in &xs {
                    let tx = T::from_f64_lossy(tx);
                    let top = lerp(r0[x0], r0[x1], tx);
                    let bottom = lerp(r1[x0], r1[x1], tx);
                    out.push(lerp(top, bottom, ty));
                }
            }
        }
        Ok(Tensor {
            shape: out_shape,
            data: out,
        })
    }
}

#[inline]
fn lerp<T: Scalar>(a: T, b: T, t: T) -> T {
    a + t * (b - a)
}

/// Source index pair and interpolation weight for each output coordinate.
fn axis_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elem_add_zero_and_values() {
        let z = Tensor::<f64>::zeros([1, 1, 1, 2, 2]);
        assert_eq!(z.elem_add(&z).unwrap(), z);

        let a = Tensor::from_vec([1, 1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec([1, 1, 1, 1, 2], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.elem_add(&b).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn elem_add_rejects_mismatch() {
        let a = Tensor::<f32>::zeros([1, 1, 1, 2, 2]);
        let b = Tensor::<f32>::zeros([1, 1, 1, 2, 3]);
        let err = a.elem_add(&b).unwrap_err();
        assert!(err.to_string().contains("elem_add"), "{err}");
    }

    #[test]
    fn channel_mul_cases() {
        let o = Tensor::<f64>::from_fn([2, 2, 1, 2, 2], |i| i as f64 - 3.0);
        assert_eq!(o.channel_broadcast_mul(&[1.0, 1.0]).unwrap(), o);
        assert!(o
            .channel_broadcast_mul(&[0.0, 0.0])
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));

        // channel means (1, 2) scaled by (0.5, 2) -> (0.5, 4)
        let o = Tensor::from_vec([1, 2, 1, 1, 2], vec![0.0, 2.0, 1.0, 3.0]).unwrap();
        let out = o.channel_broadcast_mul(&[0.5, 2.0]).unwrap();
        let mean = |c: usize| out.volume(0, c).iter().sum::<f64>() / 2.0;
        assert_eq!((mean(0), mean(1)), (0.5, 4.0));

        assert!(o.channel_broadcast_mul(&[1.0]).is_err());
    }

    #[test]
    fn bilinear_two_by_two_to_one() {
        let x = Tensor::from_vec([1, 1, 1, 2, 2], vec![0.0, 2.0, 2.0, 4.0]).unwrap();
        let y = x.bilinear_resize(0.5, 0.5).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 1, 1));
        assert_eq!(y.data(), &[2.0]);
    }

    #[test]
    fn bilinear_sixteenth_shape_and_constant() {
        let x = Tensor::<f32>::full([1, 1, 3, 64, 64], 0.37);
        let y = x.bilinear_resize(1.0 / 16.0, 1.0 / 16.0).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 3, 4, 4));
        assert!(y.data().iter().all(|&v| v == 0.37));
    }

    #[test]
    fn bilinear_rejects_empty_output() {
        let x = Tensor::<f32>::zeros([1, 1, 1, 4, 4]);
        assert!(x.bilinear_resize(0.1, 1.0).is_err());
        assert!(x.bilinear_resize(0.0, 1.0).is_err());
    }

    #[test]
    fn bilinear_upsample_interpolates() {
        let x = Tensor::from_vec([1, 1, 1, 1, 2], vec![0.0, 4.0]).unwrap();
        let y = x.bilinear_resize(1.0, 2.0).unwrap();
        // src positions -0.25 (clamped), 0.25, 0.75, 1.25 (clamped)
        assert_eq!(y.data(), &[0.0, 1.0, 3.0, 4.0]);
    }
}
