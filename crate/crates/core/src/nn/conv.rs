use rand::Rng;
use rayon::prelude::*;

use super::{GradPair, Parameters};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Weights `(c_out, c_in, kd, kh, kw)`, optional bias, stride and zero padding per axis.
/// The 2D variant is `kd = 1, sd = 1, pd = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    pub weight: Tensor<T>,
    pub bias: Option<Vec<T>>,
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl<T: Scalar> ConvParams<T> {
    pub fn new(
        weight: Tensor<T>,
        bias: Option<Vec<T>>,
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Self> {
        let p = ConvParams {
            weight,
            bias,
            stride,
            padding,
        };
        p.validate()?;
        Ok(p)
    }

    /// Zero-initialised layer with a bias.
    pub fn zeros(
        c_out: usize,
        c_in: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Self> {
        let [kd, kh, kw] = kernel;
        Self::new(
            Tensor::zeros([c_out, c_in, kd, kh, kw]),
            Some(vec![T::zero(); c_out]),
            stride,
            padding,
        )
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, zero bias.
    pub fn init_uniform<R: Rng>(
        c_out: usize,
        c_in: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = Self::zeros(c_out, c_in, kernel, stride, padding)?;
        let fan_in = (c_in * kernel.iter().product::<usize>()) as f64;
        let bound = 1.0 / fan_in.sqrt();
        for w in p.weight.data_mut() {
            *w = T::from_f64_lossy(rng.gen_range(-bound..bound));
        }
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let [_, _, kd, kh, kw] = self.weight.shape().0;
        if self.c_out() == 0 || self.c_in() == 0 || kd == 0 || kh == 0 || kw == 0 {
            return Err(Error::invalid(
                "ConvParams",
                format!("kernel dims must be >= 1, got {}", self.weight.shape()),
            ));
        }
        if self.stride.contains(&0) {
            return Err(Error::invalid("ConvParams", "strides must be >= 1"));
        }
        if let Some(b) = &self.bias {
            if b.len() != self.c_out() {
                return Err(Error::LengthMismatch {
                    op: "ConvParams bias",
                    expected: self.c_out(),
                    actual: b.len(),
                });
            }
        }
        Ok(())
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape().n()
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape().c()
    }

    pub fn kernel(&self) -> [usize; 3] {
        let s = self.weight.shape();
        [s.d(), s.h(), s.w()]
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.c() != self.c_in() {
            return Err(Error::invalid(
                "conv_forward",
                format!("input has {} channels, kernel expects {}", input.c(), self.c_in()),
            ));
        }
        let k = self.kernel();
        let ins = [input.d(), input.h(), input.w()];
        let mut out = [0usize; 3];
        for axis in 0..3 {
            let padded = ins[axis] + 2 * self.padding[axis];
            if padded < k[axis] {
                return Err(Error::invalid(
                    "conv_forward",
                    format!(
                        "kernel {:?} larger than padded input {} on axis {axis}",
                        k, input
                    ),
                ));
            }
            out[axis] = (padded - k[axis]) / self.stride[axis] + 1;
        }
        Ok(Shape::new(input.n(), self.c_out(), out[0], out[1], out[2]))
    }

    /// Gradient container of matching layout, all zeros.
    pub fn zeros_like(&self) -> Self {
        ConvParams {
            weight: Tensor::zeros(self.weight.shape()),
            bias: self.bias.as_ref().map(|b| vec![T::zero(); b.len()]),
            stride: self.stride,
            padding: self.padding,
        }
    }
}

impl<T: Scalar> Parameters<T> for ConvParams<T> {
    fn slices(&self) -> Vec<(Shape, &[T])> {
        let mut v = vec![(self.weight.shape(), self.weight.data())];
        if let Some(b) = &self.bias {
            v.push((Shape::new(b.len(), 1, 1, 1, 1), b.as_slice()));
        }
        v
    }

    fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = vec![self.weight.data_mut()];
        if let Some(b) = &mut self.bias {
            v.push(b.as_mut_slice());
        }
        v
    }
}

/// Input of a convolution, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ConvSaved<T> {
    pub input: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    /// `weight` holds dW and `bias` holds dB.
    pub params: ConvParams<T>,
}

/// Output positions `o` in `[lo, hi)` for which `o * stride + k - pad` lands in `[0, len)`.
#[inline]
fn valid_range(out_len: usize, stride: usize, k: usize, pad: usize, len: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let top = len + pad;
    if top <= k {
        return (0, 0);
    }
    let hi = ((top - 1 - k) / stride + 1).min(out_len);
    (lo.min(hi), hi)
}

/// Output positions processed together; the column buffer of a tile holds
/// `c_in * taps * TILE_TARGET` values at most (plus one output row).
const TILE_TARGET: usize = 256;

/// Lowering of a convolution onto column tiles.
///
/// Output positions are cut into tiles of whole output rows. For a tile, row `k` of the
/// column buffer (`k` enumerating `(ci, a, b, c)` in that order) holds the input value each
/// output position of the tile multiplies with weight tap `k`, or zero in the padding.
struct Lowering {
    in_dims: [usize; 3],
    out_dims: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    c_in: usize,
    /// Output rows per tile.
    rows_per_tile: usize,
    /// Valid output column range for each kernel column offset.
    x_ranges: Vec<(usize, usize)>,
}

impl Lowering {
    fn new<T: Scalar>(p: &ConvParams<T>, input: Shape, output: Shape) -> Self {
        let in_dims = [input.d(), input.h(), input.w()];
        let out_dims = [output.d(), output.h(), output.w()];
        let ow = out_dims[2].max(1);
        let x_ranges = (0..p.kernel()[2])
            .map(|c| valid_range(out_dims[2], p.stride[2], c, p.padding[2], in_dims[2]))
            .collect();
        Lowering {
            in_dims,
            out_dims,
            kernel: p.kernel(),
            stride: p.stride,
            pad: p.padding,
            c_in: p.c_in(),
            rows_per_tile: (TILE_TARGET / ow).max(1),
            x_ranges,
        }
    }

    fn k(&self) -> usize {
        self.c_in * self.kernel.iter().product::<usize>()
    }

    fn total_rows(&self) -> usize {
        self.out_dims[0] * self.out_dims[1]
    }

    /// `(first output row, row count)` of every tile.
    fn tiles(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let total = self.total_rows();
        (0..total)
            .step_by(self.rows_per_tile)
            .map(move |r| (r, self.rows_per_tile.min(total - r)))
    }

    /// Visits every `(k, tile row)` pair of a tile. `f(k, ci, c, j0, in_row)` receives the
    /// tap's input channel and kernel column, the offset `j0` of the tile row inside the
    /// tile, and the flat start of the input row it reads within the channel-`ci` volume
    /// (`None` when that row lies in the padding).
    #[inline]
    fn for_each_row(&self, row0: usize, rows: usize, mut f: impl FnMut(usize, usize, usize, usize, Option<usize>)) {
        let [id, ih, iw] = self.in_dims;
        let oh = self.out_dims[1];
        let ow = self.out_dims[2];
        let [kd, kh, kw] = self.kernel;
        let [sd, sh, _] = self.stride;
        let [pd, ph, _] = self.pad;
        for ci in 0..self.c_in {
            for a in 0..kd {
                for b in 0..kh {
                    for c in 0..kw {
                        let k = ((ci * kd + a) * kh + b) * kw + c;
                        for r in 0..rows {
                            let (z, y) = ((row0 + r) / oh, (row0 + r) % oh);
                            let iz = (z * sd + a).checked_sub(pd).filter(|&v| v < id);
                            let iy = (y * sh + b).checked_sub(ph).filter(|&v| v < ih);
                            let start = match (iz, iy) {
                                (Some(iz), Some(iy)) => Some((iz * ih + iy) * iw),
                                _ => None,
                            };
                            f(k, ci, c, r * ow, start);
                        }
                    }
                }
            }
        }
    }

    /// Fills `col` (`k x len`, `len = rows * ow`) for one batch item.
    fn gather<T: Scalar>(&self, x: &Tensor<T>, n: usize, row0: usize, rows: usize, col: &mut [T]) {
        let ow = self.out_dims[2];
        let len = rows * ow;
        let sw = self.stride[2];
        let pw = self.pad[2];
        col.fill(T::zero());
        self.for_each_row(row0, rows, |k, ci, c, j0, start| {
            let Some(start) = start else { return };
            let (x_lo, x_hi) = self.x_ranges[c];
            if x_lo >= x_hi {
                return;
            }
            let xin = x.volume(n, ci);
            let dst = &mut col[k * len + j0 + x_lo..k * len + j0 + x_hi];
            let s0 = start + x_lo * sw + c - pw;
            if sw == 1 {
                dst.copy_from_slice(&xin[s0..s0 + dst.len()]);
            } else {
                for (j, d) in dst.iter_mut().enumerate() {
                    *d = xin[s0 + j * sw];
                }
            }
        });
    }

    /// Adds `col` back onto the input positions it was gathered from (adjoint of `gather`).
    fn scatter_add<T: Scalar>(&self, col: &[T], rows: usize, row0: usize, dx: &mut [T]) {
        let [id, ih, iw] = self.in_dims;
        let vol = id * ih * iw;
        let ow = self.out_dims[2];
        let len = rows * ow;
        let sw = self.stride[2];
        let pw = self.pad[2];
        self.for_each_row(row0, rows, |k, ci, c, j0, start| {
            let Some(start) = start else { return };
            let (x_lo, x_hi) = self.x_ranges[c];
            if x_lo >= x_hi {
                return;
            }
            let d = &mut dx[ci * vol..(ci + 1) * vol];
            let src = &col[k * len + j0 + x_lo..k * len + j0 + x_hi];
            let s0 = start + x_lo * sw + c - pw;
            if sw == 1 {
                for (dd, &v) in d[s0..s0 + src.len()].iter_mut().zip(src) {
                    *dd += v;
                }
            } else {
                for (j, &v) in src.iter().enumerate() {
                    d[s0 + j * sw] += v;
                }
            }
        });
    }
}

/// `dst += a * src`, elementwise.
#[inline]
fn axpy<T: Scalar>(dst: &mut [T], a: T, src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

/// Dot product with eight interleaved partial sums combined in a fixed order, so the result
/// depends only on the inputs.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let (ca, cb) = (&a[i * 8..i * 8 + 8], &b[i * 8..i * 8 + 8]);
        for l in 0..8 {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Direct convolution (cross-correlation form). Each output element is
/// `bias + sum over (ci, a, b, c)` accumulated in exactly that order, padding taps included
/// as zero products.
pub fn conv_forward<T: Scalar>(x: &Tensor<T>, p: &ConvParams<T>) -> Result<Tensor<T>> {
    let out_shape = p.output_shape(x.shape())?;
    let mut out = vec![T::zero(); out_shape.numel()];
    let vol = out_shape.volume();
    if vol == 0 {
        return Tensor::from_vec(out_shape, out);
    }
    let low = Lowering::new(p, x.shape(), out_shape);
    let (c_out, k_len, ow) = (p.c_out(), low.k(), out_shape.w());
    let w = p.weight.data();
    let mut col = Vec::new();
    let mut tile_out = Vec::new();
    for n in 0..out_shape.n() {
        let out_n = &mut out[n * c_out * vol..(n + 1) * c_out * vol];
        for (row0, rows) in low.tiles() {
            let len = rows * ow;
            col.resize(k_len * len, T::zero());
            low.gather(x, n, row0, rows, &mut col);
            tile_out.resize(c_out * len, T::zero());
            tile_out.par_chunks_mut(len).enumerate().for_each(|(co, o)| {
                o.fill(p.bias.as_ref().map_or(T::zero(), |b| b[co]));
                let wk = &w[co * k_len..(co + 1) * k_len];
                for (k, &wv) in wk.iter().enumerate() {
                    axpy(o, wv, &col[k * len..(k + 1) * len]);
                }
            });
            for (co, o) in tile_out.chunks_exact(len).enumerate() {
                out_n[co * vol + row0 * ow..][..len].copy_from_slice(o);
            }
        }
    }
    Tensor::from_vec(out_shape, out)
}

pub fn conv_forward_saved<T: Scalar>(
    x: &Tensor<T>,
    p: &ConvParams<T>,
) -> Result<GradPair<T, ConvSaved<T>>> {
    let value = conv_forward(x, p)?;
    Ok(GradPair {
        value,
        saved: ConvSaved { input: x.clone() },
    })
}

/// Exact adjoint of [`conv_forward`]: gradients with respect to input, weights and bias.
pub fn conv_backward<T: Scalar>(
    g: &Tensor<T>,
    saved: &ConvSaved<T>,
    p: &ConvParams<T>,
) -> Result<ConvGrads<T>> {
    backward_impl(g, saved, p, true)
}

/// As [`conv_backward`] but skips the input gradient (first layer of a network).
pub fn conv_backward_params<T: Scalar>(
    g: &Tensor<T>,
    saved: &ConvSaved<T>,
    p: &ConvParams<T>,
) -> Result<ConvGrads<T>> {
    backward_impl(g, saved, p, false)
}

fn backward_impl<T: Scalar>(
    g: &Tensor<T>,
    saved: &ConvSaved<T>,
    p: &ConvParams<T>,
    want_dx: bool,
) -> Result<ConvGrads<T>> {
    let x = &saved.input;
    let out_shape = p.output_shape(x.shape())?;
    if g.shape() != out_shape {
        return Err(Error::ShapeMismatch {
            op: "conv_backward",
            expected: out_shape,
            actual: g.shape(),
        });
    }
    let low = Lowering::new(p, x.shape(), out_shape);
    let (c_out, k_len, ow) = (p.c_out(), low.k(), out_shape.w());
    let vol = out_shape.volume();
    let in_vol = x.shape().volume();
    let w = p.weight.data();

    let mut dw = vec![T::zero(); p.weight.len()];
    let mut dx = want_dx.then(|| vec![T::zero(); x.len()]);
    let mut col = Vec::new();
    let mut dcol = Vec::new();
    let mut g_tile = Vec::new();
    if vol > 0 {
        for n in 0..out_shape.n() {
            for (row0, rows) in low.tiles() {
                let len = rows * ow;
                g_tile.resize(c_out * len, T::zero());
                for (co, dst) in g_tile.chunks_exact_mut(len).enumerate() {
                    dst.copy_from_slice(&g.volume(n, co)[row0 * ow..][..len]);
                }
                col.resize(k_len * len, T::zero());
                low.gather(x, n, row0, rows, &mut col);
                dw.par_chunks_mut(k_len).enumerate().for_each(|(co, dwk)| {
                    let gc = &g_tile[co * len..(co + 1) * len];
                    for (k, acc) in dwk.iter_mut().enumerate() {
                        *acc += dot(gc, &col[k * len..(k + 1) * len]);
                    }
                });
                if let Some(dx) = dx.as_mut() {
                    dcol.resize(k_len * len, T::zero());
                    dcol.par_chunks_mut(len).enumerate().for_each(|(k, d)| {
                        d.fill(T::zero());
                        for co in 0..c_out {
                            axpy(d, w[co * k_len + k], &g_tile[co * len..(co + 1) * len]);
                        }
                    });
                    low.scatter_add(&dcol, rows, row0, &mut dx[n * low.c_in * in_vol..(n + 1) * low.c_in * in_vol]);
                }
            }
        }
    }

    let db = p.bias.as_ref().map(|_| {
        (0..c_out)
            .map(|co| {
                (0..out_shape.n())
                    .map(|n| g.volume(n, co).iter().copied().sum::<T>())
                    .sum::<T>()
            })
            .collect::<Vec<T>>()
    });

    Ok(ConvGrads {
        dx: dx.map(|d| Tensor::from_vec(x.shape(), d)).transpose()?,
        params: ConvParams {
            weight: Tensor::from_vec(p.weight.shape(), dw)?,
            bias: db,
            stride: p.stride,
            padding: p.padding,
        },
    })
}
