use rayon::prelude::*;

use super::GradPair;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Max pooling over `(d, h, w)` windows. Padded positions never win.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MaxPool3d {
    pub size: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl MaxPool3d {
    /// 3x3x3 window, stride 1, padding 1: size-preserving.
    pub const STEM: MaxPool3d = MaxPool3d {
        size: [3, 3, 3],
        stride: [1, 1, 1],
        padding: [1, 1, 1],
    };

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let ins = [input.d(), input.h(), input.w()];
        let mut out = [0usize; 3];
        for axis in 0..3 {
            let (k, s, p) = (self.size[axis], self.stride[axis], self.padding[axis]);
            if k == 0 || s == 0 || p >= k {
                return Err(Error::invalid(
                    "maxpool3d",
                    format!("need size >= 1, stride >= 1, padding < size; got {self:?}"),
                ));
            }
            if ins[axis] + 2 * p < k {
                return Err(Error::invalid(
                    "maxpool3d",
                    format!("window {:?} larger than padded input {input}", self.size),
                ));
            }
            out[axis] = (ins[axis] + 2 * p - k) / s + 1;
        }
        Ok(Shape::new(input.n(), input.c(), out[0], out[1], out[2]))
    }
}

/// Winning input offset (within its `(d, h, w)` volume) for every output element.
#[derive(Debug, Clone)]
pub struct PoolSaved {
    pub input_shape: Shape,
    pub argmax: Vec<u32>,
}

/// Max pooling. Ties resolve to the first maximum in flat scan order of the window.
pub fn maxpool3d<T: Scalar>(x: &Tensor<T>, pool: &MaxPool3d) -> Result<GradPair<T, PoolSaved>> {
    let out_shape = pool.output_shape(x.shape())?;
    let [_, _, id, ih, iw] = x.shape().0;
    let [_, _, od, oh, ow] = out_shape.0;
    let [kd, kh, kw] = pool.size;
    let [sd, sh, sw] = pool.stride;
    let [pd, ph, pw] = pool.padding;
    let in_vol = x.shape().volume();
    let out_vol = out_shape.volume();
    let mut values = vec![T::zero(); out_shape.numel()];
    let mut argmax = vec![0u32; out_shape.numel()];
    if out_vol > 0 {
        values
            .par_chunks_mut(out_vol)
            .zip(argmax.par_chunks_mut(out_vol))
            .zip(x.data().par_chunks(in_vol))
            .for_each(|((vals, idxs), xin)| {
                let mut o = 0;
                for z in 0..od {
                    for y in 0..oh {
                        for xx in 0..ow {
                            let mut best = T::neg_infinity();
                            let mut best_at = usize::MAX;
                            for a in 0..kd {
                                let iz = (z * sd + a).wrapping_sub(pd);
                                if iz >= id {
                                    continue;
                                }
                                for b in 0..kh {
                                    let iy = (y * sh + b).wrapping_sub(ph);
                                    if iy >= ih {
                                        continue;
                                    }
                                    for c in 0..kw {
                                        let ix = (xx * sw + c).wrapping_sub(pw);
                                        if ix >= iw {
                                            continue;
                                        }
                                        let at = (iz * ih + iy) * iw + ix;
                                        let v = xin[at];
                                        if best_at == usize::MAX || v > best {
                                            best = v;
                                            best_at = at;
                                        }
                                    }
                                }
                            }
                            vals[o] = best;
                            idxs[o] = best_at as u32;
                            o += 1;
                        }
                    }
                }
            });
    }
    Ok(GradPair {
        value: Tensor::from_vec(out_shape, values)?,
        saved: PoolSaved {
            input_shape: x.shape(),
            argmax,
        },
    })
}

/// Routes every upstream element to its argmax input position.
pub fn maxpool3d_backward<T: Scalar>(g: &Tensor<T>, saved: &PoolSaved) -> Result<Tensor<T>> {
    if g.len() != saved.argmax.len() {
        return Err(Error::LengthMismatch {
            op: "maxpool3d_backward",
            expected: saved.argmax.len(),
            actual: g.len(),
        });
    }
    let in_vol = saved.input_shape.volume();
    let planes = saved.input_shape.n() * saved.input_shape.c();
    let out_vol = if planes == 0 { 0 } else { g.len() / planes };
    let mut dx = vec![T::zero(); saved.input_shape.numel()];
    if in_vol > 0 && out_vol > 0 {
        dx.par_chunks_mut(in_vol)
            .zip(g.data().par_chunks(out_vol))
            .zip(saved.argmax.par_chunks(out_vol))
            .for_each(|((d, gv), idx)| {
                for (&gg, &i) in gv.iter().zip(idx) {
                    d[i as usize] += gg;
                }
            });
    }
    Tensor::from_vec(saved.input_shape, dx)
}

/// Per-channel spatio-temporal mean, returned as an `(n, c, 1, 1, 1)` tensor.
pub fn global_avg_pool<T: Scalar>(o: &Tensor<T>) -> Result<Tensor<T>> {
    let s = o.shape();
    let vol = s.volume();
    if vol == 0 {
        return Err(Error::invalid("global_avg_pool", format!("empty volume in {s}")));
    }
    let inv = T::one() / T::from_usize(vol).unwrap();
    let data = o
        .data()
        .chunks_exact(vol)
        .map(|chunk| chunk.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::from_vec([s.n(), s.c(), 1, 1, 1], data)
}

/// Spreads `g[n, c] / (D * H * W)` uniformly over the pooled volume.
pub fn global_avg_pool_backward<T: Scalar>(g: &Tensor<T>, input_shape: Shape) -> Result<Tensor<T>> {
    let expected = Shape::new(input_shape.n(), input_shape.c(), 1, 1, 1);
    if g.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "global_avg_pool_backward",
            expected,
            actual: g.shape(),
        });
    }
    let vol = input_shape.volume();
    let inv = T::one() / T::from_usize(vol.max(1)).unwrap();
    let mut data = Vec::with_capacity(input_shape.numel());
    for &gv in g.data() {
        data.extend(std::iter::repeat(gv * inv).take(vol));
    }
    Tensor::from_vec(input_shape, data)
}
