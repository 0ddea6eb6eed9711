//! Ground-truth density maps: per-head Gaussian kernels, ROI masks and target downscaling.

mod kernel;
mod roi;

use serde::{Deserialize, Serialize};

pub use kernel::{adaptive_sigmas, render_density, render_with_policy, Sigmas};
pub use roi::RoiMask;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Default output stride of the counting network.
pub const DOWNSCALE: usize = 16;

/// Head annotations of one frame as `[x, y]` pixel coordinates. Pixel `(i, j)` covers
/// `[j, j + 1) x [i, i + 1)`, so valid points lie in `[0, W) x [0, H)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HeadPoints {
    pub points: Vec<[f64; 2]>,
}

impl HeadPoints {
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        HeadPoints { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Clamps every coordinate into `[0, w) x [0, h)`; returns how many points moved.
    pub fn clamp_to(&mut self, w: usize, h: usize) -> usize {
        let mut moved = 0;
        for p in &mut self.points {
            let before = *p;
            p[0] = clamp_coord(p[0], w);
            p[1] = clamp_coord(p[1], h);
            if before != *p {
                moved += 1;
            }
        }
        moved
    }

    pub fn scaled(&self, factor: f64) -> Self {
        HeadPoints::new(self.points.iter().map(|p| [p[0] * factor, p[1] * factor]).collect())
    }

    /// Shifts by `(dx, dy)` and keeps only points inside `[0, w) x [0, h)`.
    pub fn shifted_within(&self, dx: f64, dy: f64, w: usize, h: usize) -> Self {
        HeadPoints::new(
            self.points
                .iter()
                .map(|p| [p[0] + dx, p[1] + dy])
                .filter(|p| p[0] >= 0.0 && p[0] < w as f64 && p[1] >= 0.0 && p[1] < h as f64)
                .collect(),
        )
    }
}

fn clamp_coord(v: f64, extent: usize) -> f64 {
    if v.is_nan() || extent == 0 {
        return 0.0;
    }
    v.clamp(0.0, (extent as f64).next_down())
}

/// How a dataset's density maps are generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum KernelPolicy {
    /// One Gaussian width for every head.
    Fixed { sigma: f64 },
    /// `sigma_i = beta * mean distance to the k nearest neighbours`; frames with fewer than
    /// two heads use `fallback_sigma`.
    Adaptive {
        k: usize,
        beta: f64,
        #[serde(default = "default_fallback_sigma")]
        fallback_sigma: f64,
    },
}

fn default_fallback_sigma() -> f64 {
    4.0
}

impl KernelPolicy {
    /// Sparse scenes with known head size (sigma = 4).
    pub const FIXED_4: KernelPolicy = KernelPolicy::Fixed { sigma: 4.0 };
    /// Denser scenes (sigma = 3).
    pub const FIXED_3: KernelPolicy = KernelPolicy::Fixed { sigma: 3.0 };
    /// k = 3 neighbours, beta = 0.3.
    pub const ADAPTIVE: KernelPolicy = KernelPolicy::Adaptive {
        k: 3,
        beta: 0.3,
        fallback_sigma: 4.0,
    };

    pub fn provenance(&self) -> Provenance {
        match self {
            KernelPolicy::Fixed { .. } => Provenance::Fixed,
            KernelPolicy::Adaptive { .. } => Provenance::Adaptive,
        }
    }
}

impl Default for KernelPolicy {
    fn default() -> Self {
        KernelPolicy::FIXED_4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Fixed,
    Adaptive,
}

/// Nonnegative `h x w` grid whose total mass is the head count.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMap {
    pub h: usize,
    pub w: usize,
    pub grid: Vec<f64>,
    pub provenance: Provenance,
}

impl DensityMap {
    pub fn zeros(h: usize, w: usize, provenance: Provenance) -> Self {
        DensityMap {
            h,
            w,
            grid: vec![0.0; h * w],
            provenance,
        }
    }

    pub fn sum(&self) -> f64 {
        self.grid.iter().sum()
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.grid[y * self.w + x]
    }

    /// As a `(1, 1, 1, h, w)` tensor.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        Tensor::from_vec(
            [1, 1, 1, self.h, self.w],
            self.grid.iter().map(|&v| T::from_f64_lossy(v)).collect(),
        )
        .expect("grid matches dims")
    }

    /// From any tensor whose last two axes are `(h, w)` and hold exactly one plane.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, provenance: Provenance) -> Result<Self> {
        let s = t.shape();
        if s.n() * s.c() * s.d() != 1 {
            return Err(Error::invalid("DensityMap::from_tensor", format!("expected a single plane, got {s}")));
        }
        Ok(DensityMap {
            h: s.h(),
            w: s.w(),
            grid: t.data().iter().map(|v| v.to_f64_lossy()).collect(),
            provenance,
        })
    }

    /// Zeroes every cell outside the ROI.
    pub fn apply_roi(&self, roi: &RoiMask) -> Result<Self> {
        roi.check_dims(self.h, self.w, "apply_roi")?;
        let grid = self
            .grid
            .iter()
            .zip(roi.cells())
            .map(|(&v, &inside)| if inside { v } else { 0.0 })
            .collect();
        Ok(DensityMap {
            grid,
            ..self.clone()
        })
    }
}

/// Zeroes every cell of every `(h, w)` plane of `t` that lies outside the ROI.
pub fn apply_roi_tensor<T: Scalar>(t: &Tensor<T>, roi: &RoiMask) -> Result<Tensor<T>> {
    let s = t.shape();
    roi.check_dims(s.h(), s.w(), "apply_roi")?;
    let plane = s.plane();
    let mut data = t.data().to_vec();
    if plane > 0 {
        for chunk in data.chunks_exact_mut(plane) {
            for (v, &inside) in chunk.iter_mut().zip(roi.cells()) {
                if !inside {
                    *v = T::zero();
                }
            }
        }
    }
    Tensor::from_vec(s, data)
}

/// Bilinear downscale by 1/16 followed by a 16^2 gain so total mass is kept.
pub fn downscale_gt(map: &DensityMap) -> Result<DensityMap> {
    downscale_gt_by(map, DOWNSCALE)
}

/// Bilinear downscale by `1/factor` followed by a `factor^2` gain.
pub fn downscale_gt_by(map: &DensityMap, factor: usize) -> Result<DensityMap> {
    if factor == 0 || map.h % factor != 0 || map.w % factor != 0 || map.h == 0 || map.w == 0 {
        return Err(Error::invalid(
            "downscale_gt",
            format!("{}x{} map is not divisible by {factor}", map.h, map.w),
        ));
    }
    let inv = 1.0 / factor as f64;
    let small = map.to_tensor::<f64>().bilinear_resize(inv, inv)?;
    let gain = (factor * factor) as f64;
    Ok(DensityMap {
        h: map.h / factor,
        w: map.w / factor,
        grid: small.data().iter().map(|&v| v * gain).collect(),
        provenance: map.provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamping_counts_moved_points() {
        let mut pts = HeadPoints::new(vec![[-1.0, 5.0], [3.0, 3.0], [10.0, 9.99]]);
        assert_eq!(pts.clamp_to(10, 10), 2);
        assert_eq!(pts.points[0], [0.0, 5.0]);
        assert!(pts.points[2][0] < 10.0 && pts.points[2][0] > 9.999);
        assert_eq!(pts.clamp_to(10, 10), 0);
    }

    #[test]
    fn roi_masking() {
        let map = DensityMap {
            h: 2,
            w: 2,
            grid: vec![1.0, 2.0, 3.0, 4.0],
            provenance: Provenance::Fixed,
        };
        assert_eq!(map.apply_roi(&RoiMask::full(2, 2)).unwrap(), map);
        let one = RoiMask::new(2, 2, vec![false, false, true, false]).unwrap();
        let masked = map.apply_roi(&one).unwrap();
        assert_eq!(masked.grid, vec![0.0, 0.0, 3.0, 0.0]);
        assert!(map.apply_roi(&RoiMask::full(2, 3)).is_err());
    }

    #[test]
    fn downscale_constant_map() {
        let map = DensityMap {
            h: 64,
            w: 48,
            grid: vec![0.01; 64 * 48],
            provenance: Provenance::Fixed,
        };
        let small = downscale_gt(&map).unwrap();
        assert_eq!((small.h, small.w), (4, 3));
        assert!(small.grid.iter().all(|&v| (v - 2.56).abs() < 1e-12));
        assert!((small.sum() - map.sum()).abs() < 1e-9);
        assert!(downscale_gt(&DensityMap::zeros(40, 32, Provenance::Fixed)).is_err());
    }

    #[test]
    fn downscale_smooth_map_keeps_mass() {
        // broad bumps (sigma >= 10 px) whose mass sits in the interior of a 64x64 frame
        let bumps = [(30.0, 33.0, 10.0, 3.0), (35.0, 29.5, 11.0, 5.0), (31.5, 36.0, 10.5, 2.0)];
        let mut grid = vec![0.0; 64 * 64];
        for y in 0..64 {
            for x in 0..64 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                grid[y * 64 + x] = bumps
                    .iter()
                    .map(|&(cx, cy, s, a)| a * (-((px - cx).powi(2) + (py - cy).powi(2)) / (2.0 * s * s)).exp())
                    .sum::<f64>();
            }
        }
        let map = DensityMap { h: 64, w: 64, grid, provenance: Provenance::Fixed };
        let small = downscale_gt(&map).unwrap();
        assert_eq!((small.h, small.w), (4, 4));
        let direct: f64 = map.grid.iter().sum();
        assert!((small.sum() - direct).abs() / direct < 0.01, "{} vs {direct}", small.sum());
    }

    #[test]
    fn policy_json() {
        let p: KernelPolicy = serde_json::from_str(r#"{"type":"adaptive","k":3,"beta":0.3}"#).unwrap();
        assert_eq!(p, KernelPolicy::ADAPTIVE);
        let f: KernelPolicy = serde_json::from_str(r#"{"type":"fixed","sigma":4}"#).unwrap();
        assert_eq!(f, KernelPolicy::FIXED_4);
    }
}
