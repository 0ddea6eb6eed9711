use super::{DensityMap, HeadPoints, KernelPolicy, Provenance};
use crate::error::{Error, Result};

/// Kernel widths for rendering: one shared value or one per head.
#[derive(Debug, Clone, PartialEq)]
pub enum Sigmas {
    Fixed(f64),
    PerPoint(Vec<f64>),
}

impl Sigmas {
    fn get(&self, i: usize) -> f64 {
        match self {
            Sigmas::Fixed(s) => *s,
            Sigmas::PerPoint(v) => v[i],
        }
    }
}

/// `sigma_i = beta * mean distance from head i to its min(k, n - 1) nearest neighbours`.
///
/// Neighbour distances are summed in ascending order.
pub fn adaptive_sigmas(pts: &HeadPoints, k: usize, beta: f64) -> Result<Vec<f64>> {
    let n = pts.len();
    if n < 2 {
        return Err(Error::invalid("adaptive_sigmas", format!("need at least 2 points, got {n}")));
    }
    if k == 0 || !(beta > 0.0) {
        return Err(Error::invalid("adaptive_sigmas", format!("need k >= 1 and beta > 0, got k={k}, beta={beta}")));
    }
    let k = k.min(n - 1);
    let mut nearest = Vec::with_capacity(k + 1);
    let sigmas = pts
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            nearest.clear();
            for (j, q) in pts.points.iter().enumerate() {
                if i == j {
                    continue;
                }
                let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
                if nearest.len() < k || d < nearest[k - 1] {
                    // keep the k smallest, sorted ascending
                    let at = nearest.partition_point(|&e| e <= d);
                    nearest.insert(at, d);
                    nearest.truncate(k);
                }
            }
            let mut sum = 0.0;
            for &d in &nearest {
                sum += d;
            }
            beta * (sum / k as f64)
        })
        .collect();
    Ok(sigmas)
}

/// Normalised 1D Gaussian weights over the in-image part of `[c - r, c + r]`, where
/// `c = floor(pos)`. Returns the first index and the weights.
fn axis_weights(pos: f64, sigma: f64, extent: usize) -> (usize, Vec<f64>) {
    let radius = (4.0 * sigma).ceil() as i64;
    let centre = pos.floor() as i64;
    let lo = (centre - radius).max(0);
    let hi = (centre + radius).min(extent as i64 - 1);
    let nearest = (pos - (centre as f64 + 0.5)).powi(2);
    let inv = 1.0 / (2.0 * sigma * sigma);
    // exponents are taken relative to the closest pixel centre, so that weight is 1
    let mut w: Vec<f64> = (lo..=hi)
        .map(|i| {
            let d = i as f64 + 0.5 - pos;
            (-(d * d - nearest) * inv).exp()
        })
        .collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    (lo as usize, w)
}

/// Sums one truncated (radius `ceil(4 sigma)`), renormalised Gaussian per head, so each
/// head contributes exactly 1 to the total.
pub fn render_density(pts: &HeadPoints, sigmas: &Sigmas, h: usize, w: usize) -> Result<DensityMap> {
    let provenance = match sigmas {
        Sigmas::Fixed(_) => Provenance::Fixed,
        Sigmas::PerPoint(_) => Provenance::Adaptive,
    };
    if let Sigmas::PerPoint(v) = sigmas {
        if v.len() != pts.len() {
            return Err(Error::LengthMismatch {
                op: "render_density",
                expected: pts.len(),
                actual: v.len(),
            });
        }
    }
    let mut map = DensityMap::zeros(h, w, provenance);
    if h == 0 || w == 0 {
        return if pts.is_empty() {
            Ok(map)
        } else {
            Err(Error::invalid("render_density", "points on an empty image"))
        };
    }
    for (i, p) in pts.points.iter().enumerate() {
        let sigma = sigmas.get(i);
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid("render_density", format!("sigma must be > 0, got {sigma} for head {i}")));
        }
        if !(p[0] >= 0.0 && p[0] < w as f64 && p[1] >= 0.0 && p[1] < h as f64) {
            return Err(Error::invalid(
                "render_density",
                format!("head {i} at ({}, {}) outside {w}x{h}", p[0], p[1]),
            ));
        }
        let (x0, wx) = axis_weights(p[0], sigma, w);
        let (y0, wy) = axis_weights(p[1], sigma, h);
        for (dy, &gy) in wy.iter().enumerate() {
            let row = &mut map.grid[(y0 + dy) * w + x0..][..wx.len()];
            for (cell, &gx) in row.iter_mut().zip(&wx) {
                *cell += gy * gx;
            }
        }
    }
    Ok(map)
}

/// Renders with the dataset's kernel policy.
pub fn render_with_policy(pts: &HeadPoints, policy: &KernelPolicy, h: usize, w: usize) -> Result<DensityMap> {
    match *policy {
        KernelPolicy::Fixed { sigma } => render_density(pts, &Sigmas::Fixed(sigma), h, w),
        KernelPolicy::Adaptive {
            k,
            beta,
            fallback_sigma,
        } => {
            if pts.len() < 2 {
                let mut map = render_density(pts, &Sigmas::Fixed(fallback_sigma), h, w)?;
                map.provenance = Provenance::Adaptive;
                return Ok(map);
            }
            let sigmas = adaptive_sigmas(pts, k, beta)?
                .into_iter()
                .map(|s| if s > 0.0 { s } else { fallback_sigma })
                .collect();
            render_density(pts, &Sigmas::PerPoint(sigmas), h, w)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_corners() {
        let pts = HeadPoints::new(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
        let s = adaptive_sigmas(&pts, 3, 0.3).unwrap();
        for v in s {
            assert!((v - 0.341_421_356_237_309_46).abs() < 1e-15, "{v}");
        }
    }

    #[test]
    fn two_points_use_single_neighbour() {
        let pts = HeadPoints::new(vec![[3.0, 4.0], [6.0, 8.0]]);
        let s = adaptive_sigmas(&pts, 3, 0.3).unwrap();
        assert_eq!(s, vec![0.3 * 5.0, 0.3 * 5.0]);
    }

    #[test]
    fn adaptive_rejects_too_few_points() {
        assert!(adaptive_sigmas(&HeadPoints::new(vec![[1.0, 1.0]]), 3, 0.3).is_err());
        assert!(adaptive_sigmas(&HeadPoints::default(), 3, 0.3).is_err());
    }

    #[test]
    fn single_head_mass_and_peak() {
        let pts = HeadPoints::new(vec![[119.5, 79.5]]);
        let map = render_density(&pts, &Sigmas::Fixed(4.0), 158, 238).unwrap();
        assert!((map.sum() - 1.0).abs() < 1e-12);
        // 1 / (sum_{k=-16}^{16} exp(-k^2 / 32))^2, evaluated independently
        let peak = map.at(79, 119);
        assert!((peak - 0.009_947_887_975_251_996).abs() < 1e-15, "{peak}");
        assert!(map.grid.iter().all(|&v| v <= peak));
    }

    #[test]
    fn empty_points_zero_map() {
        let map = render_density(&HeadPoints::default(), &Sigmas::Fixed(4.0), 10, 12).unwrap();
        assert!(map.grid.iter().all(|&v| v == 0.0));
        assert_eq!(map.grid.len(), 120);
    }

    #[test]
    fn rejects_bad_sigma() {
        let pts = HeadPoints::new(vec![[1.0, 1.0]]);
        assert!(render_density(&pts, &Sigmas::Fixed(0.0), 8, 8).is_err());
        assert!(render_density(&pts, &Sigmas::Fixed(-1.0), 8, 8).is_err());
        assert!(render_density(&pts, &Sigmas::PerPoint(vec![]), 8, 8).is_err());
    }

    #[test]
    fn corner_head_still_sums_to_one() {
        let pts = HeadPoints::new(vec![[0.1, 0.2], [31.9, 15.95]]);
        let map = render_density(&pts, &Sigmas::Fixed(4.0), 16, 32).unwrap();
        assert!((map.sum() - 2.0).abs() < 1e-12);
        assert!(map.grid.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn tiny_sigma_collapses_to_one_pixel() {
        let pts = HeadPoints::new(vec![[5.3, 2.9]]);
        let map = render_density(&pts, &Sigmas::Fixed(1e-4), 8, 8).unwrap();
        assert_eq!(map.at(2, 5), 1.0);
        assert!((map.sum() - 1.0).abs() < 1e-15);
    }
}
