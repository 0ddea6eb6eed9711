use std::path::Path;

use crate::error::{Error, Result};

/// Binary region-of-interest mask; `true` marks cells that count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoiMask {
    h: usize,
    w: usize,
    cells: Vec<bool>,
}

impl RoiMask {
    pub fn new(h: usize, w: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != h * w {
            return Err(Error::LengthMismatch {
                op: "RoiMask::new",
                expected: h * w,
                actual: cells.len(),
            });
        }
        if !cells.contains(&true) {
            return Err(Error::invalid("RoiMask::new", "mask has no inside cells"));
        }
        Ok(RoiMask { h, w, cells })
    }

    pub fn full(h: usize, w: usize) -> Self {
        RoiMask {
            h,
            w,
            cells: vec![true; h * w],
        }
    }

    /// Loads a PGM (P2/P5) or PNG mask; nonzero pixels are inside.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .to_luma8();
        let (w, h) = img.dimensions();
        Self::new(h as usize, w as usize, img.pixels().map(|p| p.0[0] != 0).collect())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn inside(&self, y: usize, x: usize) -> bool {
        self.cells[y * self.w + x]
    }

    pub fn count_inside(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub(crate) fn check_dims(&self, h: usize, w: usize, op: &'static str) -> Result<()> {
        if (h, w) != (self.h, self.w) {
            return Err(Error::invalid(
                op,
                format!("ROI is {}x{}, map is {h}x{w}", self.h, self.w),
            ));
        }
        Ok(())
    }

    /// Block reduction by an integer factor: an output cell is inside when at least half
    /// of its `factor x factor` block is inside.
    pub fn downscale(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.h % factor != 0 || self.w % factor != 0 {
            return Err(Error::invalid(
                "RoiMask::downscale",
                format!("{}x{} mask is not divisible by {factor}", self.h, self.w),
            ));
        }
        let (oh, ow) = (self.h / factor, self.w / factor);
        let mut cells = Vec::with_capacity(oh * ow);
        for by in 0..oh {
            for bx in 0..ow {
                let inside = (0..factor)
                    .flat_map(|dy| (0..factor).map(move |dx| (by * factor + dy, bx * factor + dx)))
                    .filter(|&(y, x)| self.inside(y, x))
                    .count();
                cells.push(2 * inside >= factor * factor);
            }
        }
        Self::new(oh, ow, cells)
    }

    /// Nearest-neighbour resampling to `(h, w)`.
    pub fn resize_nearest(&self, h: usize, w: usize) -> Result<Self> {
        let sy = self.h as f64 / h as f64;
        let sx = self.w as f64 / w as f64;
        let mut cells = Vec::with_capacity(h * w);
        for y in 0..h {
            let iy = (((y as f64 + 0.5) * sy) as usize).min(self.h - 1);
            for x in 0..w {
                let ix = (((x as f64 + 0.5) * sx) as usize).min(self.w - 1);
                cells.push(self.inside(iy, ix));
            }
        }
        Self::new(h, w, cells)
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if y0 + h > self.h || x0 + w > self.w {
            return Err(Error::invalid("RoiMask::crop", "crop window exceeds mask"));
        }
        let cells = (y0..y0 + h)
            .flat_map(|y| (x0..x0 + w).map(move |x| (y, x)))
            .map(|(y, x)| self.inside(y, x))
            .collect();
        Self::new(h, w, cells)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_mask_rejected() {
        assert!(RoiMask::new(2, 2, vec![false; 4]).is_err());
        assert!(RoiMask::new(2, 2, vec![true; 3]).is_err());
    }

    #[test]
    fn downscale_uses_half_coverage() {
        // left half of the first 2x2 block inside (coverage 0.5), second block 1/4
        let cells = vec![
            true, false, true, false, //
            true, false, false, false,
        ];
        let m = RoiMask::new(2, 4, cells).unwrap();
        let small = m.downscale(2).unwrap();
        assert_eq!(small.cells(), &[true, false]);
        assert!(m.downscale(3).is_err());
    }

    #[test]
    fn resize_and_crop() {
        let m = RoiMask::new(2, 2, vec![true, false, false, true]).unwrap();
        let big = m.resize_nearest(4, 4).unwrap();
        assert!(big.inside(0, 1) && !big.inside(0, 2) && big.inside(3, 3));
        let c = big.crop(2, 2, 2, 2).unwrap();
        assert_eq!(c.count_inside(), 4);
        assert!(big.crop(3, 3, 2, 2).is_err());
    }
}
