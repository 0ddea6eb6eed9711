//! Counting metrics: MAE, the root-mean-square "MSE", and grid-localised GAME(L).

use serde::{Deserialize, Serialize};

use crate::density::{DensityMap, RoiMask};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Ground-truth and estimated count of one evaluated frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRecord {
    pub frame: usize,
    pub truth: f64,
    pub estimate: f64,
}

impl CountRecord {
    pub fn abs_error(&self) -> f64 {
        (self.truth - self.estimate).abs()
    }
}

/// Sum of all cells, restricted to the ROI when one is given.
pub fn count_of<T: Scalar>(cells: &[T], roi: Option<&RoiMask>) -> Result<f64> {
    if let Some(i) = cells.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "count_of".into(),
            index: i,
        });
    }
    match roi {
        None => Ok(cells.iter().map(|v| v.to_f64_lossy()).sum()),
        Some(mask) => {
            if mask.cells().len() != cells.len() {
                return Err(Error::LengthMismatch {
                    op: "count_of",
                    expected: mask.cells().len(),
                    actual: cells.len(),
                });
            }
            Ok(cells
                .iter()
                .zip(mask.cells())
                .filter(|(_, &inside)| inside)
                .map(|(v, _)| v.to_f64_lossy())
                .sum())
        }
    }
}

fn non_empty(records: &[CountRecord], op: &'static str) -> Result<()> {
    if records.is_empty() {
        return Err(Error::invalid(op, "no records"));
    }
    Ok(())
}

/// Mean absolute count error.
pub fn mae(records: &[CountRecord]) -> Result<f64> {
    non_empty(records, "mae")?;
    Ok(records.iter().map(CountRecord::abs_error).sum::<f64>() / records.len() as f64)
}

/// Square root of the mean squared count error.
pub fn mse(records: &[CountRecord]) -> Result<f64> {
    non_empty(records, "mse")?;
    let mean_sq = records
        .iter()
        .map(|r| (r.truth - r.estimate).powi(2))
        .sum::<f64>()
        / records.len() as f64;
    Ok(mean_sq.sqrt())
}

/// Splits `[0, len)` into `parts` runs of `len / parts`, the last absorbing the remainder.
fn grid_bounds(len: usize, parts: usize) -> Vec<(usize, usize)> {
    let step = len / parts;
    (0..parts)
        .map(|i| {
            let end = if i + 1 == parts { len } else { (i + 1) * step };
            (i * step, end)
        })
        .collect()
}

/// Per-frame GAME: sum over the `2^L x 2^L` regions of `|pred count - gt count|`.
pub fn game_frame(pred: &DensityMap, gt: &DensityMap, level: u32) -> Result<f64> {
    if (pred.h, pred.w) != (gt.h, gt.w) {
        return Err(Error::invalid(
            "game",
            format!("prediction is {}x{}, ground truth is {}x{}", pred.h, pred.w, gt.h, gt.w),
        ));
    }
    let parts = 1usize
        .checked_shl(level)
        .filter(|&p| p <= pred.h && p <= pred.w)
        .ok_or_else(|| {
            Error::invalid(
                "game",
                format!("level {level} leaves empty regions on a {}x{} map", pred.h, pred.w),
            )
        })?;
    for (name, m) in [("prediction", pred), ("ground truth", gt)] {
        if let Some(i) = m.grid.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("game {name}"),
                index: i,
            });
        }
    }
    let rows = grid_bounds(pred.h, parts);
    let cols = grid_bounds(pred.w, parts);
    let mut total = 0.0;
    for &(y0, y1) in &rows {
        for &(x0, x1) in &cols {
            let mut diff = 0.0;
            for y in y0..y1 {
                for x in x0..x1 {
                    diff += pred.at(y, x) - gt.at(y, x);
                }
            }
            total += diff.abs();
        }
    }
    Ok(total)
}

/// Dataset GAME(L): mean of [`game_frame`] over frames.
pub fn game(pairs: &[(DensityMap, DensityMap)], level: u32) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("game", "no frames"));
    }
    let mut sum = 0.0;
    for (pred, gt) in pairs {
        sum += game_frame(pred, gt, level)?;
    }
    Ok(sum / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::Provenance;
    use proptest::prelude::*;

    fn map(h: usize, w: usize, grid: Vec<f64>) -> DensityMap {
        DensityMap {
            h,
            w,
            grid,
            provenance: Provenance::Fixed,
        }
    }

    fn rec(truth: f64, estimate: f64) -> CountRecord {
        CountRecord {
            frame: 0,
            truth,
            estimate,
        }
    }

    #[test]
    fn count_cases() {
        assert_eq!(count_of::<f32>(&[0.0; 9], None).unwrap(), 0.0);
        let roi = RoiMask::new(1, 3, vec![true, false, true]).unwrap();
        assert_eq!(count_of(&[1.0f64, 5.0, 2.0], Some(&roi)).unwrap(), 3.0);
        assert!(count_of(&[1.0f64, f64::NAN], None).is_err());
    }

    #[test]
    fn perfect_estimates() {
        let r = vec![rec(3.0, 3.0), rec(7.5, 7.5)];
        assert_eq!(mae(&r).unwrap(), 0.0);
        assert_eq!(mse(&r).unwrap(), 0.0);
    }

    #[test]
    fn hand_evaluated_mae_mse() {
        let r = vec![rec(10.0, 12.0), rec(20.0, 17.0)];
        assert_eq!(mae(&r).unwrap(), 2.5);
        assert!((mse(&r).unwrap() - 6.5f64.sqrt()).abs() < 1e-15);
        assert!(mae(&[]).is_err() && mse(&[]).is_err());
    }

    #[test]
    fn quadrant_fixture() {
        let mut gt = vec![0.0; 16];
        let mut pred = vec![0.0; 16];
        gt[0] = 5.0; // top-left quadrant
        pred[3] = 5.0; // top-right quadrant
        let (p, g) = (map(4, 4, pred), map(4, 4, gt));
        assert_eq!(game_frame(&p, &g, 0).unwrap(), 0.0);
        assert_eq!(game_frame(&p, &g, 1).unwrap(), 10.0);
    }

    #[test]
    fn ragged_grid_absorbs_remainder() {
        assert_eq!(grid_bounds(5, 2), vec![(0, 2), (2, 5)]);
        let p = map(3, 3, vec![1.0; 9]);
        let g = map(3, 3, vec![0.0; 9]);
        assert_eq!(game_frame(&p, &g, 1).unwrap(), 9.0);
        assert!(game_frame(&p, &g, 2).is_err());
        assert!(game_frame(&p, &map(3, 2, vec![0.0; 6]), 0).is_err());
    }

    proptest! {
        #[test]
        fn mae_never_exceeds_mse(pairs in prop::collection::vec((0.0f64..100.0, -50.0f64..150.0), 1..40)) {
            let r: Vec<_> = pairs.iter().map(|&(t, e)| rec(t, e)).collect();
            prop_assert!(mae(&r).unwrap() <= mse(&r).unwrap() + 1e-12);
        }

        #[test]
        fn game_monotone_and_level_zero_is_abs_count_error(
            p in prop::collection::vec(0.0f64..2.0, 64),
            g in prop::collection::vec(0.0f64..2.0, 64),
        ) {
            let (pm, gm) = (map(8, 8, p.clone()), map(8, 8, g.clone()));
            let g0 = game_frame(&pm, &gm, 0).unwrap();
            let count_err = (p.iter().sum::<f64>() - g.iter().sum::<f64>()).abs();
            prop_assert!((g0 - count_err).abs() < 1e-9);
            let mut prev = g0;
            for level in 1..=3 {
                let cur = game_frame(&pm, &gm, level).unwrap();
                prop_assert!(cur + 1e-9 >= prev);
                prev = cur;
            }
        }

        #[test]
        fn metrics_are_permutation_invariant(pairs in prop::collection::vec((0.0f64..10.0, 0.0f64..10.0), 2..20)) {
            let r: Vec<_> = pairs.iter().map(|&(t, e)| rec(t, e)).collect();
            let mut rev = r.clone();
            rev.reverse();
            prop_assert!((mae(&r).unwrap() - mae(&rev).unwrap()).abs() < 1e-12);
            prop_assert!((mse(&r).unwrap() - mse(&rev).unwrap()).abs() < 1e-12);
        }
    }
}
