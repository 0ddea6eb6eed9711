use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trainer::check_compatible;
use crate::data::{window_specs, PreparedFrames, WindowMode};
use crate::density::{DensityMap, Provenance};
use crate::error::{Error, Result};
use crate::metrics::{game, mae, mse, CountRecord};
use crate::scalar::Scalar;
use crate::tca::Network;

/// Highest GAME level reported.
pub const MAX_GAME_LEVEL: u32 = 3;

/// Counting metrics of one evaluated sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub mae: f64,
    /// Root-mean-square count error.
    pub mse: f64,
    /// GAME(0) to GAME(3); `None` where the output map is too small for the grid.
    pub game: Vec<Option<f64>>,
    /// Output-map size `[h, w]`.
    pub output_dims: [usize; 2],
    pub roi_cells: usize,
    pub records: Vec<CountRecord>,
}

/// Metrics plus the ROI-masked maps they were computed from.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: EvalReport,
    pub predictions: Vec<DensityMap>,
    pub targets: Vec<DensityMap>,
}

/// Runs `net` over non-overlapping windows of `data` and scores every frame once.
///
/// Predictions are zeroed outside the ROI before counting; truths are the frames'
/// full-resolution in-ROI counts and GAME compares against the downscaled targets.
pub fn evaluate<T: Scalar>(net: &Network<T>, data: &PreparedFrames) -> Result<Evaluation> {
    check_compatible(&net.config, data).map_err(|e| Error::InvalidConfig(format!("incompatible checkpoint: {e}")))?;
    let specs = window_specs(data.len(), net.config.clip_length, WindowMode::Eval)?;
    let per_window: Vec<Vec<DensityMap>> = specs
        .par_iter()
        .map(|spec| {
            let clip = data.clip::<T>(spec)?;
            let out = net.predict(&clip.input)?;
            let plane = out.shape().plane();
            (spec.score_from..spec.frames.len())
                .map(|z| {
                    let cells = &out.data()[z * plane..(z + 1) * plane];
                    let (h, w) = data.roi_small.dims();
                    let grid = cells
                        .iter()
                        .zip(data.roi_small.cells())
                        .map(|(&v, &inside)| if inside { v.to_f64_lossy() } else { 0.0 })
                        .collect();
                    let map = DensityMap { h, w, grid, provenance: Provenance::Fixed };
                    match map.grid.iter().position(|v| !v.is_finite()) {
                        Some(index) => Err(Error::NonFinite {
                            context: format!("prediction for frame {}", spec.frames.start + z),
                            index,
                        }),
                        None => Ok(map),
                    }
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let predictions: Vec<DensityMap> = per_window.into_iter().flatten().collect();
    debug_assert_eq!(predictions.len(), data.len());
    score(predictions, data.targets.clone(), &data.truths, data.roi_small.count_inside())
}

/// Builds a report from aligned per-frame predictions, targets and true counts.
pub fn score(predictions: Vec<DensityMap>, targets: Vec<DensityMap>, truths: &[f64], roi_cells: usize) -> Result<Evaluation> {
    if predictions.len() != targets.len() || predictions.len() != truths.len() || predictions.is_empty() {
        return Err(Error::invalid(
            "evaluate",
            format!(
                "{} predictions, {} targets and {} truths",
                predictions.len(),
                targets.len(),
                truths.len()
            ),
        ));
    }
    let records: Vec<CountRecord> = predictions
        .iter()
        .zip(truths)
        .enumerate()
        .map(|(frame, (p, &truth))| CountRecord { frame, truth, estimate: p.sum() })
        .collect();
    let (h, w) = (predictions[0].h, predictions[0].w);
    let pairs: Vec<(DensityMap, DensityMap)> = predictions.iter().cloned().zip(targets.iter().cloned()).collect();
    let game = (0..=MAX_GAME_LEVEL)
        .map(|l| {
            if (1usize << l) <= h.min(w) {
                game(&pairs, l).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        report: EvalReport {
            frames: records.len(),
            mae: mae(&records)?,
            mse: mse(&records)?,
            game,
            output_dims: [h, w],
            roi_cells,
            records,
        },
        predictions,
        targets,
    })
}
