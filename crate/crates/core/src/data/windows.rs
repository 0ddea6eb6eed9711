use std::ops::Range;

use crate::data::{load_frame, DatasetManifest, Frame};
use crate::density::{downscale_gt_by, render_with_policy, DensityMap, HeadPoints, KernelPolicy, RoiMask};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// A frame sequence after resizing, cropping and ground-truth rendering, ready to be cut
/// into clips.
#[derive(Debug, Clone)]
pub struct PreparedFrames {
    /// Network inputs, ROI-masked, at `h x w`.
    pub frames: Vec<Frame>,
    /// Annotations in the cropped input coordinate system.
    pub points: Vec<HeadPoints>,
    /// Downscaled, ROI-masked targets at `h / factor x w / factor`, each carrying the
    /// frame's true count.
    pub targets: Vec<DensityMap>,
    /// Per-frame true count: mass of the full-resolution ROI-masked ground truth.
    pub truths: Vec<f64>,
    pub roi: RoiMask,
    pub roi_small: RoiMask,
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub factor: usize,
}

impl PreparedFrames {
    /// Loads every frame of `m` and runs the full preprocessing pipeline:
    /// resize, center-crop to a multiple of `factor`, ROI masking, density rendering and
    /// downscaling by `factor`.
    pub fn from_manifest(m: &DatasetManifest, factor: usize) -> Result<Self> {
        m.validate()?;
        let frames = (0..m.len())
            .map(|i| load_frame(m.frame_path(i)))
            .collect::<Result<Vec<_>>>()?;
        let roi = m.roi_path().map(RoiMask::load).transpose()?;
        prepare(frames, &m.points, roi.as_ref(), &m.kernel, m.resize, factor)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Assembles the clip described by `spec`.
    pub fn clip<T: Scalar>(&self, spec: &WindowSpec) -> Result<ClipSample<T>> {
        let t = spec.frames.len();
        if spec.frames.end > self.len() || t == 0 {
            return Err(Error::invalid(
                "clip",
                format!("window {:?} outside a {}-frame sequence", spec.frames, self.len()),
            ));
        }
        let (c, h, w) = (self.channels, self.h, self.w);
        let mut input = Tensor::zeros(Shape::new(1, c, t, h, w));
        let plane = h * w;
        let data = input.data_mut();
        for (z, frame) in self.frames[spec.frames.clone()].iter().enumerate() {
            for ch in 0..c {
                let src = &frame.data[ch * plane..(ch + 1) * plane];
                let dst = &mut data[(ch * t + z) * plane..(ch * t + z + 1) * plane];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = T::from_f64_lossy(s as f64);
                }
            }
        }
        let (sh, sw) = self.roi_small.dims();
        let mut targets = Tensor::zeros(Shape::new(1, 1, t, sh, sw));
        for (dst, map) in targets
            .data_mut()
            .chunks_exact_mut(sh * sw)
            .zip(&self.targets[spec.frames.clone()])
        {
            for (d, &s) in dst.iter_mut().zip(&map.grid) {
                *d = T::from_f64_lossy(s);
            }
        }
        Ok(ClipSample {
            input,
            targets,
            roi_small: self.roi_small.clone(),
            frames: spec.frames.clone(),
            score_from: spec.score_from,
            truths: self.truths[spec.frames.clone()].to_vec(),
        })
    }
}

/// Runs the preprocessing pipeline on frames already in memory.
pub fn prepare(
    frames: Vec<Frame>,
    points: &[HeadPoints],
    roi: Option<&RoiMask>,
    kernel: &KernelPolicy,
    resize: f64,
    factor: usize,
) -> Result<PreparedFrames> {
    if frames.is_empty() || frames.len() != points.len() {
        return Err(Error::invalid(
            "prepare",
            format!("{} frames with {} annotation entries", frames.len(), points.len()),
        ));
    }
    if factor == 0 {
        return Err(Error::invalid("prepare", "factor must be positive"));
    }
    let (c, h0, w0) = (frames[0].channels, frames[0].h, frames[0].w);
    if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| (f.channels, f.h, f.w) != (c, h0, w0)) {
        return Err(Error::invalid(
            "prepare",
            format!("frame {i} is {}x{}x{} but frame 0 is {c}x{h0}x{w0}", f.channels, f.h, f.w),
        ));
    }

    let resized: Vec<Frame> = frames.into_iter().map(|f| resize_frame(f, resize)).collect::<Result<_>>()?;
    let (rh, rw) = (resized[0].h, resized[0].w);
    let (sy, sx) = (rh as f64 / h0 as f64, rw as f64 / w0 as f64);
    let (h, w) = (rh / factor * factor, rw / factor * factor);
    if h == 0 || w == 0 {
        return Err(Error::invalid(
            "prepare",
            format!("{rh}x{rw} frames are smaller than the {factor}-pixel output stride"),
        ));
    }
    let (y0, x0) = ((rh - h) / 2, (rw - w) / 2);

    let roi = match roi {
        Some(r) => r.resize_nearest(rh, rw)?.crop(y0, x0, h, w)?,
        None => RoiMask::full(h, w),
    };
    let roi_small = roi.downscale(factor)?;

    let mut out_frames = Vec::with_capacity(resized.len());
    let mut out_points = Vec::with_capacity(resized.len());
    let mut targets = Vec::with_capacity(resized.len());
    let mut truths = Vec::with_capacity(resized.len());
    for (frame, pts) in resized.iter().zip(points) {
        out_frames.push(crop_and_mask(frame, y0, x0, h, w, &roi));
        let moved = HeadPoints::new(pts.points.iter().map(|p| [p[0] * sx, p[1] * sy]).collect())
            .shifted_within(-(x0 as f64), -(y0 as f64), w, h);
        let full = render_with_policy(&moved, kernel, h, w)?.apply_roi(&roi)?;
        let truth = full.sum();
        truths.push(truth);
        targets.push(count_preserving_target(&full, truth, factor, &roi_small)?);
        out_points.push(moved);
    }
    Ok(PreparedFrames {
        frames: out_frames,
        points: out_points,
        targets,
        truths,
        roi,
        roi_small,
        channels: c,
        h,
        w,
        factor,
    })
}

/// Downscales `full` and rescales the result so its mass equals `truth` exactly; bilinear
/// sampling at a coarse stride only preserves mass on average over head positions.
fn count_preserving_target(full: &DensityMap, truth: f64, factor: usize, roi_small: &RoiMask) -> Result<DensityMap> {
    let mut small = downscale_gt_by(full, factor)?.apply_roi(roi_small)?;
    let mass = small.sum();
    if mass > 0.0 {
        let k = truth / mass;
        small.grid.iter_mut().for_each(|v| *v *= k);
    }
    Ok(small)
}

fn resize_frame(f: Frame, factor: f64) -> Result<Frame> {
    if factor == 1.0 {
        return Ok(f);
    }
    let t = Tensor::from_vec(Shape::new(1, f.channels, 1, f.h, f.w), f.data)?;
    let r = t.bilinear_resize(factor, factor)?;
    let s = r.shape();
    Ok(Frame {
        channels: f.channels,
        h: s.h(),
        w: s.w(),
        data: r.into_data(),
    })
}

fn crop_and_mask(f: &Frame, y0: usize, x0: usize, h: usize, w: usize, roi: &RoiMask) -> Frame {
    let mut data = Vec::with_capacity(f.channels * h * w);
    for ch in 0..f.channels {
        for y in 0..h {
            let row = &f.data[(ch * f.h + y0 + y) * f.w + x0..][..w];
            data.extend(row.iter().enumerate().map(|(x, &v)| if roi.inside(y, x) { v } else { 0.0 }));
        }
    }
    Frame {
        channels: f.channels,
        h,
        w,
        data,
    }
}

/// How a sequence is cut into clips.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowMode {
    /// Overlapping windows starting every `stride` frames; a final window is added so the
    /// tail of the sequence is seen.
    Train { stride: usize },
    /// Non-overlapping tiling; the last window is right-aligned and only its frames not
    /// already covered are scored.
    Eval,
}

/// Frame range of one clip and the offset within it from which frames are scored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowSpec {
    pub frames: Range<usize>,
    pub score_from: usize,
}

/// Computes the clip layout for a sequence of `n` frames and clip length `t`.
pub fn window_specs(n: usize, t: usize, mode: WindowMode) -> Result<Vec<WindowSpec>> {
    if t == 0 || t > n {
        return Err(Error::invalid(
            "make_windows",
            format!("clip length {t} does not fit a {n}-frame sequence"),
        ));
    }
    let mut specs = Vec::new();
    match mode {
        WindowMode::Train { stride } => {
            if stride == 0 {
                return Err(Error::invalid("make_windows", "window stride must be positive"));
            }
            let mut start = 0;
            while start + t <= n {
                specs.push(WindowSpec { frames: start..start + t, score_from: 0 });
                start += stride;
            }
            if specs.last().map_or(true, |s| s.frames.end < n) {
                specs.push(WindowSpec { frames: n - t..n, score_from: 0 });
            }
        }
        WindowMode::Eval => {
            let mut start = 0;
            while start + t <= n {
                specs.push(WindowSpec { frames: start..start + t, score_from: 0 });
                start += t;
            }
            if start < n {
                specs.push(WindowSpec { frames: n - t..n, score_from: start - (n - t) });
            }
        }
    }
    Ok(specs)
}

/// One network input clip and its targets.
#[derive(Debug, Clone)]
pub struct ClipSample<T> {
    /// `(1, c_img, T, H, W)`.
    pub input: Tensor<T>,
    /// `(1, 1, T, H / factor, W / factor)`, ROI-masked.
    pub targets: Tensor<T>,
    pub roi_small: RoiMask,
    /// Sequence indices covered by the clip.
    pub frames: Range<usize>,
    /// Frames before this offset were already scored by an earlier window.
    pub score_from: usize,
    /// True counts of the covered frames.
    pub truths: Vec<f64>,
}

/// Cuts a prepared sequence into clips of length `t`.
pub fn make_windows<T: Scalar>(data: &PreparedFrames, t: usize, mode: WindowMode) -> Result<Vec<ClipSample<T>>> {
    window_specs(data.len(), t, mode)?
        .iter()
        .map(|s| data.clip(s))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray(h: usize, w: usize, v: f32) -> Frame {
        Frame { channels: 1, h, w, data: vec![v; h * w] }
    }

    #[test]
    fn eval_tiling_of_2000_frames_gives_125_windows() {
        let specs = window_specs(2000, 16, WindowMode::Eval).unwrap();
        assert_eq!(specs.len(), 125);
        assert!(specs.iter().all(|s| s.score_from == 0));
    }

    #[test]
    fn clip_length_equal_to_sequence_gives_one_window() {
        for mode in [WindowMode::Eval, WindowMode::Train { stride: 3 }] {
            let specs = window_specs(16, 16, mode).unwrap();
            assert_eq!(specs, vec![WindowSpec { frames: 0..16, score_from: 0 }]);
        }
        assert!(window_specs(15, 16, WindowMode::Eval).is_err());
        assert!(window_specs(16, 0, WindowMode::Eval).is_err());
        assert!(window_specs(16, 4, WindowMode::Train { stride: 0 }).is_err());
    }

    #[test]
    fn last_eval_window_is_right_aligned() {
        let specs = window_specs(10, 4, WindowMode::Eval).unwrap();
        assert_eq!(specs.last().unwrap(), &WindowSpec { frames: 6..10, score_from: 2 });
    }

    #[test]
    fn train_windows_overlap_and_reach_the_end() {
        let specs = window_specs(10, 4, WindowMode::Train { stride: 4 }).unwrap();
        let starts: Vec<_> = specs.iter().map(|s| s.frames.start).collect();
        assert_eq!(starts, vec![0, 4, 6]);
        let specs = window_specs(10, 4, WindowMode::Train { stride: 2 }).unwrap();
        let starts: Vec<_> = specs.iter().map(|s| s.frames.start).collect();
        assert_eq!(starts, vec![0, 2, 4, 6]);
    }

    proptest! {
        #[test]
        fn eval_tiling_scores_each_frame_once_in_order(n in 1usize..300, t in 1usize..40) {
            prop_assume!(t <= n);
            let mut scored = Vec::new();
            for s in window_specs(n, t, WindowMode::Eval).unwrap() {
                prop_assert_eq!(s.frames.len(), t);
                scored.extend(s.frames.start + s.score_from..s.frames.end);
            }
            prop_assert_eq!(scored, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn pipeline_resizes_crops_and_scales_points() {
        let frames = vec![gray(21, 40, 0.5); 2];
        let pts = vec![HeadPoints::new(vec![[10.0, 10.0]]), HeadPoints::new(vec![[0.5, 0.5]])];
        let p = prepare(frames, &pts, None, &KernelPolicy::FIXED_4, 2.0, 16).unwrap();
        assert_eq!((p.h, p.w), (32, 80));
        assert_eq!(p.roi_small.dims(), (2, 5));
        // 42 rows crop to 32 starting at row 5.
        assert_eq!(p.points[0].points, vec![[20.0, 15.0]]);
        // The second head falls in the cropped-away margin.
        assert!(p.points[1].is_empty());
        assert!((p.truths[0] - 1.0).abs() < 1e-12);
        assert_eq!(p.truths[1], 0.0);
        assert!(p.frames[0].data.iter().all(|&v| v == 0.5));
        assert!((p.targets[0].sum() - p.truths[0]).abs() < 1e-12);
    }

    #[test]
    fn roi_masks_inputs_targets_and_truth() {
        let frames = vec![gray(32, 32, 1.0)];
        let cells = (0..32 * 32).map(|i| i % 32 < 16).collect();
        let roi = RoiMask::new(32, 32, cells).unwrap();
        let pts = vec![HeadPoints::new(vec![[4.0, 8.0], [24.0, 24.0]])];
        let p = prepare(frames, &pts, Some(&roi), &KernelPolicy::FIXED_3, 1.0, 16).unwrap();
        assert_eq!(p.frames[0].data[31], 0.0);
        assert_eq!(p.frames[0].data[0], 1.0);
        assert_eq!(p.targets[0].grid[1], 0.0);
        assert_eq!(p.targets[0].grid[3], 0.0);
        // The outside head leaks a fraction of a percent of its mass across the boundary.
        assert!(p.truths[0] > 1.0 && p.truths[0] < 1.01, "{}", p.truths[0]);
    }

    #[test]
    fn clips_carry_frames_in_order() {
        let frames: Vec<_> = (0..5).map(|i| gray(16, 16, i as f32)).collect();
        let p = prepare(frames, &vec![HeadPoints::default(); 5], None, &KernelPolicy::FIXED_4, 1.0, 16).unwrap();
        let clips = make_windows::<f64>(&p, 2, WindowMode::Eval).unwrap();
        assert_eq!(clips.len(), 3);
        let last = &clips[2];
        assert_eq!(last.input.shape(), Shape::new(1, 1, 2, 16, 16));
        assert_eq!(last.targets.shape(), Shape::new(1, 1, 2, 1, 1));
        assert_eq!(last.input.at(0, 0, 0, 0, 0), 3.0);
        assert_eq!(last.input.at(0, 0, 1, 0, 0), 4.0);
        assert_eq!(last.score_from, 1);
    }

    #[test]
    fn rgb_frames_give_three_channels() {
        let mut f = Frame { channels: 3, h: 16, w: 16, data: vec![0.0; 768] };
        f.data[256..512].fill(1.0);
        let p = prepare(vec![f], &[HeadPoints::default()], None, &KernelPolicy::FIXED_4, 1.0, 16).unwrap();
        let clip = p.clip::<f32>(&WindowSpec { frames: 0..1, score_from: 0 }).unwrap();
        assert_eq!(clip.input.shape().c(), 3);
        assert_eq!(clip.input.at(0, 1, 0, 5, 5), 1.0);
        assert_eq!(clip.input.at(0, 2, 0, 5, 5), 0.0);
    }
}
