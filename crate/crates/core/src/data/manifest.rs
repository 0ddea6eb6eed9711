use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::density::{HeadPoints, KernelPolicy};
use crate::error::{Error, Result};

/// One annotated frame sequence.
///
/// Relative frame and ROI paths are resolved against the directory holding the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub frames: Vec<PathBuf>,
    pub points: Vec<HeadPoints>,
    #[serde(default)]
    pub roi: Option<PathBuf>,
    #[serde(default)]
    pub kernel: KernelPolicy,
    #[serde(default = "default_resize")]
    pub resize: f64,
    #[serde(default)]
    pub fps: Option<f64>,
    /// Directory relative paths are resolved against; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
    /// Number of points moved into the frame bounds while loading; not serialized.
    #[serde(skip)]
    pub clamped_points: usize,
}

fn default_resize() -> f64 {
    1.0
}

impl DatasetManifest {
    pub fn new(frames: Vec<PathBuf>, points: Vec<HeadPoints>, kernel: KernelPolicy) -> Self {
        DatasetManifest {
            frames,
            points,
            roi: None,
            kernel,
            resize: 1.0,
            fps: None,
            base_dir: PathBuf::new(),
            clamped_points: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_path(&self, index: usize) -> PathBuf {
        self.base_dir.join(&self.frames[index])
    }

    pub fn roi_path(&self) -> Option<PathBuf> {
        self.roi.as_ref().map(|p| self.base_dir.join(p))
    }

    /// Checks everything that does not need the filesystem.
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::Format { what: "manifest", reason });
        if self.frames.is_empty() {
            return bad("frame list is empty".into());
        }
        if self.frames.len() != self.points.len() {
            return bad(format!(
                "{} frames but {} annotation entries",
                self.frames.len(),
                self.points.len()
            ));
        }
        if !(self.resize.is_finite() && self.resize > 0.0) {
            return bad(format!("resize must be positive, got {}", self.resize));
        }
        if let Some(fps) = self.fps {
            if !(fps.is_finite() && fps > 0.0) {
                return bad(format!("fps must be positive, got {fps}"));
            }
        }
        match self.kernel {
            KernelPolicy::Fixed { sigma } if !(sigma.is_finite() && sigma > 0.0) => {
                return bad(format!("fixed sigma must be positive, got {sigma}"));
            }
            KernelPolicy::Adaptive { k, beta, fallback_sigma }
                if k == 0 || !(beta > 0.0) || !(fallback_sigma > 0.0) =>
            {
                return bad(format!(
                    "adaptive kernel needs k >= 1, beta > 0 and fallback_sigma > 0 (k={k}, beta={beta}, fallback_sigma={fallback_sigma})"
                ));
            }
            _ => {}
        }
        for (i, pts) in self.points.iter().enumerate() {
            if let Some(p) = pts.points.iter().find(|p| !(p[0].is_finite() && p[1].is_finite())) {
                return bad(format!("frame {i}: non-finite point {p:?}"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Parses, validates and checks a manifest against its frames.
///
/// Every frame must exist and share one size; points outside that size are clamped onto
/// the border and counted in `clamped_points`.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        what: "manifest",
        reason: format!("{}: {e}", path.display()),
    })?;
    m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    m.validate()?;

    let mut dims = None;
    for i in 0..m.len() {
        let frame = m.frame_path(i);
        if !frame.is_file() {
            return Err(Error::Format {
                what: "manifest",
                reason: format!("frame {i} is missing: {}", frame.display()),
            });
        }
        let wh = image::image_dimensions(&frame).map_err(|source| Error::Image { path: frame.clone(), source })?;
        match dims {
            None => dims = Some(wh),
            Some(first) if first != wh => {
                return Err(Error::Format {
                    what: "manifest",
                    reason: format!(
                        "frame {i} is {}x{} but frame 0 is {}x{}",
                        wh.0, wh.1, first.0, first.1
                    ),
                });
            }
            _ => {}
        }
    }
    if let Some(roi) = m.roi_path() {
        if !roi.is_file() {
            return Err(Error::Format {
                what: "manifest",
                reason: format!("ROI mask is missing: {}", roi.display()),
            });
        }
    }

    let (w, h) = dims.expect("non-empty frame list");
    m.clamped_points = m.points.iter_mut().map(|p| p.clamp_to(w as usize, h as usize)).sum();
    if m.clamped_points > 0 {
        log::warn!(
            "{}: clamped {} out-of-bounds points into {w}x{h}",
            path.display(),
            m.clamped_points
        );
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::save_gray;

    fn write_frames(dir: &Path, n: usize, h: usize, w: usize) -> Vec<PathBuf> {
        (0..n)
            .map(|i| {
                let name = PathBuf::from(format!("f{i}.pgm"));
                save_gray(dir.join(&name), h, w, &vec![0; h * w]).unwrap();
                name
            })
            .collect()
    }

    #[test]
    fn empty_frame_list_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        fs::write(&path, r#"{"frames": [], "points": []}"#).unwrap();
        let err = load_manifest(&path).unwrap_err();
        assert!(err.to_string().contains("empty"), "{err}");
    }

    #[test]
    fn malformed_entry_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        fs::write(&path, "{\n\"frames\": [\"a.pgm\"],\n\"points\": [[[1.0, \"x\"]]]\n}").unwrap();
        let err = load_manifest(&path).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn missing_frame_and_misaligned_points_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        fs::write(&path, r#"{"frames": ["nope.pgm"], "points": [[]]}"#).unwrap();
        assert!(load_manifest(&path).unwrap_err().to_string().contains("missing"));
        write_frames(dir.path(), 1, 4, 4);
        fs::write(&path, r#"{"frames": ["f0.pgm"], "points": []}"#).unwrap();
        assert!(load_manifest(&path).is_err());
    }

    #[test]
    fn ucsd_and_mall_style_policies_parse() {
        let dir = tempfile::tempdir().unwrap();
        let frames = write_frames(dir.path(), 2, 8, 12);
        let path = dir.path().join("m.json");
        let mut m = DatasetManifest::new(frames, vec![HeadPoints::default(); 2], KernelPolicy::FIXED_4);
        m.resize = 2.0;
        m.save(&path).unwrap();
        let ucsd = load_manifest(&path).unwrap();
        assert_eq!(ucsd.kernel, KernelPolicy::Fixed { sigma: 4.0 });
        assert_eq!(ucsd.resize, 2.0);

        fs::write(
            &path,
            r#"{"frames": ["f0.pgm"], "points": [[[1, 2]]], "kernel": {"type": "adaptive", "k": 3, "beta": 0.3}}"#,
        )
        .unwrap();
        let mall = load_manifest(&path).unwrap();
        assert_eq!(mall.kernel, KernelPolicy::ADAPTIVE);
        assert_eq!(mall.resize, 1.0);
    }

    #[test]
    fn mismatched_frame_sizes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_gray(dir.path().join("a.pgm"), 4, 4, &[0; 16]).unwrap();
        save_gray(dir.path().join("b.pgm"), 4, 5, &[0; 20]).unwrap();
        let path = dir.path().join("m.json");
        fs::write(&path, r#"{"frames": ["a.pgm", "b.pgm"], "points": [[], []]}"#).unwrap();
        assert!(load_manifest(&path).unwrap_err().to_string().contains("frame 1"));
    }

    #[test]
    fn out_of_bounds_points_are_clamped_and_reserialization_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let frames = write_frames(dir.path(), 1, 8, 10);
        let path = dir.path().join("m.json");
        let m = DatasetManifest::new(
            frames,
            vec![HeadPoints::new(vec![[-1.0, 3.0], [5.0, 20.0], [2.0, 2.0]])],
            KernelPolicy::FIXED_3,
        );
        m.save(&path).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.clamped_points, 2);
        assert_eq!(loaded.points[0].points[0], [0.0, 3.0]);
        assert!(loaded.points[0].points[1][1] < 8.0);

        let once = loaded.to_json().unwrap();
        let path2 = dir.path().join("m2.json");
        fs::write(&path2, &once).unwrap();
        let twice = load_manifest(&path2).unwrap().to_json().unwrap();
        assert_eq!(once, twice);
    }
}
