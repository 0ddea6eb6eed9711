use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{save_gray, DatasetManifest, Frame};
use crate::density::{HeadPoints, KernelPolicy};
use crate::error::{Error, Result};

/// Synthetic moving-crowd generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_frames: usize,
    pub height: usize,
    pub width: usize,
    /// Inclusive range the per-sequence person count is drawn from.
    pub min_people: usize,
    pub max_people: usize,
    /// Largest per-frame step of a person, in pixels.
    pub max_displacement: f64,
    /// Gaussian blob width of one person at mid-height.
    pub blob_sigma: f64,
    /// Relative blob-size change from the top to the bottom row (0 disables perspective).
    pub perspective: f64,
    /// Ground-truth kernel written into the emitted manifest.
    pub kernel: KernelPolicy,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            num_frames: 16,
            height: 64,
            width: 64,
            min_people: 10,
            max_people: 30,
            max_displacement: 1.5,
            blob_sigma: 2.0,
            perspective: 0.0,
            kernel: KernelPolicy::Fixed { sigma: 8.0 },
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(Error::InvalidConfig(s));
        if self.num_frames == 0 {
            return bad("num_frames must be at least 1".into());
        }
        if self.height == 0 || self.width == 0 || self.height % 16 != 0 || self.width % 16 != 0 {
            return bad(format!(
                "image dims {}x{} must be positive multiples of 16",
                self.height, self.width
            ));
        }
        if self.min_people > self.max_people {
            return bad(format!(
                "min_people {} exceeds max_people {}",
                self.min_people, self.max_people
            ));
        }
        if !(self.max_displacement >= 0.0 && self.max_displacement.is_finite()) {
            return bad(format!("max_displacement must be >= 0, got {}", self.max_displacement));
        }
        if !(self.blob_sigma > 0.0 && self.blob_sigma.is_finite()) {
            return bad(format!("blob_sigma must be positive, got {}", self.blob_sigma));
        }
        if !(self.perspective.abs() < 2.0) {
            return bad(format!("perspective must lie in (-2, 2), got {}", self.perspective));
        }
        let (lo_x, hi_x) = self.span(self.width);
        let (lo_y, hi_y) = self.span(self.height);
        if lo_x > hi_x || lo_y > hi_y {
            return bad(format!(
                "blob_sigma {} leaves no room inside {}x{}",
                self.blob_sigma, self.height, self.width
            ));
        }
        Ok(())
    }

    fn margin(&self) -> f64 {
        3.0 * self.blob_sigma * (1.0 + self.perspective.abs() / 2.0)
    }

    /// Range person centers are kept in, so blobs stay inside the frame.
    fn span(&self, extent: usize) -> (f64, f64) {
        (self.margin(), extent as f64 - self.margin())
    }

    fn sigma_at(&self, y: f64) -> f64 {
        self.blob_sigma * (1.0 + self.perspective * (y / self.height as f64 - 0.5))
    }
}

/// Generated frames with the exact person centers of every frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSequence {
    pub config: SynthConfig,
    pub frames: Vec<Frame>,
    pub points: Vec<HeadPoints>,
}

/// Generates a deterministic random-walk crowd: every person is a bright Gaussian blob on
/// a black background, moving at most `max_displacement` per frame and reflecting off the
/// borders of the allowed area.
pub fn synth_sequence(cfg: &SynthConfig) -> Result<SynthSequence> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let count = rng.gen_range(cfg.min_people..=cfg.max_people);
    let (lo_x, hi_x) = cfg.span(cfg.width);
    let (lo_y, hi_y) = cfg.span(cfg.height);
    let mut pos: Vec<[f64; 2]> = (0..count)
        .map(|_| [uniform(&mut rng, lo_x, hi_x), uniform(&mut rng, lo_y, hi_y)])
        .collect();

    let mut frames = Vec::with_capacity(cfg.num_frames);
    let mut points = Vec::with_capacity(cfg.num_frames);
    for t in 0..cfg.num_frames {
        if t > 0 {
            for p in &mut pos {
                let r = cfg.max_displacement * rng.gen::<f64>().sqrt();
                let theta = rng.gen::<f64>() * std::f64::consts::TAU;
                p[0] = reflect(p[0] + r * theta.cos(), lo_x, hi_x);
                p[1] = reflect(p[1] + r * theta.sin(), lo_y, hi_y);
            }
        }
        frames.push(render_blobs(cfg, &pos));
        points.push(HeadPoints::new(pos.clone()));
    }
    Ok(SynthSequence {
        config: cfg.clone(),
        frames,
        points,
    })
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn reflect(mut v: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    // A step never exceeds the span often enough to need more than a few folds.
    while v < lo || v > hi {
        if v < lo {
            v = 2.0 * lo - v;
        }
        if v > hi {
            v = 2.0 * hi - v;
        }
    }
    v
}

fn render_blobs(cfg: &SynthConfig, pos: &[[f64; 2]]) -> Frame {
    let (h, w) = (cfg.height, cfg.width);
    let mut data = vec![0.0f64; h * w];
    for p in pos {
        let s = cfg.sigma_at(p[1]);
        let r = (4.0 * s).ceil() as isize;
        let (cx, cy) = (p[0].floor() as isize, p[1].floor() as isize);
        for y in (cy - r).max(0)..=(cy + r).min(h as isize - 1) {
            let dy = y as f64 + 0.5 - p[1];
            for x in (cx - r).max(0)..=(cx + r).min(w as isize - 1) {
                let dx = x as f64 + 0.5 - p[0];
                data[y as usize * w + x as usize] += (-(dx * dx + dy * dy) / (2.0 * s * s)).exp();
            }
        }
    }
    Frame {
        channels: 1,
        h,
        w,
        data: data.into_iter().map(|v| v.min(1.0) as f32).collect(),
    }
}

impl SynthSequence {
    /// Writes `frames/frame_NNNN.pgm` and `manifest.json` under `dir`, in the same layout
    /// real datasets use. Returns the manifest path.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        let frame_dir = dir.join("frames");
        fs::create_dir_all(&frame_dir).map_err(|e| Error::io(&frame_dir, e))?;
        let mut names = Vec::with_capacity(self.frames.len());
        for (i, f) in self.frames.iter().enumerate() {
            let name = PathBuf::from("frames").join(format!("frame_{i:04}.pgm"));
            let pixels: Vec<u8> = f.data.iter().map(|&v| (v * 255.0).round() as u8).collect();
            save_gray(dir.join(&name), f.h, f.w, &pixels)?;
            names.push(name);
        }
        let manifest = DatasetManifest::new(names, self.points.clone(), self.config.kernel);
        let path = dir.join("manifest.json");
        manifest.save(&path)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_manifest;

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = SynthConfig { seed: 7, ..Default::default() };
        assert_eq!(synth_sequence(&cfg).unwrap(), synth_sequence(&cfg).unwrap());
        let other = synth_sequence(&SynthConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(other.points, synth_sequence(&SynthConfig::default()).unwrap().points);
    }

    #[test]
    fn zero_displacement_gives_a_static_crowd() {
        let cfg = SynthConfig { max_displacement: 0.0, seed: 3, ..Default::default() };
        let s = synth_sequence(&cfg).unwrap();
        assert!(s.points.windows(2).all(|p| p[0] == p[1]));
        assert!(s.frames.windows(2).all(|f| f[0] == f[1]));
    }

    #[test]
    fn count_is_in_range_and_constant() {
        for seed in 0..20 {
            let s = synth_sequence(&SynthConfig { seed, ..Default::default() }).unwrap();
            let n = s.points[0].len();
            assert!((10..=30).contains(&n));
            assert!(s.points.iter().all(|p| p.len() == n));
        }
    }

    #[test]
    fn steps_are_bounded() {
        let cfg = SynthConfig { max_displacement: 2.0, num_frames: 30, ..Default::default() };
        let s = synth_sequence(&cfg).unwrap();
        for pair in s.points.windows(2) {
            for (a, b) in pair[0].points.iter().zip(&pair[1].points) {
                assert!(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt() <= 2.0 + 1e-12);
            }
        }
    }

    #[test]
    fn blob_centroid_matches_annotation() {
        for seed in 0..10 {
            let cfg = SynthConfig {
                seed,
                min_people: 1,
                max_people: 1,
                perspective: 0.5,
                ..Default::default()
            };
            let s = synth_sequence(&cfg).unwrap();
            for (f, p) in s.frames.iter().zip(&s.points) {
                let (mut m, mut mx, mut my) = (0.0, 0.0, 0.0);
                for y in 0..f.h {
                    for x in 0..f.w {
                        let v = f.data[y * f.w + x] as f64;
                        m += v;
                        mx += v * (x as f64 + 0.5);
                        my += v * (y as f64 + 0.5);
                    }
                }
                let c = p.points[0];
                assert!((mx / m - c[0]).abs() < 0.5 && (my / m - c[1]).abs() < 0.5);
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = SynthConfig::default();
        assert!(synth_sequence(&SynthConfig { height: 60, ..base.clone() }).is_err());
        assert!(synth_sequence(&SynthConfig { max_displacement: -1.0, ..base.clone() }).is_err());
        assert!(synth_sequence(&SynthConfig { min_people: 5, max_people: 4, ..base.clone() }).is_err());
        assert!(synth_sequence(&SynthConfig { blob_sigma: 20.0, ..base }).is_err());
    }

    #[test]
    fn written_dataset_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { num_frames: 3, ..Default::default() };
        let s = synth_sequence(&cfg).unwrap();
        let path = s.write(dir.path()).unwrap();
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.clamped_points, 0);
        assert_eq!(m.points, s.points);
        assert_eq!(m.kernel, cfg.kernel);
    }
}
