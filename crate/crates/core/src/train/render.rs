use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage};

use crate::density::DensityMap;
use crate::error::{Error, Result};

/// Width in pixels of the gap between montage panels.
const GAP: u32 = 2;

/// "Hot" colormap: black, red, yellow, white.
fn hot(level: u8) -> Rgb<u8> {
    let v = level as f64 / 255.0;
    let ch = |x: f64| (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    Rgb([ch(3.0 * v), ch(3.0 * v - 1.0), ch(3.0 * v - 2.0)])
}

/// 8-bit intensities of `map`, scaled so its maximum becomes 255. Negative cells clip to 0;
/// a map without positive cells is uniformly 0.
pub fn intensities(map: &DensityMap) -> Result<Vec<u8>> {
    if let Some(index) = map.grid.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "render".into(), index });
    }
    let max = map.grid.iter().cloned().fold(0.0, f64::max);
    Ok(map
        .grid
        .iter()
        .map(|&v| if max > 0.0 { (v.max(0.0) / max * 255.0).round() as u8 } else { 0 })
        .collect())
}

/// Heatmap of one map, each cell drawn as a `scale x scale` square.
pub fn heatmap(map: &DensityMap, scale: u32) -> Result<RgbImage> {
    montage(&[map], scale)
}

/// Side-by-side heatmaps (e.g. ground truth and prediction), each normalised to its own
/// maximum and separated by a black gap.
pub fn montage(maps: &[&DensityMap], scale: u32) -> Result<RgbImage> {
    let scale = scale.max(1);
    let Some(first) = maps.first() else {
        return Err(Error::invalid("render", "no maps to draw"));
    };
    let (h, w) = (first.h as u32, first.w as u32);
    if maps.iter().any(|m| (m.h as u32, m.w as u32) != (h, w)) {
        return Err(Error::invalid("render", "montage panels differ in size"));
    }
    let panels = maps.len() as u32;
    let mut img: RgbImage = ImageBuffer::new(panels * w * scale + (panels - 1) * GAP, h * scale);
    for (i, map) in maps.iter().enumerate() {
        let x0 = i as u32 * (w * scale + GAP);
        let levels = intensities(map)?;
        for y in 0..h * scale {
            for x in 0..w * scale {
                let level = levels[((y / scale) * w + x / scale) as usize];
                img.put_pixel(x0 + x, y, hot(level));
            }
        }
    }
    Ok(img)
}

/// Writes an image; the format follows the extension (PNG recommended).
pub fn save_image(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    img.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}
