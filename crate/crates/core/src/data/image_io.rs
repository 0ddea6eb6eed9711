use std::path::Path;

use image::{ColorType, DynamicImage, ExtendedColorType, ImageFormat};

use crate::error::{Error, Result};

/// Planar image with values in `[0, 1]`: `data[(ch * h + y) * w + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

fn image_err(path: &Path, source: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads a PGM/PPM/PNG frame. Grayscale images give one channel, anything with colour three.
pub fn load_frame(path: impl AsRef<Path>) -> Result<Frame> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    Ok(frame_from_image(&img))
}

fn frame_from_image(img: &DynamicImage) -> Frame {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = matches!(
        img.color(),
        ColorType::L8 | ColorType::L16 | ColorType::La8 | ColorType::La16
    );
    if gray {
        let luma = img.to_luma8();
        Frame {
            channels: 1,
            h,
            w,
            data: luma.pixels().map(|p| p.0[0] as f32 / 255.0).collect(),
        }
    } else {
        let rgb = img.to_rgb8();
        let mut data = vec![0.0; 3 * h * w];
        for (i, p) in rgb.pixels().enumerate() {
            for ch in 0..3 {
                data[ch * h * w + i] = p.0[ch] as f32 / 255.0;
            }
        }
        Frame {
            channels: 3,
            h,
            w,
            data,
        }
    }
}

/// Writes an 8-bit grayscale image: binary PGM (P5) for `.pgm` paths, otherwise the
/// format named by the extension.
pub fn save_gray(path: impl AsRef<Path>, h: usize, w: usize, pixels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if pixels.len() != h * w {
        return Err(Error::LengthMismatch {
            op: "save_gray",
            expected: h * w,
            actual: pixels.len(),
        });
    }
    let is_pgm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
        bytes.extend_from_slice(pixels);
        return std::fs::write(path, bytes).map_err(|e| Error::io(path, e));
    }
    let format = ImageFormat::from_path(path).unwrap_or(ImageFormat::Png);
    image::save_buffer_with_format(path, pixels, w as u32, h as u32, ExtendedColorType::L8, format)
        .map_err(|e| image_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.pgm");
        let pixels: Vec<u8> = (0..12).map(|i| (i * 20) as u8).collect();
        save_gray(&path, 3, 4, &pixels).unwrap();
        let raw = std::fs::read(&path).unwrap();
        assert_eq!(&raw[..2], b"P5");
        let f = load_frame(&path).unwrap();
        assert_eq!((f.channels, f.h, f.w), (1, 3, 4));
        assert_eq!(f.data[11], 220.0 / 255.0);
    }

    #[test]
    fn ascii_pgm_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        std::fs::write(&path, "P2\n2 2\n255\n0 255\n128 0\n").unwrap();
        let f = load_frame(&path).unwrap();
        assert_eq!(f.data, vec![0.0, 1.0, 128.0 / 255.0, 0.0]);
    }

    #[test]
    fn missing_file_is_an_error() {
        assert!(load_frame("/nonexistent/frame.pgm").is_err());
    }
}
