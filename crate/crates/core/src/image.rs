//! Image samples: H×W×C arrays with values in [0, 1].

use std::path::Path;

use image::{imageops::FilterType, DynamicImage, GrayImage, RgbImage};
use ndarray::{Array3, Array4, Axis};

use crate::error::{Error, Result};

/// Smallest accepted height/width.
pub const MIN_SIDE: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    /// (height, width, channels)
    pub pixels: Array3<f64>,
    pub source_id: String,
}

impl ImageSample {
    /// Builds a sample, checking every invariant.
    pub fn new(pixels: Array3<f64>, source_id: impl Into<String>) -> Result<Self> {
        let s = Self { pixels, source_id: source_id.into() };
        s.validate()?;
        Ok(s)
    }

    /// Builds a sample without the minimum-size check (pixel range and
    /// channel count are still enforced).
    pub fn new_unchecked_size(pixels: Array3<f64>, source_id: impl Into<String>) -> Result<Self> {
        let s = Self { pixels, source_id: source_id.into() };
        s.validate_values()?;
        Ok(s)
    }

    pub fn zeros(height: usize, width: usize, channels: usize, source_id: &str) -> Self {
        Self { pixels: Array3::zeros((height, width, channels)), source_id: source_id.into() }
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn channels(&self) -> usize {
        self.pixels.dim().2
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.pixels.dim()
    }

    pub fn num_elements(&self) -> usize {
        self.pixels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w, _) = self.shape();
        if h < MIN_SIDE || w < MIN_SIDE {
            return Err(Error::ImageTooSmall { height: h, width: w, min: MIN_SIDE });
        }
        self.validate_values()
    }

    fn validate_values(&self) -> Result<()> {
        let c = self.channels();
        if c != 1 && c != 3 {
            return Err(Error::InvalidImage(format!("{c} channels (expected 1 or 3)")));
        }
        if let Some(v) = self.pixels.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidImage(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(())
    }

    /// Reads an image file, converting to RGB in [0, 1] and optionally
    /// resizing to (height, width).
    pub fn load(path: &Path, size: Option<(usize, usize)>) -> Result<Self> {
        let img = image::open(path)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_owned();
        Self::from_dynamic(img, size, stem)
    }

    pub fn from_dynamic(
        img: DynamicImage,
        size: Option<(usize, usize)>,
        source_id: String,
    ) -> Result<Self> {
        let img = match size {
            Some((h, w)) if (img.height() as usize, img.width() as usize) != (h, w) => {
                img.resize_exact(w as u32, h as u32, FilterType::Triangle)
            }
            _ => img,
        };
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let pixels = Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
            rgb.get_pixel(x as u32, y as u32)[c] as f64 / 255.0
        });
        Self::new(pixels, source_id)
    }

    /// Quantizes to 8 bits and writes a PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w, c) = self.shape();
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        if c == 1 {
            let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
                image::Luma([q(self.pixels[[y as usize, x as usize, 0]])])
            });
            img.save(path)?;
        } else {
            let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
                let p = |ch| q(self.pixels[[y as usize, x as usize, ch]]);
                image::Rgb([p(0), p(1), p(2)])
            });
            img.save(path)?;
        }
        Ok(())
    }
}

/// Clips every value to [0, 1].
pub fn clip01(mut x: Array3<f64>) -> Array3<f64> {
    x.mapv_inplace(|v| v.clamp(0.0, 1.0));
    x
}

/// Stacks equally shaped H×W×C arrays into an N×H×W×C batch.
pub fn stack_batch<'a>(items: impl IntoIterator<Item = &'a Array3<f64>>) -> Array4<f64> {
    let views: Vec<_> = items.into_iter().map(|a| a.view()).collect();
    ndarray::stack(Axis(0), &views).expect("batch items share a shape")
}

/// Splits an N×H×W×C batch back into owned samples.
pub fn unstack_batch(batch: &Array4<f64>) -> Vec<Array3<f64>> {
    batch.outer_iter().map(|v| v.to_owned()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_and_out_of_range() {
        let e = ImageSample::new(Array3::zeros((4, 4, 3)), "x").unwrap_err();
        assert!(matches!(e, Error::ImageTooSmall { .. }));
        let mut px = Array3::zeros((8, 8, 3));
        px[[0, 0, 0]] = 1.5;
        assert!(matches!(ImageSample::new(px, "x"), Err(Error::InvalidImage(_))));
        assert!(ImageSample::new(Array3::zeros((8, 8, 2)), "x").is_err());
    }

    #[test]
    fn png_roundtrip_is_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let px = Array3::from_shape_fn((8, 9, 3), |(y, x, c)| ((y * 9 + x + c) % 17) as f64 / 16.0);
        let img = ImageSample::new(px.clone(), "a").unwrap();
        let path = dir.path().join("a.png");
        img.save_png(&path).unwrap();
        let back = ImageSample::load(&path, None).unwrap();
        assert_eq!(back.shape(), (8, 9, 3));
        for (a, b) in px.iter().zip(back.pixels.iter()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}
