//! Patch and image descriptors: the built-in handcrafted extractor, the
//! SSRF feature file format and PCA reduction.

mod builtin;
mod io;
mod pca;

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patch_grid::{ImageDims, PatchRect};

pub use builtin::{BuiltinConfig, BuiltinExtractor};
pub use io::{
    decode_feature_matrix, encode_feature_matrix, read_csv_features, read_feature_file,
    write_feature_file, FeatureMatrix,
};
pub use pca::PcaModel;

/// Which descriptor family a vector or dictionary belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTag {
    /// Scene-structure descriptors of local patches.
    Structure,
    /// Object descriptors of local patches.
    Object,
    /// Whole-image descriptor.
    Global,
}

impl SourceTag {
    pub const LOCAL: [SourceTag; 2] = [SourceTag::Structure, SourceTag::Object];

    pub fn name(self) -> &'static str {
        match self {
            SourceTag::Structure => "structure",
            SourceTag::Object => "object",
            SourceTag::Global => "global",
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            SourceTag::Structure => 0,
            SourceTag::Object => 1,
            SourceTag::Global => 2,
        }
    }

    pub(crate) fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(SourceTag::Structure),
            1 => Ok(SourceTag::Object),
            2 => Ok(SourceTag::Global),
            other => Err(Error::Malformed(format!("unknown source tag {other}"))),
        }
    }
}

impl std::fmt::Display for SourceTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Descriptor of one patch or of a whole image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub source: SourceTag,
    /// 0 for the whole image.
    pub scale_id: u32,
    pub patch_index: usize,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>, source: SourceTag, scale_id: u32, patch_index: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("feature vector must not be empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{source} feature vector")));
        }
        Ok(FeatureVector {
            values,
            source,
            scale_id,
            patch_index,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn normalized(mut self) -> Self {
        l2_normalize(&mut self.values);
        self
    }
}

/// Scales `v` to unit L2 norm in place. Zero vectors are left unchanged.
/// Returns the original norm.
pub fn l2_normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Image with intensities in `[0, 1]`, stored row-major and interleaved by channel.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    dims: ImageDims,
    channels: usize,
    pixels: Vec<f32>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f32>) -> Result<Self> {
        let dims = ImageDims::new(width, height)?;
        if channels == 0 {
            return Err(Error::InvalidArgument("image needs at least one channel".into()));
        }
        let expected = width * height * channels;
        if pixels.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "image pixel buffer",
                expected,
                found: pixels.len(),
            });
        }
        if let Some(v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "pixel intensity {v} outside [0, 1]"
            )));
        }
        Ok(RawImage {
            dims,
            channels,
            pixels,
        })
    }

    /// Single-channel image filled with `value`.
    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, 1, vec![value; width * height])
    }

    pub fn dims(&self) -> ImageDims {
        self.dims
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize, c: usize) -> f32 {
        self.pixels[(y * self.dims.width + x) * self.channels + c]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, c: usize, v: f32) {
        debug_assert!((0.0..=1.0).contains(&v));
        let w = self.dims.width;
        self.pixels[(y * w + x) * self.channels + c] = v;
    }

    /// Mean over channels.
    pub fn gray(&self, x: usize, y: usize) -> f32 {
        let base = (y * self.dims.width + x) * self.channels;
        let px = &self.pixels[base..base + self.channels];
        px.iter().sum::<f32>() / self.channels as f32
    }

    /// Decodes a PNG or JPEG file into an image with 1 (gray) or 3 (RGB) channels.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image(e.to_string()).at_path(path))?;
        let (channels, pixels): (usize, Vec<f32>) = if img.color().has_color() {
            let rgb = img.to_rgb8();
            (3, rgb.as_raw().iter().map(|&b| b as f32 / 255.0).collect())
        } else {
            let g = img.to_luma8();
            (1, g.as_raw().iter().map(|&b| b as f32 / 255.0).collect())
        };
        Self::new(img.width() as usize, img.height() as usize, channels, pixels)
            .map_err(|e| e.at_path(path))
    }

    /// Encodes as 8-bit PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let (w, h) = (self.dims.width as u32, self.dims.height as u32);
        let res = match self.channels {
            1 => image::GrayImage::from_raw(w, h, bytes).map(|i| i.save(path)),
            3 => image::RgbImage::from_raw(w, h, bytes).map(|i| i.save(path)),
            c => {
                return Err(Error::InvalidArgument(format!(
                    "cannot encode {c}-channel image as PNG"
                )))
            }
        };
        match res {
            Some(Ok(())) => Ok(()),
            Some(Err(e)) => Err(Error::Image(e.to_string()).at_path(path)),
            None => Err(Error::Image("pixel buffer size mismatch".into())),
        }
    }
}

/// A descriptor computed from an image rectangle.
pub trait FeatureExtractor: Send + Sync {
    fn dim(&self) -> usize;

    fn extract_values(&self, img: &RawImage, rect: &PatchRect) -> Result<Vec<f64>>;

    fn extract(
        &self,
        img: &RawImage,
        rect: &PatchRect,
        source: SourceTag,
        patch_index: usize,
    ) -> Result<FeatureVector> {
        let values = self.extract_values(img, rect)?;
        FeatureVector::new(values, source, rect.scale_id, patch_index)
    }
}

impl<T: FeatureExtractor + ?Sized> FeatureExtractor for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn extract_values(&self, img: &RawImage, rect: &PatchRect) -> Result<Vec<f64>> {
        (**self).extract_values(img, rect)
    }
}

/// Built-in descriptor of `rect` with the default layout.
pub fn extract_builtin(img: &RawImage, rect: &PatchRect, source: SourceTag) -> Result<FeatureVector> {
    BuiltinExtractor::new(BuiltinConfig::default())?.extract(img, rect, source, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_out_of_range_pixels() {
        assert!(RawImage::new(8, 8, 1, vec![1.5; 64]).is_err());
        assert!(RawImage::new(8, 8, 1, vec![0.5; 63]).is_err());
        assert!(RawImage::new(8, 8, 3, vec![0.5; 192]).is_ok());
    }

    #[test]
    fn feature_vector_rejects_non_finite() {
        assert!(matches!(
            FeatureVector::new(vec![1.0, f64::NAN], SourceTag::Global, 0, 0),
            Err(Error::NonFinite(_))
        ));
        assert!(FeatureVector::new(vec![], SourceTag::Global, 0, 0).is_err());
    }

    #[test]
    fn normalize_leaves_zero_vectors() {
        let mut z = vec![0.0; 3];
        assert_eq!(l2_normalize(&mut z), 0.0);
        assert_eq!(z, vec![0.0; 3]);
        let mut v = vec![3.0, 4.0];
        l2_normalize(&mut v);
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let pixels: Vec<f32> = (0..64 * 3).map(|i| (i % 256) as f32 / 255.0).collect();
        let img = RawImage::new(8, 8, 3, pixels).unwrap();
        img.save_png(&path).unwrap();
        assert_eq!(RawImage::load(&path).unwrap(), img);
    }
}
