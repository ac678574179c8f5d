use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{l2_normalize, FeatureExtractor, RawImage};
use crate::error::{Error, Result};
use crate::patch_grid::PatchRect;

/// Layout of the handcrafted descriptor: a `grid x grid` spatial layout of
/// unsigned gradient-orientation histograms followed by a grayscale
/// intensity histogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuiltinConfig {
    pub grid: usize,
    pub orientation_bins: usize,
    pub intensity_bins: usize,
}

impl Default for BuiltinConfig {
    fn default() -> Self {
        BuiltinConfig {
            grid: 2,
            orientation_bins: 8,
            intensity_bins: 8,
        }
    }
}

impl BuiltinConfig {
    pub fn dim(&self) -> usize {
        self.grid * self.grid * self.orientation_bins + self.intensity_bins
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 || self.orientation_bins == 0 || self.intensity_bins == 0 {
            return Err(Error::Config(format!(
                "builtin extractor needs positive grid and bin counts, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Handcrafted patch descriptor.
///
/// Gradients are central differences clamped at the patch border, so the
/// descriptor only depends on the pixels inside the rectangle. The gradient
/// block and the intensity block are each L2-normalized before the whole
/// vector is normalized, giving both blocks equal weight.
#[derive(Debug, Clone)]
pub struct BuiltinExtractor {
    cfg: BuiltinConfig,
}

impl BuiltinExtractor {
    pub fn new(cfg: BuiltinConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(BuiltinExtractor { cfg })
    }

    pub fn config(&self) -> &BuiltinConfig {
        &self.cfg
    }
}

impl FeatureExtractor for BuiltinExtractor {
    fn dim(&self) -> usize {
        self.cfg.dim()
    }

    fn extract_values(&self, img: &RawImage, rect: &PatchRect) -> Result<Vec<f64>> {
        if !rect.fits_in(img.width(), img.height()) {
            return Err(Error::InvalidArgument(format!(
                "patch {rect:?} lies outside the {}x{} image",
                img.width(),
                img.height()
            )));
        }
        let BuiltinConfig {
            grid,
            orientation_bins: obins,
            intensity_bins: ibins,
        } = self.cfg;
        let (w, h) = (rect.w, rect.h);

        let mut gray = vec![0f64; w * h];
        for yy in 0..h {
            for xx in 0..w {
                gray[yy * w + xx] = img.gray(rect.x + xx, rect.y + yy) as f64;
            }
        }

        let grad_len = grid * grid * obins;
        let mut desc = vec![0f64; grad_len + ibins];
        let bin_width = PI / obins as f64;
        for yy in 0..h {
            let up = yy.saturating_sub(1);
            let down = (yy + 1).min(h - 1);
            let cy = yy * grid / h;
            for xx in 0..w {
                let left = xx.saturating_sub(1);
                let right = (xx + 1).min(w - 1);
                let gx = gray[yy * w + right] - gray[yy * w + left];
                let gy = gray[down * w + xx] - gray[up * w + xx];
                let mag = gx.hypot(gy);
                if mag > 0.0 {
                    let mut angle = gy.atan2(gx);
                    if angle < 0.0 {
                        angle += PI;
                    }
                    if angle >= PI {
                        angle -= PI;
                    }
                    let bin = ((angle / bin_width) as usize).min(obins - 1);
                    let cx = xx * grid / w;
                    desc[(cy * grid + cx) * obins + bin] += mag;
                }
                let v = gray[yy * w + xx];
                let ibin = ((v * ibins as f64) as usize).min(ibins - 1);
                desc[grad_len + ibin] += 1.0;
            }
        }
        let (grad, inten) = desc.split_at_mut(grad_len);
        l2_normalize(grad);
        l2_normalize(inten);
        l2_normalize(&mut desc);
        Ok(desc)
    }
}
