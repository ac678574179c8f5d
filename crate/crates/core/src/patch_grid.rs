//! Multi-scale sliding-window geometry.
//!
//! A scale with divisor `s` uses windows of `floor(W/s) x floor(H/s)` pixels
//! moved with a stride of half the window per axis. Windows that would cross
//! the right or bottom border are dropped, so every rectangle lies inside the
//! image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest side length accepted for an image.
pub const MIN_IMAGE_SIDE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageDims {
    pub width: usize,
    pub height: usize,
}

impl ImageDims {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width < MIN_IMAGE_SIDE || height < MIN_IMAGE_SIDE {
            return Err(Error::DegenerateGeometry(format!(
                "image {width}x{height} is smaller than {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}"
            )));
        }
        Ok(ImageDims { width, height })
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    /// 1-based scale index; 0 is reserved for the whole image.
    pub scale_id: u32,
}

impl PatchRect {
    /// The rectangle covering the whole image, tagged with scale 0.
    pub fn full(dims: ImageDims) -> Self {
        PatchRect {
            x: 0,
            y: 0,
            w: dims.width,
            h: dims.height,
            scale_id: 0,
        }
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.w > 0
            && self.h > 0
            && self.x.checked_add(self.w).is_some_and(|e| e <= width)
            && self.y.checked_add(self.h).is_some_and(|e| e <= height)
    }
}

/// Window sizes and stride for one axis.
#[derive(Debug, Clone, Copy)]
struct AxisGrid {
    window: usize,
    stride: usize,
    count: usize,
}

fn axis_grid(extent: usize, divisor: usize, axis: &str) -> Result<AxisGrid> {
    let window = extent / divisor;
    let stride = window / 2;
    if window == 0 || stride == 0 {
        return Err(Error::DegenerateGeometry(format!(
            "{axis} extent {extent} with divisor {divisor} gives window {window} and stride {stride}"
        )));
    }
    Ok(AxisGrid {
        window,
        stride,
        count: (extent - window) / stride + 1,
    })
}

fn grids(dims: ImageDims, divisor: usize) -> Result<(AxisGrid, AxisGrid)> {
    if divisor < 2 {
        return Err(Error::InvalidArgument(format!(
            "scale divisor must be at least 2, got {divisor}"
        )));
    }
    Ok((
        axis_grid(dims.width, divisor, "horizontal")?,
        axis_grid(dims.height, divisor, "vertical")?,
    ))
}

/// All windows of one scale in row-major order (y outer, x inner).
pub fn generate_patches(dims: ImageDims, divisor: usize, scale_id: u32) -> Result<Vec<PatchRect>> {
    let (gx, gy) = grids(dims, divisor)?;
    let mut out = Vec::with_capacity(gx.count * gy.count);
    for row in 0..gy.count {
        for col in 0..gx.count {
            out.push(PatchRect {
                x: col * gx.stride,
                y: row * gy.stride,
                w: gx.window,
                h: gy.window,
                scale_id,
            });
        }
    }
    Ok(out)
}

/// Number of windows `generate_patches` would return.
pub fn patch_count(dims: ImageDims, divisor: usize) -> Result<usize> {
    let (gx, gy) = grids(dims, divisor)?;
    Ok(gx.count * gy.count)
}

/// Scale divisors, one per local scale. Scale ids are assigned 1, 2, ...
/// in list order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleConfig {
    pub divisors: Vec<usize>,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        ScaleConfig {
            divisors: vec![2, 4],
        }
    }
}

impl ScaleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.divisors.is_empty() {
            return Err(Error::Config("at least one scale divisor is required".into()));
        }
        if let Some(d) = self.divisors.iter().find(|&&d| d < 2) {
            return Err(Error::Config(format!("scale divisor {d} is below 2")));
        }
        Ok(())
    }

    pub fn scale_ids(&self) -> impl Iterator<Item = u32> + '_ {
        (1..=self.divisors.len()).map(|i| i as u32)
    }

    /// Patches of every scale, grouped by scale in list order.
    pub fn patches(&self, dims: ImageDims) -> Result<Vec<PatchRect>> {
        let mut out = Vec::new();
        for (i, &d) in self.divisors.iter().enumerate() {
            out.extend(generate_patches(dims, d, i as u32 + 1)?);
        }
        Ok(out)
    }

    pub fn counts(&self, dims: ImageDims) -> Result<Vec<usize>> {
        self.divisors.iter().map(|&d| patch_count(dims, d)).collect()
    }
}
