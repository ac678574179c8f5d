//! Procedurally generated scene datasets for end-to-end checks.
//!
//! Every image is a random striped texture. In the [`SynthKind::Objects`]
//! variant the class decides which small bright glyph is stamped on it; in
//! [`SynthKind::Background`] the class only shifts the background brightness
//! and the glyphs are drawn from all shapes at random.

use std::f32::consts::PI;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::RawImage;
use crate::rng::{mix_seed, seeded, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Glyph {
    Cross,
    Ring,
    Diamond,
    Triangle,
}

impl Glyph {
    pub const ALL: [Glyph; 4] = [Glyph::Cross, Glyph::Ring, Glyph::Diamond, Glyph::Triangle];

    pub fn name(self) -> &'static str {
        match self {
            Glyph::Cross => "cross",
            Glyph::Ring => "ring",
            Glyph::Diamond => "diamond",
            Glyph::Triangle => "triangle",
        }
    }

    /// Whether the glyph covers offset `(u, v)` of a `size x size` box.
    fn covers(self, u: f32, v: f32, size: f32) -> bool {
        let c = (size - 1.0) / 2.0;
        let (dx, dy) = (u - c, v - c);
        let half = size / 2.0;
        let t = (size / 8.0).max(1.0);
        match self {
            Glyph::Cross => (dx - dy).abs() <= t * 0.75 || (dx + dy).abs() <= t * 0.75,
            Glyph::Ring => {
                let r = (dx * dx + dy * dy).sqrt();
                (r - (half - t)).abs() <= t * 0.75
            }
            Glyph::Diamond => {
                let m = dx.abs() + dy.abs();
                (m - (half - t)).abs() <= t * 0.75
            }
            Glyph::Triangle => {
                // Apex at the top, base at the bottom.
                let top = -half + t;
                let bottom = half - t;
                if dy < top - t * 0.5 || dy > bottom + t * 0.75 {
                    return false;
                }
                let frac = (dy - top) / (bottom - top);
                let w = frac.clamp(0.0, 1.0) * (half - t);
                let on_base = (dy - bottom).abs() <= t * 0.75 && dx.abs() <= half - t;
                let on_side = (dx.abs() - w).abs() <= t * 0.9 && dy <= bottom;
                on_base || on_side
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    #[default]
    Objects,
    Background,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub glyphs_per_image: usize,
    pub glyph_size: usize,
    /// Upper bound of the stripe amplitude; each image draws from
    /// `[0.4, 1] * texture_amplitude`.
    pub texture_amplitude: f32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            kind: SynthKind::Objects,
            width: 64,
            height: 64,
            classes: 4,
            train_per_class: 50,
            test_per_class: 20,
            glyphs_per_image: 3,
            glyph_size: 12,
            texture_amplitude: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > Glyph::ALL.len() {
            return Err(Error::Config(format!(
                "synthetic classes must be in 2..={}, got {}",
                Glyph::ALL.len(),
                self.classes
            )));
        }
        if self.glyph_size < 5 || self.glyph_size > self.width.min(self.height) {
            return Err(Error::Config(format!("glyph size {} does not fit the image", self.glyph_size)));
        }
        if !(0.0..=0.5).contains(&self.texture_amplitude) {
            return Err(Error::Config(format!("texture amplitude {} outside [0, 0.5]", self.texture_amplitude)));
        }
        if self.train_per_class == 0 {
            return Err(Error::Config("synthetic train split needs samples".into()));
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        match self.kind {
            SynthKind::Objects => Glyph::ALL[..self.classes].iter().map(|g| g.name().to_string()).collect(),
            SynthKind::Background => (0..self.classes).map(|c| format!("tone{c}")).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub image: RawImage,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub classes: Vec<String>,
    pub train: Vec<SynthSample>,
    pub test: Vec<SynthSample>,
}

/// Builds the dataset; samples are ordered by class, and each image depends
/// only on the seed, its split, class and index.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let split = |tag: u64, per_class: usize| -> Result<Vec<SynthSample>> {
        let mut out = Vec::with_capacity(per_class * cfg.classes);
        for label in 0..cfg.classes {
            for i in 0..per_class {
                let stream = (tag << 48) | ((label as u64) << 32) | i as u64;
                let mut rng = seeded(mix_seed(cfg.seed, stream));
                out.push(SynthSample {
                    image: render(cfg, label, &mut rng)?,
                    label,
                });
            }
        }
        Ok(out)
    };
    Ok(SynthDataset {
        classes: cfg.class_names(),
        train: split(1, cfg.train_per_class)?,
        test: split(2, cfg.test_per_class)?,
    })
}

fn render(cfg: &SynthConfig, label: usize, rng: &mut Rng) -> Result<RawImage> {
    let (w, h) = (cfg.width, cfg.height);
    let theta = rng.random_range(0.0..PI);
    let period = rng.random_range(6.0f32..14.0);
    let phase = rng.random_range(0.0..2.0 * PI);
    let amp = rng.random_range(0.4..=1.0) * cfg.texture_amplitude;
    let base = match cfg.kind {
        SynthKind::Objects => rng.random_range(0.3f32..0.5),
        SynthKind::Background => 0.15 + 0.5 * label as f32 / (cfg.classes - 1) as f32 + rng.random_range(-0.03f32..0.03),
    };
    let (ct, st) = (theta.cos(), theta.sin());
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let s = (2.0 * PI * (x as f32 * ct + y as f32 * st) / period + phase).sin();
            let noise = rng.random_range(-0.03f32..0.03);
            pixels.push((base + amp * s + noise).clamp(0.0, 1.0));
        }
    }
    let size = cfg.glyph_size;
    let mut placed: Vec<(usize, usize)> = Vec::new();
    for _ in 0..cfg.glyphs_per_image {
        let glyph = match cfg.kind {
            SynthKind::Objects => Glyph::ALL[label],
            SynthKind::Background => Glyph::ALL[rng.random_range(0..cfg.classes)],
        };
        // Prefer non-overlapping placements, fall back to the last draw.
        let mut pos = (0, 0);
        for _ in 0..50 {
            pos = (rng.random_range(0..=w - size), rng.random_range(0..=h - size));
            if placed
                .iter()
                .all(|&(px, py)| px.abs_diff(pos.0) >= size || py.abs_diff(pos.1) >= size)
            {
                break;
            }
        }
        placed.push(pos);
        let bright = rng.random_range(0.85f32..1.0);
        for v in 0..size {
            for u in 0..size {
                if glyph.covers(u as f32, v as f32, size as f32) {
                    pixels[(pos.1 + v) * w + pos.0 + u] = bright;
                }
            }
        }
    }
    // Quantize so the in-memory images equal their 8-bit PNG copies.
    for p in &mut pixels {
        *p = (*p * 255.0).round() / 255.0;
    }
    RawImage::new(w, h, 1, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_labels() {
        let cfg = SynthConfig {
            train_per_class: 3,
            test_per_class: 2,
            ..Default::default()
        };
        let ds = generate(&cfg).unwrap();
        assert_eq!(ds.classes, vec!["cross", "ring", "diamond", "triangle"]);
        assert_eq!(ds.train.len(), 12);
        assert_eq!(ds.test.len(), 8);
        assert_eq!(ds.train.iter().filter(|s| s.label == 2).count(), 3);
        assert!(ds.train.iter().all(|s| s.image.width() == 64 && s.image.height() == 64));
        assert_ne!(ds.train[0].image, ds.test[0].image);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let cfg = SynthConfig {
            train_per_class: 2,
            test_per_class: 1,
            ..Default::default()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = generate(&SynthConfig { seed: 1, ..cfg.clone() }).unwrap();
        assert_ne!(generate(&cfg).unwrap().train[0].image, other.train[0].image);
    }

    #[test]
    fn glyphs_are_distinct_masks() {
        let masks: Vec<Vec<bool>> = Glyph::ALL
            .iter()
            .map(|g| (0..144).map(|i| g.covers((i % 12) as f32, (i / 12) as f32, 12.0)).collect())
            .collect();
        for (i, a) in masks.iter().enumerate() {
            let area = a.iter().filter(|&&b| b).count();
            assert!(area > 10 && area < 100, "{:?} area {area}", Glyph::ALL[i]);
            for b in &masks[i + 1..] {
                assert_ne!(a, b);
            }
        }
    }

    #[test]
    fn pixels_quantized() {
        let ds = generate(&SynthConfig {
            train_per_class: 1,
            test_per_class: 0,
            ..Default::default()
        })
        .unwrap();
        for p in ds.train[0].image.pixels() {
            assert_eq!((*p * 255.0).round() / 255.0, *p);
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(generate(&SynthConfig { classes: 5, ..Default::default() }).is_err());
        assert!(generate(&SynthConfig { glyph_size: 100, ..Default::default() }).is_err());
    }
}
