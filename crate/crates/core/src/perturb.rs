//! Occlusion and noise squares for robustness evaluation.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::RawImage;
use crate::rng::{mix_seed, seeded};

pub const DEFAULT_DIVISORS: [usize; 4] = [10, 8, 6, 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationKind {
    /// Black squares.
    Occlusion,
    /// Squares of i.i.d. uniform pixel values.
    Noise,
}

impl PerturbationKind {
    pub const ALL: [PerturbationKind; 2] = [PerturbationKind::Occlusion, PerturbationKind::Noise];

    pub fn name(self) -> &'static str {
        match self {
            PerturbationKind::Occlusion => "occlusion",
            PerturbationKind::Noise => "noise",
        }
    }
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerturbationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "occlusion" => Ok(PerturbationKind::Occlusion),
            "noise" => Ok(PerturbationKind::Noise),
            _ => Err(Error::InvalidArgument(format!("unknown perturbation kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    /// Square side is `floor(min(W, H) / divisor)`.
    pub divisor: usize,
    pub count: usize,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(kind: PerturbationKind, divisor: usize, count: usize, seed: u64) -> Result<Self> {
        let spec = PerturbationSpec { kind, divisor, count, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.divisor < 2 {
            return Err(Error::InvalidArgument(format!("divisor must be at least 2, got {}", self.divisor)));
        }
        if self.count == 0 {
            return Err(Error::InvalidArgument("square count must be positive".into()));
        }
        Ok(())
    }

    pub fn side(&self, width: usize, height: usize) -> usize {
        width.min(height) / self.divisor
    }

    /// Same spec with the seed mixed with an image index.
    pub fn for_image(&self, image_index: usize) -> Self {
        PerturbationSpec {
            seed: mix_seed(self.seed, image_index as u64),
            ..*self
        }
    }
}

impl fmt::Display for PerturbationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "kind={},n={},count={},seed={}", self.kind, self.divisor, self.count, self.seed)
    }
}

/// Parses `kind=occlusion,n=4,count=1,seed=7`. `count` defaults to 1 and
/// `seed` to 0.
impl FromStr for PerturbationSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut kind = None;
        let mut divisor = None;
        let mut count = 1;
        let mut seed = 0;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("expected key=value, got {part:?}")))?;
            let num = |v: &str| {
                v.parse::<u64>()
                    .map_err(|_| Error::InvalidArgument(format!("{key} must be a non-negative integer, got {v:?}")))
            };
            match key {
                "kind" => kind = Some(value.parse()?),
                "n" => divisor = Some(num(value)? as usize),
                "count" => count = num(value)? as usize,
                "seed" => seed = num(value)?,
                _ => return Err(Error::InvalidArgument(format!("unknown perturbation key {key:?}"))),
            }
        }
        let kind = kind.ok_or_else(|| Error::InvalidArgument("perturbation needs kind=".into()))?;
        let divisor = divisor.ok_or_else(|| Error::InvalidArgument("perturbation needs n=".into()))?;
        PerturbationSpec::new(kind, divisor, count, seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedSquare {
    pub x: usize,
    pub y: usize,
    pub side: usize,
    pub kind: PerturbationKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedImage {
    pub image: RawImage,
    pub squares: Vec<AppliedSquare>,
}

/// Draws `count` squares at uniform top-left offsets and fills them.
pub fn apply(img: &RawImage, spec: &PerturbationSpec) -> Result<PerturbedImage> {
    spec.validate()?;
    let (w, h) = (img.width(), img.height());
    let side = spec.side(w, h);
    if side == 0 {
        return Err(Error::InvalidArgument(format!(
            "image {w}x{h} too small for squares of 1/{} its side",
            spec.divisor
        )));
    }
    let mut rng = seeded(spec.seed);
    let mut out = img.clone();
    let mut squares = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let x = rng.random_range(0..=w - side);
        let y = rng.random_range(0..=h - side);
        for yy in y..y + side {
            for xx in x..x + side {
                for c in 0..out.channels() {
                    let v = match spec.kind {
                        PerturbationKind::Occlusion => 0.0,
                        PerturbationKind::Noise => rng.random::<f32>(),
                    };
                    out.set_pixel(xx, yy, c, v);
                }
            }
        }
        squares.push(AppliedSquare {
            x,
            y,
            side,
            kind: spec.kind,
        });
    }
    Ok(PerturbedImage { image: out, squares })
}

/// Every (kind, divisor, seed) combination, kind outermost and seed innermost.
pub fn perturbation_grid(divisors: &[usize], kinds: &[PerturbationKind], seeds: &[u64], count: usize) -> Result<Vec<PerturbationSpec>> {
    if divisors.is_empty() || kinds.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument("perturbation grid lists must be non-empty".into()));
    }
    let mut out = Vec::with_capacity(divisors.len() * kinds.len() * seeds.len());
    for &kind in kinds {
        for &divisor in divisors {
            for &seed in seeds {
                out.push(PerturbationSpec::new(kind, divisor, count, seed)?);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gradient(w: usize, h: usize, channels: usize) -> RawImage {
        let pixels = (0..w * h * channels).map(|i| (i % 97) as f32 / 96.0).collect();
        RawImage::new(w, h, channels, pixels).unwrap()
    }

    fn inside(sq: &[AppliedSquare], x: usize, y: usize) -> bool {
        sq.iter().any(|s| x >= s.x && x < s.x + s.side && y >= s.y && y < s.y + s.side)
    }

    #[test]
    fn side_lengths() {
        let spec = PerturbationSpec::new(PerturbationKind::Occlusion, 4, 1, 0).unwrap();
        assert_eq!(spec.side(224, 224), 56);
        assert_eq!(spec.side(300, 224), 56);
        let img = gradient(224, 224, 1);
        assert_eq!(apply(&img, &spec).unwrap().squares[0].side, 56);
    }

    #[test]
    fn occlusion_is_black() {
        let img = gradient(64, 48, 3);
        let out = apply(&img, &PerturbationSpec::new(PerturbationKind::Occlusion, 4, 2, 3).unwrap()).unwrap();
        assert_eq!(out.squares.len(), 2);
        for y in 0..48 {
            for x in 0..64 {
                for c in 0..3 {
                    if inside(&out.squares, x, y) {
                        assert_eq!(out.image.pixel(x, y, c), 0.0);
                    } else {
                        assert_eq!(out.image.pixel(x, y, c).to_bits(), img.pixel(x, y, c).to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn noise_mean_near_half() {
        let img = RawImage::filled(224, 224, 0.0).unwrap();
        let out = apply(&img, &PerturbationSpec::new(PerturbationKind::Noise, 4, 1, 11).unwrap()).unwrap();
        let s = out.squares[0];
        let mut sum = 0.0;
        for y in s.y..s.y + s.side {
            for x in s.x..s.x + s.side {
                sum += out.image.pixel(x, y, 0) as f64;
            }
        }
        let mean = sum / (s.side * s.side) as f64;
        assert!((0.45..=0.55).contains(&mean), "{mean}");
    }

    #[test]
    fn too_small_image() {
        let img = RawImage::filled(8, 8, 0.5).unwrap();
        assert!(apply(&img, &PerturbationSpec::new(PerturbationKind::Noise, 10, 1, 0).unwrap()).is_err());
        assert!(apply(&img, &PerturbationSpec::new(PerturbationKind::Noise, 8, 1, 0).unwrap()).is_ok());
        assert!(PerturbationSpec::new(PerturbationKind::Noise, 1, 1, 0).is_err());
        assert!(PerturbationSpec::new(PerturbationKind::Noise, 4, 0, 0).is_err());
    }

    #[test]
    fn grid_shape_and_order() {
        let g = perturbation_grid(&DEFAULT_DIVISORS, &PerturbationKind::ALL, &[0], 1).unwrap();
        assert_eq!(g.len(), 8);
        assert_eq!(g[0].kind, PerturbationKind::Occlusion);
        assert_eq!(g.iter().map(|s| s.divisor).take(4).collect::<Vec<_>>(), vec![10, 8, 6, 4]);
        assert_eq!(g[4].kind, PerturbationKind::Noise);
        assert!(perturbation_grid(&[4], &PerturbationKind::ALL, &[], 1).is_err());
        assert!(perturbation_grid(&[], &PerturbationKind::ALL, &[1], 1).is_err());
        assert_eq!(perturbation_grid(&[4, 6], &[PerturbationKind::Noise], &[1, 2, 3], 1).unwrap().len(), 6);
    }

    #[test]
    fn parse_spec() {
        let s: PerturbationSpec = "kind=occlusion,n=4,count=1,seed=7".parse().unwrap();
        assert_eq!(s, PerturbationSpec::new(PerturbationKind::Occlusion, 4, 1, 7).unwrap());
        assert_eq!(s.to_string().parse::<PerturbationSpec>().unwrap(), s);
        let d: PerturbationSpec = "kind=noise,n=10".parse().unwrap();
        assert_eq!((d.count, d.seed), (1, 0));
        for bad in ["kind=blur,n=4", "n=4", "kind=noise", "kind=noise,n=x", "kind=noise,n=4,foo=1", "kind=noise,n=1"] {
            assert!(bad.parse::<PerturbationSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn per_image_seeds_differ() {
        let spec = PerturbationSpec::new(PerturbationKind::Occlusion, 4, 1, 5).unwrap();
        assert_ne!(spec.for_image(0).seed, spec.for_image(1).seed);
        assert_eq!(spec.for_image(3), spec.for_image(3));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn squares_inside_and_deterministic(
            w in 8usize..80, h in 8usize..80, n in 2usize..8, count in 1usize..4, seed in any::<u64>(), noise in any::<bool>()
        ) {
            let kind = if noise { PerturbationKind::Noise } else { PerturbationKind::Occlusion };
            let spec = PerturbationSpec::new(kind, n, count, seed).unwrap();
            let img = gradient(w, h, 1);
            let a = apply(&img, &spec).unwrap();
            let b = apply(&img, &spec).unwrap();
            prop_assert_eq!(&a, &b);
            let mut touched = 0;
            for s in &a.squares {
                prop_assert!(s.x + s.side <= w && s.y + s.side <= h);
            }
            for y in 0..h {
                for x in 0..w {
                    if inside(&a.squares, x, y) {
                        touched += 1;
                    } else {
                        prop_assert_eq!(a.image.pixel(x, y, 0).to_bits(), img.pixel(x, y, 0).to_bits());
                    }
                }
            }
            let side = w.min(h) / n;
            prop_assert!(touched <= count * side * side);
            prop_assert!((touched as f64) <= count as f64 * (w * h) as f64 / (n * n) as f64 + 1e-9);
        }
    }
}
