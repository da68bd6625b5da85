//! Random translation, rotation and crop-and-resize.
//!
//! The three stages are composed into one inverse coordinate map and the
//! source is sampled once, bilinearly. Coordinates are pixel centres; a point
//! that leaves the frame `[-0.5, s - 0.5]` at any stage reads as 0.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, Image};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    /// Maximum shift as a fraction of (height, width).
    pub translation_factor: (f64, f64),
    /// Maximum rotation as a fraction of a full turn.
    pub rotation_factor: f64,
    /// Side length of the crop as a fraction of the image side.
    pub crop_fraction: f64,
    pub enabled: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            translation_factor: (0.1, 0.1),
            rotation_factor: 0.2,
            crop_fraction: 0.8,
            enabled: true,
        }
    }
}

impl AugmentationConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    /// No-op geometry that still runs the resampling path.
    pub fn null() -> Self {
        Self {
            translation_factor: (0.0, 0.0),
            rotation_factor: 0.0,
            crop_fraction: 1.0,
            enabled: true,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let (ty, tx) = self.translation_factor;
        for (name, v) in [("translation_factor.0", ty), ("translation_factor.1", tx)] {
            if !(0.0..1.0).contains(&v) {
                return Err(DataError::Augmentation(format!("{name} must be in [0, 1), got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.rotation_factor) {
            return Err(DataError::Augmentation(format!(
                "rotation_factor must be in [0, 1], got {}",
                self.rotation_factor
            )));
        }
        if !(self.crop_fraction > 0.0 && self.crop_fraction <= 1.0) {
            return Err(DataError::Augmentation(format!(
                "crop_fraction must be in (0, 1], got {}",
                self.crop_fraction
            )));
        }
        Ok(())
    }
}

/// Unit-free random draws for one image. Translation and rotation draws lie
/// in `[-1, 1]`, crop offsets in `[0, 1]`; all-zero draws are the identity
/// when the crop fraction is 1.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AugmentDraws {
    pub shift_y: f64,
    pub shift_x: f64,
    pub rotation: f64,
    pub crop_y: f64,
    pub crop_x: f64,
}

impl AugmentDraws {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            shift_y: rng.random_range(-1.0..=1.0),
            shift_x: rng.random_range(-1.0..=1.0),
            rotation: rng.random_range(-1.0..=1.0),
            crop_y: rng.random_range(0.0..=1.0),
            crop_x: rng.random_range(0.0..=1.0),
        }
    }

    /// Applies these draws to `image` under `cfg`'s magnitudes.
    pub fn apply(&self, image: &Image, cfg: &AugmentationConfig) -> Image {
        let s = image.size();
        let sf = s as f64;
        let dy = self.shift_y * cfg.translation_factor.0 * sf;
        let dx = self.shift_x * cfg.translation_factor.1 * sf;
        let theta = self.rotation * cfg.rotation_factor * TAU;
        let (sin, cos) = theta.sin_cos();
        let side = cfg.crop_fraction * sf;
        let off_y = self.crop_y * (sf - side);
        let off_x = self.crop_x * (sf - side);
        let centre = (sf - 1.0) / 2.0;
        let in_frame = |v: f64| (-0.5..=sf - 0.5).contains(&v);

        let mut out = vec![0.0f32; image.pixels().len()];
        for y in 0..s {
            for x in 0..s {
                let cy = off_y + (y as f64 + 0.5) * side / sf - 0.5;
                let cx = off_x + (x as f64 + 0.5) * side / sf - 0.5;
                if !(in_frame(cy) && in_frame(cx)) {
                    continue;
                }
                let (uy, ux) = (cy - centre, cx - centre);
                let ry = cos * uy - sin * ux + centre;
                let rx = sin * uy + cos * ux + centre;
                if !(in_frame(ry) && in_frame(rx)) {
                    continue;
                }
                let (ty, tx) = (ry - dy, rx - dx);
                if !(in_frame(ty) && in_frame(tx)) {
                    continue;
                }
                for c in 0..image.channels() {
                    out[(c * s + y) * s + x] = sample_bilinear(image.channel(c), s, ty, tx);
                }
            }
        }
        Image::new(image.channels(), s, out).expect("same geometry")
    }
}

fn sample_bilinear(plane: &[f32], s: usize, y: f64, x: f64) -> f32 {
    let max = (s - 1) as f64;
    let (y, x) = (y.clamp(0.0, max), x.clamp(0.0, max));
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(s - 1), (x0 + 1).min(s - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let at = |yy: usize, xx: usize| plane[yy * s + xx] as f64;
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    ((top * (1.0 - fy) + bottom * fy) as f32).clamp(0.0, 1.0)
}

/// Draws fresh parameters from `rng` and applies them. A disabled config
/// returns the image unchanged without consuming randomness.
pub fn augment<R: Rng + ?Sized>(image: &Image, cfg: &AugmentationConfig, rng: &mut R) -> Image {
    if !cfg.enabled {
        return image.clone();
    }
    AugmentDraws::sample(rng).apply(image, cfg)
}
