//! Synthetic CT phantoms with an elliptical muscle ring of known area.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{AffineTransform, GeometryError, Spacing};
use crate::preprocess::HuWindow;
use crate::segment::SegParams;
use crate::volume::{CtVolume, MaskVolume, Volume, VolumeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhantomError {
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Geometry and intensities of a ring phantom.
///
/// On the annotated slice, voxel centers between the outer ellipse with
/// semi-axes `(a, b)` and the inner ellipse `(a - t, b - t)` are muscle; the
/// inner region holds `interior_hu`. Every other voxel is background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: Spacing,
    pub outer_semi_axes_mm: [f64; 2],
    pub ring_thickness_mm: f64,
    pub muscle_hu: f64,
    pub interior_hu: f64,
    pub background_hu: f64,
    pub annotated_slice: usize,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [160, 128, 5],
            spacing: Spacing::default(),
            outer_semi_axes_mm: [60.0, 40.0],
            ring_thickness_mm: 10.0,
            muscle_hu: 50.0,
            interior_hu: -100.0,
            background_hu: -1000.0,
            annotated_slice: 2,
            noise_sd: 0.0,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    /// Checks geometry and that only `muscle_hu` falls in `muscle_window`.
    pub fn validate_against(&self, muscle_window: &HuWindow) -> Result<(), PhantomError> {
        let bad = |m: String| Err(PhantomError::InvalidSpec(m));
        let [a, b] = self.outer_semi_axes_mm;
        let t = self.ring_thickness_mm;
        if self.dims.contains(&0) {
            return bad(format!("dims {:?} must be positive", self.dims));
        }
        if ![a, b, t].iter().all(|v| v.is_finite() && *v > 0.0) {
            return bad(format!(
                "semi-axes ({a}, {b}) and thickness {t} must be positive"
            ));
        }
        if a - t <= 0.0 || b - t <= 0.0 {
            return bad(format!(
                "ring thickness {t} leaves no inner ellipse inside ({a}, {b})"
            ));
        }
        if self.annotated_slice >= self.dims[2] {
            return bad(format!(
                "annotated slice {} outside 0..{}",
                self.annotated_slice, self.dims[2]
            ));
        }
        if !muscle_window.contains(self.muscle_hu) {
            return bad(format!(
                "muscle HU {} outside the muscle window",
                self.muscle_hu
            ));
        }
        for (name, hu) in [
            ("interior", self.interior_hu),
            ("background", self.background_hu),
        ] {
            if !hu.is_finite() || muscle_window.contains(hu) {
                return bad(format!(
                    "{name} HU {hu} must be finite and outside the muscle window"
                ));
            }
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return bad(format!("noise sd {} must be non-negative", self.noise_sd));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        self.validate_against(&SegParams::default().muscle_window)
    }

    /// `π (a b − (a − t)(b − t)) / 100` cm².
    pub fn analytic_area_cm2(&self) -> f64 {
        let [a, b] = self.outer_semi_axes_mm;
        let t = self.ring_thickness_mm;
        PI * (a * b - (a - t) * (b - t)) / 100.0
    }

    /// Affine with the grid centered on the physical origin.
    pub fn affine(&self) -> Result<AffineTransform, GeometryError> {
        let s = self.spacing.get();
        let origin = [0, 1, 2].map(|a| -((self.dims[a] - 1) as f64) / 2.0 * s[a]);
        AffineTransform::diagonal(s, origin)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: CtVolume,
    pub mask: MaskVolume,
    pub analytic_area_cm2: f64,
}

/// Ring membership of the voxel center at physical `(x, y)` mm.
pub fn in_ring(spec: &PhantomSpec, x: f64, y: f64) -> bool {
    let [a, b] = spec.outer_semi_axes_mm;
    let t = spec.ring_thickness_mm;
    let outer = (x / a).powi(2) + (y / b).powi(2) <= 1.0;
    let inner = (x / (a - t)).powi(2) + (y / (b - t)).powi(2) <= 1.0;
    outer && !inner
}

pub fn generate(spec: &PhantomSpec) -> Result<Phantom, PhantomError> {
    spec.validate()?;
    let affine = spec.affine()?;
    let [nx, ny, nz] = spec.dims;
    let [a, b] = spec.outer_semi_axes_mm;
    let n = nx * ny * nz;
    let mut image = vec![spec.background_hu as f32; n];
    let mut mask = vec![0u8; n];

    let k = spec.annotated_slice;
    for j in 0..ny {
        for i in 0..nx {
            let p = affine.apply_index([i, j, k]);
            let li = i + nx * (j + ny * k);
            if in_ring(spec, p[0], p[1]) {
                image[li] = spec.muscle_hu as f32;
                mask[li] = 1;
            } else if (p[0] / a).powi(2) + (p[1] / b).powi(2) <= 1.0 {
                image[li] = spec.interior_hu as f32;
            }
        }
    }

    if spec.noise_sd > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sd)
            .map_err(|e| PhantomError::InvalidSpec(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        for v in &mut image {
            *v = (*v as f64 + normal.sample(&mut rng)) as f32;
        }
    }

    Ok(Phantom {
        image: Volume::new(spec.dims, image, affine)?.with_source_id("phantom"),
        mask: Volume::new(spec.dims, mask, affine)?.with_source_id("phantom"),
        analytic_area_cm2: spec.analytic_area_cm2(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sma::compute_sma;

    #[test]
    fn default_ring_area() {
        let p = generate(&PhantomSpec::default()).unwrap();
        assert!((p.analytic_area_cm2 - 28.274333882308138).abs() < 1e-12);
        let m = compute_sma(&p.mask, 2).unwrap();
        assert_eq!(m.pixel_count, 2832);
        assert!((m.area_cm2 - p.analytic_area_cm2).abs() / p.analytic_area_cm2 < 0.02);
    }

    #[test]
    fn other_slices_are_background() {
        let p = generate(&PhantomSpec::default()).unwrap();
        assert_eq!(p.mask.slice_counts(2), vec![0, 0, 2832, 0, 0]);
        let plane = p.image.plane(2, 0).unwrap();
        assert!(plane.data.iter().all(|&v| v == -1000.0));
        let center = p.image.plane(2, 2).unwrap();
        assert_eq!(center.get(80, 64), -100.0);
    }

    #[test]
    fn grid_is_centered() {
        let a = PhantomSpec::default().affine().unwrap();
        assert_eq!(a.apply_index([0, 0, 0]), [-79.5, -63.5, -2.0]);
        assert_eq!(a.apply_index([159, 127, 4]), [79.5, 63.5, 2.0]);
    }

    #[test]
    fn rejects_invalid_specs() {
        let thick = PhantomSpec {
            ring_thickness_mm: 40.0,
            ..PhantomSpec::default()
        };
        assert!(generate(&thick).is_err());
        let slice = PhantomSpec {
            annotated_slice: 5,
            ..PhantomSpec::default()
        };
        assert!(generate(&slice).is_err());
        let hu = PhantomSpec {
            interior_hu: 0.0,
            ..PhantomSpec::default()
        };
        assert!(generate(&hu).is_err());
    }

    #[test]
    fn noise_is_seeded_and_spares_the_mask() {
        let spec = PhantomSpec {
            noise_sd: 20.0,
            seed: 11,
            dims: [64, 48, 3],
            outer_semi_axes_mm: [25.0, 20.0],
            annotated_slice: 1,
            ..PhantomSpec::default()
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        let clean = generate(&PhantomSpec {
            noise_sd: 0.0,
            ..spec
        })
        .unwrap();
        assert_eq!(a.mask, clean.mask);
        assert_ne!(a.image, clean.image);
        let other = generate(&PhantomSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a.image, other.image);
    }
}
