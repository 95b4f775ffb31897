//! Intensity windowing, unit normalization and the geometric augmentation
//! primitives (rotate, flip, pad, crop).
//!
//! Every primitive is deterministic. Randomness enters only through
//! [`sample_plan`], which draws an [`AugmentPlan`] from a seeded generator;
//! [`apply_plan`] then applies the same plan to an image and its mask.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{AffineTransform, GeometryError, Interpolator, Nearest};
use crate::volume::{CtVolume, MaskVolume, Volume, VolumeError, Voxel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("invalid HU window [{lo}, {hi}]: need finite lo < hi")]
    InvalidWindow { lo: f64, hi: f64 },
    #[error("crop target {target} exceeds dimension {dim} on axis {axis}")]
    TargetExceedsDims {
        axis: usize,
        target: usize,
        dim: usize,
    },
    #[error("pad target {target} is below dimension {dim} on axis {axis}")]
    TargetBelowDims {
        axis: usize,
        target: usize,
        dim: usize,
    },
    #[error("target dims {0:?} must be at least 1 on every axis")]
    ZeroTarget([usize; 3]),
    #[error("crop offset {offset:?} with target {target:?} does not fit dims {dims:?}")]
    CropOutOfBounds {
        offset: [usize; 3],
        target: [usize; 3],
        dims: [usize; 3],
    },
    #[error("axis {0} out of range")]
    AxisOutOfRange(usize),
    #[error("invalid augmentation setting: {0}")]
    InvalidAugment(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Inclusive HU interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HuWindow {
    lo: f64,
    hi: f64,
}

impl HuWindow {
    pub fn new(lo: f64, hi: f64) -> Result<Self, PreprocessError> {
        if lo.is_finite() && hi.is_finite() && lo < hi {
            Ok(Self { lo, hi })
        } else {
            Err(PreprocessError::InvalidWindow { lo, hi })
        }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn contains(&self, hu: f64) -> bool {
        (self.lo..=self.hi).contains(&hu)
    }
}

impl Default for HuWindow {
    fn default() -> Self {
        Self {
            lo: -175.0,
            hi: 250.0,
        }
    }
}

fn clamp_sample(s: f32, window: &HuWindow) -> f32 {
    (s as f64).clamp(window.lo, window.hi) as f32
}

/// Clamps every sample into the window.
pub fn clip_hu(volume: &CtVolume, window: HuWindow) -> CtVolume {
    let data = volume
        .data()
        .iter()
        .map(|&s| clamp_sample(s, &window))
        .collect();
    Volume::from_parts(
        volume.dims(),
        data,
        *volume.affine(),
        volume.source_id().to_string(),
    )
}

/// Clips to the window and rescales linearly so `lo -> 0` and `hi -> 1`.
pub fn normalize_unit(volume: &CtVolume, window: HuWindow) -> CtVolume {
    let width = window.hi - window.lo;
    let data = volume
        .data()
        .iter()
        .map(|&s| {
            let c = clamp_sample(s, &window) as f64;
            ((c - window.lo) / width).clamp(0.0, 1.0) as f32
        })
        .collect();
    Volume::from_parts(
        volume.dims(),
        data,
        *volume.affine(),
        volume.source_id().to_string(),
    )
}

fn check_axis(axis: usize) -> Result<(), PreprocessError> {
    if axis > 2 {
        Err(PreprocessError::AxisOutOfRange(axis))
    } else {
        Ok(())
    }
}

fn check_target(target: [usize; 3]) -> Result<(), PreprocessError> {
    if target.contains(&0) {
        Err(PreprocessError::ZeroTarget(target))
    } else {
        Ok(())
    }
}

fn index_of(idx: [usize; 3], dims: [usize; 3]) -> usize {
    idx[0] + dims[0] * (idx[1] + dims[1] * idx[2])
}

/// Reverses one axis. The affine is adjusted so every sample keeps its
/// physical position.
pub fn flip<T: Voxel>(volume: &Volume<T>, axis: usize) -> Result<Volume<T>, PreprocessError> {
    check_axis(axis)?;
    let dims = volume.dims();
    let mut data = Vec::with_capacity(volume.len());
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let mut src = [i, j, k];
                src[axis] = dims[axis] - 1 - src[axis];
                data.push(volume.get(src));
            }
        }
    }
    let old = volume.affine();
    let mut cols = old.columns();
    cols[axis] = cols[axis].map(|v| -v);
    let mut corner = [0usize; 3];
    corner[axis] = dims[axis] - 1;
    let affine = AffineTransform::from_columns(cols, old.apply_index(corner))?;
    Ok(Volume::from_parts(
        dims,
        data,
        affine,
        volume.source_id().to_string(),
    ))
}

fn shifted_affine(
    old: &AffineTransform,
    offset: [f64; 3],
) -> Result<AffineTransform, GeometryError> {
    AffineTransform::from_columns(old.columns(), old.apply(offset))
}

/// Offset of the original block inside a padded extent: half the slack,
/// rounded down, so an odd extra voxel lands on the high side.
pub fn pad_offset(dims: [usize; 3], target: [usize; 3]) -> [usize; 3] {
    [0, 1, 2].map(|a| (target[a].saturating_sub(dims[a])) / 2)
}

/// Embeds the volume centered in a larger extent filled with `fill`.
pub fn pad<T: Voxel>(
    volume: &Volume<T>,
    target: [usize; 3],
    fill: T,
) -> Result<Volume<T>, PreprocessError> {
    check_target(target)?;
    let dims = volume.dims();
    for a in 0..3 {
        if target[a] < dims[a] {
            return Err(PreprocessError::TargetBelowDims {
                axis: a,
                target: target[a],
                dim: dims[a],
            });
        }
    }
    let off = pad_offset(dims, target);
    let mut data = vec![fill; target.iter().product()];
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            let dst = index_of([off[0], j + off[1], k + off[2]], target);
            let src = volume.linear_index([0, j, k]);
            data[dst..dst + dims[0]].copy_from_slice(&volume.data()[src..src + dims[0]]);
        }
    }
    let shift = off.map(|o| -(o as f64));
    let affine = shifted_affine(volume.affine(), shift)?;
    Ok(Volume::from_parts(
        target,
        data,
        affine,
        volume.source_id().to_string(),
    ))
}

/// Extracts the sub-block of size `target` starting at `offset`.
pub fn crop_at<T: Voxel>(
    volume: &Volume<T>,
    target: [usize; 3],
    offset: [usize; 3],
) -> Result<Volume<T>, PreprocessError> {
    check_target(target)?;
    let dims = volume.dims();
    for a in 0..3 {
        if target[a] > dims[a] {
            return Err(PreprocessError::TargetExceedsDims {
                axis: a,
                target: target[a],
                dim: dims[a],
            });
        }
        if offset[a] + target[a] > dims[a] {
            return Err(PreprocessError::CropOutOfBounds {
                offset,
                target,
                dims,
            });
        }
    }
    let mut data = Vec::with_capacity(target.iter().product());
    for k in 0..target[2] {
        for j in 0..target[1] {
            let src = volume.linear_index([offset[0], j + offset[1], k + offset[2]]);
            data.extend_from_slice(&volume.data()[src..src + target[0]]);
        }
    }
    let affine = shifted_affine(volume.affine(), offset.map(|o| o as f64))?;
    Ok(Volume::from_parts(
        target,
        data,
        affine,
        volume.source_id().to_string(),
    ))
}

/// Crops to `target`: the centered sub-block when `centered`, otherwise the
/// block anchored at voxel (0, 0, 0).
pub fn crop<T: Voxel>(
    volume: &Volume<T>,
    target: [usize; 3],
    centered: bool,
) -> Result<Volume<T>, PreprocessError> {
    let dims = volume.dims();
    let offset = if centered {
        [0, 1, 2].map(|a| dims[a].saturating_sub(target[a]) / 2)
    } else {
        [0; 3]
    };
    crop_at(volume, target, offset)
}

/// Rotates every transverse slice (axes 0 and 1) by `angle_deg` about the
/// slice center. Output samples whose source falls outside the input grid
/// get `fill`.
pub fn rotate_inplane<T: Voxel>(
    volume: &Volume<T>,
    angle_deg: f64,
    interp: &dyn Interpolator,
    fill: T,
) -> Result<Volume<T>, PreprocessError> {
    if !angle_deg.is_finite() {
        return Err(PreprocessError::InvalidAugment(format!(
            "angle {angle_deg}"
        )));
    }
    let dims = volume.dims();
    let (s, c) = angle_deg.to_radians().sin_cos();
    let cx = (dims[0] - 1) as f64 / 2.0;
    let cy = (dims[1] - 1) as f64 / 2.0;
    let eps = 1e-6;
    let (xmax, ymax) = ((dims[0] - 1) as f64 + eps, (dims[1] - 1) as f64 + eps);

    let mut data = Vec::with_capacity(volume.len());
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let (dx, dy) = (i as f64 - cx, j as f64 - cy);
                let x = cx + c * dx + s * dy;
                let y = cy - s * dx + c * dy;
                if x < -eps || y < -eps || x > xmax || y > ymax {
                    data.push(fill);
                } else {
                    let v = interp.stencil([x, y, k as f64], dims).eval(volume);
                    data.push(T::from_f64(v));
                }
            }
        }
    }
    Ok(Volume::from_parts(
        dims,
        data,
        *volume.affine(),
        volume.source_id().to_string(),
    ))
}

/// Ranges for the random augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Rotation angle is drawn uniformly from `[-max, max]` degrees.
    pub max_rotation_deg: f64,
    /// In-plane output size (axes 0 and 1).
    pub crop: [usize; 2],
    /// Probability of flipping each in-plane axis.
    pub flip_probability: f64,
    /// HU written where rotation or padding has no source sample.
    pub fill_hu: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            max_rotation_deg: 10.0,
            crop: [192, 192],
            flip_probability: 0.5,
            fill_hu: -1000.0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if !(self.max_rotation_deg.is_finite() && self.max_rotation_deg >= 0.0) {
            return Err(PreprocessError::InvalidAugment(format!(
                "max rotation {} must be finite and non-negative",
                self.max_rotation_deg
            )));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(PreprocessError::InvalidAugment(format!(
                "flip probability {} outside [0, 1]",
                self.flip_probability
            )));
        }
        if self.crop.contains(&0) {
            return Err(PreprocessError::InvalidAugment(
                "crop size must be at least 1".into(),
            ));
        }
        if !self.fill_hu.is_finite() {
            return Err(PreprocessError::InvalidAugment(
                "fill value must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Concrete parameters for one augmentation draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub angle_deg: f64,
    pub flip: [bool; 2],
    /// Full output dims; the third axis is unchanged.
    pub target: [usize; 3],
    /// Crop origin in the padded grid.
    pub crop_offset: [usize; 3],
    pub fill_hu: f32,
}

/// Draws a plan for a volume of size `dims`.
pub fn sample_plan(
    cfg: &AugmentConfig,
    dims: [usize; 3],
    rng: &mut ChaCha8Rng,
) -> Result<AugmentPlan, PreprocessError> {
    cfg.validate()?;
    let angle_deg = if cfg.max_rotation_deg > 0.0 {
        rng.random_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg)
    } else {
        0.0
    };
    let flip = [
        rng.random_bool(cfg.flip_probability),
        rng.random_bool(cfg.flip_probability),
    ];
    let target = [cfg.crop[0], cfg.crop[1], dims[2]];
    let mut crop_offset = [0usize; 3];
    for a in 0..2 {
        let slack = dims[a].saturating_sub(target[a]);
        crop_offset[a] = rng.random_range(0..=slack);
    }
    Ok(AugmentPlan {
        angle_deg,
        flip,
        target,
        crop_offset,
        fill_hu: cfg.fill_hu,
    })
}

fn apply_one<T: Voxel>(
    volume: &Volume<T>,
    plan: &AugmentPlan,
    interp: &dyn Interpolator,
    fill: T,
) -> Result<Volume<T>, PreprocessError> {
    let mut v = rotate_inplane(volume, plan.angle_deg, interp, fill)?;
    for (axis, &f) in plan.flip.iter().enumerate() {
        if f {
            v = flip(&v, axis)?;
        }
    }
    let dims = v.dims();
    let padded_dims = [0, 1, 2].map(|a| dims[a].max(plan.target[a]));
    if padded_dims != dims {
        v = pad(&v, padded_dims, fill)?;
    }
    crop_at(&v, plan.target, plan.crop_offset)
}

/// Applies `plan` to an image (with `interp`) and its mask (always nearest,
/// fill 0), so the pair stays aligned and the mask stays binary.
pub fn apply_plan(
    image: &CtVolume,
    mask: Option<&MaskVolume>,
    plan: &AugmentPlan,
    interp: &dyn Interpolator,
) -> Result<(CtVolume, Option<MaskVolume>), PreprocessError> {
    let img = apply_one(image, plan, interp, plan.fill_hu)?;
    let m = mask
        .map(|m| apply_one(m, plan, &Nearest, 0u8))
        .transpose()?;
    Ok((img, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Trilinear;
    use rand::SeedableRng;

    fn ct(dims: [usize; 3], data: Vec<f32>) -> CtVolume {
        Volume::new(dims, data, AffineTransform::identity()).unwrap()
    }

    #[test]
    fn clip_examples() {
        let v = ct([3, 1, 1], vec![300.0, -1000.0, 100.0]);
        assert_eq!(
            clip_hu(&v, HuWindow::default()).data(),
            &[250.0, -175.0, 100.0]
        );
    }

    #[test]
    fn normalize_examples() {
        let v = ct([3, 1, 1], vec![-175.0, 250.0, 37.5]);
        assert_eq!(
            normalize_unit(&v, HuWindow::default()).data(),
            &[0.0, 1.0, 0.5]
        );
        let flat = Volume::filled([2, 2, 2], -175.0f32, AffineTransform::identity()).unwrap();
        assert!(normalize_unit(&flat, HuWindow::default())
            .data()
            .iter()
            .all(|&x| x == 0.0));
    }

    #[test]
    fn window_validation() {
        assert!(HuWindow::new(10.0, 10.0).is_err());
        assert!(HuWindow::new(f64::NAN, 10.0).is_err());
        assert!(HuWindow::new(-29.0, 150.0).is_ok());
    }

    #[test]
    fn flip_is_an_involution() {
        let v = ct([3, 2, 2], (0..12).map(|x| x as f32).collect());
        for axis in 0..3 {
            let f = flip(&v, axis).unwrap();
            assert_ne!(f.data(), v.data());
            assert_eq!(flip(&f, axis).unwrap(), v);
        }
    }

    #[test]
    fn flip_keeps_physical_positions() {
        let a = AffineTransform::diagonal([0.5, 2.0, 3.0], [10.0, 20.0, 30.0]).unwrap();
        let v = Volume::new([3, 2, 1], (0..6).map(|x| x as f32).collect(), a).unwrap();
        let f = flip(&v, 0).unwrap();
        for j in 0..2 {
            for i in 0..3 {
                let p = v.affine().apply_index([i, j, 0]);
                assert_eq!(f.affine().apply_index([2 - i, j, 0]), p);
                assert_eq!(f.get([2 - i, j, 0]), v.get([i, j, 0]));
            }
        }
    }

    #[test]
    fn pad_two_by_two() {
        let v = ct([2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]);
        let p = pad(&v, [4, 4, 1], -1000.0).unwrap();
        assert_eq!(p.data().iter().filter(|&&x| x == -1000.0).count(), 12);
        assert_eq!(p.get([1, 1, 0]), 1.0);
        assert_eq!(p.get([2, 1, 0]), 2.0);
        assert_eq!(p.get([1, 2, 0]), 3.0);
        assert_eq!(p.get([2, 2, 0]), 4.0);
        assert_eq!(p.affine().apply_index([1, 1, 0]), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn odd_padding_goes_high() {
        let v = ct([1, 1, 1], vec![5.0]);
        let p = pad(&v, [4, 1, 1], 0.0).unwrap();
        assert_eq!(p.data(), &[0.0, 5.0, 0.0, 0.0]);
    }

    #[test]
    fn pad_and_crop_errors() {
        let v = ct([2, 2, 1], vec![0.0; 4]);
        assert!(matches!(
            pad(&v, [1, 2, 1], 0.0),
            Err(PreprocessError::TargetBelowDims { axis: 0, .. })
        ));
        assert!(matches!(
            crop(&v, [2, 3, 1], true),
            Err(PreprocessError::TargetExceedsDims { axis: 1, .. })
        ));
        assert!(matches!(
            crop(&v, [2, 0, 1], true),
            Err(PreprocessError::ZeroTarget(_))
        ));
    }

    #[test]
    fn crop_centered_and_anchored() {
        let v = ct([4, 1, 1], vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(crop(&v, [2, 1, 1], true).unwrap().data(), &[1.0, 2.0]);
        assert_eq!(crop(&v, [2, 1, 1], false).unwrap().data(), &[0.0, 1.0]);
        assert_eq!(
            crop(&v, [2, 1, 1], true).unwrap().affine().translation(),
            [1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn zero_rotation_is_identity() {
        let v = ct([5, 4, 2], (0..40).map(|x| x as f32 * 1.5).collect());
        let r = rotate_inplane(&v, 0.0, &Trilinear, -1000.0).unwrap();
        for (a, b) in r.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn quarter_turn_matches_index_shuffle() {
        let n = 5;
        let v = ct([n, n, 1], (0..25).map(|x| x as f32).collect());
        let r = rotate_inplane(&v, 90.0, &Trilinear, -1000.0).unwrap();
        for j in 0..n {
            for i in 0..n {
                let expect = v.get([j, n - 1 - i, 0]);
                assert!((r.get([i, j, 0]) - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rotation_fills_outside_support() {
        let v = ct([4, 2, 1], vec![1.0; 8]);
        let r = rotate_inplane(&v, 90.0, &Nearest, -7.0).unwrap();
        assert!(r.data().contains(&-7.0));
    }

    #[test]
    fn plan_is_reproducible() {
        let cfg = AugmentConfig::default();
        let a = sample_plan(&cfg, [256, 200, 3], &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = sample_plan(&cfg, [256, 200, 3], &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        assert!(a.angle_deg.abs() <= 10.0);
        assert_eq!(a.target, [192, 192, 3]);
        assert!(a.crop_offset[0] <= 64 && a.crop_offset[1] <= 8);
    }

    #[test]
    fn plan_output_shape() {
        let cfg = AugmentConfig {
            crop: [6, 6],
            ..AugmentConfig::default()
        };
        let img = ct([4, 8, 2], vec![10.0; 64]);
        let mask = Volume::new([4, 8, 2], vec![1u8; 64], AffineTransform::identity()).unwrap();
        let plan = sample_plan(&cfg, img.dims(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let (i, m) = apply_plan(&img, Some(&mask), &plan, &Trilinear).unwrap();
        assert_eq!(i.dims(), [6, 6, 2]);
        assert_eq!(m.unwrap().dims(), [6, 6, 2]);
    }

    #[test]
    fn config_validation() {
        let bad = AugmentConfig {
            flip_probability: 1.5,
            ..AugmentConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
