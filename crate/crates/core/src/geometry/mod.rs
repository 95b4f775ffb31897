//! Affine bookkeeping, anatomical reorientation and voxel-spacing resampling.

mod affine;
mod interp;
mod orientation;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub(crate) use affine::{cross, dot, norm};
pub use affine::{AffineTransform, MIN_DETERMINANT};
pub use interp::{interpolators, Interpolator, Nearest, Stencil, Trilinear};
pub use orientation::{orientation_of, AxisLabel, OrientationCode};

use crate::volume::{Volume, Voxel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate affine: |det| of the 3x3 block is {det:e}")]
    DegenerateAffine { det: f64 },
    #[error("affine contains non-finite elements")]
    NonFiniteAffine,
    #[error("ambiguous orientation: column {column} has no strictly dominant physical axis")]
    AmbiguousOrientation { column: usize },
    #[error("invalid orientation code '{0}'")]
    InvalidOrientationCode(String),
    #[error("invalid spacing {0:?}: components must be positive and finite")]
    InvalidSpacing([f64; 3]),
}

/// Millimetres per voxel along each volume axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing([f64; 3]);

impl Spacing {
    pub fn new(s: [f64; 3]) -> Result<Self, GeometryError> {
        if s.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(Self(s))
        } else {
            Err(GeometryError::InvalidSpacing(s))
        }
    }

    pub fn uniform(s: f64) -> Result<Self, GeometryError> {
        Self::new([s; 3])
    }

    pub fn get(&self) -> [f64; 3] {
        self.0
    }
}

impl Default for Spacing {
    fn default() -> Self {
        Self([1.0; 3])
    }
}

/// Column norms of the 3x3 block.
pub fn voxel_spacing(affine: &AffineTransform) -> Spacing {
    Spacing(affine.columns().map(norm))
}

/// Physical area (mm²) of one pixel in a slice perpendicular to `slice_axis`.
pub fn slice_pixel_area(affine: &AffineTransform, slice_axis: usize) -> f64 {
    let (a, b) = match slice_axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    };
    norm(cross(affine.column(a), affine.column(b)))
}

/// Axis permutation and flips that take one orientation to another.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct AxisMap {
    /// `source[t]` is the input axis that becomes output axis `t`.
    source: [usize; 3],
    flip: [bool; 3],
}

impl AxisMap {
    fn between(current: OrientationCode, target: OrientationCode) -> Self {
        let cur = current.axes();
        let tgt = target.axes();
        let mut source = [0; 3];
        let mut flip = [false; 3];
        for t in 0..3 {
            let s = current.volume_axis_of(tgt[t].physical_axis());
            source[t] = s;
            flip[t] = cur[s] != tgt[t];
        }
        Self { source, flip }
    }

    fn is_identity(&self) -> bool {
        self.source == [0, 1, 2] && self.flip == [false; 3]
    }
}

/// Permutes and/or reverses voxel axes so the result's orientation equals
/// `target`. Pure index arithmetic: every voxel keeps its physical position.
pub fn reorient<T: Voxel>(
    volume: &Volume<T>,
    target: OrientationCode,
) -> Result<Volume<T>, GeometryError> {
    let current = orientation_of(volume.affine())?;
    let map = AxisMap::between(current, target);
    if map.is_identity() {
        return Ok(volume.clone());
    }
    let dims = volume.dims();
    let new_dims = map.source.map(|s| dims[s]);

    let old = volume.affine();
    let mut cols = [[0.0; 3]; 3];
    let mut origin = [0usize; 3];
    for t in 0..3 {
        let s = map.source[t];
        let c = old.column(s);
        cols[t] = if map.flip[t] { c.map(|v| -v) } else { c };
        if map.flip[t] {
            origin[s] = dims[s] - 1;
        }
    }
    let affine = AffineTransform::from_columns(cols, old.apply_index(origin))?;

    let mut data = Vec::with_capacity(volume.len());
    let mut src = [0usize; 3];
    for k in 0..new_dims[2] {
        for j in 0..new_dims[1] {
            for i in 0..new_dims[0] {
                for (t, n) in [i, j, k].into_iter().enumerate() {
                    let s = map.source[t];
                    src[s] = if map.flip[t] { dims[s] - 1 - n } else { n };
                }
                data.push(volume.get(src));
            }
        }
    }
    Ok(Volume::from_parts(
        new_dims,
        data,
        affine,
        volume.source_id().to_string(),
    ))
}

/// Output grid size when resampling `dims` from `current` to `target`
/// spacing: `round(n * current / target)`, at least 1.
pub fn resampled_dims(dims: [usize; 3], current: Spacing, target: Spacing) -> [usize; 3] {
    let (c, t) = (current.get(), target.get());
    let mut out = [1usize; 3];
    for a in 0..3 {
        out[a] = ((dims[a] as f64 * c[a] / t[a]).round() as usize).max(1);
    }
    out
}

/// Resamples onto a grid with spacing `target`, keeping the direction cosines
/// and the physical position of voxel (0, 0, 0). Samples falling outside the
/// input grid take the nearest edge value.
pub fn resample<T: Voxel>(
    volume: &Volume<T>,
    target: Spacing,
    interp: &dyn Interpolator,
) -> Result<Volume<T>, GeometryError> {
    let current = voxel_spacing(volume.affine());
    let new_dims = resampled_dims(volume.dims(), current, target);
    let (c, t) = (current.get(), target.get());
    let ratio = [t[0] / c[0], t[1] / c[1], t[2] / c[2]];

    let old = volume.affine();
    let mut cols = old.columns();
    for a in 0..3 {
        cols[a] = cols[a].map(|v| v / c[a] * t[a]);
    }
    let affine = AffineTransform::from_columns(cols, old.translation())?;

    let plane = new_dims[0] * new_dims[1];
    let mut data = vec![T::default(); plane * new_dims[2]];
    data.par_chunks_mut(plane)
        .enumerate()
        .for_each(|(k, chunk)| {
            for j in 0..new_dims[1] {
                for i in 0..new_dims[0] {
                    let pos = [
                        i as f64 * ratio[0],
                        j as f64 * ratio[1],
                        k as f64 * ratio[2],
                    ];
                    let v = interp.stencil(pos, volume.dims()).eval(volume);
                    chunk[i + new_dims[0] * j] = T::from_f64(v);
                }
            }
        });
    Ok(Volume::from_parts(
        new_dims,
        data,
        affine,
        volume.source_id().to_string(),
    ))
}
