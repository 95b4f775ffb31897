//! In-memory volumes and 2-D slices.
//!
//! Voxels are stored with the first axis varying fastest (NIfTI order):
//! linear index `i + nx * (j + ny * k)`.

use std::fmt::Debug;

use thiserror::Error;

use crate::geometry::{slice_pixel_area, AffineTransform};

/// Inclusive HU range a CT scanner can represent; samples outside are kept
/// but reported.
pub const HU_MIN: f32 = -1024.0;
pub const HU_MAX: f32 = 3071.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VolumeError {
    #[error("sample count {actual} does not match dims {dims:?} ({expected} voxels)")]
    LengthMismatch {
        dims: [usize; 3],
        expected: usize,
        actual: usize,
    },
    #[error("zero-sized axis in dims {0:?}")]
    ZeroDim([usize; 3]),
    #[error("mask label {value} at voxel {index} is not 0 or 1")]
    NonBinaryLabel { index: usize, value: u8 },
    #[error("non-finite sample at voxel {0}")]
    NonFinite(usize),
    #[error("axis {0} out of range")]
    AxisOutOfRange(usize),
    #[error("slice {index} out of range for axis of length {len}")]
    SliceOutOfRange { index: usize, len: usize },
}

/// Sample type stored in a [`Volume`].
pub trait Voxel: Copy + Default + PartialEq + Debug + Send + Sync + 'static {
    fn to_f64(self) -> f64;
    /// Converts an interpolated value back to the storage type.
    fn from_f64(v: f64) -> Self;
    fn is_valid(self) -> bool;
    /// Error describing why `self` failed [`Voxel::is_valid`] at `index`.
    fn invalid(self, index: usize) -> VolumeError;
}

impl Voxel for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn is_valid(self) -> bool {
        self.is_finite()
    }
    fn invalid(self, index: usize) -> VolumeError {
        VolumeError::NonFinite(index)
    }
}

/// Mask labels: interpolated values are re-binarized at 0.5.
impl Voxel for u8 {
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        u8::from(v > 0.5)
    }
    fn is_valid(self) -> bool {
        self <= 1
    }
    fn invalid(self, index: usize) -> VolumeError {
        VolumeError::NonBinaryLabel { index, value: self }
    }
}

/// A 3-D sampled grid with its voxel-to-world affine.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<T> {
    dims: [usize; 3],
    data: Vec<T>,
    affine: AffineTransform,
    source_id: String,
}

/// Hounsfield-unit CT volume.
pub type CtVolume = Volume<f32>;
/// Binary segmentation labels (0 or 1).
pub type MaskVolume = Volume<u8>;

impl<T: Voxel> Volume<T> {
    pub fn new(
        dims: [usize; 3],
        data: Vec<T>,
        affine: AffineTransform,
    ) -> Result<Self, VolumeError> {
        if dims.contains(&0) {
            return Err(VolumeError::ZeroDim(dims));
        }
        let expected = dims.iter().product();
        if data.len() != expected {
            return Err(VolumeError::LengthMismatch {
                dims,
                expected,
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_valid()) {
            return Err(data[index].invalid(index));
        }
        Ok(Self {
            dims,
            data,
            affine,
            source_id: String::new(),
        })
    }

    pub fn filled(
        dims: [usize; 3],
        value: T,
        affine: AffineTransform,
    ) -> Result<Self, VolumeError> {
        Self::new(dims, vec![value; dims.iter().product()], affine)
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn affine(&self) -> &AffineTransform {
        &self.affine
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn linear_index(&self, idx: [usize; 3]) -> usize {
        idx[0] + self.dims[0] * (idx[1] + self.dims[1] * idx[2])
    }

    #[inline]
    pub fn get(&self, idx: [usize; 3]) -> T {
        self.data[self.linear_index(idx)]
    }

    /// Same geometry, new samples. Validated like [`Volume::new`].
    pub fn with_data<U: Voxel>(&self, data: Vec<U>) -> Result<Volume<U>, VolumeError> {
        Ok(Volume::new(self.dims, data, self.affine)?.with_source_id(self.source_id.clone()))
    }

    pub(crate) fn from_parts(
        dims: [usize; 3],
        data: Vec<T>,
        affine: AffineTransform,
        source_id: String,
    ) -> Self {
        debug_assert_eq!(data.len(), dims.iter().product::<usize>());
        Self {
            dims,
            data,
            affine,
            source_id,
        }
    }

    /// True when dims match exactly and every affine element is within `tol`.
    pub fn same_geometry<U: Voxel>(&self, other: &Volume<U>, tol: f64) -> bool {
        self.dims == other.dims && self.affine.approx_eq(&other.affine, tol)
    }

    /// The two in-plane axes of a slice perpendicular to `axis`, ascending.
    pub fn plane_axes(axis: usize) -> (usize, usize) {
        match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        }
    }

    /// Extracts slice `index` perpendicular to `axis`.
    pub fn plane(&self, axis: usize, index: usize) -> Result<Plane<T>, VolumeError> {
        if axis > 2 {
            return Err(VolumeError::AxisOutOfRange(axis));
        }
        if index >= self.dims[axis] {
            return Err(VolumeError::SliceOutOfRange {
                index,
                len: self.dims[axis],
            });
        }
        let (a, b) = Self::plane_axes(axis);
        let (na, nb) = (self.dims[a], self.dims[b]);
        let mut data = Vec::with_capacity(na * nb);
        let mut idx = [0usize; 3];
        idx[axis] = index;
        for vb in 0..nb {
            idx[b] = vb;
            for va in 0..na {
                idx[a] = va;
                data.push(self.get(idx));
            }
        }
        Ok(Plane {
            nx: na,
            ny: nb,
            data,
            pixel_area_mm2: slice_pixel_area(&self.affine, axis),
        })
    }

    /// Writes `plane` into slice `index` perpendicular to `axis`.
    pub fn set_plane(
        &mut self,
        axis: usize,
        index: usize,
        plane: &Plane<T>,
    ) -> Result<(), VolumeError> {
        if axis > 2 {
            return Err(VolumeError::AxisOutOfRange(axis));
        }
        if index >= self.dims[axis] {
            return Err(VolumeError::SliceOutOfRange {
                index,
                len: self.dims[axis],
            });
        }
        let (a, b) = Self::plane_axes(axis);
        if plane.nx != self.dims[a] || plane.ny != self.dims[b] {
            return Err(VolumeError::LengthMismatch {
                dims: self.dims,
                expected: self.dims[a] * self.dims[b],
                actual: plane.data.len(),
            });
        }
        let mut idx = [0usize; 3];
        idx[axis] = index;
        for vb in 0..plane.ny {
            idx[b] = vb;
            for va in 0..plane.nx {
                idx[a] = va;
                let li = self.linear_index(idx);
                self.data[li] = plane.data[va + plane.nx * vb];
            }
        }
        Ok(())
    }
}

impl CtVolume {
    /// Minimum and maximum sample.
    pub fn hu_range(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Samples outside the representable CT range `[HU_MIN, HU_MAX]`.
    pub fn out_of_range_count(&self) -> usize {
        self.data
            .iter()
            .filter(|&&v| !(HU_MIN..=HU_MAX).contains(&v))
            .count()
    }
}

impl MaskVolume {
    /// Number of 1-labels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Per-slice label counts along `axis`.
    pub fn slice_counts(&self, axis: usize) -> Vec<usize> {
        let mut counts = vec![0usize; self.dims[axis]];
        let [nx, ny, _] = self.dims;
        for (li, &v) in self.data.iter().enumerate() {
            if v != 0 {
                let idx = [li % nx, (li / nx) % ny, li / (nx * ny)];
                counts[idx[axis]] += 1;
            }
        }
        counts
    }
}

/// A 2-D slice with the physical area of one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T> {
    pub nx: usize,
    pub ny: usize,
    pub data: Vec<T>,
    pub pixel_area_mm2: f64,
}

/// A transverse CT slice in HU.
pub type HuSlice = Plane<f32>;
/// A binary 2-D mask.
pub type MaskSlice = Plane<u8>;

impl<T: Voxel> Plane<T> {
    pub fn new(
        nx: usize,
        ny: usize,
        data: Vec<T>,
        pixel_area_mm2: f64,
    ) -> Result<Self, VolumeError> {
        if nx == 0 || ny == 0 {
            return Err(VolumeError::ZeroDim([nx, ny, 1]));
        }
        if data.len() != nx * ny {
            return Err(VolumeError::LengthMismatch {
                dims: [nx, ny, 1],
                expected: nx * ny,
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_valid()) {
            return Err(data[index].invalid(index));
        }
        Ok(Self {
            nx,
            ny,
            data,
            pixel_area_mm2,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[x + self.nx * y]
    }
}

impl MaskSlice {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

/// Read-only view of binary labels on a fixed grid, shared by slices and
/// volumes for overlap metrics.
pub trait LabelGrid {
    fn shape(&self) -> Vec<usize>;
    fn labels(&self) -> &[u8];
}

impl LabelGrid for MaskVolume {
    fn shape(&self) -> Vec<usize> {
        self.dims.to_vec()
    }
    fn labels(&self) -> &[u8] {
        &self.data
    }
}

impl LabelGrid for MaskSlice {
    fn shape(&self) -> Vec<usize> {
        vec![self.nx, self.ny]
    }
    fn labels(&self) -> &[u8] {
        &self.data
    }
}
