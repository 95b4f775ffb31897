//! Skeletal muscle area on the annotated slice and sex-specific sarcopenia
//! classification.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{orientation_of, slice_pixel_area, GeometryError};
use crate::registry::{bad_argument, no_argument, Registry, RegistryError};
use crate::volume::{MaskVolume, Volume, VolumeError, Voxel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmaError {
    #[error("mask has no nonzero labels")]
    EmptyMask,
    #[error("mask is annotated on {} slices ({slices:?}); choose a slice policy", slices.len())]
    MultipleAnnotatedSlices { slices: Vec<usize> },
    #[error("slice {index} out of range for axial length {len}")]
    SliceOutOfRange { index: usize, len: usize },
    #[error("invalid sex '{0}': expected male or female")]
    InvalidSex(String),
    #[error("invalid area {0}: must be finite and non-negative")]
    InvalidArea(f64),
    #[error("invalid cutoffs male={male} female={female}: must be finite and positive")]
    InvalidCutoffs { male: f64, female: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::Male => "male",
            Sex::Female => "female",
        })
    }
}

impl FromStr for Sex {
    type Err = SmaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "male" | "m" => Ok(Sex::Male),
            "female" | "f" => Ok(Sex::Female),
            _ => Err(SmaError::InvalidSex(s.to_string())),
        }
    }
}

/// Area thresholds (cm²) below which a scan is classed sarcopenic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutoffs {
    pub male_cm2: f64,
    pub female_cm2: f64,
}

impl Default for Cutoffs {
    fn default() -> Self {
        Self {
            male_cm2: 144.0,
            female_cm2: 92.0,
        }
    }
}

impl Cutoffs {
    pub fn new(male_cm2: f64, female_cm2: f64) -> Result<Self, SmaError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(male_cm2) && ok(female_cm2) {
            Ok(Self {
                male_cm2,
                female_cm2,
            })
        } else {
            Err(SmaError::InvalidCutoffs {
                male: male_cm2,
                female: female_cm2,
            })
        }
    }

    pub fn for_sex(&self, sex: Sex) -> f64 {
        match sex {
            Sex::Male => self.male_cm2,
            Sex::Female => self.female_cm2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmaMeasurement {
    pub area_cm2: f64,
    pub slice_index: usize,
    pub pixel_count: usize,
    pub pixel_area_mm2: f64,
    pub scan_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SarcopeniaAssessment {
    pub sex: Sex,
    pub area_cm2: f64,
    pub cutoff_cm2: f64,
    pub sarcopenic: bool,
}

/// Volume axis running superior/inferior, derived from the affine.
pub fn axial_axis<T: Voxel>(volume: &Volume<T>) -> Result<usize, SmaError> {
    Ok(orientation_of(volume.affine())?.volume_axis_of(2))
}

fn annotated_slices(mask: &MaskVolume, axis: usize) -> Vec<(usize, usize)> {
    mask.slice_counts(axis)
        .into_iter()
        .enumerate()
        .filter(|&(_, c)| c > 0)
        .collect()
}

/// The single axial slice carrying labels.
pub fn annotated_slice_index(mask: &MaskVolume) -> Result<usize, SmaError> {
    let axis = axial_axis(mask)?;
    match annotated_slices(mask, axis).as_slice() {
        [] => Err(SmaError::EmptyMask),
        [(k, _)] => Ok(*k),
        many => Err(SmaError::MultipleAnnotatedSlices {
            slices: many.iter().map(|s| s.0).collect(),
        }),
    }
}

/// Counts labels on axial slice `slice_index` and converts to cm².
pub fn compute_sma(mask: &MaskVolume, slice_index: usize) -> Result<SmaMeasurement, SmaError> {
    let axis = axial_axis(mask)?;
    let len = mask.dims()[axis];
    if slice_index >= len {
        return Err(SmaError::SliceOutOfRange {
            index: slice_index,
            len,
        });
    }
    let pixel_count = mask.plane(axis, slice_index)?.count();
    Ok(measurement(mask, slice_index, pixel_count, axis))
}

fn measurement(
    mask: &MaskVolume,
    slice_index: usize,
    pixel_count: usize,
    axis: usize,
) -> SmaMeasurement {
    let pixel_area_mm2 = slice_pixel_area(mask.affine(), axis);
    SmaMeasurement {
        area_cm2: pixel_count as f64 * pixel_area_mm2 / 100.0,
        slice_index,
        pixel_count,
        pixel_area_mm2,
        scan_id: mask.source_id().to_string(),
    }
}

pub fn classify(
    area_cm2: f64,
    sex: Sex,
    cutoffs: &Cutoffs,
) -> Result<SarcopeniaAssessment, SmaError> {
    if !(area_cm2.is_finite() && area_cm2 >= 0.0) {
        return Err(SmaError::InvalidArea(area_cm2));
    }
    let cutoff_cm2 = cutoffs.for_sex(sex);
    Ok(SarcopeniaAssessment {
        sex,
        area_cm2,
        cutoff_cm2,
        sarcopenic: area_cm2 < cutoff_cm2,
    })
}

/// Which axial slice(s) of a mask are measured.
pub trait SlicePolicy: Send + Sync {
    fn name(&self) -> String;

    /// Axial slice indices to measure, ascending. Must not be empty.
    fn select(&self, mask: &MaskVolume) -> Result<Vec<usize>, SmaError>;

    /// Measures the selected slices. Several slices are summed and reported
    /// under the lowest index.
    fn measure(&self, mask: &MaskVolume) -> Result<SmaMeasurement, SmaError> {
        let axis = axial_axis(mask)?;
        let slices = self.select(mask)?;
        let counts = mask.slice_counts(axis);
        let mut total = 0;
        for &k in &slices {
            total += *counts.get(k).ok_or(SmaError::SliceOutOfRange {
                index: k,
                len: counts.len(),
            })?;
        }
        Ok(measurement(mask, slices[0], total, axis))
    }
}

/// Exactly one annotated slice, otherwise an error.
#[derive(Debug, Clone, Copy, Default)]
pub struct SingleSlice;

impl SlicePolicy for SingleSlice {
    fn name(&self) -> String {
        "single".into()
    }

    fn select(&self, mask: &MaskVolume) -> Result<Vec<usize>, SmaError> {
        Ok(vec![annotated_slice_index(mask)?])
    }
}

/// Every annotated slice, areas added.
#[derive(Debug, Clone, Copy, Default)]
pub struct SumSlices;

impl SlicePolicy for SumSlices {
    fn name(&self) -> String {
        "sum".into()
    }

    fn select(&self, mask: &MaskVolume) -> Result<Vec<usize>, SmaError> {
        let axis = axial_axis(mask)?;
        let slices: Vec<usize> = annotated_slices(mask, axis)
            .into_iter()
            .map(|s| s.0)
            .collect();
        if slices.is_empty() {
            return Err(SmaError::EmptyMask);
        }
        Ok(slices)
    }
}

/// The annotated slice with the most labels; ties go to the lowest index.
#[derive(Debug, Clone, Copy, Default)]
pub struct LargestSlice;

impl SlicePolicy for LargestSlice {
    fn name(&self) -> String {
        "largest".into()
    }

    fn select(&self, mask: &MaskVolume) -> Result<Vec<usize>, SmaError> {
        let axis = axial_axis(mask)?;
        let mut best: Option<(usize, usize)> = None;
        for (k, c) in annotated_slices(mask, axis) {
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((k, c));
            }
        }
        best.map(|b| vec![b.0]).ok_or(SmaError::EmptyMask)
    }
}

/// A fixed axial slice, which may be empty.
#[derive(Debug, Clone, Copy)]
pub struct FixedSlice(pub usize);

impl SlicePolicy for FixedSlice {
    fn name(&self) -> String {
        format!("index={}", self.0)
    }

    fn select(&self, mask: &MaskVolume) -> Result<Vec<usize>, SmaError> {
        let len = mask.dims()[axial_axis(mask)?];
        if self.0 >= len {
            return Err(SmaError::SliceOutOfRange { index: self.0, len });
        }
        Ok(vec![self.0])
    }
}

/// Built-in slice policies: `single`, `sum`, `largest`, `index=<k>`.
pub fn slice_policies() -> Registry<dyn SlicePolicy> {
    const FAMILY: &str = "slice policy";
    let mut r: Registry<dyn SlicePolicy> = Registry::new(FAMILY);
    r.register("single", |_, arg| {
        no_argument(FAMILY, "single", arg)?;
        Ok(Box::new(SingleSlice))
    });
    r.register("sum", |_, arg| {
        no_argument(FAMILY, "sum", arg)?;
        Ok(Box::new(SumSlices))
    });
    r.register("largest", |_, arg| {
        no_argument(FAMILY, "largest", arg)?;
        Ok(Box::new(LargestSlice))
    });
    r.register("index", |_, arg| {
        let k = arg
            .ok_or_else(|| bad_argument(FAMILY, "index", "expected index=<k>"))?
            .parse::<usize>()
            .map_err(|e| bad_argument(FAMILY, "index", &e.to_string()))?;
        Ok(Box::new(FixedSlice(k)))
    });
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AffineTransform;

    fn mask_with(dims: [usize; 3], spacing: [f64; 3], on: &[[usize; 3]]) -> MaskVolume {
        let a = AffineTransform::diagonal(spacing, [0.0; 3]).unwrap();
        let mut m = Volume::filled(dims, 0u8, a).unwrap();
        let mut data = m.data().to_vec();
        for &idx in on {
            data[m.linear_index(idx)] = 1;
        }
        m = m.with_data(data).unwrap();
        m
    }

    #[test]
    fn finds_single_slice() {
        let m = mask_with([4, 4, 40], [1.0; 3], &[[1, 1, 37], [2, 2, 37]]);
        assert_eq!(annotated_slice_index(&m).unwrap(), 37);
    }

    #[test]
    fn empty_and_multiple() {
        let empty = mask_with([2, 2, 3], [1.0; 3], &[]);
        assert_eq!(annotated_slice_index(&empty), Err(SmaError::EmptyMask));
        let two = mask_with([2, 2, 40], [1.0; 3], &[[0, 0, 37], [0, 0, 38]]);
        assert_eq!(
            annotated_slice_index(&two),
            Err(SmaError::MultipleAnnotatedSlices {
                slices: vec![37, 38]
            })
        );
    }

    #[test]
    fn area_arithmetic() {
        let m = Volume::filled(
            [100, 100, 1],
            1u8,
            AffineTransform::diagonal([0.8, 0.8, 3.0], [0.0; 3]).unwrap(),
        )
        .unwrap();
        let s = compute_sma(&m, 0).unwrap();
        assert_eq!(s.pixel_count, 10_000);
        assert!((s.area_cm2 - 64.0).abs() < 1e-9);
        let one = mask_with([1, 1, 1], [1.0; 3], &[[0, 0, 0]]);
        assert!((compute_sma(&one, 0).unwrap().area_cm2 - 0.01).abs() < 1e-15);
    }

    #[test]
    fn axial_axis_follows_orientation() {
        // volume axis 0 runs superior
        let a = AffineTransform::from_columns(
            [[0.0, 0.0, 2.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            [0.0; 3],
        )
        .unwrap();
        let m = Volume::filled([3, 2, 2], 0u8, a).unwrap();
        assert_eq!(axial_axis(&m).unwrap(), 0);
    }

    #[test]
    fn classification_examples() {
        let c = Cutoffs::default();
        assert!(classify(143.6, Sex::Male, &c).unwrap().sarcopenic);
        assert!(!classify(144.0, Sex::Male, &c).unwrap().sarcopenic);
        let f = classify(97.18, Sex::Female, &c).unwrap();
        assert!(!f.sarcopenic);
        assert_eq!(f.cutoff_cm2, 92.0);
        assert!(classify(-1.0, Sex::Male, &c).is_err());
    }

    #[test]
    fn sex_parsing() {
        assert_eq!("Male".parse::<Sex>().unwrap(), Sex::Male);
        assert_eq!("f".parse::<Sex>().unwrap(), Sex::Female);
        assert!("x".parse::<Sex>().is_err());
    }

    #[test]
    fn policies() {
        let m = mask_with([3, 3, 5], [1.0; 3], &[[0, 0, 1], [0, 0, 3], [1, 0, 3]]);
        let reg = slice_policies();
        assert_eq!(reg.names(), vec!["index", "largest", "single", "sum"]);
        assert!(reg.build("single", &()).unwrap().measure(&m).is_err());
        let sum = reg.build("sum", &()).unwrap().measure(&m).unwrap();
        assert_eq!((sum.pixel_count, sum.slice_index), (3, 1));
        let largest = reg.build("largest", &()).unwrap().measure(&m).unwrap();
        assert_eq!((largest.pixel_count, largest.slice_index), (2, 3));
        let fixed = reg.build("index=0", &()).unwrap().measure(&m).unwrap();
        assert_eq!(fixed.pixel_count, 0);
        assert!(reg.build("index=9", &()).unwrap().measure(&m).is_err());
        assert!(reg.build("index", &()).is_err());
        assert!(reg.build("index=x", &()).is_err());
    }
}
