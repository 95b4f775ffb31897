//! Skeletal muscle area (SMA) measurement at the third lumbar vertebra.
//!
//! The crate reads CT volumes and label masks from NIfTI-1 or DICOM, puts
//! them in a common orientation and spacing, prepares network inputs, runs a
//! classical threshold segmenter, measures muscle area on the annotated slice
//! and evaluates predictions against ground truth.
//!
//! Interchangeable strategies (interpolators, slice policies, segmenters) are
//! looked up by name through [`registry::Registry`].

pub mod dicom;
pub mod geometry;
pub mod metrics;
pub mod nifti;
pub mod phantom;
pub mod preprocess;
pub mod registry;
pub mod segment;
pub mod sma;
pub mod volume;

use thiserror::Error;

pub use geometry::{AffineTransform, OrientationCode, Spacing};
pub use volume::{CtVolume, HuSlice, MaskSlice, MaskVolume, Volume};

/// Any error raised by this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Nifti(#[from] nifti::NiftiError),
    #[error(transparent)]
    Dicom(#[from] dicom::DicomError),
    #[error(transparent)]
    Geometry(#[from] geometry::GeometryError),
    #[error(transparent)]
    Volume(#[from] volume::VolumeError),
    #[error(transparent)]
    Preprocess(#[from] preprocess::PreprocessError),
    #[error(transparent)]
    Sma(#[from] sma::SmaError),
    #[error(transparent)]
    Segment(#[from] segment::SegmentError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Phantom(#[from] phantom::PhantomError),
    #[error(transparent)]
    Registry(#[from] registry::RegistryError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
