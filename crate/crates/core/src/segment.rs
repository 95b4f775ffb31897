//! Classical threshold segmentation of skeletal muscle on a CT slice.
//!
//! The baseline pipeline keeps the largest body region, applies a muscle HU
//! window inside it, smooths with a morphological opening and drops small
//! islands. All connectivity is 4-neighbour.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::{HuWindow, PreprocessError};
use crate::registry::{no_argument, Registry, RegistryError};
use crate::sma::{axial_axis, SmaError};
use crate::volume::{CtVolume, HuSlice, MaskSlice, MaskVolume, Plane, Volume, VolumeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentError {
    #[error("no body region above the body threshold")]
    EmptySlice,
    #[error("slice contains a non-finite sample at pixel {0}")]
    NonFinite(usize),
    #[error("invalid segmentation parameter: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Window(#[from] PreprocessError),
    #[error(transparent)]
    Sma(#[from] SmaError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegParams {
    pub muscle_window: HuWindow,
    pub body_threshold_hu: f64,
    pub opening_radius_px: u32,
    pub min_component_mm2: f64,
}

impl Default for SegParams {
    fn default() -> Self {
        Self {
            muscle_window: HuWindow::new(-29.0, 150.0).expect("valid window"),
            body_threshold_hu: -500.0,
            opening_radius_px: 1,
            min_component_mm2: 100.0,
        }
    }
}

impl SegParams {
    pub fn validate(&self) -> Result<(), SegmentError> {
        if !self.body_threshold_hu.is_finite() {
            return Err(SegmentError::InvalidParams(
                "body threshold must be finite".into(),
            ));
        }
        if !(self.min_component_mm2.is_finite() && self.min_component_mm2 > 0.0) {
            return Err(SegmentError::InvalidParams(format!(
                "minimum component area {} must be positive",
                self.min_component_mm2
            )));
        }
        Ok(())
    }
}

/// Component labels (0 = background, 1.. in raster order of first pixel)
/// and the pixel count of each label.
pub fn label_components(fg: &[bool], nx: usize, ny: usize) -> (Vec<u32>, Vec<usize>) {
    let mut labels = vec![0u32; fg.len()];
    let mut sizes = vec![0usize];
    let mut queue = VecDeque::new();
    for start in 0..fg.len() {
        if !fg[start] || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32;
        let mut size = 0;
        labels[start] = label;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (x, y) = (p % nx, p / nx);
            let mut visit = |q: usize| {
                if fg[q] && labels[q] == 0 {
                    labels[q] = label;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < nx {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - nx);
            }
            if y + 1 < ny {
                visit(p + nx);
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

fn disk(radius: u32) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                out.push((dx, dy));
            }
        }
    }
    out
}

fn offset(x: usize, y: usize, d: (isize, isize), nx: usize, ny: usize) -> Option<usize> {
    let (xx, yy) = (x as isize + d.0, y as isize + d.1);
    (xx >= 0 && yy >= 0 && (xx as usize) < nx && (yy as usize) < ny)
        .then(|| xx as usize + nx * yy as usize)
}

/// Erosion with pixels beyond the border treated as background.
fn erode(fg: &[bool], nx: usize, ny: usize, se: &[(isize, isize)]) -> Vec<bool> {
    (0..fg.len())
        .map(|p| {
            let (x, y) = (p % nx, p / nx);
            se.iter()
                .all(|&d| offset(x, y, d, nx, ny).is_some_and(|q| fg[q]))
        })
        .collect()
}

fn dilate(fg: &[bool], nx: usize, ny: usize, se: &[(isize, isize)]) -> Vec<bool> {
    (0..fg.len())
        .map(|p| {
            let (x, y) = (p % nx, p / nx);
            se.iter()
                .any(|&d| offset(x, y, (-d.0, -d.1), nx, ny).is_some_and(|q| fg[q]))
        })
        .collect()
}

/// Morphological opening by a digital disk of `radius` pixels.
pub fn opening(fg: &[bool], nx: usize, ny: usize, radius: u32) -> Vec<bool> {
    if radius == 0 {
        return fg.to_vec();
    }
    let se = disk(radius);
    dilate(&erode(fg, nx, ny, &se), nx, ny, &se)
}

fn check_finite(slice: &HuSlice) -> Result<(), SegmentError> {
    match slice.data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(SegmentError::NonFinite(i)),
        None => Ok(()),
    }
}

fn to_mask(slice: &HuSlice, fg: &[bool]) -> Result<MaskSlice, SegmentError> {
    let data = fg.iter().map(|&b| u8::from(b)).collect();
    Ok(Plane::new(slice.nx, slice.ny, data, slice.pixel_area_mm2)?)
}

/// Produces a muscle mask for one transverse slice.
pub trait Segmenter: Send + Sync {
    fn name(&self) -> &'static str;
    fn segment_slice(&self, slice: &HuSlice) -> Result<MaskSlice, SegmentError>;
}

/// Body mask, muscle window, opening, small-island removal.
#[derive(Debug, Clone, Copy, Default)]
pub struct BaselineSegmenter {
    pub params: SegParams,
}

impl Segmenter for BaselineSegmenter {
    fn name(&self) -> &'static str {
        "baseline"
    }

    fn segment_slice(&self, slice: &HuSlice) -> Result<MaskSlice, SegmentError> {
        check_finite(slice)?;
        let p = &self.params;
        p.validate()?;
        let (nx, ny) = (slice.nx, slice.ny);

        let above: Vec<bool> = slice
            .data
            .iter()
            .map(|&v| v as f64 > p.body_threshold_hu)
            .collect();
        let (labels, sizes) = label_components(&above, nx, ny);
        // first maximum wins, so ties go to the lowest label
        let body = (1..sizes.len())
            .fold(None, |best: Option<usize>, l| match best {
                Some(b) if sizes[b] >= sizes[l] => Some(b),
                _ => Some(l),
            })
            .ok_or(SegmentError::EmptySlice)? as u32;

        let candidate: Vec<bool> = slice
            .data
            .iter()
            .zip(&labels)
            .map(|(&v, &l)| l == body && p.muscle_window.contains(v as f64))
            .collect();
        let opened = opening(&candidate, nx, ny, p.opening_radius_px);

        let (labels, sizes) = label_components(&opened, nx, ny);
        let keep: Vec<bool> = sizes
            .iter()
            .map(|&n| n as f64 * slice.pixel_area_mm2 >= p.min_component_mm2)
            .collect();
        let out: Vec<bool> = labels.iter().map(|&l| l != 0 && keep[l as usize]).collect();
        to_mask(slice, &out)
    }
}

/// Muscle window alone, with no body or morphology steps.
#[derive(Debug, Clone, Copy)]
pub struct WindowSegmenter {
    pub window: HuWindow,
}

impl Default for WindowSegmenter {
    fn default() -> Self {
        Self {
            window: SegParams::default().muscle_window,
        }
    }
}

impl Segmenter for WindowSegmenter {
    fn name(&self) -> &'static str {
        "window"
    }

    fn segment_slice(&self, slice: &HuSlice) -> Result<MaskSlice, SegmentError> {
        check_finite(slice)?;
        let fg: Vec<bool> = slice
            .data
            .iter()
            .map(|&v| self.window.contains(v as f64))
            .collect();
        to_mask(slice, &fg)
    }
}

/// Built-in segmenters: `baseline` and `window`, both configured from
/// [`SegParams`].
pub fn segmenters() -> Registry<dyn Segmenter, SegParams> {
    let mut r: Registry<dyn Segmenter, SegParams> = Registry::new("segmenter");
    r.register("baseline", |params: &SegParams, arg| {
        no_argument("segmenter", "baseline", arg)?;
        Ok(Box::new(BaselineSegmenter { params: *params }))
    });
    r.register("window", |params: &SegParams, arg| {
        no_argument("segmenter", "window", arg)?;
        Ok(Box::new(WindowSegmenter {
            window: params.muscle_window,
        }))
    });
    r
}

/// Segments axial slices of a volume into a mask with the same geometry.
///
/// With `slice = Some(k)` only that slice is segmented and every other slice
/// is zero; errors on slice `k` are returned. Otherwise every slice is
/// segmented and slices without a body region are left empty.
pub fn segment_volume(
    volume: &CtVolume,
    segmenter: &dyn Segmenter,
    slice: Option<usize>,
) -> Result<MaskVolume, SegmentError> {
    let axis = axial_axis(volume)?;
    let mut mask: MaskVolume =
        Volume::filled(volume.dims(), 0u8, *volume.affine())?.with_source_id(volume.source_id());
    let targets: Vec<usize> = match slice {
        Some(k) => vec![k],
        None => (0..volume.dims()[axis]).collect(),
    };
    for k in targets {
        let plane = volume.plane(axis, k)?;
        match segmenter.segment_slice(&plane) {
            Ok(m) => mask.set_plane(axis, k, &m)?,
            Err(SegmentError::EmptySlice) if slice.is_none() => {}
            Err(e) => return Err(e),
        }
    }
    Ok(mask)
}
