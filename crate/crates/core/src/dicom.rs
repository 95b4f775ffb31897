//! Minimal DICOM Part-10 reader for uncompressed single-frame CT slices and
//! assembly of a slice series into a [`CtVolume`].

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::geometry::{cross, dot, norm, AffineTransform, GeometryError};
use crate::volume::{CtVolume, Volume, VolumeError};

const IMPLICIT_VR_LE: &str = "1.2.840.10008.1.2";
const EXPLICIT_VR_LE: &str = "1.2.840.10008.1.2.1";
const EXPLICIT_VR_BE: &str = "1.2.840.10008.1.2.2";
const DEFLATED_LE: &str = "1.2.840.10008.1.2.1.99";

/// Tolerance on direction-cosine norms and orthogonality.
pub const COSINE_TOL: f64 = 1e-3;
/// Allowed spread (mm) of consecutive slice gaps.
pub const SPACING_TOL_MM: f64 = 0.01;
/// Gaps below this (mm) count as coincident slices.
pub const DUPLICATE_TOL_MM: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tag(pub u16, pub u16);

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:04X},{:04X})", self.0, self.1)
    }
}

pub mod tags {
    use super::Tag;
    pub const TRANSFER_SYNTAX: Tag = Tag(0x0002, 0x0010);
    pub const SERIES_UID: Tag = Tag(0x0020, 0x000E);
    pub const INSTANCE_NUMBER: Tag = Tag(0x0020, 0x0013);
    pub const IMAGE_POSITION: Tag = Tag(0x0020, 0x0032);
    pub const IMAGE_ORIENTATION: Tag = Tag(0x0020, 0x0037);
    pub const SAMPLES_PER_PIXEL: Tag = Tag(0x0028, 0x0002);
    pub const NUMBER_OF_FRAMES: Tag = Tag(0x0028, 0x0008);
    pub const ROWS: Tag = Tag(0x0028, 0x0010);
    pub const COLUMNS: Tag = Tag(0x0028, 0x0011);
    pub const PIXEL_SPACING: Tag = Tag(0x0028, 0x0030);
    pub const BITS_ALLOCATED: Tag = Tag(0x0028, 0x0100);
    pub const BITS_STORED: Tag = Tag(0x0028, 0x0101);
    pub const PIXEL_REPRESENTATION: Tag = Tag(0x0028, 0x0103);
    pub const RESCALE_INTERCEPT: Tag = Tag(0x0028, 0x1052);
    pub const RESCALE_SLOPE: Tag = Tag(0x0028, 0x1053);
    pub const PIXEL_DATA: Tag = Tag(0x7FE0, 0x0010);
    pub const ITEM: Tag = Tag(0xFFFE, 0xE000);
    pub const ITEM_END: Tag = Tag(0xFFFE, 0xE00D);
    pub const SEQUENCE_END: Tag = Tag(0xFFFE, 0xE0DD);
}

#[derive(Debug, Error)]
pub enum DicomError {
    #[error("missing 128-byte preamble and DICM prefix")]
    MissingPreamble,
    #[error("compressed transfer syntax {0}; convert to uncompressed little-endian first")]
    CompressedTransferSyntax(String),
    #[error("unsupported transfer syntax {0}")]
    UnsupportedTransferSyntax(String),
    #[error("missing required tag {0}")]
    MissingRequiredTag(Tag),
    #[error("pixel data has {actual} bytes, expected {expected}")]
    PixelDataLengthMismatch { expected: usize, actual: usize },
    #[error("malformed element {tag}: {reason}")]
    Malformed { tag: Tag, reason: String },
    #[error("unexpected end of data while reading {0}")]
    UnexpectedEof(&'static str),
    #[error("unsupported pixel format: {0}")]
    UnsupportedPixelFormat(String),
    #[error("invalid image orientation: {0}")]
    InvalidOrientation(String),
    #[error("series needs at least 2 slices, got {0}")]
    TooFewSlices(usize),
    #[error("slices belong to different series: {0} and {1}")]
    MixedSeries(String, String),
    #[error("slice {index} differs from the first in {field}")]
    InconsistentSlices { index: usize, field: &'static str },
    #[error("two slices share position {0:.4} mm along the slice normal")]
    DuplicatePosition(f64),
    #[error("non-uniform slice spacing: gaps range from {min:.4} to {max:.4} mm")]
    NonUniformSliceSpacing { min: f64, max: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// One CT slice with the attributes needed for volume assembly.
#[derive(Debug, Clone, PartialEq)]
pub struct DicomSlice {
    pub rows: usize,
    pub cols: usize,
    /// (between rows, between columns) in mm, as stored in (0028,0030).
    pub pixel_spacing: [f64; 2],
    pub image_position: [f64; 3],
    /// Row direction cosine followed by column direction cosine.
    pub image_orientation: [f64; 6],
    pub rescale_slope: f64,
    pub rescale_intercept: f64,
    /// Row-major stored values, `rows * cols` long.
    pub stored_pixels: Vec<i64>,
    pub instance_number: i64,
    pub series_uid: String,
    /// True when the rescale tags were absent and defaults were used.
    pub rescale_defaulted: bool,
}

impl DicomSlice {
    /// Direction of increasing column index.
    pub fn row_cosine(&self) -> [f64; 3] {
        [
            self.image_orientation[0],
            self.image_orientation[1],
            self.image_orientation[2],
        ]
    }

    /// Direction of increasing row index.
    pub fn col_cosine(&self) -> [f64; 3] {
        [
            self.image_orientation[3],
            self.image_orientation[4],
            self.image_orientation[5],
        ]
    }

    pub fn normal(&self) -> [f64; 3] {
        cross(self.row_cosine(), self.col_cosine())
    }

    /// Rescaled HU value of a stored pixel.
    pub fn hu(&self, stored: i64) -> f64 {
        stored as f64 * self.rescale_slope + self.rescale_intercept
    }

    pub fn validate(&self) -> Result<(), DicomError> {
        let (r, c) = (self.row_cosine(), self.col_cosine());
        for (name, v) in [("row", r), ("column", c)] {
            if (norm(v) - 1.0).abs() > COSINE_TOL {
                return Err(DicomError::InvalidOrientation(format!(
                    "{name} cosine {v:?} is not unit length"
                )));
            }
        }
        if dot(r, c).abs() > COSINE_TOL {
            return Err(DicomError::InvalidOrientation(format!(
                "row and column cosines are not orthogonal (dot {:.2e})",
                dot(r, c)
            )));
        }
        if !self.pixel_spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(DicomError::Malformed {
                tag: tags::PIXEL_SPACING,
                reason: format!("non-positive spacing {:?}", self.pixel_spacing),
            });
        }
        if self.rows == 0 || self.cols == 0 {
            return Err(DicomError::UnsupportedPixelFormat(
                "zero rows or columns".into(),
            ));
        }
        if self.stored_pixels.len() != self.rows * self.cols {
            return Err(DicomError::PixelDataLengthMismatch {
                expected: self.rows * self.cols,
                actual: self.stored_pixels.len(),
            });
        }
        Ok(())
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], DicomError> {
        if self.remaining() < n {
            return Err(DicomError::UnexpectedEof(what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, DicomError> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, DicomError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn peek_group(&self) -> Option<u16> {
        (self.remaining() >= 2)
            .then(|| u16::from_le_bytes([self.buf[self.pos], self.buf[self.pos + 1]]))
    }
}

const UNDEFINED: u32 = 0xFFFF_FFFF;

struct ElementHeader {
    tag: Tag,
    len: u32,
}

fn read_element_header(cur: &mut Cursor<'_>, explicit: bool) -> Result<ElementHeader, DicomError> {
    let tag = Tag(cur.u16("tag")?, cur.u16("tag")?);
    // Item and delimiter tags never carry a VR.
    if tag.0 == 0xFFFE || !explicit {
        return Ok(ElementHeader {
            tag,
            len: cur.u32("length")?,
        });
    }
    let vr = cur.take(2, "VR")?;
    let long = matches!(
        vr,
        b"OB"
            | b"OW"
            | b"OF"
            | b"OD"
            | b"OL"
            | b"OV"
            | b"SQ"
            | b"UT"
            | b"UN"
            | b"UC"
            | b"UR"
            | b"SV"
            | b"UV"
    );
    let len = if long {
        cur.take(2, "reserved")?;
        cur.u32("length")?
    } else {
        cur.u16("length")? as u32
    };
    Ok(ElementHeader { tag, len })
}

/// Skips elements until `end` (consumed), recursing into nested
/// undefined-length sequences and items.
fn skip_until(cur: &mut Cursor<'_>, explicit: bool, end: Tag) -> Result<(), DicomError> {
    loop {
        let h = read_element_header(cur, explicit)?;
        if h.tag == end {
            return Ok(());
        }
        if h.len == UNDEFINED {
            let inner_end = if h.tag == tags::ITEM {
                tags::ITEM_END
            } else {
                tags::SEQUENCE_END
            };
            skip_until(cur, explicit, inner_end)?;
        } else {
            cur.take(h.len as usize, "element value")?;
        }
    }
}

/// Top-level element values keyed by tag.
fn read_elements<'a>(
    cur: &mut Cursor<'a>,
    explicit: bool,
) -> Result<HashMap<Tag, &'a [u8]>, DicomError> {
    let mut out = HashMap::new();
    while cur.remaining() > 0 {
        let h = read_element_header(cur, explicit)?;
        if h.len == UNDEFINED {
            if h.tag == tags::PIXEL_DATA {
                return Err(DicomError::CompressedTransferSyntax(
                    "encapsulated pixel data".into(),
                ));
            }
            skip_until(cur, explicit, tags::SEQUENCE_END)?;
            continue;
        }
        let value = cur.take(h.len as usize, "element value")?;
        out.insert(h.tag, value);
    }
    Ok(out)
}

fn text(v: &[u8]) -> String {
    String::from_utf8_lossy(v)
        .trim_matches(|c: char| c == '\0' || c.is_whitespace())
        .to_string()
}

struct Elements<'a>(HashMap<Tag, &'a [u8]>);

impl<'a> Elements<'a> {
    fn raw(&self, tag: Tag) -> Option<&'a [u8]> {
        self.0.get(&tag).copied()
    }

    fn required(&self, tag: Tag) -> Result<&'a [u8], DicomError> {
        self.raw(tag).ok_or(DicomError::MissingRequiredTag(tag))
    }

    fn us(&self, tag: Tag) -> Result<Option<u16>, DicomError> {
        match self.raw(tag) {
            None => Ok(None),
            Some(v) if v.len() >= 2 => Ok(Some(u16::from_le_bytes([v[0], v[1]]))),
            Some(_) => Err(DicomError::Malformed {
                tag,
                reason: "US value shorter than 2 bytes".into(),
            }),
        }
    }

    fn decimals(&self, tag: Tag) -> Result<Option<Vec<f64>>, DicomError> {
        let Some(v) = self.raw(tag) else {
            return Ok(None);
        };
        text(v)
            .split('\\')
            .map(|s| {
                s.trim().parse::<f64>().map_err(|_| DicomError::Malformed {
                    tag,
                    reason: format!("'{}' is not a decimal", s.trim()),
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    fn decimals_n<const N: usize>(&self, tag: Tag) -> Result<[f64; N], DicomError> {
        let vals = self
            .decimals(tag)?
            .ok_or(DicomError::MissingRequiredTag(tag))?;
        vals.try_into()
            .map_err(|v: Vec<f64>| DicomError::Malformed {
                tag,
                reason: format!("expected {N} values, got {}", v.len()),
            })
    }

    fn decimal(&self, tag: Tag) -> Result<Option<f64>, DicomError> {
        match self.decimals(tag)? {
            None => Ok(None),
            Some(v) if v.len() == 1 => Ok(Some(v[0])),
            Some(v) => Err(DicomError::Malformed {
                tag,
                reason: format!("expected 1 value, got {}", v.len()),
            }),
        }
    }
}

/// Parses one DICOM Part-10 file holding an uncompressed CT slice.
pub fn parse_slice(payload: &[u8]) -> Result<DicomSlice, DicomError> {
    if payload.len() < 132 || &payload[128..132] != b"DICM" {
        return Err(DicomError::MissingPreamble);
    }
    let mut cur = Cursor {
        buf: payload,
        pos: 132,
    };

    // File meta group: always explicit VR little endian.
    let mut syntax = None;
    while cur.peek_group() == Some(0x0002) {
        let h = read_element_header(&mut cur, true)?;
        let value = cur.take(h.len as usize, "meta element")?;
        if h.tag == tags::TRANSFER_SYNTAX {
            syntax = Some(text(value));
        }
    }
    let syntax = syntax.ok_or(DicomError::MissingRequiredTag(tags::TRANSFER_SYNTAX))?;
    let explicit = match syntax.as_str() {
        IMPLICIT_VR_LE => false,
        EXPLICIT_VR_LE => true,
        EXPLICIT_VR_BE => return Err(DicomError::UnsupportedTransferSyntax(syntax)),
        DEFLATED_LE => return Err(DicomError::CompressedTransferSyntax(syntax)),
        _ => return Err(DicomError::CompressedTransferSyntax(syntax)),
    };

    let el = Elements(read_elements(&mut cur, explicit)?);

    if let Some(spp) = el.us(tags::SAMPLES_PER_PIXEL)? {
        if spp != 1 {
            return Err(DicomError::UnsupportedPixelFormat(format!(
                "{spp} samples per pixel"
            )));
        }
    }
    if let Some(frames) = el.raw(tags::NUMBER_OF_FRAMES) {
        if text(frames).parse::<i64>().unwrap_or(1) > 1 {
            return Err(DicomError::UnsupportedPixelFormat(
                "multi-frame object".into(),
            ));
        }
    }

    let rows = el
        .us(tags::ROWS)?
        .ok_or(DicomError::MissingRequiredTag(tags::ROWS))? as usize;
    let cols = el
        .us(tags::COLUMNS)?
        .ok_or(DicomError::MissingRequiredTag(tags::COLUMNS))? as usize;
    let pixel_spacing = el.decimals_n::<2>(tags::PIXEL_SPACING)?;
    let image_position = el.decimals_n::<3>(tags::IMAGE_POSITION)?;
    let image_orientation = el.decimals_n::<6>(tags::IMAGE_ORIENTATION)?;
    let series_uid = text(el.required(tags::SERIES_UID)?);
    let instance_number = match el.raw(tags::INSTANCE_NUMBER) {
        Some(v) => text(v).parse::<i64>().map_err(|_| DicomError::Malformed {
            tag: tags::INSTANCE_NUMBER,
            reason: "not an integer".into(),
        })?,
        None => 0,
    };

    let slope = el.decimal(tags::RESCALE_SLOPE)?;
    let intercept = el.decimal(tags::RESCALE_INTERCEPT)?;
    let rescale_defaulted = slope.is_none() || intercept.is_none();
    if rescale_defaulted {
        log::warn!("rescale slope/intercept missing in series {series_uid}; using 1/0");
    }

    let bits_allocated = el
        .us(tags::BITS_ALLOCATED)?
        .ok_or(DicomError::MissingRequiredTag(tags::BITS_ALLOCATED))?;
    let bits_stored = el.us(tags::BITS_STORED)?.unwrap_or(bits_allocated);
    let signed = el.us(tags::PIXEL_REPRESENTATION)?.unwrap_or(0) == 1;
    if !matches!(bits_allocated, 8 | 16 | 32) || bits_stored == 0 || bits_stored > bits_allocated {
        return Err(DicomError::UnsupportedPixelFormat(format!(
            "bits allocated {bits_allocated}, bits stored {bits_stored}"
        )));
    }

    let pixel_data = el.required(tags::PIXEL_DATA)?;
    let bytes_per = bits_allocated as usize / 8;
    let expected = rows * cols * bytes_per;
    // odd-length values are padded to even length
    let padded_ok = expected % 2 == 1 && pixel_data.len() == expected + 1;
    if pixel_data.len() != expected && !padded_ok {
        return Err(DicomError::PixelDataLengthMismatch {
            expected,
            actual: pixel_data.len(),
        });
    }
    let mask: u64 = if bits_stored == 64 {
        u64::MAX
    } else {
        (1u64 << bits_stored) - 1
    };
    let stored_pixels = pixel_data[..expected]
        .chunks_exact(bytes_per)
        .map(|b| {
            let mut raw = 0u64;
            for (i, byte) in b.iter().enumerate() {
                raw |= (*byte as u64) << (8 * i);
            }
            let v = raw & mask;
            if signed && v >> (bits_stored - 1) & 1 == 1 {
                v as i64 - (1i64 << bits_stored)
            } else {
                v as i64
            }
        })
        .collect();

    let slice = DicomSlice {
        rows,
        cols,
        pixel_spacing,
        image_position,
        image_orientation,
        rescale_slope: slope.unwrap_or(1.0),
        rescale_intercept: intercept.unwrap_or(0.0),
        stored_pixels,
        instance_number,
        series_uid,
        rescale_defaulted,
    };
    slice.validate()?;
    Ok(slice)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

/// Sorts slices along their normal and stacks them into a volume with axes
/// (columns, rows, slices).
pub fn assemble_series(slices: &[DicomSlice]) -> Result<CtVolume, DicomError> {
    if slices.len() < 2 {
        return Err(DicomError::TooFewSlices(slices.len()));
    }
    let first = &slices[0];
    for (i, s) in slices.iter().enumerate() {
        s.validate()?;
        if s.series_uid != first.series_uid {
            return Err(DicomError::MixedSeries(
                first.series_uid.clone(),
                s.series_uid.clone(),
            ));
        }
        if s.rows != first.rows || s.cols != first.cols {
            return Err(DicomError::InconsistentSlices {
                index: i,
                field: "matrix size",
            });
        }
        if !close(&s.pixel_spacing, &first.pixel_spacing, COSINE_TOL) {
            return Err(DicomError::InconsistentSlices {
                index: i,
                field: "pixel spacing",
            });
        }
        if !close(&s.image_orientation, &first.image_orientation, COSINE_TOL) {
            return Err(DicomError::InconsistentSlices {
                index: i,
                field: "orientation",
            });
        }
    }

    let normal = first.normal();
    let mut order: Vec<(f64, &DicomSlice)> = slices
        .iter()
        .map(|s| (dot(s.image_position, normal), s))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));

    let gaps: Vec<f64> = order.windows(2).map(|w| w[1].0 - w[0].0).collect();
    if let Some(i) = gaps.iter().position(|g| g.abs() < DUPLICATE_TOL_MM) {
        return Err(DicomError::DuplicatePosition(order[i].0));
    }
    let (min, max) = gaps
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &g| {
            (lo.min(g), hi.max(g))
        });
    if max - min > SPACING_TOL_MM {
        return Err(DicomError::NonUniformSliceSpacing { min, max });
    }

    let base = order[0].1;
    let n = order.len();
    let step = (order[n - 1].0 - order[0].0) / (n - 1) as f64;
    let [row_mm, col_mm] = base.pixel_spacing;
    let cols = [
        base.row_cosine().map(|v| v * col_mm),
        base.col_cosine().map(|v| v * row_mm),
        base.normal().map(|v| v * step),
    ];
    let affine = AffineTransform::from_columns(cols, base.image_position)?;

    let mut data = Vec::with_capacity(base.rows * base.cols * n);
    for (_, s) in &order {
        data.extend(s.stored_pixels.iter().map(|&p| s.hu(p) as f32));
    }
    let vol = Volume::new([base.cols, base.rows, n], data, affine)?
        .with_source_id(base.series_uid.clone());
    Ok(vol)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slice(z: f64, uid: &str) -> DicomSlice {
        DicomSlice {
            rows: 2,
            cols: 3,
            pixel_spacing: [0.8, 0.7],
            image_position: [0.0, 0.0, z],
            image_orientation: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
            rescale_slope: 1.0,
            rescale_intercept: -1024.0,
            stored_pixels: vec![1000; 6],
            instance_number: 0,
            series_uid: uid.to_string(),
            rescale_defaulted: false,
        }
    }

    #[test]
    fn rescale_formula() {
        assert_eq!(slice(0.0, "a").hu(1000), -24.0);
    }

    #[test]
    fn preamble_required() {
        assert!(matches!(
            parse_slice(&[0u8; 200]),
            Err(DicomError::MissingPreamble)
        ));
        assert!(matches!(
            parse_slice(b"DICM"),
            Err(DicomError::MissingPreamble)
        ));
    }

    #[test]
    fn shuffled_series_is_sorted() {
        let v =
            assemble_series(&[slice(-90.0, "s"), slice(-100.0, "s"), slice(-95.0, "s")]).unwrap();
        assert_eq!(v.dims(), [3, 2, 3]);
        let a = v.affine();
        assert_eq!(a.column(0), [0.7, 0.0, 0.0]);
        assert_eq!(a.column(1), [0.0, 0.8, 0.0]);
        assert_eq!(a.column(2), [0.0, 0.0, 5.0]);
        assert_eq!(a.translation(), [0.0, 0.0, -100.0]);
        assert!(v.data().iter().all(|&x| x == -24.0));
    }

    #[test]
    fn assembly_errors() {
        assert!(matches!(
            assemble_series(&[slice(0.0, "s")]),
            Err(DicomError::TooFewSlices(1))
        ));
        assert!(matches!(
            assemble_series(&[slice(0.0, "s"), slice(0.0, "s")]),
            Err(DicomError::DuplicatePosition(_))
        ));
        assert!(matches!(
            assemble_series(&[slice(-100.0, "s"), slice(-95.0, "s"), slice(-89.0, "s")]),
            Err(DicomError::NonUniformSliceSpacing { .. })
        ));
        assert!(matches!(
            assemble_series(&[slice(0.0, "s"), slice(5.0, "t")]),
            Err(DicomError::MixedSeries(..))
        ));
        let mut odd = slice(5.0, "s");
        odd.pixel_spacing = [0.9, 0.7];
        assert!(matches!(
            assemble_series(&[slice(0.0, "s"), odd]),
            Err(DicomError::InconsistentSlices {
                field: "pixel spacing",
                ..
            })
        ));
    }

    #[test]
    fn tilted_cosines_rejected() {
        let mut s = slice(0.0, "s");
        s.image_orientation = [1.0, 0.0, 0.0, 0.1, 1.0, 0.0];
        assert!(matches!(
            s.validate(),
            Err(DicomError::InvalidOrientation(_))
        ));
    }
}
