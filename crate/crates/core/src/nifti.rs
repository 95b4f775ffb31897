//! Single-file NIfTI-1 reading and writing.
//!
//! Only little-endian `.nii` blobs (optionally gzip-compressed) with scalar
//! datatypes are handled. Header extensions are skipped by seeking to
//! `vox_offset`.

use std::io::{Read, Write};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use thiserror::Error;

use crate::geometry::{voxel_spacing, AffineTransform, GeometryError};
use crate::volume::{CtVolume, MaskVolume, Volume, VolumeError, Voxel};

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
pub const MIN_VOX_OFFSET: usize = 352;
pub const MAGIC_SINGLE: [u8; 4] = *b"n+1\0";
pub const MAGIC_PAIR: [u8; 4] = *b"ni1\0";
/// Largest extent representable in the signed 16-bit `dim` field.
pub const MAX_DIM: usize = 32767;

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("bad magic {0:?}: not a NIfTI-1 file")]
    BadMagic([u8; 4]),
    #[error("two-file NIfTI (.hdr/.img) is not supported")]
    TwoFileUnsupported,
    #[error("header size field is {0}, expected 348")]
    BadHeaderSize(i32),
    #[error("big-endian NIfTI is not supported")]
    BigEndianUnsupported,
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("truncated payload: need {needed} bytes, have {available}")]
    TruncatedPayload { needed: usize, available: usize },
    #[error("non-finite sample after intensity scaling at voxel {0}")]
    NonFiniteAfterScaling(usize),
    #[error("invalid dim field {0:?}")]
    InvalidDims([i16; 8]),
    #[error("vox_offset {0} is below the single-file minimum of 352")]
    InvalidVoxOffset(f32),
    #[error("axis length {0} exceeds the NIfTI-1 limit of 32767")]
    DimsOverflow(usize),
    #[error("gzip: {0}")]
    Gzip(#[from] std::io::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Scalar datatypes accepted on read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datatype {
    U8,
    I16,
    I32,
    F32,
    F64,
}

impl Datatype {
    pub fn from_code(code: i16) -> Result<Self, NiftiError> {
        Ok(match code {
            2 => Datatype::U8,
            4 => Datatype::I16,
            8 => Datatype::I32,
            16 => Datatype::F32,
            64 => Datatype::F64,
            other => return Err(NiftiError::UnsupportedDatatype(other)),
        })
    }

    pub fn code(self) -> i16 {
        match self {
            Datatype::U8 => 2,
            Datatype::I16 => 4,
            Datatype::I32 => 8,
            Datatype::F32 => 16,
            Datatype::F64 => 64,
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            Datatype::U8 => 1,
            Datatype::I16 => 2,
            Datatype::I32 | Datatype::F32 => 4,
            Datatype::F64 => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Datatype::U8 => b[0] as f64,
            Datatype::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Datatype::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Datatype::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Datatype::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

/// The NIfTI-1 header fields this crate reads or writes.
#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub dim: [i16; 8],
    pub datatype: i16,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub xyzt_units: u8,
    pub qform_code: i16,
    pub sform_code: i16,
    /// quatern_b, quatern_c, quatern_d
    pub quatern: [f32; 3],
    /// qoffset_x, qoffset_y, qoffset_z
    pub qoffset: [f32; 3],
    pub srow: [[f32; 4]; 3],
    pub magic: [u8; 4],
}

impl Default for NiftiHeader {
    fn default() -> Self {
        Self {
            dim: [3, 1, 1, 1, 1, 1, 1, 1],
            datatype: Datatype::F32.code(),
            bitpix: 32,
            pixdim: [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            vox_offset: MIN_VOX_OFFSET as f32,
            scl_slope: 1.0,
            scl_inter: 0.0,
            xyzt_units: 2,
            qform_code: 0,
            sform_code: 0,
            quatern: [0.0; 3],
            qoffset: [0.0; 3],
            srow: [[0.0; 4]; 3],
            magic: MAGIC_SINGLE,
        }
    }
}

fn i16_at(b: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([b[off], b[off + 1]])
}

fn f32_at(b: &[u8], off: usize) -> f32 {
    f32::from_le_bytes([b[off], b[off + 1], b[off + 2], b[off + 3]])
}

impl NiftiHeader {
    /// Parses the 348-byte header at the start of `bytes`.
    pub fn parse(bytes: &[u8]) -> Result<Self, NiftiError> {
        if bytes.len() < HEADER_SIZE {
            return Err(NiftiError::TruncatedPayload {
                needed: HEADER_SIZE,
                available: bytes.len(),
            });
        }
        let sizeof_hdr = i32::from_le_bytes(bytes[0..4].try_into().unwrap());
        if sizeof_hdr != HEADER_SIZE as i32 {
            if i32::from_be_bytes(bytes[0..4].try_into().unwrap()) == HEADER_SIZE as i32 {
                return Err(NiftiError::BigEndianUnsupported);
            }
            return Err(NiftiError::BadHeaderSize(sizeof_hdr));
        }
        let magic: [u8; 4] = bytes[344..348].try_into().unwrap();
        if magic == MAGIC_PAIR {
            return Err(NiftiError::TwoFileUnsupported);
        }
        if magic != MAGIC_SINGLE {
            return Err(NiftiError::BadMagic(magic));
        }
        let mut dim = [0i16; 8];
        for (i, d) in dim.iter_mut().enumerate() {
            *d = i16_at(bytes, 40 + 2 * i);
        }
        let mut pixdim = [0f32; 8];
        for (i, p) in pixdim.iter_mut().enumerate() {
            *p = f32_at(bytes, 76 + 4 * i);
        }
        let mut srow = [[0f32; 4]; 3];
        for (r, row) in srow.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = f32_at(bytes, 280 + 16 * r + 4 * c);
            }
        }
        Ok(Self {
            dim,
            datatype: i16_at(bytes, 70),
            bitpix: i16_at(bytes, 72),
            pixdim,
            vox_offset: f32_at(bytes, 108),
            scl_slope: f32_at(bytes, 112),
            scl_inter: f32_at(bytes, 116),
            xyzt_units: bytes[123],
            qform_code: i16_at(bytes, 252),
            sform_code: i16_at(bytes, 254),
            quatern: [f32_at(bytes, 256), f32_at(bytes, 260), f32_at(bytes, 264)],
            qoffset: [f32_at(bytes, 268), f32_at(bytes, 272), f32_at(bytes, 276)],
            srow,
            magic,
        })
    }

    /// Spatial extent `(nx, ny, nz)`; trailing dimensions must be singleton.
    pub fn dims3(&self) -> Result<[usize; 3], NiftiError> {
        let bad = || NiftiError::InvalidDims(self.dim);
        let ndim = self.dim[0];
        if !(1..=7).contains(&ndim) {
            return Err(bad());
        }
        let mut out = [1usize; 3];
        for axis in 1..=ndim as usize {
            let n = self.dim[axis];
            if n < 1 {
                return Err(bad());
            }
            if axis <= 3 {
                out[axis - 1] = n as usize;
            } else if n != 1 {
                return Err(bad());
            }
        }
        Ok(out)
    }

    /// Serializes to the 348-byte little-endian layout.
    pub fn to_bytes(&self) -> [u8; HEADER_SIZE] {
        let mut b = [0u8; HEADER_SIZE];
        b[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
        for (i, d) in self.dim.iter().enumerate() {
            b[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
        }
        b[70..72].copy_from_slice(&self.datatype.to_le_bytes());
        b[72..74].copy_from_slice(&self.bitpix.to_le_bytes());
        for (i, p) in self.pixdim.iter().enumerate() {
            b[76 + 4 * i..80 + 4 * i].copy_from_slice(&p.to_le_bytes());
        }
        b[108..112].copy_from_slice(&self.vox_offset.to_le_bytes());
        b[112..116].copy_from_slice(&self.scl_slope.to_le_bytes());
        b[116..120].copy_from_slice(&self.scl_inter.to_le_bytes());
        b[123] = self.xyzt_units;
        b[252..254].copy_from_slice(&self.qform_code.to_le_bytes());
        b[254..256].copy_from_slice(&self.sform_code.to_le_bytes());
        for (i, q) in self.quatern.iter().chain(self.qoffset.iter()).enumerate() {
            b[256 + 4 * i..260 + 4 * i].copy_from_slice(&q.to_le_bytes());
        }
        for (r, row) in self.srow.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                let off = 280 + 16 * r + 4 * c;
                b[off..off + 4].copy_from_slice(&v.to_le_bytes());
            }
        }
        b[344..348].copy_from_slice(&self.magic);
        b
    }
}

/// Which affine a header's codes select.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffineSource {
    Sform,
    Qform,
    Pixdim,
}

/// sform wins when `sform_code > 0`, then qform, then a pixdim diagonal.
pub fn affine_source(header: &NiftiHeader) -> AffineSource {
    if header.sform_code > 0 {
        AffineSource::Sform
    } else if header.qform_code > 0 {
        AffineSource::Qform
    } else {
        AffineSource::Pixdim
    }
}

/// Resolves the voxel-to-world affine from a parsed header.
pub fn resolve_affine(header: &NiftiHeader) -> Result<AffineTransform, NiftiError> {
    let mut m = [[0.0f64; 4]; 4];
    match affine_source(header) {
        AffineSource::Sform => {
            for r in 0..3 {
                for c in 0..4 {
                    m[r][c] = header.srow[r][c] as f64;
                }
            }
        }
        AffineSource::Qform => {
            let [b, c, d] = header.quatern.map(f64::from);
            let rot = quaternion_rotation(b, c, d);
            let qfac = if header.pixdim[0] < 0.0 { -1.0 } else { 1.0 };
            let scale = [
                header.pixdim[1] as f64,
                header.pixdim[2] as f64,
                qfac * header.pixdim[3] as f64,
            ];
            for r in 0..3 {
                for col in 0..3 {
                    m[r][col] = rot[r][col] * scale[col];
                }
                m[r][3] = header.qoffset[r] as f64;
            }
        }
        AffineSource::Pixdim => {
            for a in 0..3 {
                m[a][a] = header.pixdim[a + 1] as f64;
            }
        }
    }
    Ok(AffineTransform::new(m)?)
}

/// Rotation matrix from the (b, c, d) quaternion components; `a` is
/// recovered from the unit-norm constraint.
fn quaternion_rotation(b: f64, c: f64, d: f64) -> [[f64; 3]; 3] {
    let mut a = 1.0 - (b * b + c * c + d * d);
    let (mut b, mut c, mut d) = (b, c, d);
    if a < 1e-7 {
        let n = (b * b + c * c + d * d).sqrt();
        b /= n;
        c /= n;
        d /= n;
        a = 0.0;
    } else {
        a = a.sqrt();
    }
    [
        [
            a * a + b * b - c * c - d * d,
            2.0 * (b * c - a * d),
            2.0 * (b * d + a * c),
        ],
        [
            2.0 * (b * c + a * d),
            a * a + c * c - b * b - d * d,
            2.0 * (c * d - a * b),
        ],
        [
            2.0 * (b * d - a * c),
            2.0 * (c * d + a * b),
            a * a + d * d - c * c - b * b,
        ],
    ]
}

/// What a payload should be decoded as.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeKind {
    Image,
    Mask,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LoadedVolume {
    Image(CtVolume),
    Mask(MaskVolume),
}

pub fn is_gzip(payload: &[u8]) -> bool {
    payload.len() >= 2 && payload[0] == 0x1f && payload[1] == 0x8b
}

fn inflate(payload: &[u8]) -> Result<Vec<u8>, NiftiError> {
    let mut out = Vec::new();
    GzDecoder::new(payload).read_to_end(&mut out)?;
    Ok(out)
}

/// Gzip-compresses a blob (fixed header fields, so output is reproducible).
pub fn gzip(payload: &[u8]) -> Vec<u8> {
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(payload)
        .expect("writing to a Vec cannot fail");
    enc.finish().expect("writing to a Vec cannot fail")
}

/// Decodes a header and its scaled samples as `f64`.
fn decode(payload: &[u8]) -> Result<(NiftiHeader, [usize; 3], Vec<f64>), NiftiError> {
    let header = NiftiHeader::parse(payload)?;
    let dims = header.dims3()?;
    let dtype = Datatype::from_code(header.datatype)?;
    if header.vox_offset.is_nan() || header.vox_offset < MIN_VOX_OFFSET as f32 {
        return Err(NiftiError::InvalidVoxOffset(header.vox_offset));
    }
    let offset = header.vox_offset as usize;
    let count: usize = dims.iter().product();
    let needed = offset + count * dtype.bytes();
    if payload.len() < needed {
        return Err(NiftiError::TruncatedPayload {
            needed,
            available: payload.len(),
        });
    }
    let slope = header.scl_slope as f64;
    let inter = header.scl_inter as f64;
    let scaled = slope != 0.0 && !(slope == 1.0 && inter == 0.0);
    let raw = &payload[offset..needed];
    let mut samples = Vec::with_capacity(count);
    for (i, chunk) in raw.chunks_exact(dtype.bytes()).enumerate() {
        let stored = dtype.decode(chunk);
        let v = if scaled {
            stored * slope + inter
        } else {
            stored
        };
        if !v.is_finite() {
            return Err(NiftiError::NonFiniteAfterScaling(i));
        }
        samples.push(v);
    }
    Ok((header, dims, samples))
}

/// Reads a NIfTI-1 payload (plain or gzip) as an image or a binarized mask.
pub fn read_volume(payload: &[u8], kind: VolumeKind) -> Result<LoadedVolume, NiftiError> {
    let inflated;
    let bytes = if is_gzip(payload) {
        inflated = inflate(payload)?;
        &inflated[..]
    } else {
        payload
    };
    let (header, dims, samples) = decode(bytes)?;
    let affine = resolve_affine(&header)?;
    Ok(match kind {
        VolumeKind::Image => {
            let data: Vec<f32> = samples.iter().map(|&v| v as f32).collect();
            if let Some(i) = data.iter().position(|v| !v.is_finite()) {
                return Err(NiftiError::NonFiniteAfterScaling(i));
            }
            let vol = Volume::new(dims, data, affine)?;
            let outside = vol.out_of_range_count();
            if outside > 0 {
                log::warn!("{outside} samples fall outside the CT range [-1024, 3071] HU");
            }
            LoadedVolume::Image(vol)
        }
        VolumeKind::Mask => {
            let labels = samples.iter().map(|&v| u8::from(v > 0.5)).collect();
            LoadedVolume::Mask(Volume::new(dims, labels, affine)?)
        }
    })
}

pub fn read_image(payload: &[u8]) -> Result<CtVolume, NiftiError> {
    match read_volume(payload, VolumeKind::Image)? {
        LoadedVolume::Image(v) => Ok(v),
        LoadedVolume::Mask(_) => unreachable!(),
    }
}

pub fn read_mask(payload: &[u8]) -> Result<MaskVolume, NiftiError> {
    match read_volume(payload, VolumeKind::Mask)? {
        LoadedVolume::Mask(v) => Ok(v),
        LoadedVolume::Image(_) => unreachable!(),
    }
}

/// Parses only the header of a (possibly gzipped) payload.
pub fn read_header(payload: &[u8]) -> Result<NiftiHeader, NiftiError> {
    if is_gzip(payload) {
        NiftiHeader::parse(&inflate(payload)?)
    } else {
        NiftiHeader::parse(payload)
    }
}

/// Voxel types with a fixed on-disk datatype.
pub trait NiftiVoxel: Voxel {
    const DATATYPE: Datatype;
    fn write_le(self, out: &mut Vec<u8>);
}

impl NiftiVoxel for f32 {
    const DATATYPE: Datatype = Datatype::F32;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

impl NiftiVoxel for u8 {
    const DATATYPE: Datatype = Datatype::U8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }
}

/// Header that [`write_volume`] emits for `volume`.
pub fn header_for<T: NiftiVoxel>(volume: &Volume<T>) -> Result<NiftiHeader, NiftiError> {
    let dims = volume.dims();
    if let Some(&n) = dims.iter().find(|&&n| n > MAX_DIM) {
        return Err(NiftiError::DimsOverflow(n));
    }
    let affine = volume.affine();
    let spacing = voxel_spacing(affine).get();
    let m = affine.matrix();
    let mut srow = [[0f32; 4]; 3];
    for (r, row) in srow.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = m[r][c] as f32;
        }
    }
    Ok(NiftiHeader {
        dim: [
            3,
            dims[0] as i16,
            dims[1] as i16,
            dims[2] as i16,
            1,
            1,
            1,
            1,
        ],
        datatype: T::DATATYPE.code(),
        bitpix: (T::DATATYPE.bytes() * 8) as i16,
        pixdim: [
            1.0,
            spacing[0] as f32,
            spacing[1] as f32,
            spacing[2] as f32,
            0.0,
            0.0,
            0.0,
            0.0,
        ],
        sform_code: 1,
        qform_code: 0,
        srow,
        ..NiftiHeader::default()
    })
}

/// Serializes a volume as an uncompressed single-file NIfTI-1 blob with the
/// affine stored in the sform.
pub fn write_volume<T: NiftiVoxel>(volume: &Volume<T>) -> Result<Vec<u8>, NiftiError> {
    let header = header_for(volume)?;
    let mut out = Vec::with_capacity(MIN_VOX_OFFSET + volume.len() * T::DATATYPE.bytes());
    out.extend_from_slice(&header.to_bytes());
    out.extend_from_slice(&[0u8; 4]);
    for &v in volume.data() {
        v.write_le(&mut out);
    }
    Ok(out)
}
