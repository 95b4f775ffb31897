use std::path::{Path, PathBuf};

use l3sma::dicom::{assemble_series, parse_slice, DicomError, DicomSlice};

fn data_dir() -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "tests", "data"]
        .iter()
        .collect()
}

fn load(rel: &str) -> Result<DicomSlice, DicomError> {
    parse_slice(&std::fs::read(data_dir().join(rel)).unwrap())
}

fn load_dir(dir: &Path) -> Vec<DicomSlice> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| parse_slice(&std::fs::read(p).unwrap()).unwrap())
        .collect()
}

fn assert_basic_slice(s: &DicomSlice) {
    assert_eq!((s.rows, s.cols), (2, 2));
    assert_eq!(s.pixel_spacing, [0.8, 0.8]);
    assert_eq!(s.image_position, [0.0, 0.0, -100.0]);
    assert_eq!(s.image_orientation, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    assert_eq!((s.rescale_slope, s.rescale_intercept), (1.0, -1024.0));
    assert_eq!(s.stored_pixels, vec![1000; 4]);
    assert_eq!(s.series_uid, "1.2.826.0.1.3680043.8.498.100");
    assert!(!s.rescale_defaulted);
}

#[test]
fn explicit_vr_slice() {
    assert_basic_slice(&load("ct_2x2_explicit.dcm").unwrap());
}

#[test]
fn undefined_length_sequences_are_skipped() {
    assert_basic_slice(&load("ct_2x2_explicit_undef_seq.dcm").unwrap());
}

#[test]
fn implicit_vr_slice() {
    assert_basic_slice(&load("ct_2x2_implicit.dcm").unwrap());
}

#[test]
fn missing_rescale_uses_identity() {
    let s = load("ct_2x2_no_rescale.dcm").unwrap();
    assert!(s.rescale_defaulted);
    assert_eq!((s.rescale_slope, s.rescale_intercept), (1.0, 0.0));
    assert_eq!(s.stored_pixels, vec![7, 8, 9, 10]);
}

#[test]
fn compressed_syntax_is_rejected() {
    assert!(matches!(
        load("ct_2x2_jpeg_syntax.dcm"),
        Err(DicomError::CompressedTransferSyntax(_))
    ));
}

#[test]
fn rescaled_hu_after_assembly() {
    let a = load("ct_2x2_explicit.dcm").unwrap();
    let mut b = a.clone();
    b.image_position[2] = -95.0;
    let v = assemble_series(&[a, b]).unwrap();
    assert!(v.data().iter().all(|&x| x == -24.0));
}

#[test]
fn three_slice_series() {
    let slices = load_dir(&data_dir().join("series3"));
    let v = assemble_series(&slices).unwrap();
    assert_eq!(v.dims(), [4, 3, 3]);
    let a = v.affine();
    assert!((a.column(0)[0] - 0.8).abs() < 1e-12);
    assert!((a.column(1)[1] - 0.8).abs() < 1e-12);
    assert!((a.column(2)[2] - 5.0).abs() < 1e-12);
    assert_eq!(a.translation(), [0.0, 0.0, -100.0]);
    // slice k holds instance k + 1; pixel p of instance n stores 1000 + 100 n + p
    for k in 0..3 {
        for p in 0..12 {
            let expect = 1000.0 + 100.0 * (k + 1) as f32 + p as f32 - 1024.0;
            assert_eq!(v.get([p % 4, p / 4, k]), expect);
        }
    }
}

#[test]
fn mixed_series_rejected() {
    let slices = load_dir(&data_dir().join("mixed_series"));
    assert!(matches!(
        assemble_series(&slices),
        Err(DicomError::MixedSeries(..))
    ));
}

#[test]
fn missing_preamble() {
    let mut bytes = std::fs::read(data_dir().join("ct_2x2_explicit.dcm")).unwrap();
    bytes[128..132].copy_from_slice(b"XXXX");
    assert!(matches!(
        parse_slice(&bytes),
        Err(DicomError::MissingPreamble)
    ));
}

#[test]
fn truncated_slice() {
    let bytes = std::fs::read(data_dir().join("ct_2x2_explicit.dcm")).unwrap();
    assert!(parse_slice(&bytes[..bytes.len() - 3]).is_err());
}
