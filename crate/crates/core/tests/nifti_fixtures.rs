use std::path::PathBuf;

use l3sma::geometry::{orientation_of, reorient, OrientationCode};
use l3sma::nifti::{self, NiftiError};
use l3sma::{AffineTransform, Volume};

fn fixture(name: &str) -> Vec<u8> {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "data", name]
        .iter()
        .collect();
    std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn int16_fixture_decodes_in_file_order() {
    let v = nifti::read_image(&fixture("int16_2x2x1.nii")).unwrap();
    assert_eq!(v.dims(), [2, 2, 1]);
    assert_eq!(v.data(), &[0.0, 1.0, 2.0, 3.0]);
    assert_eq!(*v.affine(), AffineTransform::identity());
}

#[test]
fn scaled_u8_fixture() {
    let v = nifti::read_image(&fixture("scaled_u8_1x1x1.nii")).unwrap();
    assert_eq!(v.data(), &[40.0]);
}

#[test]
fn las_fixture_orientation() {
    let v = nifti::read_image(&fixture("las_4x4x2.nii")).unwrap();
    let code = orientation_of(v.affine()).unwrap();
    assert_eq!(code.to_string(), "LAS");
    let ras = reorient(&v, OrientationCode::RAS).unwrap();
    assert_eq!(orientation_of(ras.affine()).unwrap(), OrientationCode::RAS);
    assert_eq!(ras.get([0, 0, 0]), 3.0);
    assert_eq!(ras.get([3, 0, 0]), 0.0);
}

#[test]
fn gzip_fixture_reads_the_same() {
    let raw = fixture("las_4x4x2.nii");
    let gz = nifti::gzip(&raw);
    assert!(nifti::is_gzip(&gz));
    assert_eq!(
        nifti::read_image(&gz).unwrap(),
        nifti::read_image(&raw).unwrap()
    );
}

#[test]
fn truncated_fixture() {
    let raw = fixture("int16_2x2x1.nii");
    let err = nifti::read_image(&raw[..raw.len() - 1]).unwrap_err();
    assert!(matches!(
        err,
        NiftiError::TruncatedPayload {
            needed: 360,
            available: 359
        }
    ));
}

#[test]
fn unit_volume_file_size() {
    let v = Volume::new([1, 1, 1], vec![0.0f32], AffineTransform::identity()).unwrap();
    assert_eq!(nifti::write_volume(&v).unwrap().len(), 356);
}

#[test]
fn fixture_round_trip() {
    let v = nifti::read_image(&fixture("las_4x4x2.nii")).unwrap();
    let again = nifti::read_image(&nifti::write_volume(&v).unwrap()).unwrap();
    assert_eq!(again, v);
}
