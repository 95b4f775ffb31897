#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use l3sma::geometry::AffineTransform;
use l3sma::nifti::write_volume;
use l3sma::sma::Sex;
use l3sma::MaskVolume;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_l3sma"))
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("failed to spawn l3sma")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn core_data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data")
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

#[derive(Debug, Clone)]
pub struct CohortRow {
    pub scan_id: String,
    pub gt_area_cm2: f64,
    pub gt_sarcopenic: bool,
    pub dice: f64,
    pub pred_area_cm2: f64,
    pub pred_sarcopenic: bool,
    pub printed_abs_pct_error: f64,
    pub sex: Sex,
    pub note: String,
}

fn yes_no(s: &str) -> bool {
    match s {
        "Yes" => true,
        "No" => false,
        other => panic!("bad label {other}"),
    }
}

pub fn cohort() -> Vec<CohortRow> {
    let text = std::fs::read_to_string(core_data().join("cohort_areas.csv")).expect("cohort_areas.csv");
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.records()
        .map(|r| {
            let r = r.expect("cohort record");
            let f = |i: usize| r[i].parse::<f64>().expect("number");
            CohortRow {
                scan_id: r[0].to_string(),
                gt_area_cm2: f(1),
                gt_sarcopenic: yes_no(&r[2]),
                dice: f(3),
                pred_area_cm2: f(4),
                pred_sarcopenic: yes_no(&r[5]),
                printed_abs_pct_error: f(6),
                sex: r[7].parse().expect("sex"),
                note: r[8].to_string(),
            }
        })
        .collect()
}

/// 500 x 400 single-slice grid of 1 mm x 0.1 mm pixels (0.001 cm² each).
pub const GRID: [usize; 3] = [500, 400, 1];

pub fn grid_affine() -> AffineTransform {
    AffineTransform::diagonal([1.0, 0.1, 1.0], [0.0, 0.0, 0.0]).unwrap()
}

/// Mask with pixels `[start, start + len)` set, in raster order.
pub fn run_mask(start: usize, len: usize) -> MaskVolume {
    let n: usize = GRID.iter().product();
    assert!(start + len <= n, "mask run exceeds the grid");
    let data = (0..n)
        .map(|i| u8::from(i >= start && i < start + len))
        .collect();
    MaskVolume::new(GRID, data, grid_affine()).unwrap()
}

pub fn pixels(area_cm2: f64) -> usize {
    (area_cm2 * 1000.0).round() as usize
}

/// Writes gt/pred masks whose pixel counts reproduce each row's areas and
/// whose overlap reproduces its Dice, plus a manifest. Returns the manifest.
pub fn write_cohort_manifest(dir: &Path, rows: &[CohortRow], with_labels: bool) -> PathBuf {
    let mut manifest = String::from("scan_id,gt_mask_path,pred_mask_path,sex");
    manifest.push_str(if with_labels { ",gt_label\n" } else { "\n" });
    for r in rows {
        let (g, p) = (pixels(r.gt_area_cm2), pixels(r.pred_area_cm2));
        let inter = ((r.dice * (g + p) as f64) / 2.0).round() as usize;
        let gt_name = format!("{}_gt.nii", r.scan_id);
        let pred_name = format!("{}_pred.nii.gz", r.scan_id);
        write_mask(&dir.join(&gt_name), &run_mask(0, g));
        write_mask(&dir.join(&pred_name), &run_mask(g - inter, p));
        manifest.push_str(&format!("{},{gt_name},{pred_name},{}", r.scan_id, r.sex));
        if with_labels {
            manifest.push_str(if r.gt_sarcopenic { ",yes" } else { ",no" });
        }
        manifest.push('\n');
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, manifest).unwrap();
    path
}

pub fn write_mask(path: &Path, mask: &MaskVolume) {
    let mut bytes = write_volume(mask).unwrap();
    if path.extension().is_some_and(|e| e == "gz") {
        bytes = l3sma::nifti::gzip(&bytes);
    }
    std::fs::write(path, bytes).unwrap();
}

/// Reads the `# key=value` lines of a CSV report.
pub fn csv_comments(report: &str) -> Vec<(String, String)> {
    report
        .lines()
        .filter_map(|l| l.strip_prefix("# "))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

pub fn comment(report: &str, key: &str) -> Option<String> {
    csv_comments(report)
        .into_iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v)
}

/// Data rows of a CSV report as string records keyed by header.
pub fn csv_rows(report: &str) -> Vec<std::collections::HashMap<String, String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(report.as_bytes());
    let headers = rdr.headers().unwrap().clone();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            headers
                .iter()
                .zip(r.iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect()
        })
        .collect()
}
