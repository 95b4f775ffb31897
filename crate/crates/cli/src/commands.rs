use std::fs;
use std::path::{Path, PathBuf};

use l3sma::dicom::{assemble_series, parse_slice};
use l3sma::geometry::{
    interpolators, orientation_of, reorient, resample, slice_pixel_area, voxel_spacing, Nearest,
};
use l3sma::metrics::{dice, summarize, EvalRecord};
use l3sma::nifti::{
    affine_source, gzip, read_header, read_image, read_mask, write_volume, NiftiVoxel,
};
use l3sma::phantom::{generate, PhantomSpec};
use l3sma::preprocess::{apply_plan, clip_hu, normalize_unit, sample_plan};
use l3sma::segment::{segment_volume, segmenters};
use l3sma::sma::{axial_axis, classify, slice_policies, Sex, SlicePolicy};
use l3sma::volume::Plane;
use l3sma::{CtVolume, MaskVolume, Volume};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::report::{report_writers, Report, ReportRow, RowError};

const GEOMETRY_TOL: f64 = 1e-4;

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn stem(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.trim_end_matches(".gz")
        .trim_end_matches(".nii")
        .to_string()
}

/// Reads a CT image from a NIfTI file or a directory of DICOM slices.
pub fn load_image(path: &Path) -> Result<CtVolume, CliError> {
    let vol = if path.is_dir() {
        load_dicom_dir(path)?
    } else {
        read_image(&read_bytes(path)?).map_err(|e| CliError::core(path, e))?
    };
    Ok(vol.with_source_id(stem(path)))
}

pub fn load_mask(path: &Path) -> Result<MaskVolume, CliError> {
    let vol = read_mask(&read_bytes(path)?).map_err(|e| CliError::core(path, e))?;
    Ok(vol.with_source_id(stem(path)))
}

/// Writes NIfTI-1, gzipped when the path ends in `.gz`.
pub fn save_volume<T: NiftiVoxel>(vol: &Volume<T>, path: &Path) -> Result<(), CliError> {
    let bytes = write_volume(vol).map_err(|e| CliError::core(path, e))?;
    let bytes = if path.extension().is_some_and(|e| e == "gz") {
        gzip(&bytes)
    } else {
        bytes
    };
    write_bytes(path, &bytes)
}

fn dicom_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        let path = entry.path();
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if path.is_file() && !hidden {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn load_dicom_dir(dir: &Path) -> Result<CtVolume, CliError> {
    let files = dicom_files(dir)?;
    if files.is_empty() {
        return Err(CliError::NoInput(dir.to_path_buf()));
    }
    let mut slices = Vec::with_capacity(files.len());
    let mut bad = 0;
    for f in &files {
        match read_bytes(f).and_then(|b| parse_slice(&b).map_err(|e| CliError::core(f, e))) {
            Ok(s) => slices.push(s),
            Err(e) => {
                eprintln!("error: {e} [{}]", e.kind());
                bad += 1;
            }
        }
    }
    if bad > 0 {
        return Err(CliError::BadFiles { count: bad });
    }
    assemble_series(&slices).map_err(|e| CliError::core(dir, e))
}

fn fmt3(v: [f64; 3]) -> String {
    format!("{} x {} x {}", v[0], v[1], v[2])
}

pub fn info(path: &Path) -> Result<(), CliError> {
    let vol = load_image(path)?;
    let d = vol.dims();
    let (lo, hi) = vol.hu_range();
    let orientation = orientation_of(vol.affine()).map_err(|e| CliError::core(path, e))?;
    println!("path: {}", path.display());
    println!("dims: {} x {} x {}", d[0], d[1], d[2]);
    println!("spacing_mm: {}", fmt3(voxel_spacing(vol.affine()).get()));
    println!("orientation: {orientation}");
    println!("origin_mm: {}", fmt3(vol.affine().translation()));
    println!("hu_range: {lo} .. {hi}");
    if path.is_file() {
        let header = read_header(&read_bytes(path)?).map_err(|e| CliError::core(path, e))?;
        println!("affine_source: {:?}", affine_source(&header));
    }
    Ok(())
}

pub fn convert(dir: &Path, out: &Path) -> Result<(), CliError> {
    if !dir.is_dir() {
        return Err(CliError::NoInput(dir.to_path_buf()));
    }
    let vol = load_dicom_dir(dir)?;
    save_volume(&vol, out)?;
    let d = vol.dims();
    println!("wrote {} ({} x {} x {})", out.display(), d[0], d[1], d[2]);
    Ok(())
}

pub struct PreprocessOpts<'a> {
    pub mask: Option<&'a Path>,
    pub mask_out: Option<&'a Path>,
    pub augment: bool,
    pub clip_only: bool,
}

/// Reorient, resample, optionally augment, then clip (and normalize).
pub fn preprocess(
    cfg: &RunConfig,
    input: &Path,
    output: &Path,
    opts: PreprocessOpts<'_>,
) -> Result<(), CliError> {
    let interp = interpolators()
        .build(&cfg.interpolation, &())
        .map_err(l3sma::Error::from)?;
    let image = load_image(input)?;
    let image = reorient(&image, cfg.target_orientation).map_err(|e| CliError::core(input, e))?;
    let mut image = resample(&image, cfg.target_spacing, interp.as_ref())
        .map_err(|e| CliError::core(input, e))?;

    let mut mask = match opts.mask {
        Some(p) => {
            let m = load_mask(p)?;
            let m = reorient(&m, cfg.target_orientation).map_err(|e| CliError::core(p, e))?;
            Some(resample(&m, cfg.target_spacing, &Nearest).map_err(|e| CliError::core(p, e))?)
        }
        None => None,
    };
    if let Some(m) = &mask {
        if !m.same_geometry(&image, GEOMETRY_TOL) {
            return Err(CliError::GeometryMismatch(format!(
                "{} and {} do not share a grid after reorientation",
                input.display(),
                opts.mask.unwrap_or(Path::new("")).display()
            )));
        }
    }

    if opts.augment {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let plan = sample_plan(&cfg.augment, image.dims(), &mut rng).map_err(l3sma::Error::from)?;
        log::info!("augmentation plan: {plan:?}");
        let (img, m) = apply_plan(&image, mask.as_ref(), &plan, interp.as_ref())
            .map_err(l3sma::Error::from)?;
        image = img;
        mask = m;
    }

    let image = if opts.clip_only {
        clip_hu(&image, cfg.hu_window)
    } else {
        normalize_unit(&image, cfg.hu_window)
    };
    save_volume(&image, output)?;
    if let (Some(m), Some(p)) = (&mask, opts.mask_out) {
        save_volume(m, p)?;
    }
    let d = image.dims();
    println!(
        "wrote {} ({} x {} x {})",
        output.display(),
        d[0],
        d[1],
        d[2]
    );
    Ok(())
}

pub fn segment(
    cfg: &RunConfig,
    input: &Path,
    output: &Path,
    slice: Option<usize>,
) -> Result<(), CliError> {
    let segmenter = segmenters()
        .build(&cfg.segmenter, &cfg.seg_params)
        .map_err(l3sma::Error::from)?;
    let image = load_image(input)?;
    let mask =
        segment_volume(&image, segmenter.as_ref(), slice).map_err(|e| CliError::core(input, e))?;
    save_volume(&mask, output)?;
    println!("wrote {} ({} voxels)", output.display(), mask.count());
    Ok(())
}

fn emit(cfg: &RunConfig, report: &Report, out: Option<&Path>) -> Result<(), CliError> {
    let writer = report_writers()
        .build(&cfg.output_format, &())
        .map_err(l3sma::Error::from)?;
    let text = writer.render(report)?;
    match out {
        Some(p) => write_bytes(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn aligned_masks(
    cfg: &RunConfig,
    a: (&Path, MaskVolume),
    b: (&Path, MaskVolume),
) -> Result<(MaskVolume, MaskVolume), CliError> {
    let ra = reorient(&a.1, cfg.target_orientation).map_err(|e| CliError::core(a.0, e))?;
    let rb = reorient(&b.1, cfg.target_orientation).map_err(|e| CliError::core(b.0, e))?;
    if !ra.same_geometry(&rb, GEOMETRY_TOL) {
        return Err(CliError::GeometryMismatch(format!(
            "{} ({:?}) and {} ({:?}) differ in dims or affine",
            a.0.display(),
            ra.dims(),
            b.0.display(),
            rb.dims()
        )));
    }
    Ok((ra, rb))
}

pub struct MeasureOpts<'a> {
    pub sex: Option<Sex>,
    pub scan_id: Option<String>,
    pub out: Option<&'a Path>,
}

pub fn measure(
    cfg: &RunConfig,
    image: &Path,
    mask_path: &Path,
    opts: MeasureOpts<'_>,
) -> Result<(), CliError> {
    let policy = slice_policies()
        .build(&cfg.slice_policy, &())
        .map_err(l3sma::Error::from)?;
    let img = load_image(image)?;
    let img = reorient(&img, cfg.target_orientation).map_err(|e| CliError::core(image, e))?;
    let mask = load_mask(mask_path)?;
    let mask = reorient(&mask, cfg.target_orientation).map_err(|e| CliError::core(mask_path, e))?;
    if !img.same_geometry(&mask, GEOMETRY_TOL) {
        return Err(CliError::GeometryMismatch(format!(
            "{} ({:?}) and {} ({:?}) differ in dims or affine",
            image.display(),
            img.dims(),
            mask_path.display(),
            mask.dims()
        )));
    }
    let m = policy
        .measure(&mask)
        .map_err(|e| CliError::core(mask_path, e))?;
    let assessment = opts
        .sex
        .map(|s| classify(m.area_cm2, s, &cfg.cutoffs))
        .transpose()
        .map_err(l3sma::Error::from)?;
    let row = ReportRow {
        scan_id: opts.scan_id.unwrap_or_else(|| stem(mask_path)),
        pred_area_cm2: Some(m.area_cm2),
        sex: opts.sex,
        pred_sarcopenic: assessment.map(|a| a.sarcopenic),
        slice_index: Some(m.slice_index),
        pixel_area_mm2: Some(m.pixel_area_mm2),
        ..ReportRow::default()
    };
    let report = Report {
        config: cfg.clone(),
        rows: vec![row],
        summary: None,
        errors: Vec::new(),
    };
    emit(cfg, &report, opts.out)
}

#[derive(Debug, Clone)]
struct ManifestRow {
    scan_id: String,
    gt: PathBuf,
    pred: PathBuf,
    sex: Option<Sex>,
    gt_label: Option<bool>,
}

fn parse_label(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "y" | "sarcopenic" => Some(true),
        "0" | "false" | "no" | "n" | "normal" => Some(false),
        _ => None,
    }
}

fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, CliError> {
    let bad = |message: String| CliError::Manifest {
        path: path.to_path_buf(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| bad(format!("missing column '{name}'")));
    let (id_c, gt_c, pred_c) = (
        need("scan_id")?,
        need("gt_mask_path")?,
        need("pred_mask_path")?,
    );
    let (sex_c, label_c) = (col("sex"), col("gt_label"));

    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let field = |c: Option<usize>| c.and_then(|c| rec.get(c)).filter(|s| !s.is_empty());
        let sex = field(sex_c)
            .map(|s| s.parse::<Sex>())
            .transpose()
            .map_err(|e| bad(format!("row {}: {e}", n + 1)))?;
        let gt_label = match field(label_c) {
            Some(s) => Some(
                parse_label(s)
                    .ok_or_else(|| bad(format!("row {}: unrecognized gt_label '{s}'", n + 1)))?,
            ),
            None => None,
        };
        rows.push(ManifestRow {
            scan_id: field(Some(id_c))
                .ok_or_else(|| bad(format!("row {}: empty scan_id", n + 1)))?
                .to_string(),
            gt: base.join(&rec[gt_c]),
            pred: base.join(&rec[pred_c]),
            sex,
            gt_label,
        });
    }
    if rows.is_empty() {
        return Err(CliError::NoInput(path.to_path_buf()));
    }
    Ok(rows)
}

/// Concatenates the selected slices into one plane for a joint Dice.
fn stacked(mask: &MaskVolume, axis: usize, slices: &[usize]) -> Result<Plane<u8>, l3sma::Error> {
    let mut data = Vec::new();
    let (mut nx, mut ny) = (0, 0);
    for &k in slices {
        let p = mask.plane(axis, k)?;
        (nx, ny) = (p.nx, ny + p.ny);
        data.extend_from_slice(&p.data);
    }
    Ok(Plane::new(
        nx,
        ny,
        data,
        slice_pixel_area(mask.affine(), axis),
    )?)
}

fn evaluate_row(
    cfg: &RunConfig,
    policy: &dyn SlicePolicy,
    row: &ManifestRow,
) -> Result<(ReportRow, EvalRecord), CliError> {
    let gt = load_mask(&row.gt)?;
    let pred = load_mask(&row.pred)?;
    let (gt, pred) = aligned_masks(cfg, (&row.gt, gt), (&row.pred, pred))?;
    let axis = axial_axis(&gt).map_err(|e| CliError::core(&row.gt, e))?;
    let slices = policy.select(&gt).map_err(|e| CliError::core(&row.gt, e))?;
    let pixel_area = slice_pixel_area(gt.affine(), axis);
    let area = |m: &MaskVolume| -> Result<f64, CliError> {
        let counts = m.slice_counts(axis);
        let mut total = 0usize;
        for &k in &slices {
            total += counts.get(k).copied().ok_or_else(|| {
                CliError::core(
                    &row.gt,
                    l3sma::sma::SmaError::SliceOutOfRange {
                        index: k,
                        len: counts.len(),
                    },
                )
            })?;
        }
        Ok(total as f64 * pixel_area / 100.0)
    };
    let (gt_area, pred_area) = (area(&gt)?, area(&pred)?);
    let d = dice(
        &stacked(&gt, axis, &slices)?,
        &stacked(&pred, axis, &slices)?,
    )
    .map_err(l3sma::Error::from)?;

    let label = |a: f64| -> Result<Option<bool>, CliError> {
        Ok(row
            .sex
            .map(|s| classify(a, s, &cfg.cutoffs))
            .transpose()
            .map_err(l3sma::Error::from)?
            .map(|x| x.sarcopenic))
    };
    let gt_sarcopenic = match row.gt_label {
        Some(l) => Some(l),
        None => label(gt_area)?,
    };
    let pred_sarcopenic = label(pred_area)?;
    let rec = EvalRecord::new(
        &row.scan_id,
        d,
        gt_area,
        pred_area,
        gt_sarcopenic,
        pred_sarcopenic,
    )
    .map_err(|e| CliError::core(&row.gt, e))?;
    let out = ReportRow {
        scan_id: row.scan_id.clone(),
        gt_area_cm2: Some(gt_area),
        pred_area_cm2: Some(pred_area),
        dice: Some(d),
        abs_pct_error: Some(rec.abs_pct_error),
        signed_pct_error: Some(rec.signed_pct_error),
        sex: row.sex,
        gt_sarcopenic,
        pred_sarcopenic,
        slice_index: Some(slices[0]),
        pixel_area_mm2: Some(pixel_area),
    };
    Ok((out, rec))
}

/// Evaluates every manifest row in parallel, reporting in manifest order.
/// Failed rows are listed in the report and make the command fail after
/// the report is written.
pub fn evaluate(cfg: &RunConfig, manifest: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let policy = slice_policies()
        .build(&cfg.slice_policy, &())
        .map_err(l3sma::Error::from)?;
    let rows = read_manifest(manifest)?;
    let results: Vec<_> = rows
        .par_iter()
        .map(|r| evaluate_row(cfg, policy.as_ref(), r))
        .collect();

    let mut report_rows = Vec::new();
    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (row, res) in rows.iter().zip(results) {
        match res {
            Ok((r, rec)) => {
                report_rows.push(r);
                records.push(rec);
            }
            Err(e) => {
                eprintln!("error: {}: {e} [{}]", row.scan_id, e.kind());
                errors.push(RowError {
                    scan_id: row.scan_id.clone(),
                    kind: e.kind(),
                    message: e.to_string(),
                });
            }
        }
    }
    let summary = if records.is_empty() {
        None
    } else {
        Some(summarize(&records).map_err(l3sma::Error::from)?)
    };
    if let Some(s) = &summary {
        eprintln!(
            "{} scans: Dice {:.2} ± {:.2}, abs area error {:.2}% (median {:.2}%), signed {:.2}%",
            s.dice.n,
            s.dice.mean,
            s.dice.std,
            s.abs_pct_error.mean,
            s.abs_pct_error.median,
            s.signed_pct_error.mean
        );
        if let Some(c) = &s.classification {
            eprintln!(
                "sarcopenia: tp {} fp {} fn {} tn {}, accuracy {:.2}%",
                c.tp,
                c.fp,
                c.fn_,
                c.tn,
                100.0 * c.accuracy
            );
        }
    }
    let report = Report {
        config: cfg.clone(),
        rows: report_rows,
        summary,
        errors,
    };
    emit(cfg, &report, out)?;
    if report.errors.is_empty() {
        Ok(())
    } else {
        Err(CliError::RowFailures {
            failed: report.errors.len(),
            total: rows.len(),
        })
    }
}

#[derive(Debug, Serialize)]
struct PhantomTruth {
    spec: PhantomSpec,
    analytic_area_cm2: f64,
    raster_area_cm2: f64,
    pixel_count: usize,
    pixel_area_mm2: f64,
}

pub fn phantom(spec: &PhantomSpec, prefix: &Path) -> Result<(), CliError> {
    let p = generate(spec).map_err(l3sma::Error::from)?;
    let with_suffix = |s: &str| {
        let mut name = prefix.as_os_str().to_os_string();
        name.push(s);
        PathBuf::from(name)
    };
    let measured =
        l3sma::sma::compute_sma(&p.mask, spec.annotated_slice).map_err(l3sma::Error::from)?;
    save_volume(&p.image, &with_suffix("_image.nii"))?;
    save_volume(&p.mask, &with_suffix("_mask.nii"))?;
    let truth = PhantomTruth {
        spec: *spec,
        analytic_area_cm2: p.analytic_area_cm2,
        raster_area_cm2: measured.area_cm2,
        pixel_count: measured.pixel_count,
        pixel_area_mm2: measured.pixel_area_mm2,
    };
    let mut json =
        serde_json::to_string_pretty(&truth).map_err(|e| CliError::Report(e.to_string()))?;
    json.push('\n');
    write_bytes(&with_suffix("_truth.json"), json.as_bytes())?;
    println!(
        "wrote {}_{{image,mask}}.nii: analytic area {:.2} cm², rasterized {:.2} cm²",
        prefix.display(),
        truth.analytic_area_cm2,
        truth.raster_area_cm2
    );
    Ok(())
}
