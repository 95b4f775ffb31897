//! Per-scan report rows and the writers that serialize them.

use l3sma::metrics::EvalSummary;
use l3sma::registry::{no_argument, Registry};
use l3sma::sma::Sex;
use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::CliError;

/// One output row. Columns not produced by a command stay empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReportRow {
    pub scan_id: String,
    pub gt_area_cm2: Option<f64>,
    pub pred_area_cm2: Option<f64>,
    pub dice: Option<f64>,
    pub abs_pct_error: Option<f64>,
    pub signed_pct_error: Option<f64>,
    pub sex: Option<Sex>,
    pub gt_sarcopenic: Option<bool>,
    pub pred_sarcopenic: Option<bool>,
    pub slice_index: Option<usize>,
    pub pixel_area_mm2: Option<f64>,
}

pub const COLUMNS: [&str; 11] = [
    "scan_id",
    "gt_area_cm2",
    "pred_area_cm2",
    "dice",
    "abs_pct_error",
    "signed_pct_error",
    "sex",
    "gt_sarcopenic",
    "pred_sarcopenic",
    "slice_index",
    "pixel_area_mm2",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowError {
    pub scan_id: String,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub config: RunConfig,
    pub rows: Vec<ReportRow>,
    pub summary: Option<EvalSummary>,
    pub errors: Vec<RowError>,
}

pub trait ReportWriter: Send + Sync {
    fn name(&self) -> &'static str;
    fn render(&self, report: &Report) -> Result<String, CliError>;
}

/// CSV with `# key=value` comment lines: config first, then the rows, then
/// summary and per-row errors.
pub struct CsvWriter;

/// One JSON object with `config`, `rows`, `summary` and `errors`.
pub struct JsonWriter;

fn report_err(e: impl std::fmt::Display) -> CliError {
    CliError::Report(e.to_string())
}

/// Flattens nested objects to dotted keys; `null` leaves become empty.
fn flatten(prefix: &str, value: &Value, out: &mut Vec<(String, String)>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                flatten(&format!("{prefix}.{k}"), v, out);
            }
        }
        Value::Null => out.push((prefix.to_string(), String::new())),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn one_line(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

impl ReportWriter for CsvWriter {
    fn name(&self) -> &'static str {
        "csv"
    }

    fn render(&self, report: &Report) -> Result<String, CliError> {
        let mut out = String::new();
        for (k, v) in report.config.pairs() {
            out.push_str(&format!("# config.{k}={v}\n"));
        }
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(Vec::new());
        w.write_record(COLUMNS).map_err(report_err)?;
        for row in &report.rows {
            w.serialize(row).map_err(report_err)?;
        }
        let body = w.into_inner().map_err(report_err)?;
        out.push_str(&String::from_utf8(body).map_err(report_err)?);
        if let Some(summary) = &report.summary {
            let mut flat = Vec::new();
            flatten(
                "summary",
                &serde_json::to_value(summary).map_err(report_err)?,
                &mut flat,
            );
            for (k, v) in flat {
                out.push_str(&format!("# {k}={v}\n"));
            }
        }
        for e in &report.errors {
            out.push_str(&format!(
                "# error.{}={}: {}\n",
                e.scan_id,
                e.kind,
                one_line(&e.message)
            ));
        }
        Ok(out)
    }
}

impl ReportWriter for JsonWriter {
    fn name(&self) -> &'static str {
        "json"
    }

    fn render(&self, report: &Report) -> Result<String, CliError> {
        let mut s = serde_json::to_string_pretty(report).map_err(report_err)?;
        s.push('\n');
        Ok(s)
    }
}

pub fn report_writers() -> Registry<dyn ReportWriter> {
    let mut r: Registry<dyn ReportWriter> = Registry::new("report format");
    r.register("csv", |_: &(), arg| {
        no_argument("report format", "csv", arg)?;
        Ok(Box::new(CsvWriter) as Box<dyn ReportWriter>)
    });
    r.register("json", |_: &(), arg| {
        no_argument("report format", "json", arg)?;
        Ok(Box::new(JsonWriter) as Box<dyn ReportWriter>)
    });
    r
}
