//! JSON and CSV rendering of reports.
//!
//! Floating-point values are written with six significant digits. JSON
//! mirrors the report structs field for field; CSV uses a fixed column order.
//! Undefined entries are `null` in JSON and `undefined` in CSV.

use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::diagnose::DiagnosisReport;
use crate::error::{Error, Result};
use crate::eval::{EvalReport, PrPoint};
use crate::geom::{iou, BBox, LevelSetSample};
use crate::upperbound::Correlation;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    /// Picks the format from a `.json` / `.csv` extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "json" => Some(ReportFormat::Json),
            "csv" => Some(ReportFormat::Csv),
            _ => None,
        }
    }
}

/// `v` with six significant digits, e.g. `50.4950`, `100.000`, `0.123457`.
pub fn sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 {
            "0.00000".to_string()
        } else {
            v.to_string()
        };
    }
    let decimals = |v: f64| (5 - v.abs().log10().floor() as i32).max(0) as usize;
    let s = format!("{:.*}", decimals(v), v);
    // Rounding can carry into a new leading digit (99.99999 -> 100.0000).
    let rounded: f64 = s.parse().expect("formatted float parses");
    let d = decimals(rounded);
    if d < decimals(v) {
        format!("{:.*}", d, v)
    } else {
        s
    }
}

fn round6(v: f64) -> f64 {
    sig6(v).parse().expect("formatted float parses")
}

fn round_floats(value: &mut Value) {
    match value {
        Value::Number(n) if n.is_f64() => {
            let r = round6(n.as_f64().expect("checked f64"));
            *value = serde_json::Number::from_f64(r).map_or(Value::Null, Value::Number);
        }
        Value::Array(items) => items.iter_mut().for_each(round_floats),
        Value::Object(map) => map.values_mut().for_each(round_floats),
        _ => {}
    }
}

/// Pretty JSON with every float rounded to six significant digits.
pub fn to_json<T: Serialize>(report: &T) -> String {
    let mut value = serde_json::to_value(report).expect("reports serialize");
    round_floats(&mut value);
    let mut s = serde_json::to_string_pretty(&value).expect("values serialize");
    s.push('\n');
    s
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), sig6)
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
}

pub const EVAL_COLUMNS: [&str; 10] = [
    "category_id",
    "name",
    "n_gt",
    "AP",
    "AP50",
    "AP75",
    "AP_small",
    "AP_medium",
    "AP_large",
    "AR",
];

/// One row per category followed by an `all` row; header only when the
/// report has no categories.
pub fn eval_csv(report: &EvalReport) -> String {
    let mut rows: Vec<Vec<String>> = report
        .per_category
        .iter()
        .map(|c| {
            vec![
                c.category_id.to_string(),
                c.name.clone(),
                c.n_gt.to_string(),
                cell(c.ap),
                cell(c.ap50),
                cell(c.ap75),
                cell(c.ap_small),
                cell(c.ap_medium),
                cell(c.ap_large),
                cell(c.recall),
            ]
        })
        .collect();
    if !rows.is_empty() {
        let n_gt: usize = report.per_category.iter().map(|c| c.n_gt).sum();
        rows.push(vec![
            "all".into(),
            String::new(),
            n_gt.to_string(),
            cell(report.map),
            cell(report.ap50),
            cell(report.ap75),
            cell(report.ap_small),
            cell(report.ap_medium),
            cell(report.ap_large),
            cell(report.recall),
        ]);
    }
    csv_string(&EVAL_COLUMNS, rows)
}

pub fn pr_points_csv(points: &[PrPoint]) -> String {
    csv_string(
        &["category_id", "iou", "recall", "precision"],
        points.iter().map(|p| {
            vec![
                p.category_id.to_string(),
                sig6(p.iou),
                sig6(p.recall),
                sig6(p.precision),
            ]
        }),
    )
}

/// The mAP progression as a single row under the stage column names.
pub fn diagnosis_csv(report: &DiagnosisReport) -> String {
    csv_string(
        &DiagnosisReport::COLUMNS,
        [report.sequence().iter().map(|v| cell(*v)).collect()],
    )
}

pub fn diagnosis_counts_csv(report: &DiagnosisReport) -> String {
    csv_string(
        &[
            "category_id",
            "name",
            "true_positives",
            "background",
            "mislocalized",
            "duplicates",
            "missed",
            "background_removed",
            "localizations_fixed",
            "duplicates_removed",
            "misses_added",
        ],
        report.per_category.iter().map(|c| {
            vec![
                c.category_id.to_string(),
                c.name.clone(),
                c.initial.true_positives.to_string(),
                c.initial.background.to_string(),
                c.initial.mislocalized.to_string(),
                c.initial.duplicates.to_string(),
                c.initial.missed.to_string(),
                c.background_removed.to_string(),
                c.localizations_fixed.to_string(),
                c.duplicates_removed.to_string(),
                c.misses_added.to_string(),
            ]
        }),
    )
}

pub fn correlation_csv(c: &Correlation) -> String {
    csv_string(
        &["n", "slope", "intercept", "r_squared"],
        [vec![
            c.n.to_string(),
            sig6(c.slope),
            sig6(c.intercept),
            sig6(c.r_squared),
        ]],
    )
}

/// Sampled boxes with their level and the measured IOU against `target`.
pub fn samples_csv(target: &BBox, samples: &[LevelSetSample]) -> String {
    csv_string(
        &["x", "y", "w", "h", "curve", "gamma", "alpha", "iou"],
        samples.iter().map(|s| {
            vec![
                sig6(s.bbox.x),
                sig6(s.bbox.y),
                sig6(s.bbox.w),
                sig6(s.bbox.h),
                format!("{:?}", s.curve),
                sig6(s.gamma),
                sig6(s.alpha),
                sig6(iou(&s.bbox, target)),
            ]
        }),
    )
}

pub fn write(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}
