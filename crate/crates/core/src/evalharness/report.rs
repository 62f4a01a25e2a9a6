//! Flat CSV/JSON reports. Columns: `source, seed, iou_bin, accuracy,
//! mean_prob`. Grid rows carry the IoU in `iou_bin`; each (source, seed) also
//! gets summary rows `drop`, `hard` and `easy`. Means over seeds use the seed
//! label `mean`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::Comparison;
use crate::binio::{atomic_write, read_file};
use crate::error::{Error, Result};

pub const REPORT_COLUMNS: [&str; 5] = ["source", "seed", "iou_bin", "accuracy", "mean_prob"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    /// Picks the format from a `.csv` or `.json` extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(ReportFormat::Csv),
            Some("json") => Ok(ReportFormat::Json),
            _ => Err(Error::Config(format!(
                "cannot infer report format of {} (use .csv or .json)",
                path.display()
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRow {
    pub source: String,
    pub seed: String,
    pub iou_bin: String,
    pub accuracy: f64,
    pub mean_prob: f64,
}

fn row(source: &str, seed: &str, iou_bin: &str, accuracy: f64, mean_prob: f64) -> ReportRow {
    ReportRow {
        source: source.to_owned(),
        seed: seed.to_owned(),
        iou_bin: iou_bin.to_owned(),
        accuracy,
        mean_prob,
    }
}

/// Flattens a comparison into report rows: per-seed rows in seed order, then
/// the means.
pub fn report_rows(cmp: &Comparison) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    for summary in &cmp.per_seed {
        let seed = summary.seed.to_string();
        for r in &summary.results {
            let src = r.source.as_str();
            let rep = &r.report;
            for ((g, a), p) in rep.grid.iter().zip(&rep.accuracy).zip(&rep.mean_prob) {
                rows.push(row(src, &seed, &g.to_string(), *a, *p));
            }
            rows.push(row(src, &seed, "drop", r.accuracy_drop, r.prob_drop));
            rows.push(row(src, &seed, "hard", r.hard_accuracy, rep.hard_prob()));
            rows.push(row(src, &seed, "easy", r.easy_accuracy, rep.easy_prob()));
        }
    }
    for agg in &cmp.aggregate {
        let src = agg.source.as_str();
        for ((g, a), p) in agg.grid.iter().zip(&agg.accuracy).zip(&agg.mean_prob) {
            rows.push(row(src, "mean", &g.to_string(), *a, *p));
        }
        rows.push(row(src, "mean", "drop", agg.accuracy_drop, agg.prob_drop));
        rows.push(row(src, "mean", "hard", agg.hard_accuracy, agg.hard_prob));
        rows.push(row(src, "mean", "easy", agg.easy_accuracy, agg.easy_prob));
    }
    rows
}

fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn encode_csv(rows: &[ReportRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_COLUMNS)
        .map_err(|e| Error::Report(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.source.as_str(),
            r.seed.as_str(),
            r.iou_bin.as_str(),
            &fmt_float(r.accuracy),
            &fmt_float(r.mean_prob),
        ])
        .map_err(|e| Error::Report(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Report(e.to_string()))
}

pub fn decode_csv(bytes: &[u8]) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    let headers = r.headers().map_err(|e| Error::Report(e.to_string()))?;
    if headers.iter().ne(REPORT_COLUMNS) {
        return Err(Error::Report(format!(
            "unexpected report header {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Report(e.to_string())))
        .collect()
}

pub fn encode_json(rows: &[ReportRow]) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(rows).map_err(|e| Error::Report(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

pub fn decode_json(bytes: &[u8]) -> Result<Vec<ReportRow>> {
    serde_json::from_slice(bytes).map_err(|e| Error::Report(e.to_string()))
}

/// Writes the comparison as CSV or JSON (atomically).
pub fn export_report(cmp: &Comparison, path: &Path, format: ReportFormat) -> Result<()> {
    let rows = report_rows(cmp);
    let bytes = match format {
        ReportFormat::Csv => encode_csv(&rows)?,
        ReportFormat::Json => encode_json(&rows)?,
    };
    atomic_write(path, &bytes)
}

pub fn load_report(path: &Path, format: ReportFormat) -> Result<Vec<ReportRow>> {
    let bytes = read_file(path)?;
    match format {
        ReportFormat::Csv => decode_csv(&bytes),
        ReportFormat::Json => decode_json(&bytes),
    }
}
