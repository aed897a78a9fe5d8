//! Per-slice metric and loss reports as CSV.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::losses::LossReport;

pub const REPORT_HEADER: [&str; 11] = [
    "group",
    "acceleration",
    "slice",
    "ssim",
    "psnr",
    "nmse",
    "hf_nmse",
    "eagle",
    "fidelity",
    "reg",
    "total",
];

/// One CSV row. Empty `acceleration`/`slice` mark aggregate rows; empty loss
/// columns mark components that were not evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub group: String,
    pub acceleration: Option<usize>,
    pub slice: Option<usize>,
    pub ssim: f64,
    /// `inf` for an exact reconstruction.
    pub psnr: f64,
    pub nmse: f64,
    pub hf_nmse: f64,
    pub eagle: Option<f64>,
    pub fidelity: Option<f64>,
    pub reg: Option<f64>,
    pub total: Option<f64>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn sum_present(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    v.flatten().fold(None, |acc, x| Some(acc.unwrap_or(0.0) + x))
}

/// Aggregate row: metrics are averaged, loss columns are summed over the
/// rows that have them.
pub fn aggregate_row(rows: &[ReportRow], group: &str) -> ReportRow {
    ReportRow {
        group: group.to_string(),
        acceleration: None,
        slice: None,
        ssim: mean(rows.iter().map(|r| r.ssim)),
        psnr: mean(rows.iter().map(|r| r.psnr)),
        nmse: mean(rows.iter().map(|r| r.nmse)),
        hf_nmse: mean(rows.iter().map(|r| r.hf_nmse)),
        eagle: sum_present(rows.iter().map(|r| r.eagle)),
        fidelity: sum_present(rows.iter().map(|r| r.fidelity)),
        reg: sum_present(rows.iter().map(|r| r.reg)),
        total: sum_present(rows.iter().map(|r| r.total)),
    }
}

pub fn write_report_to(rows: &[ReportRow], out: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows are written in the order given.
pub fn write_report(rows: &[ReportRow], path: impl AsRef<Path>) -> Result<()> {
    write_report_to(rows, File::create(path)?)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub const TRACE_HEADER: [&str; 7] = ["iteration", "fidelity", "ssim", "eagle", "vgg", "reg", "total"];

/// One row per entry of a reconstruction trace; absent components are
/// left empty.
pub fn write_trace_to(trace: &[LossReport], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for (i, r) in trace.iter().enumerate() {
        w.write_record([
            i.to_string(),
            cell(r.fidelity),
            cell(r.ssim),
            cell(r.eagle),
            cell(r.vgg),
            cell(r.reg),
            r.total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace(trace: &[LossReport], path: impl AsRef<Path>) -> Result<()> {
    write_trace_to(trace, File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(group: &str, slice: usize, v: f64) -> ReportRow {
        ReportRow {
            group: group.into(),
            acceleration: Some(8),
            slice: Some(slice),
            ssim: 0.9 + v,
            psnr: 30.0 + v,
            nmse: 0.01 * v,
            hf_nmse: 0.1 * v,
            eagle: Some(v),
            fidelity: Some(2.0 * v),
            reg: None,
            total: Some(3.0 * v),
        }
    }

    fn written(rows: &[ReportRow]) -> String {
        let mut buf = Vec::new();
        write_report_to(rows, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn empty_report_is_header_only() {
        assert_eq!(written(&[]), format!("{}\n", REPORT_HEADER.join(",")));
    }

    #[test]
    fn one_row_is_two_lines() {
        let s = written(&[row("cine_sax", 0, 0.5)]);
        assert_eq!(s.lines().count(), 2);
        assert_eq!(
            s.lines().nth(1).unwrap(),
            "cine_sax,8,0,1.4,30.5,0.005,0.05,0.5,1.0,,1.5"
        );
    }

    #[test]
    fn quotes_awkward_group_names() {
        let s = written(&[row("a,\"b\"", 0, 0.0)]);
        assert!(s.lines().nth(1).unwrap().starts_with("\"a,\"\"b\"\"\","));
    }

    #[test]
    fn aggregate_matches_recomputation() {
        let rows: Vec<_> = (0..5).map(|i| row("g", i, i as f64 * 0.37)).collect();
        let agg = aggregate_row(&rows, "total");
        let n = rows.len() as f64;
        let ssim: f64 = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
        let eagle: f64 = rows.iter().map(|r| r.eagle.unwrap()).sum();
        assert!((agg.ssim - ssim).abs() < 1e-9);
        assert!((agg.eagle.unwrap() - eagle).abs() < 1e-9);
        assert_eq!(agg.reg, None);
        assert_eq!(agg.slice, None);
    }

    #[test]
    fn file_round_trip_keeps_infinity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let mut rows = vec![row("x", 0, 0.1), row("y", 1, 0.2)];
        rows[0].psnr = f64::INFINITY;
        write_report(&rows, &path).unwrap();
        assert_eq!(read_report(&path).unwrap(), rows);
    }

    #[test]
    fn trace_leaves_absent_components_empty() {
        let trace = vec![LossReport {
            fidelity: Some(0.5),
            reg: Some(2.0),
            total: 0.52,
            ..Default::default()
        }];
        let mut buf = Vec::new();
        write_trace_to(&trace, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "iteration,fidelity,ssim,eagle,vgg,reg,total\n0,0.5,,,,2,0.52\n");
    }
}
