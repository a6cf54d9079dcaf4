//! Report type and its JSON / CSV renderings.

use std::io::{self, Write};
use std::path::Path;

use anyhow::Context;
use rbsde::{AuditReport, LevelSummary, NormReport, Verdict};
use serde::ser::Serialize;
use serde::Deserialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::config::{Mode, OutputFormat, OutputTarget};

pub const CSV_COLUMNS: [&str; 9] = [
    "level_index",
    "n",
    "m",
    "Y0",
    "sup_error_vs_oracle",
    "K_total",
    "A_total",
    "lower_defect",
    "upper_defect",
];

#[derive(Debug, Clone, PartialEq, serde::Serialize, Deserialize)]
pub struct Summary {
    pub y0: f64,
    /// Total expected upward push (`K`, or `R+` for reflected runs).
    pub k_total: Option<f64>,
    /// Total expected downward push (`A`, or `R-`).
    pub a_total: Option<f64>,
    pub oracle_y0: Option<f64>,
    /// Largest defect of the one-step scheme equations.
    pub residual: Option<f64>,
    pub norms: Option<NormReport>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the canonical config (after command-line overrides).
    pub config_hash: String,
    pub horizon: f64,
    pub steps: usize,
    pub seed: u64,
    pub solver_version: String,
    pub cli_version: String,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub name: String,
    pub mode: Mode,
    pub summary: Summary,
    /// Per-level table, in schedule order.
    pub levels: Vec<LevelSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditReport>,
    pub verdicts: Vec<Verdict>,
    pub provenance: Provenance,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.iter().filter(|v| !v.passed)
    }
}

/// Pretty-printed JSON with every float written as `d.dddddddddddddddde±x`
/// (17 significant digits, enough to round-trip any `f64`). Non-finite values
/// become `null`.
struct PreciseFormatter(PrettyFormatter<'static>);

impl Formatter for PreciseFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(w, "{value:.16e}")
        } else {
            w.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(value))
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serializes any value with the report's float convention.
pub fn to_precise_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, PreciseFormatter(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("report serializes");
    buf.push(b'\n');
    String::from_utf8(buf).expect("json is utf-8")
}

pub fn to_json(report: &Report) -> String {
    to_precise_json(report)
}

fn float(x: f64) -> String {
    format!("{x:.16e}")
}

/// The per-level table; header only when there are no levels.
pub fn to_csv(report: &Report) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).expect("in-memory write");
    for row in &report.levels {
        w.write_record([
            row.level_index.to_string(),
            float(row.n),
            float(row.m),
            float(row.y0),
            row.sup_error_vs_oracle.map(float).unwrap_or_default(),
            float(row.k_total),
            float(row.a_total),
            float(row.lower_defect),
            float(row.upper_defect),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// Writes `contents` to a temporary file beside `path`, then renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temporary file for {}", path.display()))?;
    tmp.write_all(contents)
        .and_then(|_| tmp.flush())
        .with_context(|| format!("writing {}", path.display()))?;
    tmp.persist(path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn emit_report(report: &Report, targets: &[OutputTarget]) -> anyhow::Result<()> {
    for target in targets {
        let body = match target.format {
            OutputFormat::Json => to_json(report),
            OutputFormat::Csv => to_csv(report),
        };
        write_atomic(&target.path, body.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_report() -> Report {
        Report {
            schema_version: 1,
            name: "t".into(),
            mode: Mode::Bsde,
            summary: Summary {
                y0: 0.1,
                k_total: None,
                a_total: None,
                oracle_y0: None,
                residual: Some(0.0),
                norms: None,
            },
            levels: Vec::new(),
            audit: None,
            verdicts: Vec::new(),
            provenance: Provenance {
                config_hash: "00".into(),
                horizon: 1.0,
                steps: 2,
                seed: 0,
                solver_version: "0".into(),
                cli_version: "0".into(),
            },
        }
    }

    fn row(k: usize) -> LevelSummary {
        LevelSummary {
            level_index: k,
            n: 10.0,
            m: 0.0,
            y0: 1.0 / 3.0,
            sup_error_vs_oracle: None,
            k_total: 0.25,
            a_total: 0.0,
            lower_defect: 1e-7,
            upper_defect: 0.0,
            lower_violation: 0.0,
            upper_violation: 0.0,
        }
    }

    #[test]
    fn csv_header_only() {
        let csv = to_csv(&empty_report());
        assert_eq!(csv, format!("{}\n", CSV_COLUMNS.join(",")));
    }

    #[test]
    fn csv_one_row() {
        let mut r = empty_report();
        r.levels.push(row(0));
        let csv = to_csv(&r);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        let cells: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(cells.len(), CSV_COLUMNS.len());
        assert_eq!(cells[0], "0");
        assert_eq!(cells[4], "");
        assert_eq!(cells[3].parse::<f64>().unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn floats_have_seventeen_digits() {
        let s = to_precise_json(&[0.1_f64, 1.0 / 3.0, -2.5e-300]);
        assert!(s.contains("1.0000000000000001e-1"), "{s}");
        assert!(s.contains("3.3333333333333331e-1"), "{s}");
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, vec![0.1, 1.0 / 3.0, -2.5e-300]);
    }

    #[test]
    fn non_finite_is_null() {
        assert_eq!(to_precise_json(&f64::NAN).trim(), "null");
    }

    #[test]
    fn report_round_trips() {
        let mut r = empty_report();
        r.levels.push(row(0));
        let json = to_json(&r);
        let back: Report = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert_eq!(to_json(&back), json);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn io_errors_name_target() {
        let err = write_atomic(Path::new("/nonexistent-dir/r.json"), b"x").unwrap_err();
        assert!(format!("{err:#}").contains("/nonexistent-dir/r.json"));
    }
}
