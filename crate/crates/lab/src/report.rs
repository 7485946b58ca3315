//! Report emission: structured text records, CSV tables and SVG line charts.
//! CSV is the contract; plots are best effort.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use phasefield_core::diagnostics::{Check, DiagnosticsReport, Series};
use plotters::prelude::*;

use crate::error::{LabError, Result};

/// One line per check: `id value tolerance pass config_hash formula`.
pub fn format_records(report: &DiagnosticsReport) -> String {
    let mut s = String::new();
    for c in &report.checks {
        writeln!(
            s,
            "id={} value={:e} tolerance={:e} pass={} config_hash={} formula=\"{}\"",
            c.id, c.value, c.tolerance, c.pass, c.config_hash, c.formula
        )
        .unwrap();
    }
    s
}

/// Parses [`format_records`] output back into checks.
pub fn parse_records(text: &str) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || LabError::Format(format!("report line {}: malformed record", n + 1));
        let (head, formula) = line.split_once(" formula=").ok_or_else(bad)?;
        let mut id = None;
        let (mut value, mut tolerance, mut pass, mut hash) = (None, None, None, None);
        for kv in head.split(' ') {
            let (k, v) = kv.split_once('=').ok_or_else(bad)?;
            match k {
                "id" => id = Some(v.to_string()),
                "value" => value = v.parse::<f64>().ok(),
                "tolerance" => tolerance = v.parse::<f64>().ok(),
                "pass" => pass = v.parse::<bool>().ok(),
                "config_hash" => hash = Some(v.to_string()),
                _ => return Err(bad()),
            }
        }
        out.push(Check {
            id: id.ok_or_else(bad)?,
            formula: formula.trim_matches('"').to_string(),
            value: value.ok_or_else(bad)?,
            tolerance: tolerance.ok_or_else(bad)?,
            pass: pass.ok_or_else(bad)?,
            config_hash: hash.ok_or_else(bad)?,
        });
    }
    Ok(out)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| LabError::io(path, e))
}

pub fn write_checks_csv(path: &Path, rows: &[(String, Check)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["source", "id", "value", "tolerance", "pass", "config_hash", "formula"])?;
    for (src, c) in rows {
        w.write_record([
            src.as_str(),
            &c.id,
            &format!("{:e}", c.value),
            &format!("{:e}", c.tolerance),
            &c.pass.to_string(),
            &c.config_hash,
            &c.formula,
        ])?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

pub fn write_series_csv(path: &Path, series: &Series) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "value"])?;
    for (t, v) in series.t.iter().zip(&series.values) {
        w.write_record([format!("{t:e}"), format!("{v:e}")])?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

/// Line chart of several curves; non-finite points are dropped.
pub fn plot_lines(path: &Path, title: &str, curves: &[(String, Vec<(f64, f64)>)], log_log: bool) -> Result<()> {
    let fail = |e: &dyn std::fmt::Display| LabError::Format(format!("plot {}: {e}", path.display()));
    let tf = |p: &(f64, f64)| if log_log { (p.0.log10(), p.1.abs().max(1e-300).log10()) } else { *p };
    let pts: Vec<Vec<(f64, f64)>> = curves
        .iter()
        .map(|(_, c)| c.iter().map(tf).filter(|p| p.0.is_finite() && p.1.is_finite()).collect())
        .collect();
    let all: Vec<&(f64, f64)> = pts.iter().flatten().collect();
    if all.is_empty() {
        return Ok(());
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in &all {
        x0 = x0.min(p.0);
        x1 = x1.max(p.0);
        y0 = y0.min(p.1);
        y1 = y1.max(p.1);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let root = SVGBackend::new(path, (640, 400)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| fail(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 16))
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| fail(&e))?;
    let (xl, yl) = if log_log { ("log10 x", "log10 |y|") } else { ("t", "value") };
    chart.configure_mesh().x_desc(xl).y_desc(yl).draw().map_err(|e| fail(&e))?;
    for (i, (curve, (name, _))) in pts.iter().zip(curves).enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(curve.iter().copied(), color))
            .map_err(|e| fail(&e))?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], color));
    }
    if curves.len() > 1 {
        chart.configure_series_labels().border_style(BLACK).draw().map_err(|e| fail(&e))?;
    }
    root.present().map_err(|e| fail(&e))
}

fn file_id(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect()
}

/// Outcome of [`emit_report`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Summary {
    pub passed: usize,
    pub failed: usize,
    pub files: Vec<PathBuf>,
}

impl Summary {
    pub fn success(&self) -> bool {
        self.failed == 0
    }
}

/// Writes `report.txt`, `checks.csv`, `summary.txt`, one CSV (and plot) per
/// series, and for several labelled reports of the same check ids a
/// combined convergence table and plot per id against `levels`.
pub fn emit_report(
    out: &Path,
    reports: &[(String, DiagnosticsReport)],
    levels: Option<&[f64]>,
    plots: bool,
) -> Result<Summary> {
    ensure_dir(out)?;
    let mut files = Vec::new();
    let mut rows: Vec<(String, Check)> = Vec::new();
    let mut records = String::new();
    for (label, r) in reports {
        records.push_str(&format_records(r));
        rows.extend(r.checks.iter().map(|c| (label.clone(), c.clone())));
    }
    let p = out.join("report.txt");
    write_text(&p, &records)?;
    files.push(p);
    let p = out.join("checks.csv");
    write_checks_csv(&p, &rows)?;
    files.push(p);

    let failed: Vec<&(String, Check)> = rows.iter().filter(|(_, c)| !c.pass).collect();
    let passed = rows.len() - failed.len();
    let mut summary = format!("checks: {}  passed: {}  failed: {}\n", rows.len(), passed, failed.len());
    for (src, c) in failed.iter().copied().chain(rows.iter().filter(|(_, c)| c.pass)) {
        writeln!(
            summary,
            "{} {} [{}] value={:e} tolerance={:e}",
            if c.pass { "PASS" } else { "FAIL" },
            c.id,
            src,
            c.value,
            c.tolerance
        )
        .unwrap();
    }
    let p = out.join("summary.txt");
    write_text(&p, &summary)?;
    files.push(p);

    let series_dir = out.join("series");
    for (label, r) in reports {
        if r.series.is_empty() {
            continue;
        }
        ensure_dir(&series_dir)?;
        for s in &r.series {
            let stem = if reports.len() > 1 { format!("{}.{}", file_id(label), file_id(&s.id)) } else { file_id(&s.id) };
            let p = series_dir.join(format!("{stem}.csv"));
            write_series_csv(&p, s)?;
            files.push(p);
            if plots {
                let p = series_dir.join(format!("{stem}.svg"));
                let curve: Vec<(f64, f64)> = s.t.iter().copied().zip(s.values.iter().copied()).collect();
                if plot_lines(&p, &s.id, &[(s.id.clone(), curve)], false).is_ok() && p.exists() {
                    files.push(p);
                }
            }
        }
    }

    if let Some(levels) = levels.filter(|l| l.len() == reports.len() && l.len() > 1) {
        let conv_dir = out.join("convergence");
        ensure_dir(&conv_dir)?;
        let mut ids: Vec<String> = Vec::new();
        for (_, r) in reports {
            for c in &r.checks {
                if !ids.contains(&c.id) {
                    ids.push(c.id.clone());
                }
            }
        }
        let p = conv_dir.join("convergence.csv");
        let mut w = csv::Writer::from_path(&p)?;
        w.write_record(["id", "level", "value"])?;
        for id in &ids {
            let mut curve = Vec::new();
            for (lv, (_, r)) in levels.iter().zip(reports) {
                if let Some(c) = r.checks.iter().find(|c| &c.id == id) {
                    w.write_record([id.clone(), format!("{lv:e}"), format!("{:e}", c.value)])?;
                    curve.push((*lv, c.value));
                }
            }
            if plots && curve.len() > 1 {
                let pp = conv_dir.join(format!("{}.svg", file_id(id)));
                if plot_lines(&pp, id, &[(id.clone(), curve)], true).is_ok() && pp.exists() {
                    files.push(pp);
                }
            }
        }
        w.flush().map_err(|e| LabError::io(&p, e))?;
        files.push(p);
    }
    Ok(Summary { passed, failed: failed.len(), files })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(values: &[(&str, f64, f64)]) -> DiagnosticsReport {
        let mut r = DiagnosticsReport::new("abc");
        for (id, v, t) in values {
            r.push(Check::at_most(*id, "x <= t", *v, *t));
        }
        r
    }

    #[test]
    fn records_round_trip() {
        let r = report(&[("a.b", 0.5, 1.0), ("c", 2.0, 1.0)]);
        let back = parse_records(&format_records(&r)).unwrap();
        assert_eq!(back, r.checks);
    }

    #[test]
    fn empty_report_succeeds() {
        let dir = tempfile::tempdir().unwrap();
        let s = emit_report(dir.path(), &[("run".into(), DiagnosticsReport::new("h"))], None, true).unwrap();
        assert!(s.success());
        assert_eq!(s.passed, 0);
        let text = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
        assert!(text.starts_with("checks: 0"));
    }

    #[test]
    fn failures_are_listed_first() {
        let dir = tempfile::tempdir().unwrap();
        let r = report(&[("ok", 0.1, 1.0), ("bad", 3.0, 1.0)]);
        let s = emit_report(dir.path(), &[("run".into(), r)], None, false).unwrap();
        assert!(!s.success());
        let text = std::fs::read_to_string(dir.path().join("summary.txt")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[1].starts_with("FAIL bad"), "{text}");
        assert!(lines[2].starts_with("PASS ok"));
    }

    #[test]
    fn convergence_plot_per_id() {
        let dir = tempfile::tempdir().unwrap();
        let reps: Vec<(String, DiagnosticsReport)> = [4e-4, 2e-4, 1e-4]
            .iter()
            .map(|dt| (format!("dt={dt}"), report(&[("weak_form", dt * 10.0, 1.0)])))
            .collect();
        emit_report(dir.path(), &reps, Some(&[4e-4, 2e-4, 1e-4]), true).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("convergence/convergence.csv")).unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(dir.path().join("convergence/weak_form.svg").exists());
    }
}
