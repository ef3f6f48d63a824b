use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::run::{BenchRun, CellOutcome, CellPredictions, EvalReport};
use super::split::{SplitKind, SplitSpec};
use crate::error::Result;
use crate::graph::{LatLon, Region};
use crate::io;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const PREDICTIONS_CSV: &str = "predictions.csv";
pub const SPLITS_JSON: &str = "splits.json";

/// Compact, key-sorted JSON followed by a newline.
pub fn report_json(report: &EvalReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report).map_err(|e| crate::error::Error::Schema(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

/// One row per (task, method, split, metric); failed cells get a `status`
/// of `failed` and the reason in place of a value.
pub fn report_rows(report: &EvalReport) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (task, methods) in &report.cells {
        for (method, splits) in methods {
            for (split, outcome) in splits {
                match outcome {
                    CellOutcome::Ok { metrics, .. } => {
                        for (name, v) in metrics {
                            rows.push(vec![
                                task.clone(),
                                method.clone(),
                                split.to_string(),
                                name.clone(),
                                format!("{v}"),
                                "ok".into(),
                            ]);
                        }
                    }
                    CellOutcome::Failed { reason } => rows.push(vec![
                        task.clone(),
                        method.clone(),
                        split.to_string(),
                        String::new(),
                        reason.clone(),
                        "failed".into(),
                    ]),
                }
            }
        }
    }
    rows
}

#[derive(Serialize)]
struct SplitsManifest<'a> {
    splits: &'a [SplitSpec],
}

/// Writes report.json, report.csv, predictions.csv and splits.json.
pub fn write_reports(dir: &Path, run: &BenchRun) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    let json = dir.join(REPORT_JSON);
    io::write_string(&json, &report_json(&run.report)?)?;
    let csv = dir.join(REPORT_CSV);
    io::write_csv_table(&csv, &["task", "method", "split", "metric", "value", "status"], &report_rows(&run.report))?;
    let preds = dir.join(PREDICTIONS_CSV);
    let mut rows = Vec::new();
    for p in &run.predictions {
        for i in 0..p.ids.len() {
            rows.push(vec![
                p.ids[i].clone(),
                p.task.clone(),
                p.method.clone(),
                p.split.to_string(),
                format!("{}", p.actual[i]),
                format!("{}", p.predicted[i]),
            ]);
        }
    }
    io::write_csv_table(&preds, &["region_id", "task", "method", "split", "actual", "predicted"], &rows)?;
    let splits = dir.join(SPLITS_JSON);
    io::write_json(&splits, &SplitsManifest { splits: &run.splits })?;
    Ok(vec![json, csv, preds, splits])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChoroplethOptions {
    pub rows: usize,
    pub cell_px: f64,
}

impl Default for ChoroplethOptions {
    fn default() -> Self {
        Self { rows: 24, cell_px: 18.0 }
    }
}

fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(255.0, 8.0), lerp(247.0, 48.0), lerp(236.0, 107.0))
}

/// Static SVG map of predicted values. Cells are equal-area on a
/// latitude/longitude grid whose longitude step is widened by `1/cos(lat)`
/// at the map's mid latitude; cells without points are grey.
pub fn choropleth_svg(preds: &CellPredictions, regions: &[Region], opts: &ChoroplethOptions) -> String {
    let coords: BTreeMap<&str, LatLon> = regions.iter().map(|r| (r.id.as_str(), r.centroid)).collect();
    let pts: Vec<(LatLon, f64)> = preds
        .ids
        .iter()
        .zip(&preds.predicted)
        .filter_map(|(id, v)| coords.get(id.as_str()).map(|c| (*c, *v)))
        .collect();
    let title = format!("{} / {} / {}", preds.task, preds.method, preds.split);
    let mut svg = String::new();
    if pts.is_empty() {
        let _ = write!(
            svg,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"200\" height=\"40\"><text x=\"4\" y=\"20\">{title}: no data</text></svg>\n"
        );
        return svg;
    }
    let (mut lat0, mut lat1, mut lon0, mut lon1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    let (mut vmin, mut vmax) = (f64::MAX, f64::MIN);
    for (c, v) in &pts {
        lat0 = lat0.min(c.lat);
        lat1 = lat1.max(c.lat);
        lon0 = lon0.min(c.lon);
        lon1 = lon1.max(c.lon);
        vmin = vmin.min(*v);
        vmax = vmax.max(*v);
    }
    let rows = opts.rows.max(1);
    let dlat = ((lat1 - lat0) / rows as f64).max(1e-6);
    let dlon = dlat / ((lat0 + lat1) / 2.0).to_radians().cos().max(1e-3);
    let cols = (((lon1 - lon0) / dlon).floor() as usize + 1).max(1);
    let mut sums = vec![(0.0, 0usize); rows * cols];
    for (c, v) in &pts {
        let r = (((lat1 - c.lat) / dlat) as usize).min(rows - 1);
        let k = (((c.lon - lon0) / dlon) as usize).min(cols - 1);
        sums[r * cols + k].0 += v;
        sums[r * cols + k].1 += 1;
    }
    let px = opts.cell_px;
    let (w, h) = (cols as f64 * px, rows as f64 * px);
    let legend_h = 50.0;
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">",
        w.max(220.0),
        h + legend_h + 20.0,
        w.max(220.0),
        h + legend_h + 20.0
    );
    let _ = writeln!(svg, "<text x=\"4\" y=\"14\" font-size=\"12\">{title}</text>");
    let span = if vmax > vmin { vmax - vmin } else { 1.0 };
    for r in 0..rows {
        for k in 0..cols {
            let (s, n) = sums[r * cols + k];
            let fill = if n == 0 { "#cccccc".to_string() } else { ramp((s / n as f64 - vmin) / span) };
            let _ = writeln!(
                svg,
                "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{px:.1}\" height=\"{px:.1}\" fill=\"{fill}\"/>",
                k as f64 * px,
                20.0 + r as f64 * px
            );
        }
    }
    let ly = 20.0 + h + 10.0;
    for i in 0..10 {
        let _ = writeln!(
            svg,
            "<rect x=\"{:.1}\" y=\"{ly:.1}\" width=\"20\" height=\"12\" fill=\"{}\"/>",
            4.0 + i as f64 * 20.0,
            ramp(i as f64 / 9.0)
        );
    }
    let _ = writeln!(svg, "<text x=\"4\" y=\"{:.1}\" font-size=\"10\">{vmin:.3}</text>", ly + 26.0);
    let _ = writeln!(svg, "<text x=\"164\" y=\"{:.1}\" font-size=\"10\">{vmax:.3}</text>", ly + 26.0);
    svg.push_str("</svg>\n");
    svg
}

/// Writes one SVG per (task, method) for the predictions of `split`.
pub fn write_choropleths(dir: &Path, predictions: &[CellPredictions], regions: &[Region], split: SplitKind) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| crate::error::Error::io(dir, e))?;
    let mut out = Vec::new();
    for p in predictions.iter().filter(|p| p.split == split) {
        let name = format!("{}__{}.svg", p.task, p.method.replace('/', "-"));
        let path = dir.join(name);
        io::write_string(&path, &choropleth_svg(p, regions, &ChoroplethOptions::default()))?;
        out.push(path);
    }
    Ok(out)
}

/// Reads the rows written to predictions.csv back into per-cell sets.
pub fn read_predictions_csv(path: &Path) -> Result<Vec<CellPredictions>> {
    let table = io::read_csv_table(path)?;
    if table.header != ["region_id", "task", "method", "split", "actual", "predicted"] {
        return Err(crate::error::Error::parse(path, "unexpected predictions header"));
    }
    let mut out: Vec<CellPredictions> = Vec::new();
    for row in &table.rows {
        let split: SplitKind = row[3].parse()?;
        let same = out.last().is_some_and(|p| p.task == row[1] && p.method == row[2] && p.split == split);
        if !same {
            out.push(CellPredictions {
                task: row[1].clone(),
                method: row[2].clone(),
                split,
                ids: Vec::new(),
                actual: Vec::new(),
                predicted: Vec::new(),
            });
        }
        let p = out.last_mut().expect("pushed above");
        p.ids.push(row[0].clone());
        p.actual.push(io::parse_f64(path, &row[4])?);
        p.predicted.push(io::parse_f64(path, &row[5])?);
    }
    Ok(out)
}
