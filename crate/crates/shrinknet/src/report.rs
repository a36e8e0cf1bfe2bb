//! Deterministic emission of run artifacts: CSV metrics, aligned text
//! tables, confusion matrices, SVG line charts, and a JSON run record.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::train::Metrics;

fn write_file(path: &Path, contents: &str) -> Result<PathBuf> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// One row per model per epoch.
pub fn write_metrics_csv(path: &Path, runs: &[(String, Metrics)]) -> Result<PathBuf> {
    let mut out = String::from("model,epoch,train_loss,train_accuracy,val_loss,val_accuracy\n");
    for (name, m) in runs {
        for e in 0..m.train_loss.len() {
            out.push_str(&format!(
                "{name},{},{},{},{},{}\n",
                e + 1,
                fmt(m.train_loss[e]),
                fmt(m.train_accuracy[e]),
                fmt(m.val_loss[e]),
                fmt(m.val_accuracy[e]),
            ));
        }
    }
    write_file(path, &out)
}

pub fn write_confusion_csv(path: &Path, runs: &[(String, Metrics)]) -> Result<PathBuf> {
    let mut out = String::from("model,truth,predicted,count\n");
    for (name, m) in runs {
        for (truth, row) in m.confusion.iter().enumerate() {
            for (pred, &count) in row.iter().enumerate() {
                out.push_str(&format!("{name},{truth},{pred},{count}\n"));
            }
        }
    }
    write_file(path, &out)
}

#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn write_table_csv(path: &Path, table: &Table) -> Result<PathBuf> {
    let mut out = table.headers.join(",");
    out.push('\n');
    for row in &table.rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_file(path, &out)
}

/// Column-aligned plain-text rendering of the same table.
pub fn write_table_txt(path: &Path, table: &Table) -> Result<PathBuf> {
    let cols = table.headers.len();
    let mut widths: Vec<usize> = table.headers.iter().map(|h| h.len()).collect();
    for row in &table.rows {
        for (i, cell) in row.iter().enumerate().take(cols) {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let render = |cells: &[String]| -> String {
        let mut line = String::new();
        for (i, cell) in cells.iter().enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            line.push_str(&format!("{cell:<w$}", w = widths[i]));
        }
        line.trim_end().to_string()
    };
    let mut out = render(&table.headers);
    out.push('\n');
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    out.push_str(&render(&rule));
    out.push('\n');
    for row in &table.rows {
        out.push_str(&render(row));
        out.push('\n');
    }
    write_file(path, &out)
}

const CHART_W: f64 = 640.0;
const CHART_H: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f",
];

/// One polyline per named series, epochs on the x axis.
pub fn write_line_chart(
    path: &Path,
    title: &str,
    y_label: &str,
    series: &[(String, Vec<f64>)],
) -> Result<PathBuf> {
    let max_len = series.iter().map(|(_, s)| s.len()).max().unwrap_or(0);
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (_, s) in series {
        for &v in s {
            y_min = y_min.min(v);
            y_max = y_max.max(v);
        }
    }
    if !y_min.is_finite() {
        y_min = 0.0;
        y_max = 1.0;
    }
    if y_max - y_min < 1e-9 {
        y_max = y_min + 1.0;
    }
    let span = y_max - y_min;
    let plot_w = CHART_W - 2.0 * MARGIN;
    let plot_h = CHART_H - 2.0 * MARGIN;
    let x_of = |i: usize| {
        MARGIN
            + if max_len > 1 {
                plot_w * i as f64 / (max_len - 1) as f64
            } else {
                plot_w / 2.0
            }
    };
    let y_of = |v: f64| CHART_H - MARGIN - plot_h * (v - y_min) / span;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CHART_W}\" height=\"{CHART_H}\" viewBox=\"0 0 {CHART_W} {CHART_H}\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{CHART_W}\" height=\"{CHART_H}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{title}</text>\n",
        CHART_W / 2.0
    ));
    // axes
    svg.push_str(&format!(
        "<line x1=\"{MARGIN}\" y1=\"{0:.1}\" x2=\"{1:.1}\" y2=\"{0:.1}\" stroke=\"black\"/>\n",
        CHART_H - MARGIN,
        CHART_W - MARGIN
    ));
    svg.push_str(&format!(
        "<line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        CHART_H - MARGIN
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">epoch</text>\n",
        CHART_W / 2.0,
        CHART_H - 10.0
    ));
    svg.push_str(&format!(
        "<text x=\"14\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 14 {:.1})\">{y_label}</text>\n",
        CHART_H / 2.0,
        CHART_H / 2.0
    ));
    for (tick, v) in [(0.0, y_min), (0.5, y_min + span / 2.0), (1.0, y_max)] {
        let y = CHART_H - MARGIN - plot_h * tick;
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{y:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{}</text>\n",
            MARGIN - 6.0,
            fmt(v)
        ));
    }
    for (k, (name, values)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", x_of(i), y_of(v)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        let ly = MARGIN + 14.0 * k as f64;
        svg.push_str(&format!(
            "<line x1=\"{0:.1}\" y1=\"{ly:.1}\" x2=\"{1:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            CHART_W - MARGIN - 110.0,
            CHART_W - MARGIN - 90.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\">{name}</text>\n",
            CHART_W - MARGIN - 84.0,
            ly + 3.0
        ));
    }
    svg.push_str("</svg>\n");
    write_file(path, &svg)
}

/// JSON run record; `BTreeMap` keeps key order stable.
pub fn write_manifest(path: &Path, entries: &BTreeMap<String, serde_json::Value>) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(entries).expect("manifest serialization");
    text.push('\n');
    write_file(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn metrics() -> Metrics {
        Metrics {
            train_loss: vec![2.0, 1.5],
            train_accuracy: vec![0.3, 0.6],
            val_loss: vec![2.1, 1.7],
            val_accuracy: vec![0.25, 0.5],
            confusion: vec![vec![2, 1], vec![0, 3]],
            steps: 4,
            wall_seconds: 1.0,
        }
    }

    #[test]
    fn metrics_csv_row_count_is_epochs_plus_header() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        write_metrics_csv(&path, &[("drsn".into(), metrics())]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("model,epoch,"));
        assert!(text.contains("drsn,1,2.000000,0.300000,2.100000,0.250000"));
    }

    #[test]
    fn chart_has_one_polyline_per_series() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("curve.svg");
        let series = vec![
            ("train".to_string(), vec![0.1, 0.5, 0.9]),
            ("validation".to_string(), vec![0.1, 0.4, 0.7]),
        ];
        write_line_chart(&path, "accuracy", "accuracy", &series).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.matches("<polyline").count(), 2);
        assert!(text.contains("train"));
        assert!(text.contains("validation"));
    }

    #[test]
    fn re_emission_is_byte_identical() {
        let dir = tempdir().unwrap();
        let runs = vec![("drsn".to_string(), metrics())];
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        write_metrics_csv(&a, &runs).unwrap();
        write_metrics_csv(&b, &runs).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        let sa = dir.path().join("a.svg");
        let sb = dir.path().join("b.svg");
        let series = vec![("x".to_string(), vec![1.0, 2.0])];
        write_line_chart(&sa, "t", "y", &series).unwrap();
        write_line_chart(&sb, "t", "y", &series).unwrap();
        assert_eq!(fs::read(&sa).unwrap(), fs::read(&sb).unwrap());
    }

    #[test]
    fn text_table_is_aligned() {
        let dir = tempdir().unwrap();
        let table = Table {
            headers: vec!["model".into(), "accuracy".into()],
            rows: vec![
                vec!["logistic-regression".into(), "0.07".into()],
                vec!["drsn".into(), "0.81".into()],
            ],
        };
        let path = dir.path().join("table.txt");
        write_table_txt(&path, &table).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        let col = lines[0].find("accuracy").unwrap();
        assert_eq!(lines[2].find("0.07").unwrap(), col);
        assert_eq!(lines[3].find("0.81").unwrap(), col);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let err = write_metrics_csv(Path::new("/proc/nope/metrics.csv"), &[]).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn manifest_keys_are_sorted() {
        let dir = tempdir().unwrap();
        let mut entries = BTreeMap::new();
        entries.insert("zeta".to_string(), serde_json::json!(1));
        entries.insert("alpha".to_string(), serde_json::json!("x"));
        let path = dir.path().join("manifest.json");
        write_manifest(&path, &entries).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.find("alpha").unwrap() < text.find("zeta").unwrap());
    }
}
