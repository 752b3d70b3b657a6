//! Run reports: `report.json`, `metrics.csv` and a small SVG of the
//! per-epoch curves.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricKind;
use crate::trainer::{BestPrefix, EpochRecord, RunState};

pub const METRICS_CSV_HEADER: [&str; 5] = [
    "epoch",
    "train_loss",
    "val_best",
    "val_empty",
    "improvement_rate",
];

const SVG_WIDTH: f64 = 800.0;
const SVG_HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub metric: MetricKind,
    pub epochs: Vec<EpochRecord>,
    pub best: BestPrefix,
    pub final_ta_generation: u32,
}

impl RunReport {
    pub fn from_state(state: &RunState, metric: MetricKind) -> Result<Self> {
        let best = state
            .best
            .clone()
            .ok_or_else(|| Error::State("no completed epochs to report".into()))?;
        Ok(RunReport {
            metric,
            epochs: state.records.clone(),
            best,
            final_ta_generation: state.ta.generation,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: RunReport = serde_json::from_str(&text)?;
        if report.epochs.is_empty() {
            return Err(Error::State(format!("{} lists no epochs", path.display())));
        }
        Ok(report)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// One row per epoch, numbers with six decimals.
    pub fn metrics_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::State(format!("writing metrics.csv: {e}"));
        w.write_record(METRICS_CSV_HEADER).map_err(csv_err)?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                format!("{:.6}", e.train_loss),
                format!("{:.6}", e.val_best),
                format!("{:.6}", e.val_empty),
                format!("{:.6}", e.improvement_rate),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::State(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Line chart of training loss, best and baseline validation score and
    /// improvement rate per epoch, on one shared axis. The output depends
    /// only on the report.
    pub fn curves_svg(&self) -> String {
        let series: [(&str, &str, Vec<f64>); 4] = [
            (
                "train_loss",
                "#2ca02c",
                self.epochs.iter().map(|e| e.train_loss).collect(),
            ),
            (
                "val_best",
                "#1f77b4",
                self.epochs.iter().map(|e| e.val_best).collect(),
            ),
            (
                "val_empty",
                "#7f7f7f",
                self.epochs.iter().map(|e| e.val_empty).collect(),
            ),
            (
                "improvement_rate",
                "#d62728",
                self.epochs.iter().map(|e| e.improvement_rate).collect(),
            ),
        ];
        let all = series
            .iter()
            .flat_map(|s| s.2.iter().copied())
            .filter(|v| v.is_finite());
        let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-9 {
            lo -= 0.5;
            hi += 0.5;
        }
        let n = self.epochs.len();
        let plot_w = SVG_WIDTH - 2.0 * MARGIN;
        let plot_h = SVG_HEIGHT - 2.0 * MARGIN;
        let x = |i: usize| {
            if n <= 1 {
                MARGIN + plot_w / 2.0
            } else {
                MARGIN + plot_w * i as f64 / (n - 1) as f64
            }
        };
        let y = |v: f64| MARGIN + plot_h * (hi - v.clamp(lo, hi)) / (hi - lo);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN}" y="{MARGIN}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            s,
            r#"<text x="{MARGIN}" y="{:.1}" font-size="12">{hi:.4}</text>"#,
            MARGIN - 6.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{MARGIN}" y="{:.1}" font-size="12">{lo:.4}</text>"#,
            SVG_HEIGHT - MARGIN + 16.0
        );
        for (i, e) in self.epochs.iter().enumerate() {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"#,
                x(i),
                SVG_HEIGHT - MARGIN + 32.0,
                e.epoch
            );
        }
        for (k, (name, color, values)) in series.iter().enumerate() {
            let points: Vec<String> = values
                .iter()
                .enumerate()
                .map(|(i, v)| format!("{:.2},{:.2}", x(i), y(*v)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                points.join(" ")
            );
            for p in &points {
                let (px, py) = p.split_once(',').expect("point");
                let _ = writeln!(s, r#"<circle cx="{px}" cy="{py}" r="3" fill="{color}"/>"#);
            }
            let ly = 20.0 + 14.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{ly:.1}" font-size="12" fill="{color}">{name}</text>"#,
                SVG_WIDTH - 200.0
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// Reads `report.json` from a run directory and writes `metrics.csv` and
/// `curves.svg` into `out_dir`.
pub fn emit_report(run_dir: impl AsRef<Path>, out_dir: impl AsRef<Path>) -> Result<RunReport> {
    let report = RunReport::load(run_dir.as_ref().join("report.json"))?;
    let out = out_dir.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let csv_path = out.join("metrics.csv");
    fs::write(&csv_path, report.metrics_csv()?).map_err(|e| Error::io(&csv_path, e))?;
    let svg_path = out.join("curves.svg");
    fs::write(&svg_path, report.curves_svg()).map_err(|e| Error::io(&svg_path, e))?;
    Ok(report)
}
