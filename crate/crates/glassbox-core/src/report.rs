//! Artifact writers: curve and alignment CSVs, hand-rolled SVG line plots,
//! and the manifest that pins every seed a run used.
//!
//! Numbers are written in shortest round-trip form, so writing, reading,
//! and writing again is byte-identical. Nothing here records timestamps;
//! reruns with the same inputs produce the same artifacts.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::alignment::AlignmentRound;
use crate::error::{Error, Result};
use crate::interpret::{DefKind, Method};
use crate::metrics::{CurvePoint, EvaluationCurve};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CurveRow {
    method: Method,
    metric: DefKind,
    budget: f64,
    mean_drop: f64,
    std_drop: f64,
    n: usize,
    n_excluded: usize,
}

/// Write curves as flat CSV, one row per budget point, grouped by curve.
pub fn write_curves(path: &Path, curves: &[EvaluationCurve]) -> Result<()> {
    let display = path.display().to_string();
    let file = std::fs::File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut out = csv::Writer::from_writer(file);
    for curve in curves {
        for p in &curve.points {
            out.serialize(CurveRow {
                method: curve.method,
                metric: curve.metric,
                budget: p.budget,
                mean_drop: p.mean_drop,
                std_drop: p.std_drop,
                n: p.n,
                n_excluded: p.n_excluded,
            })?;
        }
    }
    out.flush().map_err(|e| Error::io(&display, e))
}

/// Read curves back, regrouping consecutive rows that share a method and
/// metric.
pub fn read_curves(path: &Path) -> Result<Vec<EvaluationCurve>> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(&display, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut curves: Vec<EvaluationCurve> = Vec::new();
    for row in reader.deserialize() {
        let row: CurveRow = row?;
        let point = CurvePoint {
            budget: row.budget,
            mean_drop: row.mean_drop,
            std_drop: row.std_drop,
            n: row.n,
            n_excluded: row.n_excluded,
        };
        match curves.last_mut() {
            Some(c) if c.method == row.method && c.metric == row.metric => c.points.push(point),
            _ => curves.push(EvaluationCurve {
                method: row.method,
                metric: row.metric,
                points: vec![point],
            }),
        }
    }
    Ok(curves)
}

/// Write per-round alignment rows as CSV.
pub fn write_alignment(path: &Path, rounds: &[AlignmentRound]) -> Result<()> {
    let display = path.display().to_string();
    let file = std::fs::File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut out = csv::Writer::from_writer(file);
    for row in rounds {
        out.serialize(row)?;
    }
    out.flush().map_err(|e| Error::io(&display, e))
}

pub fn read_alignment(path: &Path) -> Result<Vec<AlignmentRound>> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(&display, e))?;
    let mut reader = csv::Reader::from_reader(file);
    reader.deserialize().collect::<std::result::Result<Vec<_>, _>>().map_err(Error::from)
}

/// One named line on a plot.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

const PLOT_W: f64 = 640.0;
const PLOT_H: f64 = 440.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 42.0;
const MARGIN_B: f64 = 52.0;

fn axis_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let formatted = format!("{v:.3}");
    let trimmed = formatted.trim_end_matches('0').trim_end_matches('.');
    trimmed.to_string()
}

/// Render a line plot with axes, ticks, and a legend. The output depends
/// only on the arguments; no timestamps, no randomness.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[PlotSeries]) -> String {
    let (x_lo, x_hi) = axis_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y_lo, y_hi) = axis_range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let inner_w = PLOT_W - MARGIN_L - MARGIN_R;
    let inner_h = PLOT_H - MARGIN_T - MARGIN_B;
    let px = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * inner_w;
    let py = |y: f64| PLOT_H - MARGIN_B - (y - y_lo) / (y_hi - y_lo) * inner_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {PLOT_W} {PLOT_H}\" \
         font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(svg, "<rect width=\"{PLOT_W}\" height=\"{PLOT_H}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
        MARGIN_L + inner_w / 2.0,
        title
    );

    // axes
    let _ = writeln!(
        svg,
        "<line x1=\"{MARGIN_L}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
        PLOT_H - MARGIN_B,
        PLOT_W - MARGIN_R,
        PLOT_H - MARGIN_B
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{:.1}\" stroke=\"black\"/>",
        PLOT_H - MARGIN_B
    );

    // ticks and grid
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = x_lo + t * (x_hi - x_lo);
        let yv = y_lo + t * (y_hi - y_lo);
        let x = px(xv);
        let y = py(yv);
        let _ = writeln!(
            svg,
            "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
            PLOT_H - MARGIN_B,
            PLOT_H - MARGIN_B + 5.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            PLOT_H - MARGIN_B + 18.0,
            tick_label(xv)
        );
        let _ = writeln!(
            svg,
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{MARGIN_L}\" y2=\"{y:.1}\" stroke=\"black\"/>",
            MARGIN_L - 5.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
            MARGIN_L - 9.0,
            y + 4.0,
            tick_label(yv)
        );
        if i > 0 {
            let _ = writeln!(
                svg,
                "<line x1=\"{MARGIN_L}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" \
                 stroke=\"#dddddd\" stroke-dasharray=\"3 3\"/>",
                PLOT_W - MARGIN_R
            );
        }
    }

    // axis labels
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
        MARGIN_L + inner_w / 2.0,
        PLOT_H - 14.0,
        x_label
    );
    let _ = writeln!(
        svg,
        "<text x=\"18\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.1})\">{}</text>",
        MARGIN_T + inner_h / 2.0,
        MARGIN_T + inner_h / 2.0,
        y_label
    );

    // data
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>",
            coords.join(" ")
        );
        for &(x, y) in &s.points {
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.6\" fill=\"{color}\"/>",
                px(x),
                py(y)
            );
        }
        // legend entry
        let ly = MARGIN_T + 16.0 * i as f64;
        let lx = PLOT_W - MARGIN_R + 14.0;
        let _ = writeln!(
            svg,
            "<line x1=\"{lx:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" \
             stroke=\"{color}\" stroke-width=\"2.5\"/>",
            lx + 18.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
            lx + 24.0,
            ly + 4.0,
            s.label
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Drop-vs-budget panel for one metric: one line per method.
pub fn curves_plot(curves: &[EvaluationCurve], title: &str, x_label: &str) -> String {
    let series: Vec<PlotSeries> = curves
        .iter()
        .map(|c| PlotSeries {
            label: c.method.to_string(),
            points: c.points.iter().map(|p| (p.budget, p.mean_drop)).collect(),
        })
        .collect();
    line_plot_svg(title, x_label, "mean probability drop", &series)
}

/// Similarity and held-out accuracy against retraining round.
pub fn alignment_plot(rounds: &[AlignmentRound]) -> String {
    let series = vec![
        PlotSeries {
            label: "similarity".into(),
            points: rounds.iter().map(|r| (r.round as f64, r.similarity_mean)).collect(),
        },
        PlotSeries {
            label: "heldout accuracy".into(),
            points: rounds.iter().map(|r| (r.round as f64, r.heldout_accuracy)).collect(),
        },
    ];
    line_plot_svg("rationale alignment over retraining", "round", "value", &series)
}

pub fn write_text(path: &Path, content: &str) -> Result<()> {
    let display = path.display().to_string();
    std::fs::write(path, content).map_err(|e| Error::io(&display, e))
}

/// Everything needed to reproduce a run bitwise: seeds, settings, and
/// which stages completed. Serialized as sorted pretty JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub seeds: BTreeMap<String, u64>,
    pub settings: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub complete: bool,
    pub outputs: Vec<String>,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest::new()
    }
}

impl Manifest {
    pub fn new() -> Self {
        Manifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seeds: BTreeMap::new(),
            settings: BTreeMap::new(),
            stages: Vec::new(),
        }
    }

    pub fn seed(&mut self, name: &str, value: u64) -> &mut Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn setting(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.settings.insert(key.to_string(), value.to_string());
        self
    }

    /// Record a stage as started; it stays incomplete until
    /// [`Manifest::complete_stage`] flips it.
    pub fn begin_stage(&mut self, stage: &str) -> &mut Self {
        self.stages.push(StageRecord {
            stage: stage.to_string(),
            complete: false,
            outputs: Vec::new(),
        });
        self
    }

    pub fn complete_stage(&mut self, stage: &str, outputs: &[String]) -> &mut Self {
        if let Some(s) = self.stages.iter_mut().rev().find(|s| s.stage == stage) {
            s.complete = true;
            s.outputs = outputs.to_vec();
        }
        self
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let display = path.display().to_string();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(&display, e))
    }

    pub fn read(path: &Path) -> Result<Manifest> {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
        serde_json::from_str(&text).map_err(Error::from)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_curves() -> Vec<EvaluationCurve> {
        vec![
            EvaluationCurve {
                method: Method::VaGrad,
                metric: DefKind::Csa,
                points: vec![
                    CurvePoint { budget: 0.1, mean_drop: 0.1 + 0.2, std_drop: 0.01, n: 300, n_excluded: 0 },
                    CurvePoint { budget: 0.5, mean_drop: 0.31, std_drop: 0.02, n: 299, n_excluded: 1 },
                ],
            },
            EvaluationCurve {
                method: Method::RankMask,
                metric: DefKind::Mma,
                points: vec![CurvePoint {
                    budget: 1.0,
                    mean_drop: -0.0625,
                    std_drop: 0.0,
                    n: 300,
                    n_excluded: 0,
                }],
            },
        ]
    }

    #[test]
    fn curves_csv_round_trips_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curves.csv");
        let curves = sample_curves();
        write_curves(&path, &curves).unwrap();
        let back = read_curves(&path).unwrap();
        assert_eq!(back, curves);
        // writing what was read reproduces the bytes exactly
        let first = std::fs::read(&path).unwrap();
        let path2 = dir.path().join("curves2.csv");
        write_curves(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path2).unwrap(), first);
    }

    #[test]
    fn curves_csv_has_the_documented_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curves.csv");
        write_curves(&path, &sample_curves()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("method,metric,budget,mean_drop,std_drop,n,n_excluded\n"));
        assert!(text.contains("vagrad,csa,0.1,"));
    }

    #[test]
    fn alignment_csv_round_trips() {
        let rounds = vec![
            AlignmentRound { round: 0, similarity_mean: 0.4, similarity_std: 0.1, heldout_accuracy: 0.97 },
            AlignmentRound { round: 1, similarity_mean: 0.55, similarity_std: 0.09, heldout_accuracy: 0.96 },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("alignment.csv");
        write_alignment(&path, &rounds).unwrap();
        assert_eq!(read_alignment(&path).unwrap(), rounds);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("round,similarity_mean,similarity_std,heldout_accuracy\n"));
    }

    #[test]
    fn svg_is_deterministic_and_complete() {
        let series = vec![
            PlotSeries { label: "one".into(), points: vec![(0.1, 0.2), (0.5, 0.4)] },
            PlotSeries { label: "two".into(), points: vec![(0.1, 0.1), (0.5, 0.9)] },
        ];
        let a = line_plot_svg("t", "x", "y", &series);
        let b = line_plot_svg("t", "x", "y", &series);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.trim_end().ends_with("</svg>"));
        assert_eq!(a.matches("<polyline").count(), 2);
        assert!(a.contains(">one<") && a.contains(">two<"));
    }

    #[test]
    fn svg_handles_flat_series() {
        let series = vec![PlotSeries { label: "flat".into(), points: vec![(0.0, 0.5), (1.0, 0.5)] }];
        let svg = line_plot_svg("t", "x", "y", &series);
        assert!(svg.contains("<polyline"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn manifest_round_trips_and_tracks_stages() {
        let mut m = Manifest::new();
        m.seed("train", 7).seed("sweep", 11).setting("sample", 300usize);
        m.begin_stage("train");
        m.complete_stage("train", &["model.json".into()]);
        m.begin_stage("sweep");
        assert!(!m.stages[1].complete);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        m.write(&path).unwrap();
        let back = Manifest::read(&path).unwrap();
        assert_eq!(back, m);

        // rewriting yields identical bytes
        let bytes = std::fs::read(&path).unwrap();
        back.write(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
    }
}
