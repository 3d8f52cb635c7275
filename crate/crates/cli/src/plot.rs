//! SVG score-histogram overlays and ROC curves.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use capscore_core::detmetrics::{format_metric, histograms, DetectionReport};
use capscore_core::ScoreGroup;

use crate::error::{CliError, Result};

const SIZE: f64 = 480.0;
/// Left/top offset of the plot area.
pub const MARGIN: f64 = 60.0;
/// Side of the square plot area.
pub const AREA: f64 = 360.0;

const IN_COLOR: &str = "#1f77b4";
const OUT_COLOR: &str = "#d62728";

/// Canvas coordinates of an ROC point `(fpr, tpr)`.
pub fn roc_to_canvas((fpr, tpr): (f64, f64)) -> (f64, f64) {
    (MARGIN + fpr * AREA, MARGIN + (1.0 - tpr) * AREA)
}

/// Inverse of [`roc_to_canvas`].
pub fn canvas_to_roc((x, y): (f64, f64)) -> (f64, f64) {
    ((x - MARGIN) / AREA, 1.0 - (y - MARGIN) / AREA)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn open(title: &str) -> String {
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="30" text-anchor="middle" font-size="14">{}</text>"#, SIZE / 2.0, escape(title)).unwrap();
    writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{AREA}" height="{AREA}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    s
}

fn axis_labels(s: &mut String, x_label: &str, y_label: &str, x_range: (String, String), y_range: (String, String)) {
    let bottom = MARGIN + AREA;
    let right = MARGIN + AREA;
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, MARGIN + AREA / 2.0, bottom + 36.0, escape(x_label)).unwrap();
    writeln!(
        s,
        r#"<text x="20" y="{0}" text-anchor="middle" transform="rotate(-90 20 {0})">{1}</text>"#,
        MARGIN + AREA / 2.0,
        escape(y_label)
    )
    .unwrap();
    writeln!(s, r#"<text x="{MARGIN}" y="{}" text-anchor="middle">{}</text>"#, bottom + 16.0, escape(&x_range.0)).unwrap();
    writeln!(s, r#"<text x="{right}" y="{}" text-anchor="middle">{}</text>"#, bottom + 16.0, escape(&x_range.1)).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, MARGIN - 6.0, bottom + 4.0, escape(&y_range.0)).unwrap();
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, MARGIN - 6.0, MARGIN + 4.0, escape(&y_range.1)).unwrap();
}

fn legend(s: &mut String, in_name: &str, out_name: &str) {
    let x = MARGIN + AREA - 130.0;
    for (i, (name, color)) in [(in_name, IN_COLOR), (out_name, OUT_COLOR)].into_iter().enumerate() {
        let y = MARGIN + 14.0 + 18.0 * i as f64;
        writeln!(s, r#"<rect x="{x}" y="{}" width="12" height="12" fill="{color}" fill-opacity="0.5"/>"#, y - 10.0).unwrap();
        writeln!(s, r#"<text x="{}" y="{y}">{}</text>"#, x + 18.0, escape(name)).unwrap();
    }
}

/// Overlaid normalized histograms of IN and OUT scores over the pooled range.
pub fn histogram_svg(g: &ScoreGroup, bins: usize, in_name: &str, out_name: &str) -> String {
    let mut s = open(&format!("Scores: {in_name} vs {out_name}"));
    let (p, q, lo, hi) = histograms(g, bins).unwrap_or_else(|| {
        // Every score identical: one full bar each.
        let v = g.in_scores[0];
        (vec![1.0], vec![1.0], v - 0.5, v + 0.5)
    });
    let tallest = p.iter().chain(&q).copied().fold(0.0, f64::max);
    let bar_w = AREA / p.len() as f64;
    for (hist, color, id) in [(&p, IN_COLOR, "in"), (&q, OUT_COLOR, "out")] {
        writeln!(s, r#"<g id="hist-{id}" fill="{color}" fill-opacity="0.5">"#).unwrap();
        for (b, &frac) in hist.iter().enumerate() {
            if frac == 0.0 {
                continue;
            }
            let h = frac / tallest * AREA;
            writeln!(
                s,
                r#"<rect x="{:.3}" y="{:.3}" width="{bar_w:.3}" height="{h:.3}"/>"#,
                MARGIN + b as f64 * bar_w,
                MARGIN + AREA - h
            )
            .unwrap();
        }
        writeln!(s, "</g>").unwrap();
    }
    axis_labels(
        &mut s,
        "detector score",
        "fraction of set (scaled to the tallest bin)",
        (format!("{lo:.3}"), format!("{hi:.3}")),
        ("0".into(), format!("{tallest:.3}")),
    );
    legend(&mut s, in_name, out_name);
    s.push_str("</svg>\n");
    s
}

/// ROC polyline with the random-detector diagonal.
pub fn roc_svg(report: &DetectionReport, in_name: &str, out_name: &str) -> String {
    let mut s = open(&format!("ROC: {in_name} vs {out_name} (AUROC {})", format_metric(report.auroc)));
    let (x0, y0) = roc_to_canvas((0.0, 0.0));
    let (x1, y1) = roc_to_canvas((1.0, 1.0));
    writeln!(
        s,
        r#"<line id="chance" x1="{x0}" y1="{y0}" x2="{x1}" y2="{y1}" stroke="gray" stroke-dasharray="6 4"/>"#
    )
    .unwrap();
    let points: Vec<String> = report
        .roc_points
        .iter()
        .map(|&p| {
            let (x, y) = roc_to_canvas(p);
            format!("{x:.4},{y:.4}")
        })
        .collect();
    writeln!(
        s,
        r#"<polyline id="roc" points="{}" fill="none" stroke="{OUT_COLOR}" stroke-width="2"/>"#,
        points.join(" ")
    )
    .unwrap();
    axis_labels(
        &mut s,
        "false positive rate (OUT accepted)",
        "true positive rate (IN accepted)",
        ("0".into(), "1".into()),
        ("0".into(), "1".into()),
    );
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlotFiles {
    pub histogram: PathBuf,
    pub roc: PathBuf,
}

/// Writes `<stem>_hist.svg` and `<stem>_roc.svg` into `dir`.
pub fn render_plots(
    report: &DetectionReport,
    group: &ScoreGroup,
    in_name: &str,
    out_name: &str,
    dir: &Path,
    stem: &str,
) -> Result<PlotFiles> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let files = PlotFiles {
        histogram: dir.join(format!("{stem}_hist.svg")),
        roc: dir.join(format!("{stem}_roc.svg")),
    };
    fs::write(&files.histogram, histogram_svg(group, report.bins, in_name, out_name))
        .map_err(|e| CliError::io(&files.histogram, e))?;
    fs::write(&files.roc, roc_svg(report, in_name, out_name)).map_err(|e| CliError::io(&files.roc, e))?;
    Ok(files)
}
