//! Deterministic renderings of evaluation reports: CSV tables, an SVG
//! confusion heatmap, and a markdown summary.
//!
//! The heatmap colors counts in log scale on a purple-to-yellow ramp;
//! exact zeros render black.

use std::path::Path;

use crate::eval::{EvalReport, BACKGROUND};
use crate::io::{self, IoError};

const CELL: f64 = 26.0;
const MARGIN_LEFT: f64 = 150.0;
const MARGIN_TOP: f64 = 150.0;
const RAMP_LOW: [u8; 3] = [0x44, 0x01, 0x54]; // purple
const RAMP_HIGH: [u8; 3] = [0xfd, 0xe7, 0x25]; // yellow

/// log(1+count)/log(1+max) mapped onto the purple->yellow ramp; zero is black.
fn cell_color(count: u64, max: u64) -> String {
    if count == 0 {
        return "#000000".to_owned();
    }
    let t = if max == 0 {
        0.0
    } else {
        (1.0 + count as f64).ln() / (1.0 + max as f64).ln()
    };
    let mix = |lo: u8, hi: u8| -> u8 {
        (lo as f64 + t * (hi as f64 - lo as f64)).round().clamp(0.0, 255.0) as u8
    };
    format!(
        "#{:02x}{:02x}{:02x}",
        mix(RAMP_LOW[0], RAMP_HIGH[0]),
        mix(RAMP_LOW[1], RAMP_HIGH[1]),
        mix(RAMP_LOW[2], RAMP_HIGH[2])
    )
}

/// Confusion matrix as CSV of raw counts, rows = true class, cols = predicted.
pub fn confusion_to_csv(report: &EvalReport) -> String {
    let mut out = String::from("true\\pred");
    for label in &report.confusion_labels {
        out.push(',');
        out.push_str(label);
    }
    out.push('\n');
    for (r, row) in report.confusion.iter().enumerate() {
        out.push_str(&report.confusion_labels[r]);
        for count in row {
            out.push_str(&format!(",{count}"));
        }
        out.push('\n');
    }
    out
}

/// Confusion matrix as an SVG heatmap with scene-group separators.
pub fn confusion_to_svg(report: &EvalReport) -> String {
    let n = report.confusion_labels.len();
    let max = report
        .confusion
        .iter()
        .flat_map(|row| row.iter().copied())
        .max()
        .unwrap_or(0);
    let width = MARGIN_LEFT + n as f64 * CELL + 20.0;
    let height = MARGIN_TOP + n as f64 * CELL + 20.0;
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\">\n"
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{width:.0}\" height=\"{height:.0}\" fill=\"#ffffff\"/>\n"
    ));
    for (r, row) in report.confusion.iter().enumerate() {
        for (c, &count) in row.iter().enumerate() {
            let x = MARGIN_LEFT + c as f64 * CELL;
            let y = MARGIN_TOP + r as f64 * CELL;
            svg.push_str(&format!(
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{CELL:.1}\" height=\"{CELL:.1}\" \
                 fill=\"{}\"><title>{} / {}: {count}</title></rect>\n",
                cell_color(count, max),
                report.confusion_labels[r],
                report.confusion_labels[c],
            ));
        }
    }
    // separators between scene clusters
    let mut offset = 0usize;
    for group in &report.confusion_groups {
        offset += group.members.len();
        if offset >= n {
            break;
        }
        let pos = MARGIN_LEFT + offset as f64 * CELL;
        let end_x = MARGIN_LEFT + n as f64 * CELL;
        let end_y = MARGIN_TOP + n as f64 * CELL;
        svg.push_str(&format!(
            "<line x1=\"{pos:.1}\" y1=\"{MARGIN_TOP:.1}\" x2=\"{pos:.1}\" y2=\"{end_y:.1}\" \
             stroke=\"#ffffff\" stroke-width=\"2\"/>\n"
        ));
        let pos_y = MARGIN_TOP + offset as f64 * CELL;
        svg.push_str(&format!(
            "<line x1=\"{MARGIN_LEFT:.1}\" y1=\"{pos_y:.1}\" x2=\"{end_x:.1}\" y2=\"{pos_y:.1}\" \
             stroke=\"#ffffff\" stroke-width=\"2\"/>\n"
        ));
    }
    for (i, label) in report.confusion_labels.iter().enumerate() {
        let y = MARGIN_TOP + i as f64 * CELL + CELL * 0.7;
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{y:.1}\" font-size=\"11\" text-anchor=\"end\" \
             font-family=\"sans-serif\">{label}</text>\n",
            MARGIN_LEFT - 6.0
        ));
        let x = MARGIN_LEFT + i as f64 * CELL + CELL * 0.7;
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"start\" \
             font-family=\"sans-serif\" transform=\"rotate(-60 {x:.1} {:.1})\">{label}</text>\n",
            MARGIN_TOP - 6.0,
            MARGIN_TOP - 6.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Per-class precision/recall table as CSV, with a `Total` row.
pub fn report_to_csv(report: &EvalReport) -> String {
    let mut out = String::from("object,precision,recall,tp,fp,fn\n");
    for entry in &report.per_class {
        let m = &entry.metrics;
        out.push_str(&format!(
            "{},{:.3},{:.3},{},{},{}\n",
            entry.label,
            m.precision,
            m.recall,
            m.true_positives,
            m.false_positives,
            m.false_negatives
        ));
    }
    let tp: usize = report.per_class.iter().map(|e| e.metrics.true_positives).sum();
    let fp: usize = report.per_class.iter().map(|e| e.metrics.false_positives).sum();
    let fn_total: usize = report
        .per_class
        .iter()
        .map(|e| e.metrics.false_negatives)
        .sum();
    out.push_str(&format!(
        "Total,{:.3},{:.3},{},{},{}\n",
        report.total_precision, report.total_recall, tp, fp, fn_total
    ));
    out
}

/// PR curve samples as CSV.
pub fn pr_curve_to_csv(report: &EvalReport) -> String {
    let mut out = String::from("threshold,precision,recall\n");
    for point in &report.pr_curve {
        out.push_str(&format!(
            "{:.3},{:.6},{:.6}\n",
            point.threshold, point.precision, point.recall
        ));
    }
    out
}

fn pct(v: f64) -> String {
    format!("{:.1}%", v * 100.0)
}

/// Markdown summary table with percentages at one decimal place, plus the
/// scene clustering of the confusion key.
pub fn report_to_markdown(report: &EvalReport, title: &str) -> String {
    let mut out = format!("# {title}\n\n");
    out.push_str(&format!(
        "IoU threshold: {:.2}\n\n| Object | Pr. | Re. |\n|---|---|---|\n",
        report.iou_threshold
    ));
    for entry in &report.per_class {
        out.push_str(&format!(
            "| {} | {} | {} |\n",
            entry.label,
            pct(entry.metrics.precision),
            pct(entry.metrics.recall)
        ));
    }
    out.push_str(&format!(
        "| **Total** | **{}** | **{}** |\n",
        pct(report.total_precision),
        pct(report.total_recall)
    ));
    out.push_str("\nConfusion key, clustered by scene:\n\n");
    for group in &report.confusion_groups {
        let name = group
            .scene
            .as_ref()
            .map(|s| s.as_str().to_owned())
            .unwrap_or_else(|| {
                if group.members == [BACKGROUND] {
                    BACKGROUND.to_owned()
                } else {
                    "unassigned".to_owned()
                }
            });
        out.push_str(&format!("- {}: {}\n", name, group.members.join(", ")));
    }
    out
}

/// Aligned plain-text table mirroring the markdown summary.
pub fn report_to_text(report: &EvalReport) -> String {
    let width = report
        .per_class
        .iter()
        .map(|e| e.label.as_str().len())
        .chain(std::iter::once("Total".len()))
        .max()
        .unwrap_or(6);
    let mut out = format!("{:<width$}  {:>7}  {:>7}\n", "Object", "Pr.", "Re.");
    for entry in &report.per_class {
        out.push_str(&format!(
            "{:<width$}  {:>7}  {:>7}\n",
            entry.label.as_str(),
            pct(entry.metrics.precision),
            pct(entry.metrics.recall)
        ));
    }
    out.push_str(&format!(
        "{:<width$}  {:>7}  {:>7}\n",
        "Total",
        pct(report.total_precision),
        pct(report.total_recall)
    ));
    out
}

/// Writes report.json, report.csv, confusion.csv, confusion.svg, and
/// pr_curve.csv into `out_dir`.
pub fn write_report_files(report: &EvalReport, out_dir: impl AsRef<Path>) -> Result<(), IoError> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|source| IoError::Write {
        path: out_dir.display().to_string(),
        source,
    })?;
    io::write_json(report, &out_dir.join("report.json"))?;
    io::write_bytes(report_to_csv(report).as_bytes(), &out_dir.join("report.csv"))?;
    io::write_bytes(
        confusion_to_csv(report).as_bytes(),
        &out_dir.join("confusion.csv"),
    )?;
    io::write_bytes(
        confusion_to_svg(report).as_bytes(),
        &out_dir.join("confusion.svg"),
    )?;
    io::write_bytes(
        pr_curve_to_csv(report).as_bytes(),
        &out_dir.join("pr_curve.csv"),
    )?;
    Ok(())
}
