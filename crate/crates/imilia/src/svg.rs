//! Deterministic SVG emitters for violin panels and precision-recall curves.
//!
//! Output is a pure function of the input values: fixed canvas, fixed float
//! formatting, no timestamps, so reruns are byte-identical.

use imilia_core::summary::{violin_summary, ViolinSummary};

const PANEL_HEIGHT: f64 = 360.0;
const GROUP_WIDTH: f64 = 72.0;
const MARGIN: f64 = 46.0;
const BODY_HALF_WIDTH: f64 = 26.0;

/// One violin within a panel.
#[derive(Clone, Debug)]
pub struct ViolinGroup {
    pub label: String,
    pub values: Vec<f64>,
}

/// Value-axis extent of a group's rendered body: the KDE support when a
/// density exists, otherwise the raw min/max (box-glyph fallback).
pub fn violin_body_extent(group: &ViolinGroup) -> Option<(f64, f64)> {
    let summary = violin_summary(&group.values)?;
    match &summary.kde {
        Some(kde) => Some((kde.xs[0], *kde.xs.last().unwrap())),
        None => Some((summary.min, summary.max)),
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.3}")
}

/// Render one figure with a horizontal panel per cohort; within each panel a
/// violin per group. Empty groups are omitted and listed in a legend note.
pub fn render_violin_svg(title: &str, panels: &[(String, Vec<ViolinGroup>)]) -> String {
    let max_groups = panels.iter().map(|(_, g)| g.len()).max().unwrap_or(0);
    let panel_w = MARGIN * 2.0 + max_groups as f64 * GROUP_WIDTH;
    let width = panel_w * panels.len().max(1) as f64;
    let height = PANEL_HEIGHT + 90.0;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" \
         viewBox=\"0 0 {} {}\">\n",
        fmt(width),
        fmt(height),
        fmt(width),
        fmt(height)
    ));
    svg.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"white\"/>\n",
        fmt(width),
        fmt(height)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"15\" \
         text-anchor=\"middle\">{}</text>\n",
        fmt(width / 2.0),
        escape(title)
    ));

    let mut omitted: Vec<String> = Vec::new();
    for (panel_index, (cohort, groups)) in panels.iter().enumerate() {
        let x0 = panel_index as f64 * panel_w;
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"40\" font-family=\"sans-serif\" font-size=\"13\" \
             text-anchor=\"middle\">{}</text>\n",
            fmt(x0 + panel_w / 2.0),
            escape(cohort)
        ));

        // Shared value scale within the panel.
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for group in groups {
            if let Some((a, b)) = violin_body_extent(group) {
                lo = lo.min(a);
                hi = hi.max(b);
            }
        }
        if !lo.is_finite() || !hi.is_finite() {
            continue;
        }
        if hi == lo {
            hi = lo + 1.0;
        }
        let y_of = |v: f64| 50.0 + PANEL_HEIGHT - (v - lo) / (hi - lo) * PANEL_HEIGHT;

        for (gi, group) in groups.iter().enumerate() {
            let center = x0 + MARGIN + (gi as f64 + 0.5) * GROUP_WIDTH;
            let summary = match violin_summary(&group.values) {
                Some(s) => s,
                None => {
                    omitted.push(format!("{cohort}/{}", group.label));
                    continue;
                }
            };
            svg.push_str(&render_body(center, &summary, &y_of));
            svg.push_str(&format!(
                "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\" \
                 text-anchor=\"middle\">{}</text>\n",
                fmt(center),
                fmt(50.0 + PANEL_HEIGHT + 16.0),
                escape(&group.label)
            ));
        }
    }

    if !omitted.is_empty() {
        svg.push_str(&format!(
            "<text x=\"6\" y=\"{}\" font-family=\"sans-serif\" font-size=\"10\">omitted \
             (no data): {}</text>\n",
            fmt(PANEL_HEIGHT + 84.0),
            escape(&omitted.join(", "))
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn render_body(center: f64, summary: &ViolinSummary, y_of: &impl Fn(f64) -> f64) -> String {
    let mut out = String::new();
    match &summary.kde {
        Some(kde) => {
            let peak = kde.ys.iter().fold(0.0f64, |a, &b| a.max(b)).max(1e-300);
            let mut points: Vec<(f64, f64)> = Vec::with_capacity(kde.xs.len() * 2);
            // Right side top-to-bottom, then left side bottom-to-top.
            for (x, y) in kde.xs.iter().zip(&kde.ys) {
                points.push((center + y / peak * BODY_HALF_WIDTH, y_of(*x)));
            }
            for (x, y) in kde.xs.iter().zip(&kde.ys).rev() {
                points.push((center - y / peak * BODY_HALF_WIDTH, y_of(*x)));
            }
            let text: Vec<String> =
                points.iter().map(|(x, y)| format!("{},{}", fmt(*x), fmt(*y))).collect();
            out.push_str(&format!(
                "<polygon points=\"{}\" fill=\"#7aa6c2\" fill-opacity=\"0.6\" \
                 stroke=\"#2d5a7b\" stroke-width=\"0.8\"/>\n",
                text.join(" ")
            ));
        }
        None => {
            // Box glyph fallback for degenerate groups.
            let top = y_of(summary.q3);
            let bottom = y_of(summary.q1);
            out.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#c7d8e4\" \
                 stroke=\"#2d5a7b\"/>\n",
                fmt(center - BODY_HALF_WIDTH / 2.0),
                fmt(top),
                fmt(BODY_HALF_WIDTH),
                fmt((bottom - top).max(1.0)),
            ));
        }
    }
    // Quartile whisker and median tick.
    out.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#1b3a4f\" stroke-width=\"2\"/>\n",
        fmt(center),
        fmt(y_of(summary.q1)),
        fmt(center),
        fmt(y_of(summary.q3)),
    ));
    out.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#10222e\" stroke-width=\"2\"/>\n",
        fmt(center - 8.0),
        fmt(y_of(summary.median)),
        fmt(center + 8.0),
        fmt(y_of(summary.median)),
    ));
    out
}

/// Render a precision-recall curve; `points` are `(recall, precision)` at
/// descending thresholds, as produced by the metrics module.
pub fn render_pr_curve_svg(points: &[(f64, f64)], ap: f64) -> String {
    let (w, h) = (480.0, 420.0);
    let (x0, y0, plot_w, plot_h) = (60.0, 30.0, 380.0, 330.0);
    let x_of = |recall: f64| x0 + recall * plot_w;
    let y_of = |precision: f64| y0 + (1.0 - precision) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\">\n"
    ));
    svg.push_str(&format!("<rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"));
    svg.push_str(&format!(
        "<rect x=\"{x0}\" y=\"{y0}\" width=\"{plot_w}\" height=\"{plot_h}\" fill=\"none\" \
         stroke=\"#444444\"/>\n"
    ));
    // Polyline from (recall 0, precision of first point) through all points.
    let mut path: Vec<String> = Vec::with_capacity(points.len() + 1);
    if let Some(&(_, first_precision)) = points.first() {
        path.push(format!("{},{}", fmt(x_of(0.0)), fmt(y_of(first_precision))));
    }
    for &(recall, precision) in points {
        path.push(format!("{},{}", fmt(x_of(recall)), fmt(y_of(precision))));
    }
    svg.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#b03030\" stroke-width=\"1.6\"/>\n",
        path.join(" ")
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"13\">AP = {}</text>\n",
        fmt(x0 + 10.0),
        fmt(y0 + 20.0),
        fmt(ap)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\">recall</text>\n",
        fmt(x0 + plot_w / 2.0),
        fmt(y0 + plot_h + 30.0)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
         transform=\"rotate(-90 16 {})\">precision</text>\n",
        fmt(y0 + plot_h / 2.0),
        fmt(y0 + plot_h / 2.0)
    ));
    svg.push_str("</svg>\n");
    svg
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
