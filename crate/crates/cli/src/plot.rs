//! Plain SVG rendering of a series with truth and verdict bands.

use std::fmt::Write;

use tsagent_core::protocol::AnomalyVerdict;

const MARGIN: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotSize {
    pub width: u32,
    pub height: u32,
}

impl Default for PlotSize {
    fn default() -> Self {
        Self {
            width: 960,
            height: 320,
        }
    }
}

/// Maximal runs of ones as inclusive `[start, end]`.
fn runs(labels: &[u8]) -> Vec<[usize; 2]> {
    let mut out = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &l) in labels.iter().enumerate() {
        match (l != 0, open) {
            (true, None) => open = Some(i),
            (false, Some(s)) => {
                out.push([s, i - 1]);
                open = None;
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        out.push([s, labels.len() - 1]);
    }
    out
}

/// Renders the series polyline over shaded truth runs (class `truth`) and
/// verdict intervals (class `verdict`).
pub fn render_svg(
    values: &[f64],
    truth: Option<&[u8]>,
    verdicts: &[AnomalyVerdict],
    size: PlotSize,
) -> String {
    let (w, h) = (f64::from(size.width), f64::from(size.height));
    let n = values.len();
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let inner_w = (w - 2.0 * MARGIN).max(1.0);
    let inner_h = (h - 2.0 * MARGIN).max(1.0);
    let step = inner_w / n.saturating_sub(1).max(1) as f64;
    let x = |i: f64| MARGIN + i * step;
    let y = |v: f64| MARGIN + inner_h * (1.0 - (v - lo) / span);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        size.width, size.height, size.width, size.height
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let mut band = |class: &str, fill: &str, [s, e]: [usize; 2]| {
        if n == 0 || s >= n {
            return;
        }
        let e = e.min(n - 1);
        let x0 = x(s as f64 - 0.5).max(MARGIN);
        let x1 = x(e as f64 + 0.5).min(w - MARGIN);
        let _ = writeln!(
            svg,
            r#"<rect class="{class}" x="{x0:.2}" y="{MARGIN:.2}" width="{:.2}" height="{inner_h:.2}" fill="{fill}" fill-opacity="0.35"/>"#,
            (x1 - x0).max(1.0)
        );
    };
    if let Some(t) = truth {
        for r in runs(t) {
            band("truth", "#e06666", r);
        }
    }
    for v in verdicts {
        band("verdict", "#3d85c6", v.interval);
    }
    if n > 0 {
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", x(i as f64), y(v)))
            .collect();
        let _ = writeln!(
            svg,
            r##"<polyline class="series" fill="none" stroke="#222222" stroke-width="1" points="{}"/>"##,
            points.join(" ")
        );
    }
    svg.push_str("</svg>\n");
    svg
}
