//! Minimal SVG line chart of mean error against SNR.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{MtdError, Result};
use crate::eval::{Method, SummaryRow};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_Y: f64 = 50.0;

fn color(method: Method) -> &'static str {
    match method {
        Method::NoPrior => "#c0392b",
        Method::WithPrior => "#2471a3",
    }
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".into()
    } else {
        s.to_string()
    }
}

/// Renders one polyline per method, with error bars of one standard deviation.
pub fn error_vs_snr_svg(summary: &[SummaryRow]) -> String {
    let finite: Vec<&SummaryRow> = summary.iter().filter(|s| s.mean.is_finite()).collect();
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (0.0f64, f64::NEG_INFINITY);
    for s in &finite {
        x0 = x0.min(s.snr);
        x1 = x1.max(s.snr);
        y0 = y0.min(s.mean - s.std);
        y1 = y1.max(s.mean + s.std);
    }
    if finite.is_empty() {
        (x0, x1, y1) = (0.0, 1.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    y1 *= 1.05;
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - 2.0 * MARGIN_Y;
    let px = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w;
    let py = |y: f64| HEIGHT - MARGIN_Y - (y - y0) / (y1 - y0) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (left, right, top, bottom) = (MARGIN_LEFT, MARGIN_LEFT + plot_w, MARGIN_Y, HEIGHT - MARGIN_Y);
    let _ = writeln!(
        svg,
        r#"<path d="M{left} {top} L{left} {bottom} L{right} {bottom}" stroke="black" fill="none"/>"#
    );
    for i in 0..=4 {
        let xv = x0 + (x1 - x0) * i as f64 / 4.0;
        let yv = y0 + (y1 - y0) * i as f64 / 4.0;
        let (x, y) = (px(xv), py(yv));
        let _ = writeln!(svg, r#"<line x1="{x:.1}" y1="{bottom}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#, bottom + 5.0);
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            bottom + 20.0,
            fmt_tick(xv)
        );
        let _ = writeln!(svg, r#"<line x1="{:.1}" y1="{y:.1}" x2="{left}" y2="{y:.1}" stroke="black"/>"#, left - 5.0);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            left - 8.0,
            y + 4.0,
            fmt_tick(yv)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">SNR</text>"#,
        left + plot_w / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">mean relative error</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );

    for (row, method) in [Method::NoPrior, Method::WithPrior].into_iter().enumerate() {
        let mut pts: Vec<&SummaryRow> = finite.iter().copied().filter(|s| s.method == method).collect();
        if pts.is_empty() {
            continue;
        }
        pts.sort_by(|a, b| a.snr.total_cmp(&b.snr));
        let c = color(method);
        let path: Vec<String> = pts.iter().map(|s| format!("{:.1},{:.1}", px(s.snr), py(s.mean))).collect();
        let _ = writeln!(svg, r#"<polyline points="{}" stroke="{c}" stroke-width="2" fill="none"/>"#, path.join(" "));
        for s in &pts {
            let (x, y) = (px(s.snr), py(s.mean));
            let _ = writeln!(
                svg,
                r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="{c}"/>"#,
                py(s.mean - s.std),
                py(s.mean + s.std)
            );
            let _ = writeln!(svg, r#"<circle cx="{x:.1}" cy="{y:.1}" r="3.5" fill="{c}"/>"#);
        }
        let ly = top + 10.0 + 20.0 * row as f64;
        let lx = right + 15.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{:.1}" y2="{ly}" stroke="{c}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, lx + 26.0, ly + 4.0, method.name());
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn write_error_plot(summary: &[SummaryRow], path: &Path) -> Result<()> {
    std::fs::write(path, error_vs_snr_svg(summary)).map_err(|e| MtdError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary() -> Vec<SummaryRow> {
        let mut out = Vec::new();
        for (snr, a, b) in [(1.0, 0.8, 0.5), (5.0, 0.4, 0.3), (10.0, 0.2, 0.2)] {
            out.push(SummaryRow { snr, method: Method::NoPrior, mean: a, std: 0.05, n: 10 });
            out.push(SummaryRow { snr, method: Method::WithPrior, mean: b, std: 0.05, n: 10 });
        }
        out
    }

    #[test]
    fn svg_has_axes_labels_and_both_series() {
        let svg = error_vs_snr_svg(&summary());
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains(">SNR<"));
        assert!(svg.contains("mean relative error"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("no-prior") && svg.contains("with-prior"));
    }

    #[test]
    fn svg_is_deterministic_and_handles_empty() {
        assert_eq!(error_vs_snr_svg(&summary()), error_vs_snr_svg(&summary()));
        let empty = error_vs_snr_svg(&[]);
        assert!(empty.ends_with("</svg>\n"));
    }
}
