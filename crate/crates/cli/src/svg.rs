//! Static interval charts for ε sweeps.

use std::fmt::Write as _;

/// One bound interval at one grid point; `None` when infeasible.
pub struct Point {
    pub interval: Option<(f64, f64)>,
    pub truth: Option<f64>,
}

pub struct Panel {
    pub title: String,
    pub points: Vec<Point>,
}

const PANEL_H: f64 = 120.0;
const PLOT_H: f64 = 80.0;
const LEFT: f64 = 60.0;
const STEP: f64 = 48.0;
const TOP: f64 = 40.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Small multiples: one panel per query, x = grid position, y = probability.
pub fn render(x_labels: &[String], panels: &[Panel]) -> String {
    let width = LEFT + STEP * (x_labels.len().max(1) as f64) + 40.0;
    let height = TOP + PANEL_H * panels.len() as f64 + 90.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{LEFT}" y="18" font-size="12">bounds against the ε grid (red x: infeasible, blue tick: true value)</text>"#
    );
    for (p, panel) in panels.iter().enumerate() {
        let y0 = TOP + PANEL_H * p as f64;
        let ymap = |v: f64| y0 + 20.0 + PLOT_H * (1.0 - v.clamp(0.0, 1.0));
        let _ = writeln!(s, r#"<text x="{LEFT}" y="{}">{}</text>"#, y0 + 12.0, esc(&panel.title));
        let _ = writeln!(
            s,
            r##"<rect x="{LEFT}" y="{}" width="{}" height="{PLOT_H}" fill="none" stroke="#999"/>"##,
            y0 + 20.0,
            STEP * x_labels.len().max(1) as f64
        );
        for v in [0.0, 0.5, 1.0] {
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v}</text>"#, LEFT - 4.0, ymap(v) + 3.0);
        }
        for (k, pt) in panel.points.iter().enumerate() {
            let x = LEFT + STEP * (k as f64 + 0.5);
            match pt.interval {
                Some((lo, hi)) => {
                    let _ = writeln!(
                        s,
                        r##"<line x1="{x}" y1="{:.2}" x2="{x}" y2="{:.2}" stroke="#222" stroke-width="3"/>"##,
                        ymap(hi),
                        ymap(lo)
                    );
                }
                None => {
                    let yc = ymap(0.5);
                    let _ = writeln!(
                        s,
                        r##"<path d="M{} {} L{} {} M{} {} L{} {}" stroke="#c00" stroke-width="2"/>"##,
                        x - 5.0,
                        yc - 5.0,
                        x + 5.0,
                        yc + 5.0,
                        x - 5.0,
                        yc + 5.0,
                        x + 5.0,
                        yc - 5.0
                    );
                }
            }
            if let Some(t) = pt.truth {
                let _ = writeln!(
                    s,
                    r##"<line x1="{}" y1="{:.2}" x2="{}" y2="{:.2}" stroke="#06c" stroke-width="2"/>"##,
                    x - 8.0,
                    ymap(t),
                    x + 8.0,
                    ymap(t)
                );
            }
        }
    }
    let base = TOP + PANEL_H * panels.len() as f64 + 10.0;
    for (k, label) in x_labels.iter().enumerate() {
        let x = LEFT + STEP * (k as f64 + 0.5);
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{base}" transform="rotate(45 {x} {base})">{}</text>"#,
            esc(label)
        );
    }
    s.push_str("</svg>\n");
    s
}
