//! Static SVG line and scatter charts.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// One line: `(x, y, sigma)` points drawn with a ±σ band.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterPoint {
    pub x: f64,
    pub y: f64,
    pub label: bool,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn fmt(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let range = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let pad = 0.05 * (hi - lo);
                (lo - pad, hi + pad)
            }
        };
        let (x0, x1) = range(&mut xs.clone());
        let (y0, y1) = range(&mut ys.clone());
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn open(out: &mut String, title: &str, x_label: &str, y_label: &str, f: &Frame) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
    let (bx, by) = (HEIGHT - BOTTOM, WIDTH - RIGHT);
    let _ = writeln!(out, r#"<line x1="{LEFT}" y1="{bx}" x2="{by}" y2="{bx}" stroke="black"/>"#);
    let _ = writeln!(out, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{bx}" stroke="black"/>"#);
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (xv, yv) = (f.x0 + t * (f.x1 - f.x0), f.y0 + t * (f.y1 - f.y0));
        let (px, py) = (f.px(xv), f.py(yv));
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, fmt(px), fmt(bx + 16.0), tick(xv));
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, fmt(LEFT - 6.0), fmt(py + 4.0), tick(yv));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, fmt((LEFT + by) / 2.0), HEIGHT - 10.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        fmt((TOP + bx) / 2.0),
        escape(y_label)
    );
}

fn legend(out: &mut String, names: &[(String, &str)]) {
    for (i, (name, color)) in names.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let x = WIDTH - RIGHT + 12.0;
        let _ = writeln!(out, r#"<rect x="{}" y="{}" width="12" height="12" fill="{color}"/>"#, fmt(x), fmt(y - 10.0));
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, fmt(x + 18.0), fmt(y), escape(name));
    }
}

/// Metric-versus-layer chart. `None` when there is nothing to draw.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Option<String> {
    if series.iter().all(|s| s.points.is_empty()) {
        log::warn!("chart `{title}` has no data; skipped");
        return None;
    }
    let pts = || series.iter().flat_map(|s| s.points.iter());
    let f = Frame::new(
        pts().map(|p| p.0),
        pts().flat_map(|p| [p.1 - p.2.max(0.0), p.1 + p.2.max(0.0)]),
    );
    let mut out = String::new();
    open(&mut out, title, x_label, y_label, &f);
    let mut names = Vec::new();
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        names.push((s.name.clone(), color));
        let finite: Vec<&(f64, f64, f64)> = s.points.iter().filter(|p| p.1.is_finite()).collect();
        if finite.is_empty() {
            continue;
        }
        let upper: Vec<String> = finite.iter().map(|p| format!("{},{}", fmt(f.px(p.0)), fmt(f.py(p.1 + p.2.max(0.0))))).collect();
        let lower: Vec<String> = finite.iter().rev().map(|p| format!("{},{}", fmt(f.px(p.0)), fmt(f.py(p.1 - p.2.max(0.0))))).collect();
        let _ = writeln!(
            out,
            r#"<polygon points="{} {}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = finite.iter().map(|p| format!("{},{}", fmt(f.px(p.0)), fmt(f.py(p.1)))).collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" "));
        for p in &finite {
            let _ = writeln!(out, r#"<circle cx="{}" cy="{}" r="3" fill="{color}"/>"#, fmt(f.px(p.0)), fmt(f.py(p.1)));
        }
    }
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    Some(out)
}

/// PC1/PC2 scatter coloured by label.
pub fn scatter_chart(title: &str, points: &[ScatterPoint]) -> Option<String> {
    if points.is_empty() {
        log::warn!("chart `{title}` has no data; skipped");
        return None;
    }
    let f = Frame::new(points.iter().map(|p| p.x), points.iter().map(|p| p.y));
    let mut out = String::new();
    open(&mut out, title, "PC1", "PC2", &f);
    let (t_color, f_color) = (PALETTE[0], PALETTE[1]);
    for p in points.iter().filter(|p| p.x.is_finite() && p.y.is_finite()) {
        let color = if p.label { t_color } else { f_color };
        let _ = writeln!(
            out,
            r#"<circle cx="{}" cy="{}" r="2.5" fill="{color}" fill-opacity="0.7"/>"#,
            fmt(f.px(p.x)),
            fmt(f.py(p.y))
        );
    }
    legend(&mut out, &[("True".into(), t_color), ("False".into(), f_color)]);
    out.push_str("</svg>\n");
    Some(out)
}
