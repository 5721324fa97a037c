//! Minimal SVG charts: polylines and dot clouds on linear axes.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 56.0;
const TICKS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    Line,
    Dots,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub color: &'static str,
    pub mark: Mark,
    /// Each inner vector is drawn as a separate polyline (or dot group).
    pub parts: Vec<Vec<(f64, f64)>>,
}

impl Series {
    pub fn line(label: &str, color: &'static str, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            color,
            mark: Mark::Line,
            parts: vec![points],
        }
    }

    pub fn dots(label: &str, color: &'static str, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            color,
            mark: Mark::Dots,
            parts: vec![points],
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Same scale on both axes (for point clouds in the plane).
    pub equal_aspect: bool,
    pub series: Vec<Series>,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * (1.0 + lo.abs()) {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-3) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

impl Chart {
    fn frame(&self) -> Frame {
        let pts = self
            .series
            .iter()
            .flat_map(|s| s.parts.iter().flatten())
            .filter(|(x, y)| x.is_finite() && y.is_finite());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        let (mut x0, mut x1) = padded(x0, x1);
        let (mut y0, mut y1) = padded(y0, y1);
        if self.equal_aspect {
            let sx = (x1 - x0) / (WIDTH - 2.0 * MARGIN);
            let sy = (y1 - y0) / (HEIGHT - 2.0 * MARGIN);
            let s = sx.max(sy);
            let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
            x0 = cx - s * (WIDTH - 2.0 * MARGIN) / 2.0;
            x1 = cx + s * (WIDTH - 2.0 * MARGIN) / 2.0;
            y0 = cy - s * (HEIGHT - 2.0 * MARGIN) / 2.0;
            y1 = cy + s * (HEIGHT - 2.0 * MARGIN) / 2.0;
        }
        Frame { x0, x1, y0, y1 }
    }

    pub fn render(&self) -> String {
        let f = self.frame();
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        let _ = writeln!(
            s,
            r#"<rect x="{left}" y="{top}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
            right - left,
            bottom - top
        );
        for k in 0..TICKS {
            let t = k as f64 / (TICKS - 1) as f64;
            let xv = f.x0 + t * (f.x1 - f.x0);
            let yv = f.y0 + t * (f.y1 - f.y0);
            let (px, py) = (f.px(xv), f.py(yv));
            let _ = writeln!(
                s,
                r#"<line x1="{px:.2}" y1="{bottom}" x2="{px:.2}" y2="{:.1}" stroke="black"/><text x="{px:.2}" y="{:.1}" text-anchor="middle">{}</text>"#,
                bottom + 4.0,
                bottom + 16.0,
                tick_label(xv)
            );
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{py:.2}" x2="{left}" y2="{py:.2}" stroke="black"/><text x="{:.1}" y="{:.2}" text-anchor="end">{}</text>"#,
                left - 4.0,
                left - 6.0,
                py + 4.0,
                tick_label(yv)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(&self.y_label)
        );
        for series in &self.series {
            let _ = writeln!(s, r#"<g><title>{}</title>"#, escape(&series.label));
            for part in &series.parts {
                match series.mark {
                    Mark::Line => {
                        // Non-finite values break the line.
                        for run in part.split(|(x, y)| !(x.is_finite() && y.is_finite())) {
                            if run.len() < 2 {
                                continue;
                            }
                            let pts: Vec<String> =
                                run.iter().map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y))).collect();
                            let _ = writeln!(
                                s,
                                r#"<polyline fill="none" stroke="{}" stroke-width="1.2" points="{}"/>"#,
                                series.color,
                                pts.join(" ")
                            );
                        }
                    }
                    Mark::Dots => {
                        for &(x, y) in part.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
                            let _ = writeln!(
                                s,
                                r#"<circle cx="{:.2}" cy="{:.2}" r="1.6" fill="{}"/>"#,
                                f.px(x),
                                f.py(y),
                                series.color
                            );
                        }
                    }
                }
            }
            let _ = writeln!(s, "</g>");
        }
        for (k, series) in self.series.iter().enumerate() {
            let y = top + 14.0 + 14.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                right - 150.0,
                y - 9.0,
                series.color,
                right - 136.0,
                y,
                escape(&series.label)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}
