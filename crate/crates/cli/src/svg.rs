//! Minimal deterministic SVG line plots.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Markers,
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>, style: Style) -> Self {
        Self {
            name: name.into(),
            points: points.into_iter().filter(|(x, y)| x.is_finite() && y.is_finite()).collect(),
            style,
        }
    }
}

pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
    /// Vertical marker lines at these abscissae.
    pub markers: Vec<f64>,
}

impl Plot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_y: false,
            series: Vec::new(),
            markers: Vec::new(),
        }
    }

    pub fn with(mut self, s: Series) -> Self {
        self.series.push(s);
        self
    }

    fn ty(&self, y: f64) -> Option<f64> {
        if self.log_y {
            (y > 0.0).then(|| y.log10())
        } else {
            Some(y)
        }
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for s in &self.series {
            for &(x, y) in &s.points {
                if let Some(y) = self.ty(y) {
                    b = (b.0.min(x), b.1.max(x), b.2.min(y), b.3.max(y));
                }
            }
        }
        if !b.0.is_finite() {
            return (0.0, 1.0, 0.0, 1.0);
        }
        let pad = |lo: f64, hi: f64| {
            if hi > lo {
                let d = 0.05 * (hi - lo);
                (lo - d, hi + d)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        };
        let (x0, x1) = pad(b.0, b.1);
        let (y0, y1) = pad(b.2, b.3);
        (x0, x1, y0, y1)
    }

    pub fn render(&self) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

        let mut o = String::new();
        let _ = writeln!(
            o,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(o, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            o,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(o, r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#, W / 2.0, escape(&self.title));
        let _ = writeln!(
            o,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            H - 10.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            o,
            r#"<text x="15" y="{0}" text-anchor="middle" transform="rotate(-90 15 {0})">{1}</text>"#,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let xv = x0 + f * (x1 - x0);
            let yv = y0 + f * (y1 - y0);
            let ylab = if self.log_y { 10f64.powf(yv) } else { yv };
            let _ = writeln!(
                o,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                sx(xv),
                TOP + ph + 16.0,
                tick(xv)
            );
            let _ = writeln!(
                o,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                LEFT - 4.0,
                sy(yv) + 4.0,
                tick(ylab)
            );
        }
        for &m in &self.markers {
            if m.is_finite() && m >= x0 && m <= x1 {
                let _ = writeln!(
                    o,
                    r#"<path d="M{0:.2},{1:.2} L{0:.2},{2:.2}" stroke="gray" stroke-dasharray="4,3"/>"#,
                    sx(m),
                    TOP,
                    TOP + ph
                );
            }
        }
        for (i, s) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let pts: Vec<(f64, f64)> = s
                .points
                .iter()
                .filter_map(|&(x, y)| self.ty(y).map(|y| (sx(x), sy(y))))
                .collect();
            match s.style {
                Style::Line => {
                    if pts.len() > 1 {
                        let mut d = String::new();
                        for (k, (x, y)) in pts.iter().enumerate() {
                            let _ = write!(d, "{}{x:.2},{y:.2}", if k == 0 { "M" } else { " L" });
                        }
                        let _ = writeln!(o, r#"<path d="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#);
                    }
                }
                Style::Markers => {
                    for (x, y) in &pts {
                        let _ = writeln!(o, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{color}"/>"#);
                    }
                }
            }
            let ly = TOP + 14.0 + 16.0 * i as f64;
            let _ = writeln!(
                o,
                r#"<text x="{:.2}" y="{ly:.2}" fill="{color}" text-anchor="end">{}</text>"#,
                W - RIGHT - 6.0,
                escape(&s.name)
            );
        }
        o.push_str("</svg>\n");
        o
    }
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e4).contains(&a) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_is_deterministic_and_skips_non_finite() {
        let p = Plot::new("t", "x", "y")
            .with(Series::new("a", vec![(0.0, 1.0), (1.0, f64::NAN), (2.0, 3.0)], Style::Line))
            .with(Series::new("b", vec![(0.5, 2.0)], Style::Markers));
        let a = p.render();
        assert_eq!(a, p.render());
        assert!(a.contains("<path d=\"M"));
        assert!(a.contains("<circle"));
        assert!(!a.contains("NaN"));
    }

    #[test]
    fn log_axis_drops_non_positive() {
        let mut p = Plot::new("t", "x", "y").with(Series::new("a", vec![(0.0, 0.0), (1.0, 10.0), (2.0, 100.0)], Style::Line));
        p.log_y = true;
        let s = p.render();
        assert_eq!(s.matches(" L").count(), 1);
    }
}
