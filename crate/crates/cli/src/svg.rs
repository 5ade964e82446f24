//! Minimal SVG output: line/marker plots and density heatmaps. The data files
//! are authoritative; these are for a quick look.

use std::fmt::Write;

use fhn_kinetic::pde::Density;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: [f64; 4] = [60.0, 20.0, 40.0, 50.0]; // left, right, top, bottom
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Markers,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

impl Series {
    pub fn line(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            points,
            style: Style::Line,
        }
    }

    pub fn markers(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            points,
            style: Style::Markers,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = if log { v.log10() } else { v };
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 * (1.0 + lo.abs()) {
            (lo, hi) = (lo - 0.5, hi + 0.5);
        }
        let pad = 0.04 * (hi - lo);
        Self {
            lo: lo - pad,
            hi: hi + pad,
            log,
        }
    }

    /// Position in `[0, 1]`, or `None` for values a log axis cannot show.
    fn unit(&self, v: f64) -> Option<f64> {
        let v = if self.log { v.log10() } else { v };
        v.is_finite().then(|| (v - self.lo) / (self.hi - self.lo))
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
            let step = ((b - a) / 6).max(1);
            return (a..=b)
                .step_by(step as usize)
                .map(|e| (e as f64, format!("1e{e}")))
                .collect();
        }
        // aim for five to eight ticks
        let raw = (self.hi - self.lo) / 7.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
        let mut out = Vec::new();
        let first = (self.lo / step).ceil();
        let mut k = 0.0;
        while (first + k) * step <= self.hi + 1e-9 * step {
            let t = (first + k) * step;
            let label = if t.abs() < 1e-12 * step { "0".to_string() } else { format!("{}", round_sig(t, 4)) };
            out.push((t, label));
            k += 1.0;
        }
        out
    }
}

fn round_sig(x: f64, digits: i32) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let scale = 10f64.powi(digits - 1 - x.abs().log10().floor() as i32);
    (x * scale).round() / scale
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

impl Plot {
    pub fn render(&self) -> String {
        let [ml, mr, mt, mb] = MARGIN;
        let (pw, ph) = (WIDTH - ml - mr, HEIGHT - mt - mb);
        let all = || self.series.iter().flat_map(|s| s.points.iter());
        let xa = Axis::fit(all().map(|p| p.0), self.log_x);
        let ya = Axis::fit(all().map(|p| p.1), self.log_y);
        let px = |u: f64| ml + u * pw;
        let py = |u: f64| mt + (1.0 - u) * ph;

        let mut out = String::new();
        header(&mut out, &self.title);
        let _ = writeln!(out, r#"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        for (t, label) in xa.ticks() {
            let x = px((t - xa.lo) / (xa.hi - xa.lo));
            let _ = writeln!(
                out,
                r##"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="#ccc"/><text x="{x:.2}" y="{}" text-anchor="middle">{label}</text>"##,
                mt,
                mt + ph,
                mt + ph + 16.0
            );
        }
        for (t, label) in ya.ticks() {
            let y = py((t - ya.lo) / (ya.hi - ya.lo));
            let _ = writeln!(
                out,
                r##"<line x1="{ml}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ccc"/><text x="{}" y="{:.2}" text-anchor="end">{label}</text>"##,
                ml + pw,
                ml - 6.0,
                y + 4.0
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            ml + pw / 2.0,
            HEIGHT - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            mt + ph / 2.0,
            mt + ph / 2.0,
            escape(&self.y_label)
        );
        for (k, s) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let pts: Vec<(f64, f64)> = s
                .points
                .iter()
                .filter_map(|&(x, y)| Some((px(xa.unit(x)?), py(ya.unit(y)?))))
                .collect();
            match s.style {
                Style::Line => {
                    let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                    let _ = writeln!(
                        out,
                        r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
                        path.join(" ")
                    );
                }
                Style::Markers => {
                    for (x, y) in pts {
                        let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
                    }
                }
            }
            let ly = mt + 14.0 + 16.0 * k as f64;
            let _ = writeln!(
                out,
                r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
                ml + pw - 150.0,
                ly - 9.0,
                ml + pw - 135.0,
                ly,
                escape(&s.label)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

/// Grayscale-to-blue heatmap of a density, `x` horizontal and `v` vertical.
/// Cells are merged so the image has at most 128 columns and rows.
pub fn heatmap(f: &Density, title: &str) -> String {
    let g = f.grid();
    let (bx, bv) = (g.nx.div_ceil(128), g.nv.div_ceil(128));
    let (cx, cv) = (g.nx.div_ceil(bx), g.nv.div_ceil(bv));
    let mut cells = vec![0.0; cx * cv];
    for ix in 0..g.nx {
        for iv in 0..g.nv {
            cells[(ix / bx) * cv + iv / bv] += f.at(ix, iv);
        }
    }
    let max = cells.iter().copied().fold(0.0, f64::max);
    let [ml, mr, mt, mb] = MARGIN;
    let (pw, ph) = (WIDTH - ml - mr, HEIGHT - mt - mb);
    let (w, h) = (pw / cx as f64, ph / cv as f64);
    let mut out = String::new();
    header(&mut out, title);
    for i in 0..cx {
        for k in 0..cv {
            let s = if max > 0.0 { cells[i * cv + k] / max } else { 0.0 };
            if s < 1e-3 {
                continue;
            }
            let c = |lo: f64, hi: f64| (lo + (hi - lo) * s).round() as u8;
            let _ = writeln!(
                out,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#{:02x}{:02x}{:02x}"/>"##,
                ml + i as f64 * w,
                mt + ph - (k + 1) as f64 * h,
                w + 0.05,
                h + 0.05,
                c(255.0, 8.0),
                c(255.0, 48.0),
                c(255.0, 107.0)
            );
        }
    }
    let _ = writeln!(out, r#"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{ml}" y="{}">x in [{}, {}]</text><text x="{}" y="{}" text-anchor="end">v in [{}, {}]</text>"#,
        HEIGHT - 14.0,
        g.x_min,
        g.x_max,
        ml + pw,
        HEIGHT - 14.0,
        g.v_min,
        g.v_max
    );
    out.push_str("</svg>\n");
    out
}

/// Stacks rendered plots vertically into one document.
pub fn stack(plots: &[String]) -> String {
    let total = HEIGHT * plots.len().max(1) as f64;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{total}\" viewBox=\"0 0 {WIDTH} {total}\">\n"
    );
    for (k, p) in plots.iter().enumerate() {
        // nested svg elements position themselves with x/y
        let inner = p.replacen("<svg ", &format!("<svg y=\"{}\" ", k as f64 * HEIGHT), 1);
        out.push_str(&inner);
    }
    out.push_str("</svg>\n");
    out
}
