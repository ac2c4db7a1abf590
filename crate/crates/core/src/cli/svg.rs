//! Minimal SVG output: coloured scatter plots, line plots, and outlines.

use std::fmt::Write;

const SIZE: f64 = 480.0;
const PAD: f64 = 40.0;

struct Frame {
    x0: f64,
    y0: f64,
    scale_x: f64,
    scale_y: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = (f64, f64)>, equal: bool) -> Self {
        let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in points.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            lo_x = lo_x.min(x);
            hi_x = hi_x.max(x);
            lo_y = lo_y.min(y);
            hi_y = hi_y.max(y);
        }
        if !lo_x.is_finite() {
            (lo_x, hi_x, lo_y, hi_y) = (0.0, 1.0, 0.0, 1.0);
        }
        let span_x = (hi_x - lo_x).max(1e-12);
        let span_y = (hi_y - lo_y).max(1e-12);
        let inner = SIZE - 2.0 * PAD;
        let (mut scale_x, mut scale_y) = (inner / span_x, inner / span_y);
        if equal {
            scale_x = scale_x.min(scale_y);
            scale_y = scale_x;
        }
        Frame {
            x0: lo_x,
            y0: lo_y,
            scale_x,
            scale_y,
        }
    }

    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        (PAD + (x - self.x0) * self.scale_x, SIZE - PAD - (y - self.y0) * self.scale_y)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>
"#,
        SIZE / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Piecewise-linear blue → teal → yellow ramp on `t ∈ [0, 1]`.
fn colour(t: f64) -> String {
    const STOPS: [[f64; 3]; 4] = [[68.0, 1.0, 84.0], [49.0, 104.0, 142.0], [53.0, 183.0, 121.0], [253.0, 231.0, 37.0]];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let s = t * (STOPS.len() - 1) as f64;
    let i = (s.floor() as usize).min(STOPS.len() - 2);
    let f = s - i as f64;
    let c: Vec<u8> = (0..3).map(|k| (STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Points coloured by `values`, axes at equal scale.
pub fn scatter(points: &[[f64; 2]], values: &[f64], title: &str) -> String {
    let frame = Frame::fit(points.iter().map(|p| (p[0], p[1])), true);
    let finite = values.iter().cloned().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = String::new();
    header(&mut out, &format!("{title}  [{lo:.3e}, {hi:.3e}]"));
    for (p, v) in points.iter().zip(values) {
        let (x, y) = frame.px(p[0], p[1]);
        let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{}"/>"#, colour((v - lo) / span));
    }
    out.push_str("</svg>\n");
    out
}

/// A single series `(x, y)`, optionally with `log10 y`.
pub fn curve(series: &[(f64, f64)], title: &str, log_y: bool) -> String {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .map(|&(x, y)| (x, if log_y { y.max(1e-300).log10() } else { y }))
        .collect();
    let frame = Frame::fit(pts.iter().cloned(), false);
    let mut out = String::new();
    header(&mut out, title);
    let path: Vec<String> = pts
        .iter()
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|&(x, y)| {
            let (a, b) = frame.px(x, y);
            format!("{a:.2},{b:.2}")
        })
        .collect();
    let _ = writeln!(
        out,
        r##"<polyline fill="none" stroke="#31688e" stroke-width="1.5" points="{}"/>"##,
        path.join(" ")
    );
    let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), p| (l.min(p.1), h.max(p.1)));
    let label = if log_y { "log10 " } else { "" };
    let _ = writeln!(
        out,
        r#"<text x="{PAD}" y="{}" font-family="sans-serif" font-size="11">{label}range [{lo:.3}, {hi:.3}]</text>"#,
        SIZE - 12.0
    );
    out.push_str("</svg>\n");
    out
}

/// Closed outlines, later ones drawn in warmer colours.
pub fn outlines(loops: &[(String, Vec<[f64; 2]>)], title: &str) -> String {
    let frame = Frame::fit(loops.iter().flat_map(|(_, l)| l.iter().map(|p| (p[0], p[1]))), true);
    let mut out = String::new();
    header(&mut out, title);
    let n = loops.len().max(2) - 1;
    for (k, (label, pts)) in loops.iter().enumerate() {
        let path: Vec<String> = pts
            .iter()
            .map(|p| {
                let (a, b) = frame.px(p[0], p[1]);
                format!("{a:.2},{b:.2}")
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<polygon fill="none" stroke="{}" stroke-width="1.2" points="{}"><title>{}</title></polygon>"#,
            colour(k as f64 / n as f64),
            path.join(" "),
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}
