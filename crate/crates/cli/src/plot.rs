//! Minimal native SVG line charts.

use std::fmt::Write;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

#[derive(Clone, Debug, Default)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.into(),
            points,
            dashed: false,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub log_y: bool,
    /// Dashed reference lines `y = c`.
    pub hlines: Vec<f64>,
    pub y_range: Option<(f64, f64)>,
    pub legend: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// Round tick positions covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![lo];
    }
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

/// Formats a tick with just enough digits to tell it from its neighbours.
fn fmt_tick(v: f64, step: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    let step_mag = step.abs().log10().floor();
    if (1e-3..1e5).contains(&a) && step_mag >= -12.0 {
        let decimals = (-step_mag).max(0.0) as usize;
        let s = format!("{v:.decimals$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        let digits = (a.log10().floor() - step_mag).max(0.0) as usize;
        format!("{v:.digits$e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(panel: &Panel) -> Option<((f64, f64), (f64, f64))> {
    let ty = |y: f64| if panel.log_y { y.log10() } else { y };
    let mut xs = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ys = (f64::INFINITY, f64::NEG_INFINITY);
    for s in &panel.series {
        for &(x, y) in &s.points {
            let y = ty(y);
            if x.is_finite() && y.is_finite() {
                xs = (xs.0.min(x), xs.1.max(x));
                ys = (ys.0.min(y), ys.1.max(y));
            }
        }
    }
    if !xs.0.is_finite() {
        return None;
    }
    if let Some((a, b)) = panel.y_range {
        ys = (ty(a), ty(b));
    }
    let pad = |(a, b): (f64, f64)| {
        if b > a {
            (a, b)
        } else {
            let d = if a == 0.0 { 1.0 } else { a.abs() * 0.1 };
            (a - d, b + d)
        }
    };
    Some((pad(xs), pad(ys)))
}

fn draw_panel(out: &mut String, r: Rect, panel: &Panel) {
    let m = (56.0, 14.0, 26.0, 40.0); // left, right, top, bottom
    let (px, py) = (r.x + m.0, r.y + m.2);
    let (pw, ph) = (r.w - m.0 - m.1, r.h - m.2 - m.3);
    let _ = writeln!(
        out,
        r##"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">{}</text>"##,
        px + pw / 2.0,
        r.y + 16.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        out,
        r##"<rect x="{px:.1}" y="{py:.1}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="#333"/>"##
    );
    let Some(((x0, x1), (y0, y1))) = bounds(panel) else {
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">no data</text>"##,
            px + pw / 2.0,
            py + ph / 2.0
        );
        return;
    };
    let sx = |x: f64| px + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| py + ph - (y - y0) / (y1 - y0) * ph;
    let ty = |y: f64| if panel.log_y { y.log10() } else { y };

    let xt = ticks(x0, x1);
    let xstep = if xt.len() > 1 { xt[1] - xt[0] } else { x1 - x0 };
    for t in xt {
        let x = sx(t);
        let _ = writeln!(
            out,
            r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#333"/><text x="{x:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"##,
            py + ph,
            py + ph + 4.0,
            py + ph + 15.0,
            fmt_tick(t, xstep)
        );
    }
    let yt = if panel.log_y {
        (y0.ceil() as i64..=y1.floor() as i64).map(|k| k as f64).collect()
    } else {
        ticks(y0, y1)
    };
    let ystep = if yt.len() > 1 { yt[1] - yt[0] } else { y1 - y0 };
    for t in yt {
        let y = sy(t);
        let label = if panel.log_y { format!("1e{t}") } else { fmt_tick(t, ystep) };
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{px:.1}" y2="{y:.1}" stroke="#333"/><text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{label}</text>"##,
            px - 4.0,
            px - 6.0,
            y + 3.5
        );
    }
    let _ = writeln!(
        out,
        r##"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"##,
        px + pw / 2.0,
        r.y + r.h - 6.0,
        escape(&panel.x_label)
    );
    let _ = writeln!(
        out,
        r##"<text transform="translate({:.1},{:.1}) rotate(-90)" font-size="11" text-anchor="middle">{}</text>"##,
        r.x + 12.0,
        py + ph / 2.0,
        escape(&panel.y_label)
    );
    for &c in &panel.hlines {
        let c = ty(c);
        if c >= y0 && c <= y1 {
            let y = sy(c);
            let _ = writeln!(
                out,
                r##"<line x1="{px:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#999" stroke-dasharray="4,3"/>"##,
                px + pw
            );
        }
    }
    for (i, s) in panel.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = String::new();
        for &(x, y) in &s.points {
            let y = ty(y);
            if x.is_finite() && y.is_finite() {
                let _ = write!(pts, "{:.1},{:.1} ", sx(x), sy(y.clamp(y0, y1)));
            }
        }
        let dash = if s.dashed { r#" stroke-dasharray="5,3""# } else { "" };
        let _ = writeln!(
            out,
            r##"<polyline fill="none" stroke="{color}" stroke-width="1.2"{dash} points="{}"/>"##,
            pts.trim_end()
        );
        if panel.legend {
            let ly = py + 12.0 + 13.0 * i as f64;
            let _ = writeln!(
                out,
                r##"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}" font-size="10">{}</text>"##,
                px + pw - 130.0,
                px + pw - 112.0,
                px + pw - 108.0,
                ly + 3.5,
                escape(&s.label)
            );
        }
    }
}

/// Renders panels into one SVG document. `stamp` adds a generation-time
/// comment; leave it out for reproducible files.
pub fn render(width: f64, height: f64, panels: &[(Rect, Panel)], stamp: Option<u64>) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"##
    );
    if let Some(t) = stamp {
        let _ = writeln!(out, "<!-- generated at unix time {t} -->");
    }
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="white"/>"##);
    for (r, p) in panels {
        draw_panel(&mut out, *r, p);
    }
    out.push_str("</svg>\n");
    out
}
