//! Minimal polyline charts.

use std::fmt::Write as _;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
/// Points drawn per series; longer series are thinned by stride.
const MAX_POINTS: usize = 2000;
const LEGEND_LIMIT: usize = 12;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

impl Series {
    pub fn new(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            points,
            dashed: false,
        }
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Round a span to 1, 2 or 5 times a power of ten.
fn nice_step(span: f64, target: usize) -> f64 {
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let frac = raw / mag;
    let nice = if frac <= 1.0 {
        1.0
    } else if frac <= 2.0 {
        2.0
    } else if frac <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

impl Chart {
    pub fn render(&self) -> String {
        let tf = |y: f64| if self.log_y { y.log10() } else { y };
        let usable = |y: f64| y.is_finite() && (!self.log_y || y > 0.0);

        let mut xr = (f64::INFINITY, f64::NEG_INFINITY);
        let mut yr = (f64::INFINITY, f64::NEG_INFINITY);
        for s in &self.series {
            for &(x, y) in &s.points {
                if x.is_finite() && usable(y) {
                    xr = (xr.0.min(x), xr.1.max(x));
                    yr = (yr.0.min(tf(y)), yr.1.max(tf(y)));
                }
            }
        }
        if !xr.0.is_finite() {
            xr = (0.0, 1.0);
            yr = (0.0, 1.0);
        }
        if xr.1 - xr.0 <= 0.0 {
            xr.1 = xr.0 + 1.0;
        }
        if yr.1 - yr.0 <= 0.0 {
            let pad = if yr.0 == 0.0 { 1.0 } else { yr.0.abs() * 0.1 };
            yr = (yr.0 - pad, yr.1 + pad);
        }
        if self.log_y {
            yr = (yr.0.floor(), yr.1.ceil());
        } else {
            let pad = 0.05 * (yr.1 - yr.0);
            yr = (yr.0 - pad, yr.1 + pad);
        }

        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let px = |x: f64| LEFT + (x - xr.0) / (xr.1 - xr.0) * pw;
        let py = |y: f64| TOP + ph - (y - yr.0) / (yr.1 - yr.0) * ph;

        let mut out = String::new();
        writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        )
        .unwrap();
        writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
        writeln!(
            out,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            LEFT + pw / 2.0,
            esc(&self.title)
        )
        .unwrap();

        // grid and ticks
        let xstep = nice_step(xr.1 - xr.0, 8);
        let mut x = (xr.0 / xstep).ceil() * xstep;
        while x <= xr.1 + 1e-9 * xstep {
            let sx = px(x);
            writeln!(
                out,
                r##"<line x1="{sx:.2}" y1="{TOP}" x2="{sx:.2}" y2="{:.2}" stroke="#e5e5e5"/><text x="{sx:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                TOP + ph,
                TOP + ph + 16.0,
                fmt_tick(x)
            )
            .unwrap();
            x += xstep;
        }
        let ystep = if self.log_y {
            ((yr.1 - yr.0) / 8.0).ceil().max(1.0)
        } else {
            nice_step(yr.1 - yr.0, 6)
        };
        let mut y = (yr.0 / ystep).ceil() * ystep;
        while y <= yr.1 + 1e-9 * ystep {
            let sy = py(y);
            let label = if self.log_y {
                format!("1e{}", y.round() as i64)
            } else {
                fmt_tick(y)
            };
            writeln!(
                out,
                r##"<line x1="{LEFT}" y1="{sy:.2}" x2="{:.2}" y2="{sy:.2}" stroke="#e5e5e5"/><text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"##,
                LEFT + pw,
                LEFT - 6.0,
                sy + 4.0
            )
            .unwrap();
            y += ystep;
        }
        writeln!(
            out,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 10.0,
            esc(&self.x_label)
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            esc(&self.y_label)
        )
        .unwrap();

        for (k, s) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let stride = s.points.len().div_ceil(MAX_POINTS).max(1);
            let mut pts = String::new();
            let last = s.points.len().saturating_sub(1);
            for (j, &(x, y)) in s.points.iter().enumerate() {
                if (j % stride == 0 || j == last) && x.is_finite() && usable(y) {
                    write!(pts, "{:.2},{:.2} ", px(x), py(tf(y))).unwrap();
                }
            }
            let dash = if s.dashed {
                r#" stroke-dasharray="6 4""#
            } else {
                ""
            };
            writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"><title>{}</title></polyline>"#,
                pts.trim_end(),
                esc(&s.name)
            )
            .unwrap();
            if self.series.len() <= LEGEND_LIMIT {
                let ly = TOP + 14.0 + 18.0 * k as f64;
                let lx = LEFT + pw + 12.0;
                writeln!(
                    out,
                    r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
                    lx + 24.0,
                    lx + 30.0,
                    ly + 4.0,
                    esc(&s.name)
                )
                .unwrap();
            }
        }
        out.push_str("</svg>\n");
        out
    }
}
