//! Minimal self-contained SVG writers: line/scatter plots and heatmaps.
//! Output is deterministic for identical inputs — fixed layout, fixed
//! formatting, no timestamps — so plot files can be compared byte for byte.

use std::fmt::Write as _;

const W: f64 = 720.0;
const H: f64 = 480.0;
const ML: f64 = 72.0;
const MR: f64 = 24.0;
const MT: f64 = 42.0;
const MB: f64 = 54.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

// viridis anchors, dark to bright
const RAMP: [[f64; 3]; 6] = [
    [0.267, 0.005, 0.329],
    [0.254, 0.265, 0.530],
    [0.164, 0.471, 0.558],
    [0.135, 0.659, 0.518],
    [0.478, 0.821, 0.318],
    [0.993, 0.906, 0.144],
];

/// One named curve or point cloud.
pub struct Series<'a> {
    pub name: &'a str,
    pub points: &'a [(f64, f64)],
    /// Markers only, no connecting line.
    pub scatter: bool,
}

fn fmt_tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && (a >= 1e4 || a < 1e-3) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn ramp_color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let i = (t.floor() as usize).min(RAMP.len() - 2);
    let f = t - i as f64;
    let mix = |k: usize| ((RAMP[i][k] + f * (RAMP[i + 1][k] - RAMP[i][k])) * 255.0).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(0), mix(1), mix(2))
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn of(xs: impl Iterator<Item = f64>, ys: impl Iterator<Item = f64>) -> Frame {
        let mut f = Frame { x0: f64::INFINITY, x1: f64::NEG_INFINITY, y0: f64::INFINITY, y1: f64::NEG_INFINITY };
        for x in xs {
            if x.is_finite() {
                f.x0 = f.x0.min(x);
                f.x1 = f.x1.max(x);
            }
        }
        for y in ys {
            if y.is_finite() {
                f.y0 = f.y0.min(y);
                f.y1 = f.y1.max(y);
            }
        }
        // degenerate ranges get a unit pad so the mapping stays finite
        if !(f.x1 > f.x0) {
            f.x0 -= 0.5;
            f.x1 += 0.5;
        }
        if !(f.y1 > f.y0) {
            f.y0 -= 0.5;
            f.y1 += 0.5;
        }
        f
    }

    fn px(&self, x: f64) -> f64 {
        ML + (x - self.x0) / (self.x1 - self.x0) * (W - ML - MR)
    }

    fn py(&self, y: f64) -> f64 {
        H - MB - (y - self.y0) / (self.y1 - self.y0) * (H - MT - MB)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        W / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let _ = write!(
        out,
        "<rect x=\"{ML}\" y=\"{MT}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"#444\"/>\n",
        W - ML - MR,
        H - MT - MB
    );
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let x = f.x0 + t * (f.x1 - f.x0);
        let y = f.y0 + t * (f.y1 - f.y0);
        let px = f.px(x);
        let py = f.py(y);
        let _ = write!(
            out,
            "<line x1=\"{px:.1}\" y1=\"{:.1}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"#444\"/>\n\
             <text x=\"{px:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n\
             <line x1=\"{:.1}\" y1=\"{py:.1}\" x2=\"{ML}\" y2=\"{py:.1}\" stroke=\"#444\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>\n",
            H - MB,
            H - MB + 5.0,
            H - MB + 18.0,
            fmt_tick(x),
            ML - 5.0,
            ML - 8.0,
            py + 4.0,
            fmt_tick(y),
        );
    }
    let _ = write!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n\
         <text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>\n",
        ML + (W - ML - MR) / 2.0,
        H - 12.0,
        escape(x_label),
        MT + (H - MT - MB) / 2.0,
        MT + (H - MT - MB) / 2.0,
        escape(y_label),
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line/scatter plot of one or more series over shared axes.
pub fn plot(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>]) -> String {
    let f = Frame::of(
        series.iter().flat_map(|s| s.points.iter().map(|p| p.0)),
        series.iter().flat_map(|s| s.points.iter().map(|p| p.1)),
    );
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if s.scatter {
            for &(x, y) in s.points {
                let _ = write!(
                    out,
                    "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"2.4\" fill=\"{color}\"/>\n",
                    f.px(x),
                    f.py(y)
                );
            }
        } else {
            let mut path = String::new();
            for &(x, y) in s.points {
                if !path.is_empty() {
                    path.push(' ');
                }
                let _ = write!(path, "{:.1},{:.1}", f.px(x), f.py(y));
            }
            let _ = write!(
                out,
                "<polyline points=\"{path}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n"
            );
        }
        let _ = write!(
            out,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"12\" height=\"4\" fill=\"{color}\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n",
            ML + 10.0,
            MT + 10.0 + 16.0 * i as f64,
            ML + 26.0,
            MT + 15.0 + 16.0 * i as f64,
            escape(s.name),
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Heatmap of a row-major field (`values[i * y.len() + j]` at `x[i], y[j]`),
/// optionally on a log color scale spanning eight decades below the peak.
pub fn heatmap(title: &str, x_label: &str, y_label: &str, x: &[f64], y: &[f64], values: &[f64], log_scale: bool) -> String {
    assert_eq!(values.len(), x.len() * y.len(), "field shape must match axes");
    let f = Frame::of(x.iter().copied(), y.iter().copied());
    let peak = values.iter().copied().fold(0.0_f64, f64::max).max(f64::MIN_POSITIVE);
    let floor = peak * 1e-8;
    let scale = |v: f64| -> f64 {
        if log_scale {
            ((v.max(floor) / floor).log10() / 8.0).clamp(0.0, 1.0)
        } else {
            (v / peak).clamp(0.0, 1.0)
        }
    };
    let cw = (W - ML - MR) / x.len() as f64;
    let ch = (H - MT - MB) / y.len() as f64;
    let mut out = String::new();
    header(&mut out, title);
    for (i, _) in x.iter().enumerate() {
        for (j, _) in y.iter().enumerate() {
            let v = scale(values[i * y.len() + j]);
            let _ = write!(
                out,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>\n",
                ML + i as f64 * cw,
                H - MB - (j + 1) as f64 * ch,
                cw + 0.05,
                ch + 0.05,
                ramp_color(v),
            );
        }
    }
    axes(&mut out, &f, x_label, y_label);
    out.push_str("</svg>\n");
    out
}
