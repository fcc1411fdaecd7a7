//! Static SVG figures: box plots for posterior parameters and line plots
//! for trajectories and fit diagnostics. Hand-assembled markup, no
//! rendering dependencies, deterministic output.

use std::fmt::Write as _;

use opinion_pulse_core::bayestrend::ParamSummary;
use opinion_pulse_core::opiniondyn::{ImpulseSchedule, Trajectory};

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 56.0;

fn fmt(v: f64) -> String {
    let s = format!("{v:.2}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn axis_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.08;
    (lo - pad, hi + pad)
}

struct Frame {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
    left: f64,
    width: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        self.left + (v - self.x_lo) / (self.x_hi - self.x_lo) * self.width
    }

    fn y(&self, v: f64) -> f64 {
        let usable = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        HEIGHT - MARGIN_BOTTOM - (v - self.y_lo) / (self.y_hi - self.y_lo) * usable
    }
}

fn document_open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        out,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{x}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{title}</text>"#,
        x = WIDTH / 2.0
    );
}

fn frame_axes(out: &mut String, frame: &Frame, y_label: &str) {
    let bottom = HEIGHT - MARGIN_BOTTOM;
    let _ = writeln!(
        out,
        r#"<line x1="{l}" y1="{t}" x2="{l}" y2="{b}" stroke="black"/>"#,
        l = frame.left,
        t = MARGIN_TOP,
        b = bottom
    );
    let _ = writeln!(
        out,
        r#"<line x1="{l}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>"#,
        l = frame.left,
        b = bottom,
        r = frame.left + frame.width
    );
    for i in 0..=4 {
        let v = frame.y_lo + (frame.y_hi - frame.y_lo) * f64::from(i) / 4.0;
        let y = frame.y(v);
        let _ = writeln!(
            out,
            r#"<line x1="{l0}" y1="{y}" x2="{l}" y2="{y}" stroke="black"/><text x="{lt}" y="{ty}" font-family="sans-serif" font-size="11" text-anchor="end">{val}</text>"#,
            l0 = frame.left - 4.0,
            l = frame.left,
            lt = frame.left - 7.0,
            ty = y + 4.0,
            val = fmt(v)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="16" y="{y}" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {y})" text-anchor="middle">{y_label}</text>"#,
        y = (MARGIN_TOP + bottom) / 2.0
    );
}

/// One labelled box in a box-plot panel.
pub struct BoxStats {
    pub label: String,
    pub q2_5: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q97_5: f64,
}

impl BoxStats {
    pub fn from_param(label: &str, p: &ParamSummary) -> Self {
        BoxStats {
            label: label.to_string(),
            q2_5: p.q2_5,
            q25: p.q25,
            median: p.q50,
            q75: p.q75,
            q97_5: p.q97_5,
        }
    }
}

/// Box plot with one box per group; whiskers at the 2.5/97.5 quantiles.
pub fn box_plot(title: &str, y_label: &str, boxes: &[BoxStats]) -> String {
    let mut out = String::new();
    document_open(&mut out, title);
    let (y_lo, y_hi) = axis_range(boxes.iter().flat_map(|b| [b.q2_5, b.q97_5].into_iter()));
    let frame = Frame {
        x_lo: 0.0,
        x_hi: boxes.len() as f64,
        y_lo,
        y_hi,
        left: MARGIN_LEFT,
        width: WIDTH - MARGIN_LEFT - MARGIN_RIGHT,
    };
    frame_axes(&mut out, &frame, y_label);

    let slot = frame.width / boxes.len().max(1) as f64;
    let box_w = (slot * 0.5).min(72.0);
    for (i, b) in boxes.iter().enumerate() {
        let cx = frame.x(i as f64 + 0.5);
        let (x0, x1) = (cx - box_w / 2.0, cx + box_w / 2.0);
        // whisker
        let _ = writeln!(
            out,
            r#"<line x1="{cx}" y1="{lo}" x2="{cx}" y2="{hi}" stroke="black" class="whisker"/>"#,
            lo = frame.y(b.q2_5),
            hi = frame.y(b.q97_5),
        );
        for cap in [b.q2_5, b.q97_5] {
            let y = frame.y(cap);
            let _ = writeln!(
                out,
                r#"<line x1="{x0}" y1="{y}" x2="{x1}" y2="{y}" stroke="black"/>"#,
                x0 = cx - box_w / 4.0,
                x1 = cx + box_w / 4.0,
            );
        }
        // interquartile box and median
        let _ = writeln!(
            out,
            r##"<rect class="box" x="{x0}" y="{y}" width="{w}" height="{h}" fill="#9ecae1" stroke="black"/>"##,
            y = frame.y(b.q75),
            w = box_w,
            h = (frame.y(b.q25) - frame.y(b.q75)).max(0.5),
        );
        let my = frame.y(b.median);
        let _ = writeln!(
            out,
            r#"<line x1="{x0}" y1="{my}" x2="{x1}" y2="{my}" stroke="black" stroke-width="2"/>"#
        );
        let _ = writeln!(
            out,
            r#"<text x="{cx}" y="{y}" font-family="sans-serif" font-size="12" text-anchor="middle">{label}</text>"#,
            y = HEIGHT - MARGIN_BOTTOM + 18.0,
            label = b.label
        );
    }
    out.push_str("</svg>\n");
    out
}

/// A named line for [`line_plot`].
pub struct Series<'a> {
    pub name: &'a str,
    pub color: &'a str,
    pub xs: &'a [f64],
    pub ys: &'a [f64],
}

/// Line plot of one or more series over a shared x axis; optional impulse
/// markers shade the pulse windows.
pub fn line_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series<'_>],
    impulses: Option<&ImpulseSchedule>,
) -> String {
    let mut out = String::new();
    document_open(&mut out, title);
    let (x_lo, x_hi) = axis_range(series.iter().flat_map(|s| s.xs.iter().copied()));
    let (y_lo, y_hi) = axis_range(
        series
            .iter()
            .flat_map(|s| s.ys.iter().copied())
            .chain([0.0]),
    );
    let frame = Frame {
        x_lo,
        x_hi,
        y_lo,
        y_hi,
        left: MARGIN_LEFT,
        width: WIDTH - MARGIN_LEFT - MARGIN_RIGHT,
    };

    if let Some(schedule) = impulses {
        for pulse in &schedule.pulses {
            let x0 = frame.x(pulse.t_start.max(x_lo));
            let x1 = frame.x((pulse.t_start + pulse.duration).min(x_hi));
            if x1 > x0 {
                let _ = writeln!(
                    out,
                    r##"<rect class="impulse" x="{x0}" y="{t}" width="{w}" height="{h}" fill="#fdd0a2" opacity="0.6"/>"##,
                    t = MARGIN_TOP,
                    w = x1 - x0,
                    h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM,
                );
            }
        }
    }
    frame_axes(&mut out, &frame, y_label);
    // zero line when visible
    if y_lo < 0.0 && y_hi > 0.0 {
        let y = frame.y(0.0);
        let _ = writeln!(
            out,
            r##"<line x1="{l}" y1="{y}" x2="{r}" y2="{y}" stroke="#bbbbbb" stroke-dasharray="4 3"/>"##,
            l = frame.left,
            r = frame.left + frame.width,
        );
    }

    for (i, s) in series.iter().enumerate() {
        let mut path = String::new();
        for (j, (&x, &y)) in s.xs.iter().zip(s.ys.iter()).enumerate() {
            let _ = write!(
                path,
                "{}{},{} ",
                if j == 0 { "M" } else { "L" },
                frame.x(x),
                frame.y(y)
            );
        }
        let _ = writeln!(
            out,
            r#"<path class="series" d="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            color = s.color,
        );
        let _ = writeln!(
            out,
            r#"<text x="{x}" y="{y}" font-family="sans-serif" font-size="12" fill="{color}">{name}</text>"#,
            x = frame.left + frame.width - 140.0,
            y = MARGIN_TOP + 16.0 + 16.0 * i as f64,
            color = s.color,
            name = s.name,
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{x}" y="{y}" font-family="sans-serif" font-size="12" text-anchor="middle">{x_label}</text>"#,
        x = MARGIN_LEFT + (WIDTH - MARGIN_LEFT - MARGIN_RIGHT) / 2.0,
        y = HEIGHT - 16.0,
    );
    out.push_str("</svg>\n");
    out
}

/// Convenience: the standard trajectory figure with x(t), E(t) and pulse
/// shading.
pub fn trajectory_plot(title: &str, traj: &Trajectory, schedule: &ImpulseSchedule) -> String {
    line_plot(
        title,
        "t",
        "state",
        &[
            Series {
                name: "x (opinion)",
                color: "#d62728",
                xs: &traj.times,
                ys: &traj.x,
            },
            Series {
                name: "E (influence)",
                color: "#1f77b4",
                xs: &traj.times,
                ys: &traj.e,
            },
        ],
        Some(schedule),
    )
}
