//! Self-contained SVG plots.

use std::fmt::Write as _;

use quick_xml::events::Event;
use quick_xml::Reader;

use crate::CliError;

const W: f64 = 640.0;
const H: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn around(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (mut lo, mut hi) = (0.0f64, 0.0f64);
            for v in it.filter(|v| v.is_finite()) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo < 1e-12 {
                hi = lo + 1.0;
            }
            let pad = 0.05 * (hi - lo);
            (lo - pad, hi + pad)
        };
        let (x0, x1) = span(&mut xs.clone());
        let (y0, y1) = span(&mut ys.clone());
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        W / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let (l, r, t, b) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
    let _ = writeln!(out, r#"<g class="axes" stroke="black" fill="none">"#);
    let _ = writeln!(out, r#"<line x1="{l}" y1="{b}" x2="{r}" y2="{b}"/>"#);
    let _ = writeln!(out, r#"<line x1="{l}" y1="{t}" x2="{l}" y2="{b}"/>"#);
    let _ = writeln!(out, "</g>");
    for k in 0..=4 {
        let x = f.x0 + (f.x1 - f.x0) * k as f64 / 4.0;
        let y = f.y0 + (f.y1 - f.y0) * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{}" text-anchor="middle">{:.3}</text>"#,
            f.px(x),
            b + 16.0,
            x
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{:.3}</text>"#,
            l - 6.0,
            f.py(y) + 4.0,
            y
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
        (l + r) / 2.0,
        H - 18.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0,
        escape(y_label)
    );
}

fn star_path(cx: f64, cy: f64, r: f64) -> String {
    let mut d = String::new();
    for k in 0..10 {
        let rad = if k % 2 == 0 { r } else { r * 0.45 };
        let a = std::f64::consts::PI * (k as f64 / 5.0) - std::f64::consts::FRAC_PI_2;
        let _ = write!(
            d,
            "{}{:.2},{:.2} ",
            if k == 0 { "M" } else { "L" },
            cx + rad * a.cos(),
            cy + rad * a.sin()
        );
    }
    d.push('Z');
    d
}

/// Trial scatter in (leakage, utility-loss) space. Every trial gets one
/// `circle.trial` marker; front members are filled, the selected trial is
/// ringed and the ideal point (0, 0) is a star.
pub fn pareto_scatter(points: &[(f64, f64)], front: &[usize], best: Option<usize>, title: &str) -> String {
    let f = Frame::around(points.iter().map(|p| p.0), points.iter().map(|p| p.1));
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, "membership leakage score (MLS)", "utility loss (%)");
    let _ = writeln!(out, r#"<g class="trials">"#);
    for (i, &(x, y)) in points.iter().enumerate() {
        let on_front = front.contains(&i);
        let _ = writeln!(
            out,
            r##"<circle class="trial" data-trial="{i}" cx="{:.2}" cy="{:.2}" r="4" fill="{}" stroke="#1f4e9c"/>"##,
            f.px(x),
            f.py(y),
            if on_front { "#1f4e9c" } else { "none" }
        );
    }
    let _ = writeln!(out, "</g>");
    if let Some(b) = best.and_then(|b| points.get(b)) {
        let _ = writeln!(
            out,
            r##"<circle class="best" cx="{:.2}" cy="{:.2}" r="8" fill="none" stroke="#c0392b" stroke-width="2"/>"##,
            f.px(b.0),
            f.py(b.1)
        );
    }
    let _ = writeln!(
        out,
        r##"<path class="ideal-point" d="{}" fill="#f1c40f" stroke="black"/>"##,
        star_path(f.px(0.0), f.py(0.0), 9.0)
    );
    let lx = W - RIGHT + 16.0;
    let _ = writeln!(out, r#"<g class="legend">"#);
    let _ = writeln!(
        out,
        r##"<circle cx="{lx}" cy="60" r="4" fill="none" stroke="#1f4e9c"/>"##
    );
    let _ = writeln!(out, r#"<text x="{}" y="64">trial</text>"#, lx + 10.0);
    let _ = writeln!(
        out,
        r##"<circle cx="{lx}" cy="80" r="4" fill="#1f4e9c" stroke="#1f4e9c"/>"##
    );
    let _ = writeln!(out, r#"<text x="{}" y="84">Pareto front</text>"#, lx + 10.0);
    let _ = writeln!(
        out,
        r##"<circle cx="{lx}" cy="100" r="7" fill="none" stroke="#c0392b" stroke-width="2"/>"##
    );
    let _ = writeln!(out, r#"<text x="{}" y="104">selected</text>"#, lx + 10.0);
    let _ = writeln!(
        out,
        r##"<path d="{}" fill="#f1c40f" stroke="black"/>"##,
        star_path(lx, 120.0, 7.0)
    );
    let _ = writeln!(out, r#"<text x="{}" y="124">ideal (0, 0)</text>"#, lx + 10.0);
    let _ = writeln!(out, "</g>");
    out.push_str("</svg>\n");
    out
}

/// Vertical bar chart, one `rect.bar` per label.
pub fn bar_chart(labels: &[String], values: &[f64], title: &str, y_label: &str) -> String {
    let f = Frame::around([0.0, labels.len().max(1) as f64].into_iter(), values.iter().copied());
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, "", y_label);
    let slot = (f.px(1.0) - f.px(0.0)).abs();
    let _ = writeln!(out, r#"<g class="bars">"#);
    for (i, (label, &v)) in labels.iter().zip(values).enumerate() {
        let x = f.px(i as f64) + 0.15 * slot;
        let (ya, yb) = (f.py(v.max(0.0)), f.py(v.min(0.0)));
        let _ = writeln!(
            out,
            r##"<rect class="bar" x="{x:.2}" y="{ya:.2}" width="{:.2}" height="{:.2}" fill="#1f4e9c"><title>{}: {v}</title></rect>"##,
            0.7 * slot,
            (yb - ya).max(0.5),
            escape(label)
        );
        let cx = x + 0.35 * slot;
        let _ = writeln!(
            out,
            r#"<text x="{cx:.2}" y="{}" text-anchor="end" transform="rotate(-45 {cx:.2} {})">{}</text>"#,
            H - BOTTOM + 30.0,
            H - BOTTOM + 30.0,
            escape(label)
        );
    }
    let _ = writeln!(out, "</g>");
    out.push_str("</svg>\n");
    out
}

/// Summary of a parsed SVG document.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SvgCheck {
    pub elements: usize,
    pub trial_markers: usize,
    pub bars: usize,
    pub has_ideal_star: bool,
}

/// Parses `svg` as XML and checks that the root element is `<svg>`.
pub fn check_svg(svg: &str) -> Result<SvgCheck, CliError> {
    let mut reader = Reader::from_str(svg);
    let mut depth = 0usize;
    let mut check = SvgCheck::default();
    let mut root_seen = false;
    loop {
        let ev = reader
            .read_event()
            .map_err(|e| CliError::Runtime(format!("malformed SVG at byte {}: {e}", reader.buffer_position())))?;
        let start = match &ev {
            Event::Start(s) | Event::Empty(s) => Some(s.clone()),
            Event::End(_) => {
                depth -= 1;
                None
            }
            Event::Eof => break,
            _ => None,
        };
        if let Some(s) = start {
            let name = String::from_utf8_lossy(s.name().as_ref()).into_owned();
            if depth == 0 {
                if root_seen || name != "svg" {
                    return Err(CliError::Runtime(format!("unexpected top-level element <{name}>")));
                }
                root_seen = true;
            }
            check.elements += 1;
            let class = s
                .try_get_attribute("class")
                .ok()
                .flatten()
                .map(|a| String::from_utf8_lossy(&a.value).into_owned());
            match class.as_deref() {
                Some("trial") => check.trial_markers += 1,
                Some("bar") => check.bars += 1,
                Some("ideal-point") => check.has_ideal_star = true,
                _ => {}
            }
            if matches!(ev, Event::Start(_)) {
                depth += 1;
            }
        }
    }
    if !root_seen || depth != 0 {
        return Err(CliError::Runtime("SVG has no root element or unclosed tags".into()));
    }
    Ok(check)
}
