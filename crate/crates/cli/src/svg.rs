//! Minimal standalone SVG charts: log or linear axes, markers, lines,
//! vertical error bars and a legend. No external plotting dependency.

use std::fmt::Write as _;

const PANEL_W: f64 = 520.0;
const PANEL_H: f64 = 380.0;
const MARGIN_L: f64 = 78.0;
const MARGIN_R: f64 = 18.0;
const MARGIN_T: f64 = 42.0;
const MARGIN_B: f64 = 52.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
    "#17becf",
];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SvgError {
    #[error("figure {0:?} has no plottable data")]
    Empty(String),
}

#[derive(Debug, Clone)]
pub struct Axis {
    pub label: String,
    pub log: bool,
}

impl Axis {
    pub fn log(label: &str) -> Self {
        Self {
            label: label.into(),
            log: true,
        }
    }

    fn map(&self, v: f64) -> Option<f64> {
        if !v.is_finite() {
            return None;
        }
        if self.log {
            (v > 0.0).then(|| v.log10())
        } else {
            Some(v)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub color: String,
    pub points: Vec<(f64, f64)>,
    /// Absolute (low, high) y bounds per point.
    pub errors: Option<Vec<(f64, f64)>>,
    pub markers: bool,
    pub line: bool,
    pub dashed: bool,
}

impl Series {
    pub fn markers(label: impl Into<String>, color: &str, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            color: color.into(),
            points,
            errors: None,
            markers: true,
            line: false,
            dashed: false,
        }
    }

    pub fn line(label: impl Into<String>, color: &str, points: Vec<(f64, f64)>) -> Self {
        Self {
            markers: false,
            line: true,
            ..Self::markers(label, color, points)
        }
    }

    pub fn with_errors(mut self, errors: Vec<(f64, f64)>) -> Self {
        self.errors = Some(errors);
        self
    }

    pub fn joined(mut self) -> Self {
        self.line = true;
        self
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Panel {
    pub title: String,
    pub x: Axis,
    pub y: Axis,
    pub series: Vec<Series>,
    /// Extra text lines under the legend.
    pub notes: Vec<String>,
    pub legend_right: bool,
}

impl Panel {
    pub fn new(title: &str, x: Axis, y: Axis) -> Self {
        Self {
            title: title.into(),
            x,
            y,
            series: Vec::new(),
            notes: Vec::new(),
            legend_right: false,
        }
    }
}

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

struct Range {
    lo: f64,
    hi: f64,
}

impl Range {
    fn of(values: impl Iterator<Item = f64>) -> Option<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            return None;
        }
        if hi - lo < 1e-12 * (1.0 + lo.abs()) {
            lo -= 0.1 * (1.0 + lo.abs().min(1.0));
            hi += 0.1 * (1.0 + hi.abs().min(1.0));
        }
        let pad = 0.05 * (hi - lo);
        Some(Self {
            lo: lo - pad,
            hi: hi + pad,
        })
    }

    fn frac(&self, v: f64) -> f64 {
        (v - self.lo) / (self.hi - self.lo)
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        let s = format!("{v:.1e}");
        return s.replace(".0e", "e");
    }
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn nice_step(span: f64, target: f64) -> f64 {
    let raw = span / target;
    let mag = 10f64.powf(raw.log10().floor());
    let r = raw / mag;
    let m = if r < 1.5 {
        1.0
    } else if r < 3.5 {
        2.0
    } else if r < 7.5 {
        5.0
    } else {
        10.0
    };
    m * mag
}

/// Tick positions in mapped coordinates with their labels.
fn ticks(axis: &Axis, range: &Range) -> Vec<(f64, String)> {
    if !axis.log {
        let step = nice_step(range.hi - range.lo, 5.0);
        let mut v = (range.lo / step).ceil() * step;
        let mut out = Vec::new();
        while v <= range.hi + 1e-9 * step {
            out.push((v, fmt_tick(v)));
            v += step;
        }
        return out;
    }
    let decades: Vec<i32> = ((range.lo.ceil() as i32)..=(range.hi.floor() as i32)).collect();
    if decades.len() >= 2 {
        let stride = decades.len().div_ceil(8);
        return decades
            .iter()
            .filter(|d| (**d - decades[0]) as usize % stride == 0)
            .map(|&d| (d as f64, fmt_tick(10f64.powi(d))))
            .collect();
    }
    let mut out = Vec::new();
    for d in (range.lo.floor() as i32)..=(range.hi.ceil() as i32) {
        for m in [1.0, 2.0, 5.0] {
            let v = m * 10f64.powi(d);
            let u = v.log10();
            if u >= range.lo && u <= range.hi {
                out.push((u, fmt_tick(v)));
            }
        }
    }
    if out.len() < 2 {
        let step = nice_step(10f64.powf(range.hi) - 10f64.powf(range.lo), 4.0);
        let mut v = (10f64.powf(range.lo) / step).ceil() * step;
        out.clear();
        while v.log10() <= range.hi {
            out.push((v.log10(), fmt_tick(v)));
            v += step;
        }
    }
    out
}

fn render_panel(svg: &mut String, panel: &Panel, ox: f64) -> Result<(), SvgError> {
    let xs = panel.series.iter().flat_map(|s| s.points.iter().filter_map(|p| panel.x.map(p.0)));
    let xr = Range::of(xs).ok_or_else(|| SvgError::Empty(panel.title.clone()))?;
    let ys = panel.series.iter().flat_map(|s| {
        let pts = s.points.iter().map(|p| p.1);
        let errs = s.errors.iter().flatten().flat_map(|e| [e.0, e.1]);
        pts.chain(errs).filter_map(|v| panel.y.map(v))
    });
    let yr = Range::of(ys).ok_or_else(|| SvgError::Empty(panel.title.clone()))?;

    let pw = PANEL_W - MARGIN_L - MARGIN_R;
    let ph = PANEL_H - MARGIN_T - MARGIN_B;
    let px = |u: f64| ox + MARGIN_L + xr.frac(u) * pw;
    let py = |u: f64| MARGIN_T + (1.0 - yr.frac(u)) * ph;

    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="24" font-size="15" text-anchor="middle">{}</text>"#,
        ox + MARGIN_L + pw / 2.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{:.1}" y="{MARGIN_T}" width="{pw:.1}" height="{ph:.1}" fill="none" stroke="#333"/>"##,
        ox + MARGIN_L
    );
    for (u, label) in ticks(&panel.x, &xr) {
        let x = px(u);
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="#333"/><text x="{x:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"##,
            MARGIN_T + ph,
            MARGIN_T + ph + 5.0,
            MARGIN_T + ph + 18.0,
            escape(&label)
        );
    }
    for (u, label) in ticks(&panel.y, &yr) {
        let y = py(u);
        let _ = writeln!(
            svg,
            r##"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#333"/><text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{}</text>"##,
            ox + MARGIN_L - 5.0,
            ox + MARGIN_L,
            ox + MARGIN_L - 8.0,
            y + 4.0,
            escape(&label)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{}</text>"#,
        ox + MARGIN_L + pw / 2.0,
        PANEL_H - 12.0,
        escape(&panel.x.label)
    );
    let (lx, ly) = (ox + 16.0, MARGIN_T + ph / 2.0);
    let _ = writeln!(
        svg,
        r#"<text x="{lx:.1}" y="{ly:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 {lx:.1} {ly:.1})">{}</text>"#,
        escape(&panel.y.label)
    );

    for s in &panel.series {
        let mapped: Vec<(usize, f64, f64)> = s
            .points
            .iter()
            .enumerate()
            .filter_map(|(i, p)| Some((i, px(panel.x.map(p.0)?), py(panel.y.map(p.1)?))))
            .collect();
        if s.line && mapped.len() >= 2 {
            let path: Vec<String> = mapped.iter().map(|(_, x, y)| format!("{x:.2},{y:.2}")).collect();
            let dash = if s.dashed { r#" stroke-dasharray="6,4""# } else { "" };
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#,
                path.join(" "),
                s.color
            );
        }
        if let Some(errs) = &s.errors {
            for &(i, x, _) in &mapped {
                let Some(&(lo, hi)) = errs.get(i) else { continue };
                let (Some(a), Some(b)) = (panel.y.map(lo), panel.y.map(hi)) else { continue };
                let _ = writeln!(
                    svg,
                    r#"<path d="M{x:.2},{:.2}V{:.2}M{:.2},{:.2}H{:.2}M{:.2},{:.2}H{:.2}" stroke="{}" fill="none"/>"#,
                    py(a),
                    py(b),
                    x - 3.0,
                    py(a),
                    x + 3.0,
                    x - 3.0,
                    py(b),
                    x + 3.0,
                    s.color
                );
            }
        }
        if s.markers {
            for &(_, x, y) in &mapped {
                let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3.2" fill="{}"/>"#, s.color);
            }
        }
    }

    let mut y = MARGIN_T + 16.0;
    let x = if panel.legend_right {
        ox + MARGIN_L + pw - 130.0
    } else {
        ox + MARGIN_L + 10.0
    };
    for s in panel.series.iter().filter(|s| !s.label.is_empty()) {
        if s.markers {
            let _ = writeln!(svg, r#"<circle cx="{:.1}" cy="{:.1}" r="3.2" fill="{}"/>"#, x + 8.0, y - 4.0, s.color);
        } else {
            let _ = writeln!(
                svg,
                r#"<line x1="{x:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{}" stroke-width="1.5"/>"#,
                y - 4.0,
                x + 16.0,
                y - 4.0,
                s.color
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{y:.1}" font-size="11">{}</text>"#,
            x + 22.0,
            escape(&s.label)
        );
        y += 15.0;
    }
    for note in &panel.notes {
        let _ = writeln!(svg, r#"<text x="{x:.1}" y="{y:.1}" font-size="11">{}</text>"#, escape(note));
        y += 15.0;
    }
    Ok(())
}

/// Renders panels side by side. `stamp` becomes a leading XML comment.
pub fn render(panels: &[Panel], stamp: Option<&str>) -> Result<String, SvgError> {
    if panels.is_empty() {
        return Err(SvgError::Empty(String::new()));
    }
    let width = PANEL_W * panels.len() as f64;
    let mut svg = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    if let Some(stamp) = stamp {
        let _ = writeln!(svg, "<!-- {} -->", stamp.replace("--", "- -"));
    }
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL_H}" viewBox="0 0 {width} {PANEL_H}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        render_panel(&mut svg, p, i as f64 * PANEL_W)?;
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(points: Vec<(f64, f64)>) -> Panel {
        let mut p = Panel::new("t", Axis::log("x"), Axis::log("y"));
        p.series.push(Series::markers("pts <a&b>", color(0), points));
        p
    }

    #[test]
    fn well_formed_and_escaped() {
        let svg = render(&[panel(vec![(1e18, 1e7), (1e20, 1e8)])], Some("made -- here")).unwrap();
        let doc = roxmltree::Document::parse(&svg).unwrap();
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        assert!(svg.contains("pts &lt;a&amp;b&gt;"));
        assert!(!svg.contains("made -- here"));
    }

    #[test]
    fn single_point_has_one_marker() {
        let svg = render(&[panel(vec![(1e18, 1e7)])], None).unwrap();
        roxmltree::Document::parse(&svg).unwrap();
        // one data marker plus one legend marker
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(!svg.contains("<polyline"));
    }

    #[test]
    fn empty_and_nonpositive_data_rejected() {
        assert!(render(&[panel(vec![])], None).is_err());
        assert!(render(&[panel(vec![(-1.0, 2.0)])], None).is_err());
        assert!(render(&[], None).is_err());
    }

    #[test]
    fn log_ticks_are_decades_over_wide_ranges() {
        let t = ticks(&Axis::log("x"), &Range { lo: 17.9, hi: 22.1 });
        let labels: Vec<_> = t.iter().map(|t| t.1.as_str()).collect();
        assert_eq!(labels, ["1e18", "1e19", "1e20", "1e21", "1e22"]);
        let t = ticks(&Axis::log("x"), &Range { lo: 0.45, hi: 0.62 });
        assert!(t.len() >= 2, "{t:?}");
    }

    #[test]
    fn tick_format() {
        assert_eq!(fmt_tick(2.5), "2.5");
        assert_eq!(fmt_tick(1e20), "1e20");
        assert_eq!(fmt_tick(3.0e-5), "3e-5");
        assert_eq!(fmt_tick(100.0), "100");
    }
}
