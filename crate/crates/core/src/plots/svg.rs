//! Shared SVG plumbing: affine axis maps, number formatting, escaping and the
//! document shell.

use std::fmt::Write;

/// Affine map from data units to pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisMap {
    d0: f64,
    d1: f64,
    p0: f64,
    p1: f64,
}

impl AxisMap {
    /// Maps `[d0, d1]` onto `[p0, p1]`; `p1 < p0` flips the axis.
    pub fn new(d0: f64, d1: f64, p0: f64, p1: f64) -> Self {
        let (d0, d1) = if d1 > d0 { (d0, d1) } else { (d0 - 0.5, d0 + 0.5) };
        AxisMap { d0, d1, p0, p1 }
    }

    pub fn map(&self, v: f64) -> f64 {
        self.p0 + (v - self.d0) * (self.p1 - self.p0) / (self.d1 - self.d0)
    }

    pub fn invert(&self, p: f64) -> f64 {
        self.d0 + (p - self.p0) * (self.d1 - self.d0) / (self.p1 - self.p0)
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.d0, self.d1)
    }
}

/// Padded data range covering `values`, never empty.
pub(crate) fn padded_range(values: impl IntoIterator<Item = f64>, pad: f64) -> (f64, f64) {
    let (lo, hi) = values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    let span = if hi > lo { hi - lo } else { lo.abs().max(1.0) };
    (lo - pad * span, hi + pad * span)
}

/// Round tick positions (1, 2 or 5 × 10ⁿ apart) inside `[lo, hi]`.
pub fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    if !(hi > lo) || target == 0 {
        return vec![lo];
    }
    let raw = (hi - lo) / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last)
        .map(|i| {
            let v = i as f64 * step;
            if v.abs() < step * 1e-9 {
                0.0
            } else {
                v
            }
        })
        .collect()
}

/// Three decimals with a typographic minus, e.g. `−0.784`.
pub fn fmt_num(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() { "NaN".into() } else if v > 0.0 { "∞".into() } else { "−∞".into() };
    }
    let s = format!("{v:.3}");
    match s.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => rest.to_string(),
        Some(rest) => format!("\u{2212}{rest}"),
        None => s,
    }
}

/// Tick label: as few decimals as the step needs.
pub(crate) fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize };
    let s = format!("{v:.decimals$}");
    match s.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => rest.to_string(),
        Some(rest) => format!("\u{2212}{rest}"),
        None => s,
    }
}

/// Pixel coordinate, six decimals so positions invert to well under 1e-6.
pub(crate) fn px(v: f64) -> String {
    let s = format!("{v:.6}");
    if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

pub(crate) fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c if (c as u32) < 0x20 && c != '\t' && c != '\n' => {}
            c => out.push(c),
        }
    }
    out
}

const BASE_CSS: &str = "text{font-family:Helvetica,Arial,sans-serif;font-size:12px;fill:#222}\
.axis,.tick{stroke:#444;stroke-width:1}\
.reference-line{stroke:#888;stroke-dasharray:4 3}\
.title{font-weight:bold}";

pub(crate) struct Doc {
    buf: String,
}

impl Doc {
    pub fn new(width: f64, height: f64, css: &str) -> Self {
        let mut buf = String::new();
        buf.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        let _ = writeln!(
            buf,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">",
            w = px(width),
            h = px(height)
        );
        let _ = writeln!(buf, "<style>{BASE_CSS}{css}</style>");
        Doc { buf }
    }

    pub fn line(&mut self, class: &str, x1: f64, y1: f64, x2: f64, y2: f64) {
        let _ = writeln!(
            self.buf,
            "<line class=\"{class}\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\"/>",
            px(x1),
            px(y1),
            px(x2),
            px(y2)
        );
    }

    pub fn text(&mut self, class: &str, x: f64, y: f64, anchor: &str, content: &str) {
        let _ = writeln!(
            self.buf,
            "<text class=\"{class}\" x=\"{}\" y=\"{}\" text-anchor=\"{anchor}\">{}</text>",
            px(x),
            px(y),
            escape(content)
        );
    }

    pub fn raw(&mut self, s: &str) {
        self.buf.push_str(s);
        self.buf.push('\n');
    }

    pub fn points(pts: impl IntoIterator<Item = (f64, f64)>) -> String {
        pts.into_iter()
            .map(|(x, y)| format!("{},{}", px(x), px(y)))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Horizontal axis with ticks and labels below `y`.
    pub fn x_axis(&mut self, map: &AxisMap, y: f64, label: &str, label_y: f64) {
        let (d0, d1) = map.domain();
        self.line("axis", map.map(d0), y, map.map(d1), y);
        let ticks = nice_ticks(d0, d1, 6);
        let step = if ticks.len() > 1 { ticks[1] - ticks[0] } else { 1.0 };
        for t in &ticks {
            let x = map.map(*t);
            self.line("tick", x, y, x, y + 4.0);
            self.text("tick-label", x, y + 15.0, "middle", &fmt_tick(*t, step));
        }
        let mid = 0.5 * (map.map(d0) + map.map(d1));
        self.text("axis-label", mid, label_y, "middle", label);
    }

    pub fn finish(mut self) -> String {
        self.buf.push_str("</svg>\n");
        self.buf
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format() {
        assert_eq!(fmt_num(-0.784), "\u{2212}0.784");
        assert_eq!(fmt_num(0.05129), "0.051");
        assert_eq!(fmt_num(-0.0001), "0.000");
        assert_eq!(fmt_num(2.7505), "2.751");
        assert_eq!(fmt_tick(-0.5, 0.5), "\u{2212}0.5");
        assert_eq!(fmt_tick(2.0, 1.0), "2");
    }

    #[test]
    fn axis_map_round_trip() {
        let m = AxisMap::new(-2.649, 2.751, 240.0, 560.0);
        for v in [-2.649, 0.0, 0.0513, 2.751] {
            assert!((m.invert(m.map(v)) - v).abs() < 1e-12);
        }
        let flipped = AxisMap::new(0.0, 1.0, 400.0, 40.0);
        assert_eq!(flipped.map(1.0), 40.0);
        // degenerate domain still maps
        assert!(AxisMap::new(1.0, 1.0, 0.0, 10.0).map(1.0).is_finite());
    }

    #[test]
    fn ticks() {
        assert_eq!(nice_ticks(-1.0, 1.0, 4), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(nice_ticks(0.0, 10.0, 5), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
    }

    #[test]
    fn escaping() {
        assert_eq!(escape("a<b & \"c\""), "a&lt;b &amp; &quot;c&quot;");
    }
}
