//! SVG rendering of 2D box layouts colored by score.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::analytics::ScoreTable;
use crate::boxsne::LowDimBox;
use crate::error::{Error, Result};

const MARGIN: f64 = 24.0;
const LEGEND_STEPS: usize = 9;
const MISSING: Rgb = Rgb(0x99, 0x99, 0x99);
const LOW: Rgb = Rgb(0xb2, 0x18, 0x2b);
const MID: Rgb = Rgb(0xf7, 0xf7, 0xf7);
const HIGH: Rgb = Rgb(0x21, 0x66, 0xac);

#[derive(Debug, Clone, PartialEq)]
pub struct RenderSpec {
    pub width: f64,
    pub height: f64,
    /// `None` takes the range of the scores being drawn.
    pub score_range: Option<(f64, f64)>,
    pub stroke_width: f64,
    pub labels: bool,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            width: 800.0,
            height: 800.0,
            score_range: None,
            stroke_width: 1.0,
            labels: false,
        }
    }
}

impl RenderSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.width.is_finite() && self.width > 2.0 * MARGIN && self.height.is_finite() && self.height > 2.0 * MARGIN) {
            return Err(Error::InvalidParameter(format!(
                "canvas must be finite and larger than {} px per side",
                2.0 * MARGIN
            )));
        }
        if !(self.stroke_width.is_finite() && self.stroke_width >= 0.0) {
            return Err(Error::InvalidParameter("stroke width must be finite and non-negative".into()));
        }
        if let Some((lo, hi)) = self.score_range {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidParameter(format!("bad score range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Rgb(u8, u8, u8);

impl Rgb {
    fn lerp(a: Rgb, b: Rgb, t: f64) -> Rgb {
        let mix = |x: u8, y: u8| (x as f64 + (y as f64 - x as f64) * t).round() as u8;
        Rgb(mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
    }

    fn hex(self) -> String {
        format!("#{:02x}{:02x}{:02x}", self.0, self.1, self.2)
    }
}

/// Diverging scale: `lo` maps to red, the midpoint to near-white, `hi` to blue.
fn score_color(score: f64, lo: f64, hi: f64) -> Rgb {
    let t = ((score - lo) / (hi - lo)).clamp(0.0, 1.0);
    if t < 0.5 {
        Rgb::lerp(LOW, MID, t * 2.0)
    } else {
        Rgb::lerp(MID, HIGH, (t - 0.5) * 2.0)
    }
}

fn num(x: f64) -> String {
    let s = format!("{x:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".to_string() } else { s.to_string() }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn resolve_range(ids: &[String], scores: &ScoreTable, spec: &RenderSpec) -> (f64, f64) {
    if let Some(r) = spec.score_range {
        return r;
    }
    let present: Vec<f64> = ids.iter().filter_map(|id| scores.get(id)).collect();
    let lo = present.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = present.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if present.is_empty() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Builds the SVG document. `ids[i]` names `low[i]`.
pub fn svg_string(ids: &[String], low: &[LowDimBox], scores: &ScoreTable, spec: &RenderSpec) -> Result<String> {
    spec.validate()?;
    if ids.len() != low.len() {
        return Err(Error::DimensionMismatch {
            left: ids.len(),
            right: low.len(),
        });
    }
    for b in low {
        if b.dim() != 2 {
            return Err(Error::DimensionMismatch { left: 2, right: b.dim() });
        }
        if !(b.center.iter().all(|c| c.is_finite()) && b.delta.is_finite() && b.delta > 0.0) {
            return Err(Error::InvalidBox("non-finite or non-positive box".into()));
        }
    }
    let (lo, hi) = resolve_range(ids, scores, spec);

    // Uniform scale keeps relative areas; the layout is centered on the canvas.
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for b in low {
        x0 = x0.min(b.center[0] - b.delta);
        x1 = x1.max(b.center[0] + b.delta);
        y0 = y0.min(b.center[1] - b.delta);
        y1 = y1.max(b.center[1] + b.delta);
    }
    let (scale, cx, cy) = if low.is_empty() {
        (1.0, 0.0, 0.0)
    } else {
        let s = ((spec.width - 2.0 * MARGIN) / (x1 - x0)).min((spec.height - 2.0 * MARGIN) / (y1 - y0));
        (s, (x0 + x1) / 2.0, (y0 + y1) / 2.0)
    };
    let to_x = |x: f64| spec.width / 2.0 + (x - cx) * scale;
    let to_y = |y: f64| spec.height / 2.0 - (y - cy) * scale;

    let mut order: Vec<usize> = (0..low.len()).collect();
    order.sort_by(|&a, &b| low[b].delta.total_cmp(&low[a].delta));

    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#,
        w = num(spec.width),
        h = num(spec.height)
    );
    let _ = writeln!(out, r##"<rect x="0" y="0" width="{}" height="{}" fill="#ffffff"/>"##, num(spec.width), num(spec.height));
    let _ = writeln!(out, r##"<g id="boxes" fill-opacity="0.6" stroke="#333333" stroke-width="{}">"##, num(spec.stroke_width));
    for &i in &order {
        let b = &low[i];
        let fill = scores.get(&ids[i]).map_or(MISSING, |s| score_color(s, lo, hi));
        let side = 2.0 * b.delta * scale;
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{}"><title>{}</title></rect>"#,
            num(to_x(b.center[0] - b.delta)),
            num(to_y(b.center[1] + b.delta)),
            num(side),
            num(side),
            fill.hex(),
            escape(&ids[i])
        );
    }
    let _ = writeln!(out, "</g>");
    if spec.labels {
        let _ = writeln!(out, r#"<g id="labels" font-family="sans-serif" font-size="10" text-anchor="middle">"#);
        for &i in &order {
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}">{}</text>"#,
                num(to_x(low[i].center[0])),
                num(to_y(low[i].center[1])),
                escape(&ids[i])
            );
        }
        let _ = writeln!(out, "</g>");
    }

    let sw = 14.0;
    let lx = spec.width - MARGIN - sw * LEGEND_STEPS as f64;
    let ly = spec.height - MARGIN / 2.0 - sw;
    let _ = writeln!(out, r#"<g id="legend" font-family="sans-serif" font-size="10">"#);
    for k in 0..LEGEND_STEPS {
        let s = lo + (hi - lo) * k as f64 / (LEGEND_STEPS - 1) as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{}"/>"#,
            num(lx + sw * k as f64),
            num(ly),
            num(sw),
            num(sw),
            score_color(s, lo, hi).hex()
        );
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, num(lx - 4.0), num(ly + sw - 3.0), num(lo));
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}">{}</text>"#,
        num(lx + sw * LEGEND_STEPS as f64 + 4.0),
        num(ly + sw - 3.0),
        num(hi)
    );
    let _ = writeln!(out, "</g>");
    let _ = writeln!(out, "</svg>");
    Ok(out)
}

pub fn render_svg(
    ids: &[String],
    low: &[LowDimBox],
    scores: &ScoreTable,
    spec: &RenderSpec,
    path: impl AsRef<Path>,
) -> Result<()> {
    let svg = svg_string(ids, low, scores, spec)?;
    fs::write(path, svg)?;
    Ok(())
}
