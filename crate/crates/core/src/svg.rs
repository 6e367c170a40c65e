// SPDX-License-Identifier: MIT OR Apache-2.0

//! Standalone SVG plots of analysis reports.
//!
//! Output depends only on the report: coordinates are printed with a fixed
//! number of decimals and no timestamps or random ids are emitted.

use std::fmt::Write;
use std::str::FromStr;

use crate::attribution::{ComponentResult, RankBy};
use crate::comparator::ComparisonResult;
use crate::error::{Error, Result};
use crate::geometry::DoseResponse;
use crate::lens::RewardLensResult;
use crate::patching::PatchingResult;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
/// Bars drawn by the top-k plot.
pub const TOPK_BARS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Trajectory,
    TopkBar,
    Heatmap,
    DoseResponse,
    Overlay,
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trajectory" => Ok(PlotKind::Trajectory),
            "topk-bar" => Ok(PlotKind::TopkBar),
            "heatmap" => Ok(PlotKind::Heatmap),
            "dose-response" => Ok(PlotKind::DoseResponse),
            "overlay" => Ok(PlotKind::Overlay),
            _ => Err(Error::Argument(format!("unknown plot kind `{s}`"))),
        }
    }
}

/// Reports that can be plotted.
#[derive(Debug, Clone, Copy)]
pub enum PlotSource<'a> {
    Lens(&'a RewardLensResult),
    Attribution(&'a ComponentResult),
    Patching(&'a PatchingResult),
    Dose(&'a DoseResponse),
    Comparison(&'a ComparisonResult),
}

pub fn emit_svg(source: PlotSource<'_>, kind: PlotKind) -> Result<String> {
    match (kind, source) {
        (PlotKind::Trajectory, PlotSource::Lens(r)) => Ok(trajectory(r)),
        (PlotKind::TopkBar, PlotSource::Attribution(r)) => {
            let k = TOPK_BARS.min(r.component_names.len());
            let bars = r.top_k(k, RankBy::Differential)?.into_iter().map(|c| (c.name, c.value)).collect();
            Ok(topk_bar("Top components by differential contribution", bars))
        }
        (PlotKind::TopkBar, PlotSource::Patching(r)) => {
            let mut idx: Vec<usize> = (0..r.patch_effects.len()).collect();
            idx.sort_by(|&a, &b| r.patch_effects[b].abs().total_cmp(&r.patch_effects[a].abs()).then(a.cmp(&b)));
            let bars = idx
                .into_iter()
                .take(TOPK_BARS)
                .map(|i| (r.component_names[i].clone(), r.patch_effects[i]))
                .collect();
            Ok(topk_bar(&format!("Top components by {} patch effect", r.mode), bars))
        }
        (PlotKind::Heatmap, PlotSource::Attribution(r)) => Ok(heatmap(r)),
        (PlotKind::DoseResponse, PlotSource::Dose(r)) => Ok(dose(r)),
        (PlotKind::Overlay, PlotSource::Comparison(r)) => Ok(overlay(r)),
        (kind, _) => Err(Error::Argument(format!("{kind:?} plot does not apply to this report"))),
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn fmt(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

/// Data range padded so that a flat series still gets a visible band.
fn range(values: impl Iterator<Item = f64>, include_zero: bool) -> (f64, f64) {
    let (mut lo, mut hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    if include_zero {
        lo = lo.min(0.0);
        hi = hi.max(0.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

struct Canvas {
    out: String,
    x: (f64, f64),
    y: (f64, f64),
}

impl Canvas {
    fn new(title: &str, x_label: &str, y_label: &str, x: (f64, f64), y: (f64, f64)) -> Self {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
            w = WIDTH,
            h = HEIGHT
        );
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
            fmt(WIDTH / 2.0),
            escape(title)
        );
        let mut c = Canvas { out, x, y };
        c.axes(x_label, y_label);
        c
    }

    fn px(&self, v: f64) -> f64 {
        LEFT + (v - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, v: f64) -> f64 {
        HEIGHT - BOTTOM - (v - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }

    fn axes(&mut self, x_label: &str, y_label: &str) {
        let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
        let _ = writeln!(
            self.out,
            r##"<g id="axes" stroke="#333" stroke-width="1"><line x1="{a}" y1="{b}" x2="{c}" y2="{b}"/><line x1="{a}" y1="{b}" x2="{a}" y2="{d}"/></g>"##,
            a = fmt(x0),
            b = fmt(y0),
            c = fmt(x1),
            d = fmt(y1)
        );
        for (v, anchor) in [(self.y.0, "end"), (self.y.1, "end")] {
            let _ = writeln!(
                self.out,
                r#"<text x="{}" y="{}" text-anchor="{anchor}">{}</text>"#,
                fmt(LEFT - 6.0),
                fmt(self.py(v) + 4.0),
                fmt(v)
            );
        }
        for v in [self.x.0, self.x.1] {
            let _ = writeln!(
                self.out,
                r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
                fmt(self.px(v)),
                fmt(HEIGHT - BOTTOM + 16.0),
                fmt(v)
            );
        }
        let _ = writeln!(
            self.out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            fmt((LEFT + WIDTH - RIGHT) / 2.0),
            fmt(HEIGHT - 12.0),
            escape(x_label)
        );
        let _ = writeln!(
            self.out,
            r#"<text x="16" y="{y}" text-anchor="middle" transform="rotate(-90 16 {y})">{}</text>"#,
            escape(y_label),
            y = fmt((TOP + HEIGHT - BOTTOM) / 2.0)
        );
        if self.y.0 < 0.0 && self.y.1 > 0.0 {
            let _ = writeln!(
                self.out,
                r##"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="#bbb" stroke-dasharray="4 3"/>"##,
                fmt(LEFT),
                fmt(WIDTH - RIGHT),
                y = fmt(self.py(0.0))
            );
        }
    }

    fn polyline(&mut self, xs: &[f64], ys: &[f64], color: &str, label: &str) {
        if xs.is_empty() {
            return;
        }
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| format!("{},{}", fmt(self.px(x)), fmt(self.py(y))))
            .collect();
        let _ = writeln!(
            self.out,
            r#"<polyline class="series" data-label="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            escape(label),
            pts.join(" ")
        );
    }

    fn points(&mut self, xs: &[f64], ys: &[f64], color: &str) {
        for (&x, &y) in xs.iter().zip(ys) {
            let _ = writeln!(
                self.out,
                r#"<circle cx="{}" cy="{}" r="3" fill="{color}"/>"#,
                fmt(self.px(x)),
                fmt(self.py(y))
            );
        }
    }

    fn legend(&mut self, entries: &[(&str, &str)]) {
        for (i, (label, color)) in entries.iter().enumerate() {
            let y = TOP + 8.0 + 16.0 * i as f64;
            let x = WIDTH - RIGHT - 150.0;
            let _ = writeln!(
                self.out,
                r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
                fmt(x),
                fmt(y - 9.0),
                fmt(x + 14.0),
                fmt(y),
                escape(label)
            );
        }
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn trajectory(r: &RewardLensResult) -> String {
    let xs: Vec<f64> = r.layers.iter().map(|&l| l as f64).collect();
    let mut series: Vec<(&str, &[f64])> = vec![("preferred", &r.lens_preferred)];
    if !r.lens_dispreferred.is_empty() {
        series.push(("dispreferred", &r.lens_dispreferred));
        series.push(("differential", &r.differential));
    }
    let y = range(series.iter().flat_map(|(_, s)| s.iter().copied()), true);
    let x = if xs.len() > 1 { (xs[0], xs[xs.len() - 1]) } else { (-1.0, 0.0) };
    let mut c = Canvas::new("Reward lens trajectory", "layer", "lens reward", x, y);
    let mut legend = Vec::new();
    for (i, (label, s)) in series.iter().enumerate() {
        c.polyline(&xs, s, PALETTE[i], label);
        c.points(&xs, s, PALETTE[i]);
        legend.push((*label, PALETTE[i]));
    }
    if let Some(l) = r.crystallisation_layer {
        let px = fmt(c.px(l as f64));
        let _ = writeln!(
            c.out,
            r##"<line id="crystallisation-marker" data-layer="{l}" x1="{px}" y1="{}" x2="{px}" y2="{}" stroke="#555" stroke-dasharray="6 4"/>"##,
            fmt(TOP),
            fmt(HEIGHT - BOTTOM)
        );
    }
    c.legend(&legend);
    c.finish()
}

fn topk_bar(title: &str, bars: Vec<(String, f64)>) -> String {
    let n = bars.len().max(1) as f64;
    let y = range(bars.iter().map(|b| b.1), true);
    let mut c = Canvas::new(title, "component", "value", (0.0, n), y);
    for (i, (name, v)) in bars.iter().enumerate() {
        let (x0, x1) = (c.px(i as f64 + 0.1), c.px(i as f64 + 0.9));
        let (ya, yb) = (c.py(*v), c.py(0.0));
        let color = if *v >= 0.0 { PALETTE[0] } else { PALETTE[1] };
        let _ = writeln!(
            c.out,
            r#"<rect class="bar" data-label="{}" x="{}" y="{}" width="{}" height="{}" fill="{color}"/>"#,
            escape(name),
            fmt(x0),
            fmt(ya.min(yb)),
            fmt(x1 - x0),
            fmt((ya - yb).abs())
        );
        let _ = writeln!(
            c.out,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
            fmt((x0 + x1) / 2.0),
            fmt(HEIGHT - BOTTOM + 30.0),
            escape(name)
        );
    }
    c.finish()
}

fn heat_color(v: f64, scale: f64) -> String {
    let t = if scale > 0.0 { (v / scale).clamp(-1.0, 1.0) } else { 0.0 };
    let fade = |t: f64| (255.0 * (1.0 - t.abs())).round() as u8;
    if t >= 0.0 {
        format!("#ff{:02x}{:02x}", fade(t), fade(t))
    } else {
        format!("#{:02x}{:02x}ff", fade(t), fade(t))
    }
}

fn heatmap(r: &ComponentResult) -> String {
    let grid = r.heatmap();
    let cols = grid[0].len();
    let scale = grid.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut c = Canvas::new("Differential contribution by layer", "layer (first column: embedding)", "", (0.0, cols as f64), (0.0, 2.0));
    // Attention on the upper band, MLP on the lower one.
    for (values, (label, band)) in grid.iter().zip([("attn", 1.0), ("mlp", 0.0)]) {
        for (j, v) in values.iter().enumerate() {
            let (x0, x1) = (c.px(j as f64), c.px(j as f64 + 1.0));
            let (y0, y1) = (c.py(band + 1.0), c.py(band));
            let _ = writeln!(
                c.out,
                r##"<rect class="cell" data-row="{label}" data-col="{j}" data-value="{}" x="{}" y="{}" width="{}" height="{}" fill="{}" stroke="#fff"/>"##,
                fmt(*v),
                fmt(x0),
                fmt(y0),
                fmt(x1 - x0),
                fmt(y1 - y0),
                heat_color(*v, scale)
            );
        }
        let _ = writeln!(
            c.out,
            r#"<text x="{}" y="{}" text-anchor="end">{label}</text>"#,
            fmt(LEFT - 6.0),
            fmt(c.py(band + 0.5))
        );
    }
    c.finish()
}

fn dose(r: &DoseResponse) -> String {
    let x = range(r.alphas.iter().copied(), true);
    let y = range(r.deltas.iter().chain(&r.lens_deltas).copied(), true);
    let mut c = Canvas::new(&format!("Dose response: {} at layer {}", r.concept, r.layer), "alpha", "reward change", x, y);
    c.points(&r.alphas, &r.deltas, PALETTE[0]);
    c.points(&r.alphas, &r.lens_deltas, PALETTE[1]);
    let ends = [x.0, x.1];
    c.polyline(&ends, &ends.map(|a| r.causal_slope * a), PALETTE[0], "reward fit");
    c.polyline(&ends, &ends.map(|a| r.lens_causal_slope * a), PALETTE[1], "lens fit");
    c.legend(&[("reward", PALETTE[0]), ("lens readout", PALETTE[1])]);
    c.finish()
}

fn overlay(r: &ComparisonResult) -> String {
    let y = range(r.interpolated_differentials.iter().flatten().copied(), true);
    let mut c = Canvas::new("Differential by fractional depth", "depth", "differential", (0.0, 1.0), y);
    let mut legend = Vec::new();
    for (i, (name, curve)) in r.model_names.iter().zip(&r.interpolated_differentials).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        c.polyline(&r.depth_grid, curve, color, name);
        legend.push((name.as_str(), color));
    }
    c.legend(&legend);
    c.finish()
}
