//! Minimal SVG renderings: demand/evacuation curve plots and a color-scaled
//! network speed map for a chosen time bin. No plotting dependencies; the
//! output is deterministic for fixed inputs.

use std::fmt::Write;

use crate::metrics::{EvacCurve, SpeedMap};
use crate::network::RoadNetwork;

const CURVE_COLORS: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Line plot of the cumulative demand curve (black, dashed) and each
/// scenario's cumulative finished curve.
pub fn curves_svg(scenarios: &[(String, &EvacCurve)]) -> String {
    let (w, h, ml, mb) = (720.0, 440.0, 60.0, 40.0);
    let plot_w = w - ml - 20.0;
    let plot_h = h - mb - 20.0;
    let t_max = scenarios
        .iter()
        .map(|(_, c)| c.finished_time_at(1.0))
        .fold(1.0f64, f64::max)
        .max(scenarios.iter().map(|(_, c)| c.demand_time_at(1.0)).fold(1.0f64, f64::max));
    let x = |t: f64| ml + plot_w * (t / t_max);
    let y = |frac: f64| 20.0 + plot_h * (1.0 - frac);

    let mut svg = String::new();
    write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    )
    .unwrap();
    svg.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    // Axes and fraction gridlines.
    for i in 0..=4 {
        let frac = i as f64 / 4.0;
        let yy = y(frac);
        write!(
            svg,
            r##"<line x1="{ml}" y1="{yy:.1}" x2="{:.1}" y2="{yy:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{:.0}%</text>"##,
            ml + plot_w,
            ml - 6.0,
            yy + 4.0,
            frac * 100.0
        )
        .unwrap();
    }
    for i in 0..=6 {
        let t = t_max * i as f64 / 6.0;
        let xx = x(t);
        write!(
            svg,
            r#"<text x="{xx:.1}" y="{:.1}" font-size="11" text-anchor="middle">{:.1} h</text>"#,
            20.0 + plot_h + 16.0,
            t / 3600.0
        )
        .unwrap();
    }

    let polyline = |curve: &EvacCurve, demand: bool| -> String {
        let mut pts = String::new();
        let steps = 400;
        for i in 0..=steps {
            let frac = (i as f64 / steps as f64).clamp(1e-9, 1.0);
            let t = if demand { curve.demand_time_at(frac) } else { curve.finished_time_at(frac) };
            write!(pts, "{:.1},{:.1} ", x(t), y(frac)).unwrap();
        }
        pts
    };

    if let Some((_, first)) = scenarios.first() {
        write!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="black" stroke-dasharray="6 3" stroke-width="1.5"/>"#,
            polyline(first, true)
        )
        .unwrap();
        svg.push_str(
            r#"<text x="70" y="34" font-size="12" fill="black">demand (cumulative)</text>"#,
        );
    }
    for (i, (name, curve)) in scenarios.iter().enumerate() {
        let color = CURVE_COLORS[i % CURVE_COLORS.len()];
        write!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            polyline(curve, false)
        )
        .unwrap();
        write!(
            svg,
            r#"<text x="70" y="{:.1}" font-size="12" fill="{color}">{name}</text>"#,
            50.0 + 16.0 * i as f64
        )
        .unwrap();
    }
    svg.push_str("</svg>");
    svg
}

fn speed_color(ratio: f64) -> String {
    // red (jammed) -> yellow -> green (free flow)
    let r = ratio.clamp(0.0, 1.0);
    let (red, green) = if r < 0.5 { (255.0, 510.0 * r) } else { (510.0 * (1.0 - r), 255.0) };
    format!("rgb({},{},0)", red.round() as u8, green.round() as u8)
}

/// Draws every edge between its node coordinates, colored by mean speed over
/// speed limit in the chosen bin; edges without samples are grey.
pub fn speed_map_svg(net: &RoadNetwork, map: &SpeedMap, bin: u64) -> String {
    let (min_x, max_x) = net
        .nodes
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), n| (lo.min(n.x), hi.max(n.x)));
    let (min_y, max_y) = net
        .nodes
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), n| (lo.min(n.y), hi.max(n.y)));
    let span_x = (max_x - min_x).max(1.0);
    let span_y = (max_y - min_y).max(1.0);
    let scale = (900.0 / span_x).min(900.0 / span_y);
    let w = span_x * scale + 40.0;
    let h = span_y * scale + 60.0;
    let x = |v: f64| 20.0 + (v - min_x) * scale;
    // SVG y grows downward.
    let y = |v: f64| 20.0 + (max_y - v) * scale;

    let mut svg = String::new();
    write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    )
    .unwrap();
    svg.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    for e in &net.edges {
        let a = net.node(e.from);
        let b = net.node(e.to);
        let (color, width) = match map.cell(&e.id, bin) {
            Some((mean, _)) => (speed_color(mean / e.speed_limit_mps), 1.0 + e.lane_count() as f64),
            None => ("#cccccc".to_string(), 1.0),
        };
        write!(
            svg,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{}" stroke-width="{:.1}"/>"#,
            x(a.x),
            y(a.y),
            x(b.x),
            y(b.y),
            color,
            width
        )
        .unwrap();
    }
    write!(
        svg,
        r#"<text x="20" y="{:.1}" font-size="13">bin {} ({}-{} s); red = jammed, green = free flow, grey = no samples</text>"#,
        h - 16.0,
        bin,
        bin * map.bin_s,
        (bin + 1) * map.bin_s
    )
    .unwrap();
    svg.push_str("</svg>");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn color_scale_endpoints() {
        assert_eq!(speed_color(0.0), "rgb(255,0,0)");
        assert_eq!(speed_color(1.0), "rgb(0,255,0)");
        assert_eq!(speed_color(0.5), "rgb(255,255,0)");
    }
}
