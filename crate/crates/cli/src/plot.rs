//! Scene figures as standalone SVG.

use std::fmt::Write;

use laneforecast::model::Forecast;
use laneforecast::scene::{Point, Scene};

const SIZE: f64 = 800.0;
const MARGIN: f64 = 20.0;
const MODE_COLORS: [&str; 6] = ["#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
const MODE_DASHES: [&str; 6] = ["none", "6 3", "2 3", "8 3 2 3", "4 4", "1 2"];

struct View {
    min: Point,
    scale: f64,
}

impl View {
    fn fit(points: impl Iterator<Item = Point>) -> View {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in points {
            for c in 0..2 {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1.0);
        View {
            min: lo,
            scale: (SIZE - 2.0 * MARGIN) / span,
        }
    }

    fn px(&self, p: Point) -> (f64, f64) {
        (MARGIN + (p[0] - self.min[0]) * self.scale, SIZE - MARGIN - (p[1] - self.min[1]) * self.scale)
    }

    fn polyline(&self, pts: &[Point], stroke: &str, width: f64, dash: &str) -> String {
        let coords: Vec<String> = pts
            .iter()
            .map(|&p| {
                let (x, y) = self.px(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"{width}\" stroke-dasharray=\"{dash}\"/>\n",
            coords.join(" ")
        )
    }
}

/// Lane centerlines, observed past in yellow, ground truth in red, one
/// stroke style per predicted mode, and a 2 m circle at the true endpoint.
pub fn scene_svg(scene: &Scene, forecast: &Forecast) -> String {
    let focus = scene.focus();
    let all = scene
        .graph
        .node_positions
        .iter()
        .copied()
        .chain(focus.past_positions().iter().copied())
        .chain(focus.future_positions().iter().copied())
        .chain(forecast.modes.iter().flatten().copied());
    let v = View::fit(all);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">"
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    for lane in &scene.graph.lanes {
        let pts: Vec<Point> = lane.nodes.iter().map(|&i| scene.graph.node_positions[i]).collect();
        s.push_str(&v.polyline(&pts, "#bbbbbb", 1.5, "none"));
    }
    for (i, a) in scene.agents.iter().enumerate() {
        if i == scene.focus_agent {
            continue;
        }
        let observed = observed_past(a.past_positions(), a.observed_mask());
        s.push_str(&v.polyline(&observed, "#7fa7d9", 1.5, "none"));
    }
    for (k, m) in forecast.modes.iter().enumerate() {
        let mut pts = vec![focus.current()];
        pts.extend(m);
        let w = 1.0 + 2.0 * forecast.scores.get(k).copied().unwrap_or(0.0);
        s.push_str(&v.polyline(&pts, MODE_COLORS[k % 6], w, MODE_DASHES[k % 6]));
    }
    if let Some(end) = focus.endpoint() {
        let mut gt = vec![focus.current()];
        gt.extend(focus.future_positions());
        s.push_str(&v.polyline(&gt, "#d62728", 2.5, "none"));
        let (x, y) = v.px(end);
        let _ = writeln!(
            s,
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{:.2}\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"1\"/>",
            2.0 * v.scale
        );
    }
    let observed = observed_past(focus.past_positions(), focus.observed_mask());
    s.push_str(&v.polyline(&observed, "#e6b800", 3.0, "none"));
    s.push_str("</svg>\n");
    s
}

fn observed_past(past: &[Point], mask: &[bool]) -> Vec<Point> {
    let first = mask.iter().position(|&m| m).unwrap_or(mask.len());
    past[first..].to_vec()
}
