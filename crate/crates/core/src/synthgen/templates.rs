use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::geometry::{add, dir, left_normal, scale, Route, Seg};
use crate::scene::{Adjacency, Lane, LaneGraph, Maneuver, Point, FEAT_INTERSECTION, FEAT_TURN, NODE_FEATURES};

pub const LANE_WIDTH: f64 = 3.5;
/// Half-size of the junction box.
pub const JUNCTION_HALF: f64 = 7.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Template {
    Straight,
    TIntersection,
    CrossIntersection,
    Curve,
}

impl Template {
    pub const ALL: [Template; 4] = [
        Template::Straight,
        Template::TIntersection,
        Template::CrossIntersection,
        Template::Curve,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Template::Straight => "straight",
            Template::TIntersection => "t-intersection",
            Template::CrossIntersection => "cross-intersection",
            Template::Curve => "curve",
        }
    }

    pub fn supports(self, m: Maneuver) -> bool {
        match self {
            Template::Straight | Template::Curve => !m.is_turn(),
            Template::TIntersection | Template::CrossIntersection => m != Maneuver::LaneChange,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct TemplateLane {
    pub route: Route,
    pub intersection: bool,
    pub turn: bool,
}

/// A movement through a junction: incoming lane, connector, outgoing lane.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Movement {
    pub incoming: usize,
    pub connector: usize,
    pub outgoing: usize,
    pub kind: Maneuver,
}

#[derive(Clone, Debug)]
pub(crate) struct TemplateMap {
    pub template: Template,
    pub lanes: Vec<TemplateLane>,
    /// Lane-level successor links.
    pub succ: Vec<(usize, usize)>,
    pub movements: Vec<Movement>,
    pub graph: LaneGraph,
}

impl TemplateMap {
    pub fn successors(&self, lane: usize) -> impl Iterator<Item = usize> + '_ {
        self.succ.iter().filter(move |&&(a, _)| a == lane).map(|&(_, b)| b)
    }
}

pub(crate) fn build<R: Rng>(rng: &mut R, template: Template, spacing: f64) -> TemplateMap {
    let (lanes, succ, parallel, movements) = match template {
        Template::Straight => {
            let len = rng.random_range(90.0..110.0);
            let right = Route::new(vec![Seg::line([-30.0, 0.0], 0.0, len)]);
            let left = right.offset(LANE_WIDTH);
            (two_lane(right, left), vec![], vec![(0, 1)], vec![])
        }
        Template::Curve => {
            let radius = rng.random_range(150.0..300.0);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let lead = rng.random_range(20.0..40.0);
            let total = rng.random_range(95.0..110.0);
            let right = Route::new(vec![
                Seg::line([-30.0, 0.0], 0.0, lead),
                Seg {
                    start: [-30.0 + lead, 0.0],
                    heading: 0.0,
                    curvature: sign / radius,
                    length: total - lead,
                },
            ]);
            let left = right.offset(LANE_WIDTH);
            (two_lane(right, left), vec![], vec![(0, 1)], vec![])
        }
        Template::TIntersection => junction(rng, &[0.0, PI, 1.5 * PI]),
        Template::CrossIntersection => junction(rng, &[0.0, FRAC_PI_2, PI, 1.5 * PI]),
    };
    let graph = discretize(&lanes, &succ, &parallel, spacing);
    TemplateMap {
        template,
        lanes,
        succ,
        movements,
        graph,
    }
}

fn two_lane(right: Route, left: Route) -> Vec<TemplateLane> {
    [right, left]
        .into_iter()
        .map(|route| TemplateLane {
            route,
            intersection: false,
            turn: false,
        })
        .collect()
}

/// Lanes, lane-level successors, `(right, left)` same-direction neighbor
/// pairs, and junction movements.
type Layout = (Vec<TemplateLane>, Vec<(usize, usize)>, Vec<(usize, usize)>, Vec<Movement>);

/// Right-hand-traffic junction; `arms` are the directions the arms extend
/// from the center.
fn junction<R: Rng>(rng: &mut R, arms: &[f64]) -> Layout {
    let h = JUNCTION_HALF;
    let half_w = LANE_WIDTH / 2.0;
    let mut lanes = Vec::new();
    let mut incoming = Vec::new();
    let mut outgoing = Vec::new();
    for &phi in arms {
        let len = rng.random_range(32.0..40.0);
        let u = dir(phi);
        let h_in = phi + PI;
        let right_in = scale(left_normal(h_in), -half_w);
        let start = add(scale(u, h + len), right_in);
        incoming.push(lanes.len());
        lanes.push(TemplateLane {
            route: Route::new(vec![Seg::line(start, h_in, len)]),
            intersection: false,
            turn: false,
        });
        let right_out = scale(left_normal(phi), -half_w);
        outgoing.push(lanes.len());
        lanes.push(TemplateLane {
            route: Route::new(vec![Seg::line(add(scale(u, h), right_out), phi, len)]),
            intersection: false,
            turn: false,
        });
    }
    let mut succ = Vec::new();
    let mut movements = Vec::new();
    for (a, &phi_a) in arms.iter().enumerate() {
        let p = lanes[incoming[a]].route.end();
        let h_in = phi_a + PI;
        for (b, &phi_b) in arms.iter().enumerate() {
            if a == b {
                continue;
            }
            let turn = wrap(phi_b - h_in);
            let (kind, seg) = if turn.abs() < 1e-9 {
                (Maneuver::MaintainSpeed, Seg::line(p, h_in, 2.0 * h))
            } else if (turn - FRAC_PI_2).abs() < 1e-9 {
                let r = h + half_w;
                (Maneuver::TurnLeft, arc(p, h_in, r, 1.0))
            } else {
                let r = h - half_w;
                (Maneuver::TurnRight, arc(p, h_in, r, -1.0))
            };
            debug_assert!({
                let q = lanes[outgoing[b]].route.start();
                (seg.end()[0] - q[0]).hypot(seg.end()[1] - q[1]) < 1e-9
            });
            let c = lanes.len();
            lanes.push(TemplateLane {
                route: Route::new(vec![seg]),
                intersection: true,
                turn: kind.is_turn(),
            });
            succ.push((incoming[a], c));
            succ.push((c, outgoing[b]));
            movements.push(Movement {
                incoming: incoming[a],
                connector: c,
                outgoing: outgoing[b],
                kind,
            });
        }
    }
    (lanes, succ, vec![], movements)
}

fn arc(start: Point, heading: f64, radius: f64, sign: f64) -> Seg {
    Seg {
        start,
        heading,
        curvature: sign / radius,
        length: radius * FRAC_PI_2,
    }
}

fn wrap(a: f64) -> f64 {
    let t = a.rem_euclid(2.0 * PI);
    if t > PI {
        t - 2.0 * PI
    } else {
        t
    }
}

/// Samples nodes at segment midpoints (`n = round(len / spacing)`, at least one).
fn discretize(
    lanes: &[TemplateLane],
    succ: &[(usize, usize)],
    parallel: &[(usize, usize)],
    spacing: f64,
) -> LaneGraph {
    let mut positions = Vec::new();
    let mut features = Vec::new();
    let mut flags = Vec::new();
    let mut graph_lanes = Vec::new();
    let mut suc_edges = Vec::new();
    for (li, lane) in lanes.iter().enumerate() {
        let len = lane.route.length();
        let n = ((len / spacing).round() as usize).max(1);
        let step = len / n as f64;
        let first = positions.len();
        for i in 0..n {
            let s = (i as f64 + 0.5) * step;
            positions.push(lane.route.point_at(s));
            let d = dir(lane.route.heading_at(s));
            let mut f = [0.0; NODE_FEATURES];
            f[0] = d[0];
            f[1] = d[1];
            f[FEAT_INTERSECTION] = if lane.intersection { 1.0 } else { 0.0 };
            f[FEAT_TURN] = if lane.turn { 1.0 } else { 0.0 };
            features.push(f);
            flags.push(lane.intersection);
            if i > 0 {
                suc_edges.push((first + i - 1, first + i));
            }
        }
        graph_lanes.push(Lane {
            id: li as u32,
            nodes: (first..first + n).collect(),
        });
    }
    for &(a, b) in succ {
        let last = *graph_lanes[a].nodes.last().unwrap();
        suc_edges.push((last, graph_lanes[b].nodes[0]));
    }
    let mut left = Vec::new();
    let mut right = Vec::new();
    for &(r, l) in parallel {
        for &g in &graph_lanes[r].nodes {
            left.push((g, nearest(&positions, positions[g], &graph_lanes[l].nodes)));
        }
        for &g in &graph_lanes[l].nodes {
            right.push((g, nearest(&positions, positions[g], &graph_lanes[r].nodes)));
        }
    }
    LaneGraph {
        node_positions: positions,
        node_features: features,
        adjacency: Adjacency::from_suc(suc_edges, left, right),
        lanes: graph_lanes,
        intersection_flags: flags,
    }
}

fn nearest(positions: &[Point], p: Point, candidates: &[usize]) -> usize {
    *candidates
        .iter()
        .min_by(|&&a, &&b| {
            let da = (positions[a][0] - p[0]).hypot(positions[a][1] - p[1]);
            let db = (positions[b][0] - p[0]).hypot(positions[b][1] - p[1]);
            da.total_cmp(&db)
        })
        .unwrap()
}
