use serde::{Deserialize, Serialize};

use super::kmeans::{constrained_kmeans, ClusterSizes};
use crate::error::Result;
use crate::scene::{dist, LaneGraph, Maneuver, Point, Scene};

/// Bearing threshold separating lateral from longitudinal motion.
pub const LATERAL_ANGLE_DEG: f64 = 20.0;
/// Lateral offset change that counts as leaving the lane (half a lane width).
pub const LANE_CHANGE_OFFSET: f64 = 1.75;
/// Maximum deviation of the final nearest centerline from +x for a lane change.
pub const LANE_CHANGE_ORIENTATION_DEG: f64 = 20.0;

/// Fitted cluster centroids in endpoint space.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ManeuverModel {
    /// Endpoint x of decelerate, maintain-speed, accelerate (ascending).
    pub longitudinal: Option<[f64; 3]>,
    /// Endpoints of turn-left and turn-right.
    pub lateral: Option<[Point; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManeuverLabels {
    /// Focus-agent label per input scene; `None` when the future is absent.
    pub labels: Vec<Option<Maneuver>>,
    pub model: ManeuverModel,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Group {
    LaneChange,
    Lateral(Point),
    Longitudinal(Point),
}

fn nearest_node(graph: &LaneGraph, p: Point) -> Option<usize> {
    (0..graph.num_nodes()).min_by(|&a, &b| {
        dist(graph.node_positions[a], p).total_cmp(&dist(graph.node_positions[b], p))
    })
}

/// Signed distance (left positive) from `p` to the line through the lane
/// segment nearest to it.
fn lateral_offset(graph: &LaneGraph, lane: &[usize], p: Point) -> f64 {
    let pts: Vec<Point> = lane.iter().map(|&n| graph.node_positions[n]).collect();
    if pts.len() == 1 {
        let f = graph.node_features[lane[0]];
        let (a, d) = (pts[0], [f[0], f[1]]);
        return d[0] * (p[1] - a[1]) - d[1] * (p[0] - a[0]);
    }
    let mut best = (f64::INFINITY, 0.0);
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let d = [b[0] - a[0], b[1] - a[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        if len2 == 0.0 {
            continue;
        }
        let t = (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0);
        let q = [a[0] + t * d[0], a[1] + t * d[1]];
        let seg_dist = dist(p, q);
        if seg_dist < best.0 {
            let len = len2.sqrt();
            best = (seg_dist, (d[0] * (p[1] - a[1]) - d[1] * (p[0] - a[0])) / len);
        }
    }
    best.1
}

fn classify(scene: &Scene) -> Option<Group> {
    let focus = scene.focus();
    let end = focus.endpoint()?;
    let start = focus.current();
    let g = &scene.graph;
    if let (Some(ns), Some(ne)) = (nearest_node(g, start), nearest_node(g, end)) {
        let lane = &g.lanes[g.lane_of_node()[ns]].nodes;
        let shift = (lateral_offset(g, lane, end) - lateral_offset(g, lane, start)).abs();
        let f = g.node_features[ne];
        let orient = f[1].atan2(f[0]).to_degrees().abs();
        if shift >= LANE_CHANGE_OFFSET && orient <= LANE_CHANGE_ORIENTATION_DEG {
            return Some(Group::LaneChange);
        }
    }
    let d = [end[0] - start[0], end[1] - start[1]];
    let bearing = d[1].atan2(d[0]).to_degrees().abs();
    Some(if bearing > LATERAL_ANGLE_DEG {
        Group::Lateral(end)
    } else {
        Group::Longitudinal(end)
    })
}

impl ManeuverModel {
    /// Nearest-centroid label for a scene outside the fitting set.
    pub fn assign(&self, scene: &Scene) -> Option<Maneuver> {
        match classify(scene)? {
            Group::LaneChange => Some(Maneuver::LaneChange),
            Group::Lateral(e) => Some(match self.lateral {
                Some([l, r]) if dist(e, l) <= dist(e, r) => Maneuver::TurnLeft,
                Some(_) => Maneuver::TurnRight,
                None if e[1] >= 0.0 => Maneuver::TurnLeft,
                None => Maneuver::TurnRight,
            }),
            Group::Longitudinal(e) => {
                let c = self.longitudinal?;
                let j = (0..3)
                    .min_by(|&a, &b| (e[0] - c[a]).abs().total_cmp(&(e[0] - c[b]).abs()))
                    .expect("three centroids");
                Some(LONGITUDINAL_ORDER[j])
            }
        }
    }
}

const LONGITUDINAL_ORDER: [Maneuver; 3] = [Maneuver::Decelerate, Maneuver::MaintainSpeed, Maneuver::Accelerate];

/// Labels every scene's focus agent: lane changes by rule, then balanced
/// clustering of endpoints within the lateral (k=2) and longitudinal (k=3)
/// groups.
pub fn label_maneuvers(scenes: &[Scene], seed: u64) -> Result<ManeuverLabels> {
    let groups: Vec<Option<Group>> = scenes.iter().map(classify).collect();
    let mut labels: Vec<Option<Maneuver>> = groups
        .iter()
        .map(|g| matches!(g, Some(Group::LaneChange)).then_some(Maneuver::LaneChange))
        .collect();
    let mut model = ManeuverModel::default();

    let (lat_idx, lat_pts): (Vec<usize>, Vec<Point>) = groups
        .iter()
        .enumerate()
        .filter_map(|(i, g)| match g {
            Some(Group::Lateral(e)) => Some((i, *e)),
            _ => None,
        })
        .unzip();
    if !lat_pts.is_empty() {
        let c = constrained_kmeans(&lat_pts, 2, ClusterSizes::balanced(lat_pts.len(), 2), seed)?;
        let left = if c.centroids[0][1] >= c.centroids[1][1] { 0 } else { 1 };
        model.lateral = Some([c.centroids[left], c.centroids[1 - left]]);
        for (&i, &a) in lat_idx.iter().zip(&c.assignments) {
            labels[i] = Some(if a == left { Maneuver::TurnLeft } else { Maneuver::TurnRight });
        }
    }

    let (lon_idx, lon_pts): (Vec<usize>, Vec<Point>) = groups
        .iter()
        .enumerate()
        .filter_map(|(i, g)| match g {
            Some(Group::Longitudinal(e)) => Some((i, [e[0], 0.0])),
            _ => None,
        })
        .unzip();
    if !lon_pts.is_empty() {
        let c = constrained_kmeans(&lon_pts, 3, ClusterSizes::balanced(lon_pts.len(), 3), seed.wrapping_add(1))?;
        let mut rank: Vec<usize> = (0..3).collect();
        rank.sort_by(|&a, &b| c.centroids[a][0].total_cmp(&c.centroids[b][0]));
        let mut name = [Maneuver::MaintainSpeed; 3];
        for (r, &cluster) in rank.iter().enumerate() {
            name[cluster] = LONGITUDINAL_ORDER[r];
        }
        model.longitudinal = Some([c.centroids[rank[0]][0], c.centroids[rank[1]][0], c.centroids[rank[2]][0]]);
        for (&i, &a) in lon_idx.iter().zip(&c.assignments) {
            labels[i] = Some(name[a]);
        }
    }
    Ok(ManeuverLabels { labels, model })
}
