//! Self-supervision targets computed from unannotated scenes.

mod kmeans;
mod maneuver;

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{dist, LaneGraph, Maneuver, Point, Scene, NODE_FEATURES};

pub use kmeans::{constrained_kmeans, ClusterSizes, Clustering, MAX_ITERATIONS, RESTARTS};
pub use maneuver::{
    label_maneuvers, ManeuverLabels, ManeuverModel, LANE_CHANGE_OFFSET, LANE_CHANGE_ORIENTATION_DEG, LATERAL_ANGLE_DEG,
};

pub const DEFAULT_MASK_RATIO: f64 = 0.4;
pub const DEFAULT_GOAL_EPSILON: f64 = 2.0;

pub type Features = [f64; NODE_FEATURES];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub ratio: f64,
    /// Masked node indices per lane, parallel to `LaneGraph::lanes`.
    pub per_lane: Vec<Vec<usize>>,
    /// All masked nodes in ascending order.
    pub nodes: Vec<usize>,
    /// Original feature rows of `nodes`.
    pub targets: Vec<Features>,
}

/// Number of nodes masked in a lane of `n` nodes.
pub fn masked_count(n: usize, ratio: f64) -> usize {
    if ratio <= 0.0 || n == 0 {
        return 0;
    }
    ((ratio * n as f64).round() as usize).clamp(1, n)
}

/// Zeroes `round(ratio * n)` random feature rows (at least one) in every lane.
pub fn mask_lanes(graph: &LaneGraph, ratio: f64, seed: u64) -> Result<(Vec<Features>, MaskSpec)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid("mask_lanes", format!("ratio {ratio} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = graph.node_features.clone();
    let mut per_lane = Vec::with_capacity(graph.lanes.len());
    let mut nodes = Vec::new();
    for lane in &graph.lanes {
        let k = masked_count(lane.nodes.len(), ratio);
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, lane.nodes.len(), k)
            .into_iter()
            .map(|i| lane.nodes[i])
            .collect();
        picked.sort_unstable();
        nodes.extend_from_slice(&picked);
        per_lane.push(picked);
    }
    nodes.sort_unstable();
    let targets = nodes.iter().map(|&n| graph.node_features[n]).collect();
    for &n in &nodes {
        x[n] = [0.0; NODE_FEATURES];
    }
    Ok((
        x,
        MaskSpec {
            ratio,
            per_lane,
            nodes,
            targets,
        },
    ))
}

/// Hop distance from every node to the nearest intersection node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceLabels {
    /// Hop counts; unreachable nodes hold `f64::INFINITY` (`null` on disk).
    #[serde(with = "infinite_as_null")]
    pub d: Vec<f64>,
    pub reachable: Vec<bool>,
}

impl DistanceLabels {
    pub fn num_reachable(&self) -> usize {
        self.reachable.iter().filter(|&&r| r).count()
    }
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(d: &[f64], s: S) -> Result<S::Ok, S::Error> {
        d.iter()
            .map(|v| v.is_finite().then_some(*v))
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<f64>, D::Error> {
        let v: Vec<Option<f64>> = Vec::deserialize(de)?;
        Ok(v.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
    }
}

/// Multi-source BFS from all intersection nodes over the undirected union of
/// the four relations.
pub fn bfs_distance_to_intersection(graph: &LaneGraph) -> Result<DistanceLabels> {
    let m = graph.num_nodes();
    let mut nbrs = vec![Vec::new(); m];
    for (a, b) in graph.adjacency.all_edges() {
        nbrs[a].push(b);
        nbrs[b].push(a);
    }
    let mut d = vec![f64::INFINITY; m];
    let mut q = VecDeque::new();
    for (i, &flag) in graph.intersection_flags.iter().enumerate() {
        if flag {
            d[i] = 0.0;
            q.push_back(i);
        }
    }
    if q.is_empty() {
        return Err(Error::NoIntersection);
    }
    while let Some(u) = q.pop_front() {
        for &v in &nbrs[u] {
            if d[v].is_infinite() {
                d[v] = d[u] + 1.0;
                q.push_back(v);
            }
        }
    }
    let reachable = d.iter().map(|v| v.is_finite()).collect();
    Ok(DistanceLabels { d, reachable })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalLabels {
    /// Lane-node indices used as goal candidates.
    pub candidates: Vec<usize>,
    pub positions: Vec<Point>,
    pub labels: Vec<bool>,
    pub epsilon: f64,
    /// Set when no candidate lies within `epsilon` of the endpoint.
    pub no_positive: bool,
}

impl GoalLabels {
    pub fn num_positive(&self) -> usize {
        self.labels.iter().filter(|&&c| c).count()
    }
}

/// Every lane node is a candidate, positive iff strictly within `epsilon` of
/// the focus agent's ground-truth endpoint.
pub fn label_goal_candidates(scene: &Scene, epsilon: f64) -> Result<GoalLabels> {
    let end = scene.focus().endpoint().ok_or(Error::MissingFuture)?;
    let positions = scene.graph.node_positions.clone();
    let labels: Vec<bool> = positions.iter().map(|&p| dist(p, end) < epsilon).collect();
    let no_positive = !labels.iter().any(|&c| c);
    Ok(GoalLabels {
        candidates: (0..positions.len()).collect(),
        positions,
        labels,
        epsilon,
        no_positive,
    })
}

/// One line of a pseudo-label sidecar file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<MaskSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d2i: Option<DistanceLabels>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maneuver: Option<Maneuver>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<GoalLabels>,
}

pub fn save_labels(path: impl AsRef<Path>, records: &[PseudoLabelRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<PseudoLabelRecord>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let de = &mut serde_json::Deserializer::from_str(&line);
        out.push(serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            line: i + 1,
            path: e.path().to_string(),
            msg: e.inner().to_string(),
        })?);
    }
    Ok(out)
}
