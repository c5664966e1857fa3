//! Scene and lane-graph data model, agent-centric normalization, rotation
//! augmentation, radius cropping and dilated adjacency.

mod io;
mod maneuver;
mod powers;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use maneuver::{Maneuver, NUM_MANEUVERS};
pub use io::{load_scenes, parse_scenes, save_scenes, write_scenes};
pub use powers::{adjacency_powers, AdjacencyPowers, BoolMatrix};

pub type Point = [f64; 2];

/// Number of lane-node features: unit direction (2), intersection flag, turn flag.
pub const NODE_FEATURES: usize = 4;
pub const FEAT_DIR_X: usize = 0;
pub const FEAT_DIR_Y: usize = 1;
pub const FEAT_INTERSECTION: usize = 2;
pub const FEAT_TURN: usize = 3;

pub const DEFAULT_HISTORY: usize = 20;
pub const DEFAULT_HORIZON: usize = 30;
/// Sampling interval in seconds.
pub const DT: f64 = 0.1;

/// Tag set when the focus agent never moved and no heading could be found.
pub const TAG_DEGENERATE_HEADING: &str = "degenerate_heading";

pub fn rotate(p: Point, theta: f64) -> Point {
    let (s, c) = theta.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

pub fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn norm(p: Point) -> f64 {
    p[0].hypot(p[1])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Relation {
    Pre,
    Suc,
    Left,
    Right,
}

/// Typed lane connectivity as sorted `(from, to)` edge lists: `(g, h)` in
/// relation `f` means node `h` is an `f`-neighbor of node `g`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Adjacency {
    pub pre: Vec<(usize, usize)>,
    pub suc: Vec<(usize, usize)>,
    pub left: Vec<(usize, usize)>,
    pub right: Vec<(usize, usize)>,
}

impl Adjacency {
    pub fn relation(&self, r: Relation) -> &[(usize, usize)] {
        match r {
            Relation::Pre => &self.pre,
            Relation::Suc => &self.suc,
            Relation::Left => &self.left,
            Relation::Right => &self.right,
        }
    }

    /// Builds `pre` as the transpose of `suc` and sorts every list.
    pub fn from_suc(suc: Vec<(usize, usize)>, left: Vec<(usize, usize)>, right: Vec<(usize, usize)>) -> Self {
        let mut a = Adjacency {
            pre: suc.iter().map(|&(g, h)| (h, g)).collect(),
            suc,
            left,
            right,
        };
        a.normalize();
        a
    }

    fn normalize(&mut self) {
        for l in [&mut self.pre, &mut self.suc, &mut self.left, &mut self.right] {
            l.sort_unstable();
            l.dedup();
        }
    }

    pub fn all_edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pre
            .iter()
            .chain(&self.suc)
            .chain(&self.left)
            .chain(&self.right)
            .copied()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub id: u32,
    pub nodes: Vec<usize>,
}

/// Lane nodes with features and typed adjacency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaneGraph {
    #[serde(rename = "positions")]
    pub node_positions: Vec<Point>,
    #[serde(rename = "features")]
    pub node_features: Vec<[f64; NODE_FEATURES]>,
    #[serde(flatten)]
    pub adjacency: Adjacency,
    pub lanes: Vec<Lane>,
    #[serde(rename = "intersection")]
    pub intersection_flags: Vec<bool>,
}

impl LaneGraph {
    pub fn num_nodes(&self) -> usize {
        self.node_positions.len()
    }

    pub fn has_intersection(&self) -> bool {
        self.intersection_flags.iter().any(|&f| f)
    }

    /// Lane index (into `lanes`) of every node.
    pub fn lane_of_node(&self) -> Vec<usize> {
        let mut out = vec![usize::MAX; self.num_nodes()];
        for (li, lane) in self.lanes.iter().enumerate() {
            for &n in &lane.nodes {
                out[n] = li;
            }
        }
        out
    }

    /// Checks the structural invariants of a lane graph.
    pub fn validate(&self) -> Result<()> {
        let m = self.num_nodes();
        let bad = |msg: String| Err(Error::invalid("lane_graph", msg));
        if self.node_features.len() != m || self.intersection_flags.len() != m {
            return bad(format!(
                "{m} positions, {} feature rows, {} intersection flags",
                self.node_features.len(),
                self.intersection_flags.len()
            ));
        }
        let mut seen = vec![0usize; m];
        for lane in &self.lanes {
            for &n in &lane.nodes {
                if n >= m {
                    return bad(format!("lane {} references node {n} of {m}", lane.id));
                }
                seen[n] += 1;
            }
        }
        if let Some(n) = seen.iter().position(|&c| c != 1) {
            return bad(format!("node {n} appears in {} lanes", seen[n]));
        }
        for (name, rel) in [
            ("pre", &self.adjacency.pre),
            ("suc", &self.adjacency.suc),
            ("left", &self.adjacency.left),
            ("right", &self.adjacency.right),
        ] {
            for &(g, h) in rel {
                if g >= m || h >= m {
                    return bad(format!("{name} edge ({g},{h}) out of range"));
                }
                if g == h {
                    return bad(format!("{name} self-loop at {g}"));
                }
            }
        }
        let mut transposed: Vec<_> = self.adjacency.suc.iter().map(|&(g, h)| (h, g)).collect();
        transposed.sort_unstable();
        let mut pre = self.adjacency.pre.clone();
        pre.sort_unstable();
        if transposed != pre {
            return bad("pre is not the transpose of suc".into());
        }
        for (i, (f, &flag)) in self.node_features.iter().zip(&self.intersection_flags).enumerate() {
            if (f[FEAT_INTERSECTION] != 0.0) != flag {
                return bad(format!("node {i}: intersection feature disagrees with flag"));
            }
        }
        Ok(())
    }

    fn map_points(&mut self, f: impl Fn(Point) -> Point, rot: f64) {
        for p in &mut self.node_positions {
            *p = f(*p);
        }
        for feat in &mut self.node_features {
            let d = rotate([feat[FEAT_DIR_X], feat[FEAT_DIR_Y]], rot);
            feat[FEAT_DIR_X] = d[0];
            feat[FEAT_DIR_Y] = d[1];
        }
    }

    /// Keeps the nodes selected by `keep`, reindexing edges and lanes.
    pub fn subgraph(&self, keep: &[bool]) -> LaneGraph {
        let mut remap = vec![usize::MAX; self.num_nodes()];
        let mut next = 0;
        for (i, &k) in keep.iter().enumerate() {
            if k {
                remap[i] = next;
                next += 1;
            }
        }
        let pick = |v: &[(usize, usize)]| -> Vec<(usize, usize)> {
            v.iter()
                .filter(|&&(g, h)| keep[g] && keep[h])
                .map(|&(g, h)| (remap[g], remap[h]))
                .collect()
        };
        let lanes = self
            .lanes
            .iter()
            .filter_map(|l| {
                let nodes: Vec<usize> = l.nodes.iter().filter(|&&n| keep[n]).map(|&n| remap[n]).collect();
                (!nodes.is_empty()).then_some(Lane { id: l.id, nodes })
            })
            .collect();
        let sel = |i: &usize| keep[*i];
        LaneGraph {
            node_positions: (0..self.num_nodes()).filter(sel).map(|i| self.node_positions[i]).collect(),
            node_features: (0..self.num_nodes()).filter(sel).map(|i| self.node_features[i]).collect(),
            adjacency: Adjacency {
                pre: pick(&self.adjacency.pre),
                suc: pick(&self.adjacency.suc),
                left: pick(&self.adjacency.left),
                right: pick(&self.adjacency.right),
            },
            lanes,
            intersection_flags: (0..self.num_nodes()).filter(sel).map(|i| self.intersection_flags[i]).collect(),
        }
    }
}

/// One agent's observed past and (optionally) ground-truth future.
///
/// Displacements are derived from positions so the two can never disagree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrackRecord", into = "TrackRecord")]
pub struct AgentTrack {
    past_positions: Vec<Point>,
    future_positions: Vec<Point>,
    observed_mask: Vec<bool>,
    past_displacements: Vec<Point>,
}

#[derive(Serialize, Deserialize)]
struct TrackRecord {
    past: Vec<Point>,
    future: Vec<Point>,
    mask: Vec<bool>,
}

impl TryFrom<TrackRecord> for AgentTrack {
    type Error = String;
    fn try_from(r: TrackRecord) -> std::result::Result<Self, String> {
        AgentTrack::new(r.past, r.future, r.mask).map_err(|e| e.to_string())
    }
}

impl From<AgentTrack> for TrackRecord {
    fn from(t: AgentTrack) -> Self {
        TrackRecord {
            past: t.past_positions,
            future: t.future_positions,
            mask: t.observed_mask,
        }
    }
}

impl AgentTrack {
    /// `past_positions` has `L+1` rows ending at t=0; `observed_mask` has `L`
    /// entries, one per displacement. Unobserved displacements read as zero.
    pub fn new(past_positions: Vec<Point>, future_positions: Vec<Point>, observed_mask: Vec<bool>) -> Result<Self> {
        if past_positions.len() != observed_mask.len() + 1 {
            return Err(Error::invalid(
                "agent_track",
                format!("{} past positions for {} mask entries", past_positions.len(), observed_mask.len()),
            ));
        }
        let past_displacements = past_positions
            .windows(2)
            .zip(&observed_mask)
            .map(|(w, &m)| if m { [w[1][0] - w[0][0], w[1][1] - w[0][1]] } else { [0.0, 0.0] })
            .collect();
        Ok(Self {
            past_positions,
            future_positions,
            observed_mask,
            past_displacements,
        })
    }

    pub fn history_len(&self) -> usize {
        self.observed_mask.len()
    }

    pub fn past_positions(&self) -> &[Point] {
        &self.past_positions
    }

    pub fn past_displacements(&self) -> &[Point] {
        &self.past_displacements
    }

    pub fn future_positions(&self) -> &[Point] {
        &self.future_positions
    }

    pub fn observed_mask(&self) -> &[bool] {
        &self.observed_mask
    }

    pub fn has_future(&self) -> bool {
        !self.future_positions.is_empty()
    }

    /// Position at t=0.
    pub fn current(&self) -> Point {
        *self.past_positions.last().expect("at least one past position")
    }

    /// Final ground-truth position.
    pub fn endpoint(&self) -> Option<Point> {
        self.future_positions.last().copied()
    }

    pub fn observed_positions(&self) -> usize {
        self.observed_mask.iter().filter(|&&m| m).count() + 1
    }

    fn map_points(&self, f: impl Fn(Point) -> Point) -> AgentTrack {
        AgentTrack::new(
            self.past_positions.iter().map(|&p| f(p)).collect(),
            self.future_positions.iter().map(|&p| f(p)).collect(),
            self.observed_mask.clone(),
        )
        .expect("shape preserved")
    }

    /// Replaces displacements, rebuilding positions backward from t=0.
    pub fn with_displacements(&self, disp: &[Point]) -> Result<AgentTrack> {
        if disp.len() != self.history_len() {
            return Err(Error::invalid("agent_track", "displacement count mismatch"));
        }
        let mut pos = self.past_positions.clone();
        for l in (0..disp.len()).rev() {
            pos[l] = if self.observed_mask[l] {
                [pos[l + 1][0] - disp[l][0], pos[l + 1][1] - disp[l][1]]
            } else {
                pos[l + 1]
            };
        }
        AgentTrack::new(pos, self.future_positions.clone(), self.observed_mask.clone())
    }

    /// Drops the ground-truth future.
    pub fn without_future(&self) -> AgentTrack {
        AgentTrack {
            future_positions: Vec::new(),
            ..self.clone()
        }
    }
}

/// Transform from world coordinates into the scene frame:
/// `q = R(-rotation) (p - origin)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationFrame {
    pub origin: Point,
    pub rotation: f64,
}

impl Default for NormalizationFrame {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl NormalizationFrame {
    pub const IDENTITY: Self = Self {
        origin: [0.0, 0.0],
        rotation: 0.0,
    };

    pub fn apply(&self, p: Point) -> Point {
        rotate([p[0] - self.origin[0], p[1] - self.origin[1]], -self.rotation)
    }

    pub fn invert(&self, q: Point) -> Point {
        let r = rotate(q, self.rotation);
        [r[0] + self.origin[0], r[1] + self.origin[1]]
    }

    /// The frame equivalent to applying `self` then `next`.
    pub fn then(&self, next: &NormalizationFrame) -> NormalizationFrame {
        let o = rotate(next.origin, self.rotation);
        NormalizationFrame {
            origin: [self.origin[0] + o[0], self.origin[1] + o[1]],
            rotation: self.rotation + next.rotation,
        }
    }
}

/// One forecasting instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub graph: LaneGraph,
    pub agents: Vec<AgentTrack>,
    #[serde(rename = "focus")]
    pub focus_agent: usize,
    pub frame: NormalizationFrame,
    pub tags: BTreeMap<String, String>,
}

impl Scene {
    pub fn focus(&self) -> &AgentTrack {
        &self.agents[self.focus_agent]
    }

    pub fn id(&self) -> Option<&str> {
        self.tags.get("id").map(String::as_str)
    }

    pub fn tag(&self, key: &str) -> Option<&str> {
        self.tags.get(key).map(String::as_str)
    }

    pub fn validate(&self) -> Result<()> {
        self.graph.validate()?;
        if self.focus_agent >= self.agents.len() {
            return Err(Error::invalid(
                "scene",
                format!("focus {} of {} agents", self.focus_agent, self.agents.len()),
            ));
        }
        Ok(())
    }

    /// Applies a rigid map to every coordinate; `rot` is its rotation part
    /// (used for direction features).
    fn map_points(&self, f: impl Fn(Point) -> Point + Copy, rot: f64) -> Scene {
        let mut graph = self.graph.clone();
        graph.map_points(f, rot);
        Scene {
            graph,
            agents: self.agents.iter().map(|a| a.map_points(f)).collect(),
            focus_agent: self.focus_agent,
            frame: self.frame,
            tags: self.tags.clone(),
        }
    }
}

/// Heading of the focus agent's last nonzero observed displacement.
fn focus_heading(track: &AgentTrack) -> Option<f64> {
    track
        .past_displacements()
        .iter()
        .zip(track.observed_mask())
        .rev()
        .filter(|(_, &m)| m)
        .map(|(d, _)| d)
        .find(|d| norm(**d) > 0.0)
        .map(|d| d[1].atan2(d[0]))
}

/// Moves the focus agent's t=0 position to the origin and its heading onto +x.
pub fn normalize_scene(scene: &Scene) -> Result<Scene> {
    scene.validate()?;
    let focus = scene.focus();
    if focus.observed_positions() < 2 {
        return Err(Error::UnusableScene("focus agent has fewer than 2 observed positions".into()));
    }
    let origin = focus.current();
    let (rotation, degenerate) = match focus_heading(focus) {
        Some(h) => (h, false),
        None => (0.0, true),
    };
    let step = NormalizationFrame { origin, rotation };
    let mut out = scene.map_points(|p| step.apply(p), -rotation);
    out.frame = scene.frame.then(&step);
    if degenerate {
        out.tags.insert(TAG_DEGENERATE_HEADING.into(), "true".into());
    }
    Ok(out)
}

/// Maps a scene back to world coordinates (identity frame).
pub fn denormalize_scene(scene: &Scene) -> Scene {
    let frame = scene.frame;
    let mut out = scene.map_points(|q| frame.invert(q), frame.rotation);
    out.frame = NormalizationFrame::IDENTITY;
    out
}

/// Rotates every coordinate and direction about the origin by `gamma`.
pub fn rotate_scene(scene: &Scene, gamma: f64) -> Scene {
    let mut out = scene.map_points(|p| rotate(p, gamma), gamma);
    out.frame = NormalizationFrame {
        origin: scene.frame.origin,
        rotation: scene.frame.rotation - gamma,
    };
    out
}

/// Removes agents (by t=0 position) and lane nodes farther than `radius`
/// from the origin. The focus agent is always kept.
pub fn crop_radius(scene: &Scene, radius: f64) -> Result<Scene> {
    let keep: Vec<bool> = scene.graph.node_positions.iter().map(|&p| norm(p) <= radius).collect();
    if !keep.iter().any(|&k| k) {
        return Err(Error::UnusableScene(format!("no lane nodes within {radius} m")));
    }
    let graph = scene.graph.subgraph(&keep);
    let mut agents = Vec::new();
    let mut focus = 0;
    for (i, a) in scene.agents.iter().enumerate() {
        if i == scene.focus_agent {
            focus = agents.len();
            agents.push(a.clone());
        } else if norm(a.current()) <= radius {
            agents.push(a.clone());
        }
    }
    Ok(Scene {
        graph,
        agents,
        focus_agent: focus,
        frame: scene.frame,
        tags: scene.tags.clone(),
    })
}
