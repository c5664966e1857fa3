use crate::error::{Error, Result};
use crate::scene::{adjacency_powers, dist, rotate, Point, Scene, FEAT_DIR_X, FEAT_DIR_Y, NODE_FEATURES};

use super::ModelConfig;

/// Channels per agent time step: masked dx, masked dy, observed flag.
pub const AGENT_CHANNELS: usize = 3;

/// Edge lists `(dst, src)`: `dst` aggregates the features of `src`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Relations {
    pub left: Vec<(usize, usize)>,
    pub right: Vec<(usize, usize)>,
    /// One list per dilation, in configuration order.
    pub pre: Vec<Vec<(usize, usize)>>,
    pub suc: Vec<Vec<(usize, usize)>>,
}

impl Relations {
    fn shifted(&self, by: usize) -> Relations {
        let s = |v: &[(usize, usize)]| v.iter().map(|&(a, b)| (a + by, b + by)).collect::<Vec<_>>();
        Relations {
            left: s(&self.left),
            right: s(&self.right),
            pre: self.pre.iter().map(|v| s(v)).collect(),
            suc: self.suc.iter().map(|v| s(v)).collect(),
        }
    }

    fn extend(&mut self, other: Relations) {
        self.left.extend(other.left);
        self.right.extend(other.right);
        if self.pre.is_empty() {
            self.pre = vec![Vec::new(); other.pre.len()];
            self.suc = vec![Vec::new(); other.suc.len()];
        }
        for (a, b) in self.pre.iter_mut().zip(other.pre) {
            a.extend(b);
        }
        for (a, b) in self.suc.iter_mut().zip(other.suc) {
            a.extend(b);
        }
    }
}

/// Network-ready view of one normalized scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneInputs {
    pub history: usize,
    /// `N * history` rows, agent-major.
    pub agent_steps: Vec<[f64; AGENT_CHANNELS]>,
    /// Agent positions at t=0.
    pub agent_pos: Vec<Point>,
    pub node_feats: Vec<[f64; NODE_FEATURES]>,
    pub node_pos: Vec<Point>,
    pub relations: Relations,
    /// `(agent, node)` pairs within the map-to-agent radius.
    pub m2a: Vec<(usize, usize)>,
    /// `(agent, other agent)` pairs within the agent-to-agent radius.
    pub a2a: Vec<(usize, usize)>,
    /// Ground-truth futures; empty when absent.
    pub futures: Vec<Vec<Point>>,
    pub focus: usize,
}

impl SceneInputs {
    pub fn new(scene: &Scene, cfg: &ModelConfig) -> Result<Self> {
        let l = cfg.history;
        let mut agent_steps = Vec::with_capacity(scene.agents.len() * l);
        for a in &scene.agents {
            if a.history_len() != l {
                return Err(Error::invalid(
                    "scene_inputs",
                    format!("track has {} steps, model expects {l}", a.history_len()),
                ));
            }
            if a.has_future() && a.future_positions().len() != cfg.horizon {
                return Err(Error::invalid(
                    "scene_inputs",
                    format!("future has {} steps, model expects {}", a.future_positions().len(), cfg.horizon),
                ));
            }
            for (d, &m) in a.past_displacements().iter().zip(a.observed_mask()) {
                let f = if m { 1.0 } else { 0.0 };
                agent_steps.push([d[0] * f, d[1] * f, f]);
            }
        }
        let agent_pos: Vec<Point> = scene.agents.iter().map(|a| a.current()).collect();
        let g = &scene.graph;
        let powers = adjacency_powers(g, &cfg.dilations)?;
        let relations = Relations {
            left: g.adjacency.left.clone(),
            right: g.adjacency.right.clone(),
            pre: cfg.dilations.iter().map(|k| powers.pre[k].clone()).collect(),
            suc: cfg.dilations.iter().map(|k| powers.suc[k].clone()).collect(),
        };
        let mut m2a = Vec::new();
        for (i, &p) in agent_pos.iter().enumerate() {
            for (j, &q) in g.node_positions.iter().enumerate() {
                if dist(p, q) <= cfg.m2a_radius {
                    m2a.push((i, j));
                }
            }
        }
        let mut a2a = Vec::new();
        for (i, &p) in agent_pos.iter().enumerate() {
            for (j, &q) in agent_pos.iter().enumerate() {
                if i != j && dist(p, q) <= cfg.a2a_radius {
                    a2a.push((i, j));
                }
            }
        }
        Ok(Self {
            history: l,
            agent_steps,
            agent_pos,
            node_feats: g.node_features.clone(),
            node_pos: g.node_positions.clone(),
            relations,
            m2a,
            a2a,
            futures: scene.agents.iter().map(|a| a.future_positions().to_vec()).collect(),
            focus: scene.focus_agent,
        })
    }

    pub fn num_agents(&self) -> usize {
        self.agent_pos.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.node_pos.len()
    }

    /// The same inputs rotated about the origin by `gamma`; neighbor sets are
    /// distance based and carry over unchanged.
    pub fn rotated(&self, gamma: f64) -> SceneInputs {
        let r = |p: Point| rotate(p, gamma);
        let mut out = self.clone();
        for s in &mut out.agent_steps {
            let d = r([s[0], s[1]]);
            s[0] = d[0];
            s[1] = d[1];
        }
        out.agent_pos.iter_mut().for_each(|p| *p = r(*p));
        out.node_pos.iter_mut().for_each(|p| *p = r(*p));
        for f in &mut out.node_feats {
            let d = r([f[FEAT_DIR_X], f[FEAT_DIR_Y]]);
            f[FEAT_DIR_X] = d[0];
            f[FEAT_DIR_Y] = d[1];
        }
        for fut in &mut out.futures {
            fut.iter_mut().for_each(|p| *p = r(*p));
        }
        out
    }
}

/// Several scenes stacked into one disconnected problem.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub history: usize,
    pub agent_steps: Vec<[f64; AGENT_CHANNELS]>,
    pub agent_pos: Vec<Point>,
    pub node_feats: Vec<[f64; NODE_FEATURES]>,
    pub node_pos: Vec<Point>,
    pub relations: Relations,
    pub m2a: Vec<(usize, usize)>,
    pub a2a: Vec<(usize, usize)>,
    pub futures: Vec<Vec<Point>>,
    /// Global focus-agent row of each scene.
    pub focus: Vec<usize>,
    /// `agent_offsets[s]..agent_offsets[s+1]` are scene `s`'s agents.
    pub agent_offsets: Vec<usize>,
    pub node_offsets: Vec<usize>,
}

impl Batch {
    pub fn new(scenes: &[&SceneInputs]) -> Result<Batch> {
        let Some(first) = scenes.first() else {
            return Err(Error::invalid("batch", "no scenes"));
        };
        let mut b = Batch {
            history: first.history,
            agent_offsets: vec![0],
            node_offsets: vec![0],
            ..Batch::default()
        };
        for s in scenes {
            let (na, nn) = (b.agent_pos.len(), b.node_pos.len());
            b.agent_steps.extend_from_slice(&s.agent_steps);
            b.agent_pos.extend_from_slice(&s.agent_pos);
            b.node_feats.extend_from_slice(&s.node_feats);
            b.node_pos.extend_from_slice(&s.node_pos);
            b.relations.extend(s.relations.shifted(nn));
            b.m2a.extend(s.m2a.iter().map(|&(i, j)| (i + na, j + nn)));
            b.a2a.extend(s.a2a.iter().map(|&(i, j)| (i + na, j + na)));
            b.futures.extend(s.futures.iter().cloned());
            b.focus.push(s.focus + na);
            b.agent_offsets.push(b.agent_pos.len());
            b.node_offsets.push(b.node_pos.len());
        }
        Ok(b)
    }

    pub fn single(scene: &SceneInputs) -> Batch {
        Batch::new(&[scene]).expect("one scene")
    }

    pub fn num_scenes(&self) -> usize {
        self.focus.len()
    }

    pub fn num_agents(&self) -> usize {
        self.agent_pos.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.node_pos.len()
    }
}
