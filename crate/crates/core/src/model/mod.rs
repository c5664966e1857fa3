//! The forecasting network: temporal-convolution agent encoder with a
//! feature pyramid, LaneConv map encoder over dilated lane relations,
//! map-to-agent and agent-to-agent fusion, a multi-modal decoder and the
//! pretext heads.

mod inputs;
mod layers;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{load_checkpoint, save_checkpoint, Graph, ParamGroup, ParameterStore, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::scene::{Point, Scene, NODE_FEATURES, NUM_MANEUVERS};
pub use inputs::{Batch, Relations, SceneInputs, AGENT_CHANNELS};
use layers::{norm_relu, Linear, LinearNormRelu, Mlp, ResBlock1d};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pretext {
    #[default]
    None,
    Mask,
    D2i,
    Maneuver,
    Goal,
}

impl Pretext {
    pub const ALL: [Pretext; 5] = [Pretext::None, Pretext::Mask, Pretext::D2i, Pretext::Maneuver, Pretext::Goal];

    pub fn as_str(self) -> &'static str {
        match self {
            Pretext::None => "none",
            Pretext::Mask => "mask",
            Pretext::D2i => "d2i",
            Pretext::Maneuver => "maneuver",
            Pretext::Goal => "goal",
        }
    }
}

impl fmt::Display for Pretext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pretext {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown pretext `{s}` (expected none, mask, d2i, maneuver or goal)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: usize,
    pub dilations: Vec<usize>,
    pub n_laneconv_blocks: usize,
    pub m2a_radius: f64,
    pub a2a_radius: f64,
    pub modes: usize,
    pub horizon: usize,
    pub history: usize,
    pub pretext: Pretext,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            dilations: vec![1, 2, 4, 8, 16, 32],
            n_laneconv_blocks: 2,
            m2a_radius: 12.0,
            a2a_radius: 100.0,
            modes: 6,
            horizon: crate::scene::DEFAULT_HORIZON,
            history: crate::scene::DEFAULT_HISTORY,
            pretext: Pretext::None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.hidden == 0 {
            return bad("hidden must be positive");
        }
        if self.modes == 0 {
            return bad("modes must be at least 1");
        }
        if self.horizon == 0 || self.history == 0 {
            return bad("horizon and history must be positive");
        }
        if self.dilations.is_empty() || self.dilations[0] == 0 || self.dilations.windows(2).any(|w| w[0] >= w[1]) {
            return bad("dilations must be positive and strictly ascending");
        }
        if !(self.m2a_radius >= 0.0 && self.a2a_radius >= 0.0) {
            return bad("radii must be nonnegative");
        }
        Ok(())
    }
}

/// Multi-modal prediction for one agent, positions in the scene frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    /// `K` trajectories of `T` positions.
    pub modes: Vec<Vec<Point>>,
    /// Softmax scores, one per mode.
    pub scores: Vec<f64>,
}

/// Intermediate features of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutputs {
    /// Agent features after the temporal encoder (`N x H`).
    pub agent: Var,
    /// Lane-node features after the map encoder (`M x H`).
    pub map: Var,
    /// Agent features after map-to-agent fusion.
    pub m2a: Var,
    /// Agent features after agent-to-agent fusion.
    pub a2a: Var,
}

/// Decoder outputs for every agent of a batch.
#[derive(Clone, Copy, Debug)]
pub struct ForecastVars {
    /// `(K*N) x (2T)`, mode-major: row `k*N + i` is mode `k` of agent `i`,
    /// laid out `x1, y1, x2, y2, ...`.
    pub traj: Var,
    /// `N x K` pre-softmax mode scores.
    pub logits: Var,
    pub n_agents: usize,
}

#[derive(Clone, Debug)]
struct AgentEncoder {
    groups: Vec<[ResBlock1d; 2]>,
    lateral: Vec<Linear>,
    output: ResBlock1d,
}

#[derive(Clone, Debug)]
struct LaneConv {
    center: Linear,
    left: Linear,
    right: Linear,
    pre: Vec<Linear>,
    suc: Vec<Linear>,
}

#[derive(Clone, Debug)]
struct LaneConvBlock {
    conv: LaneConv,
    lin: Linear,
}

#[derive(Clone, Debug)]
struct MapEncoder {
    feat_in: Linear,
    pos_in: Linear,
    blocks: Vec<LaneConvBlock>,
}

#[derive(Clone, Debug)]
struct Fusion {
    self_w: Linear,
    delta: LinearNormRelu,
    w_in: Linear,
    w_out: Linear,
}

#[derive(Clone, Debug)]
struct Decoder {
    modes: Vec<(LinearNormRelu, Linear)>,
    cls: (LinearNormRelu, Linear),
}

#[derive(Clone, Debug)]
enum Head {
    None,
    Mask(Mlp),
    D2i(Mlp),
    Maneuver(Mlp),
    Goal { delta: LinearNormRelu, mlp: Mlp },
}

/// Parameters plus the layer layout that consumes them.
#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    pub cfg: ModelConfig,
    pub store: ParameterStore<T>,
    agent: AgentEncoder,
    map: MapEncoder,
    m2a: Fusion,
    a2a: Fusion,
    decoder: Decoder,
    head: Head,
}

/// Number of stride-2 convolution groups in the agent encoder.
pub const AGENT_GROUPS: usize = 3;

fn seq_len_after_groups(l: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(AGENT_GROUPS);
    let mut l = l;
    for _ in 0..AGENT_GROUPS {
        l = (l - 1) / 2 + 1;
        out.push(l);
    }
    out
}

impl<T: Real> Model<T> {
    /// Seeded fan-in uniform initialization.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParameterStore::new();
        let h = cfg.hidden;
        let rng = &mut rng;

        use ParamGroup::*;
        let mut groups = Vec::new();
        let mut lateral = Vec::new();
        for gi in 0..AGENT_GROUPS {
            let c_in = if gi == 0 { AGENT_CHANNELS } else { h };
            groups.push([
                ResBlock1d::new(&mut s, rng, &format!("agent.g{gi}.b0"), AgentEncoder, c_in, h, 2)?,
                ResBlock1d::new(&mut s, rng, &format!("agent.g{gi}.b1"), AgentEncoder, h, h, 1)?,
            ]);
            lateral.push(Linear::new(&mut s, rng, &format!("agent.lateral{gi}"), AgentEncoder, h, h, true)?);
        }
        let output = ResBlock1d::new(&mut s, rng, "agent.output", AgentEncoder, h, h, 1)?;
        let agent = self::AgentEncoder { groups, lateral, output };

        let feat_in = Linear::new(&mut s, rng, "map.input.feat", MapEncoder, NODE_FEATURES, h, true)?;
        let pos_in = Linear::new(&mut s, rng, "map.input.pos", MapEncoder, 2, h, false)?;
        let mut blocks = Vec::new();
        for bi in 0..cfg.n_laneconv_blocks {
            let p = format!("map.block{bi}");
            let lin = |s: &mut ParameterStore<T>, rng: &mut ChaCha8Rng, name: String, bias: bool| {
                Linear::new(s, rng, &name, MapEncoder, h, h, bias)
            };
            let conv = LaneConv {
                center: lin(&mut s, rng, format!("{p}.center"), true)?,
                left: lin(&mut s, rng, format!("{p}.left"), false)?,
                right: lin(&mut s, rng, format!("{p}.right"), false)?,
                pre: cfg
                    .dilations
                    .iter()
                    .map(|k| lin(&mut s, rng, format!("{p}.pre{k}"), false))
                    .collect::<Result<_>>()?,
                suc: cfg
                    .dilations
                    .iter()
                    .map(|k| lin(&mut s, rng, format!("{p}.suc{k}"), false))
                    .collect::<Result<_>>()?,
            };
            let out = lin(&mut s, rng, format!("{p}.linear"), false)?;
            blocks.push(LaneConvBlock { conv, lin: out });
        }
        let map = self::MapEncoder { feat_in, pos_in, blocks };

        let fusion = |s: &mut ParameterStore<T>, rng: &mut ChaCha8Rng, p: &str| -> Result<Fusion> {
            Ok(Fusion {
                self_w: Linear::new(s, rng, &format!("{p}.self"), Interaction, h, h, false)?,
                delta: LinearNormRelu::new(s, rng, &format!("{p}.delta"), Interaction, 2, h)?,
                w_in: Linear::new(s, rng, &format!("{p}.w_in"), Interaction, 3 * h, h, false)?,
                w_out: Linear::new(s, rng, &format!("{p}.w_out"), Interaction, h, h, false)?,
            })
        };
        let m2a = fusion(&mut s, rng, "m2a")?;
        let a2a = fusion(&mut s, rng, "a2a")?;

        let t2 = 2 * cfg.horizon;
        let modes = (0..cfg.modes)
            .map(|k| {
                Ok((
                    LinearNormRelu::new(&mut s, rng, &format!("decoder.mode{k}.hidden"), Decoder, h, h)?,
                    Linear::new(&mut s, rng, &format!("decoder.mode{k}.out"), Decoder, h, t2, true)?,
                ))
            })
            .collect::<Result<_>>()?;
        let cls = (
            LinearNormRelu::new(&mut s, rng, "decoder.cls.hidden", Decoder, h, h)?,
            Linear::new(&mut s, rng, "decoder.cls.out", Decoder, h, cfg.modes, true)?,
        );
        let decoder = self::Decoder { modes, cls };

        let head = match cfg.pretext {
            Pretext::None => Head::None,
            Pretext::Mask => Head::Mask(Mlp::new(&mut s, rng, "head.mask", PretextHead, h, h, NODE_FEATURES)?),
            Pretext::D2i => Head::D2i(Mlp::new(&mut s, rng, "head.d2i", PretextHead, h, h, 1)?),
            Pretext::Maneuver => {
                Head::Maneuver(Mlp::new(&mut s, rng, "head.maneuver", PretextHead, h, h, NUM_MANEUVERS)?)
            }
            Pretext::Goal => Head::Goal {
                delta: LinearNormRelu::new(&mut s, rng, "head.goal.delta", PretextHead, 2, h)?,
                mlp: Mlp::new(&mut s, rng, "head.goal", PretextHead, 3 * h, h, 1)?,
            },
        };
        Ok(Self {
            cfg,
            store: s,
            agent,
            map,
            m2a,
            a2a,
            decoder,
            head,
        })
    }

    /// Layout for `cfg` filled from an existing store; every parameter must
    /// be present with the expected shape. Extra entries are ignored.
    pub fn with_store(cfg: ModelConfig, store: &ParameterStore<T>) -> Result<Self> {
        let mut model = Self::new(cfg, 0)?;
        for p in model.store.iter_mut() {
            let Some(src) = store.by_name(&p.name) else {
                return Err(Error::Checkpoint {
                    path: Default::default(),
                    msg: format!("missing parameter {}", p.name),
                });
            };
            if src.value.shape() != p.value.shape() {
                return Err(Error::Checkpoint {
                    path: Default::default(),
                    msg: format!("parameter {} has shape {:?}, expected {:?}", p.name, src.value.shape(), p.value.shape()),
                });
            }
            p.value = src.value.clone();
        }
        Ok(model)
    }

    pub fn load(cfg: ModelConfig, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let store = load_checkpoint(path)?;
        Self::with_store(cfg, &store).map_err(|e| match e {
            Error::Checkpoint { msg, .. } => Error::Checkpoint {
                path: path.to_path_buf(),
                msg,
            },
            e => e,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(path, &self.store)
    }

    /// Same layout with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            agent: self.agent.clone(),
            map: self.map.clone(),
            m2a: self.m2a.clone(),
            a2a: self.a2a.clone(),
            decoder: self.decoder.clone(),
            head: self.head.clone(),
        }
    }

    /// Temporal encoder: three stride-2 residual groups fused top-down by a
    /// feature pyramid, one residual block, then the t=0 row of each agent.
    pub fn agent_encode(&self, g: &mut Graph<T>, batch: &Batch) -> Result<Var> {
        let n = batch.num_agents();
        let l = batch.history;
        if l != self.cfg.history {
            return Err(Error::invalid("agent_encode", format!("history {l}, model expects {}", self.cfg.history)));
        }
        let flat: Vec<f64> = batch.agent_steps.iter().flatten().copied().collect();
        let mut x = g.constant_f64(n * l, AGENT_CHANNELS, &flat)?;
        let mut len = l;
        let mut outs = Vec::with_capacity(AGENT_GROUPS);
        for blocks in &self.agent.groups {
            for b in blocks {
                let (y, l2) = b.apply(g, &self.store, x, n, len)?;
                x = y;
                len = l2;
            }
            outs.push((x, len));
        }
        let lens = seq_len_after_groups(l);
        let (top, top_len) = outs[AGENT_GROUPS - 1];
        let mut fused = self.agent.lateral[AGENT_GROUPS - 1].apply(g, &self.store, top)?;
        let mut fused_len = top_len;
        for gi in (0..AGENT_GROUPS - 1).rev() {
            let target = lens[gi];
            let idx: Vec<usize> = (0..n)
                .flat_map(|s| (0..target).map(move |t| s * fused_len + t * fused_len / target))
                .collect();
            let up = g.gather_rows(fused, &idx)?;
            let lat = self.agent.lateral[gi].apply(g, &self.store, outs[gi].0)?;
            fused = g.add(up, lat)?;
            fused_len = target;
        }
        let (out, out_len) = self.agent.output.apply(g, &self.store, fused, n, fused_len)?;
        let last: Vec<usize> = (0..n).map(|s| s * out_len + out_len - 1).collect();
        g.gather_rows(out, &last)
    }

    /// One LaneConv operator of block `block`:
    /// `X W_0 + sum_{left,right} A X W + sum_k (A_pre^k X W_pre,k + A_suc^k X W_suc,k)`.
    pub fn lane_conv_forward(&self, g: &mut Graph<T>, block: usize, x: Var, rel: &Relations) -> Result<Var> {
        let conv = &self.map.blocks[block].conv;
        let m = g.shape(x).0;
        let mut acc = conv.center.apply(g, &self.store, x)?;
        let mut terms: Vec<(&Linear, &[(usize, usize)])> = vec![(&conv.left, &rel.left), (&conv.right, &rel.right)];
        for (w, e) in conv.pre.iter().zip(&rel.pre) {
            terms.push((w, e));
        }
        for (w, e) in conv.suc.iter().zip(&rel.suc) {
            terms.push((w, e));
        }
        for (w, edges) in terms {
            if edges.is_empty() {
                continue;
            }
            let xw = w.apply(g, &self.store, x)?;
            let src: Vec<usize> = edges.iter().map(|e| e.1).collect();
            let dst: Vec<usize> = edges.iter().map(|e| e.0).collect();
            let msg = g.gather_rows(xw, &src)?;
            let agg = g.scatter_add_rows(msg, &dst, m)?;
            acc = g.add(acc, agg)?;
        }
        Ok(acc)
    }

    /// Input embedding followed by the stacked LaneConv residual blocks.
    pub fn map_encode(&self, g: &mut Graph<T>, batch: &Batch, feats: &[[f64; NODE_FEATURES]]) -> Result<Var> {
        let m = batch.num_nodes();
        if feats.len() != m {
            return Err(Error::invalid("map_encode", format!("{} feature rows for {m} nodes", feats.len())));
        }
        let f: Vec<f64> = feats.iter().flatten().copied().collect();
        let p: Vec<f64> = batch.node_pos.iter().flatten().copied().collect();
        let xf = g.constant_f64(m, NODE_FEATURES, &f)?;
        let xp = g.constant_f64(m, 2, &p)?;
        let a = self.map.feat_in.apply(g, &self.store, xf)?;
        let b = self.map.pos_in.apply(g, &self.store, xp)?;
        let sum = g.add(a, b)?;
        let mut x = norm_relu(g, sum);
        for (bi, block) in self.map.blocks.iter().enumerate() {
            let y = self.lane_conv_forward(g, bi, x, &batch.relations)?;
            let y = norm_relu(g, y);
            let y = block.lin.apply(g, &self.store, y)?;
            let y = g.layer_norm(y);
            let y = g.add(y, x)?;
            x = g.relu(y);
        }
        Ok(x)
    }

    #[allow(clippy::too_many_arguments)]
    fn fuse(
        &self,
        g: &mut Graph<T>,
        f: &Fusion,
        agents: Var,
        ctx: Var,
        agent_pos: &[Point],
        ctx_pos: &[Point],
        pairs: &[(usize, usize)],
    ) -> Result<Var> {
        let n = g.shape(agents).0;
        let base = f.self_w.apply(g, &self.store, agents)?;
        if pairs.is_empty() {
            return Ok(base);
        }
        let ai: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let cj: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let off: Vec<f64> = pairs
            .iter()
            .flat_map(|&(i, j)| [ctx_pos[j][0] - agent_pos[i][0], ctx_pos[j][1] - agent_pos[i][1]])
            .collect();
        let off = g.constant_f64(pairs.len(), 2, &off)?;
        let delta = f.delta.apply(g, &self.store, off)?;
        let pi = g.gather_rows(agents, &ai)?;
        let yj = g.gather_rows(ctx, &cj)?;
        let cat = g.concat_cols(&[pi, delta, yj])?;
        let h = f.w_in.apply(g, &self.store, cat)?;
        let h = norm_relu(g, h);
        let msg = f.w_out.apply(g, &self.store, h)?;
        let agg = g.scatter_add_rows(msg, &ai, n)?;
        g.add(base, agg)
    }

    /// `p_i W + sum_j phi([p_i, delta_ij, y_j] W_in) W_out` over lane nodes
    /// within the map-to-agent radius.
    pub fn fuse_m2a(&self, g: &mut Graph<T>, agent: Var, map: Var, batch: &Batch) -> Result<Var> {
        self.fuse(g, &self.m2a, agent, map, &batch.agent_pos, &batch.node_pos, &batch.m2a)
    }

    /// Agent-to-agent analogue of [`Model::fuse_m2a`]; an agent is not its
    /// own neighbor.
    pub fn fuse_a2a(&self, g: &mut Graph<T>, agent: Var, batch: &Batch) -> Result<Var> {
        self.fuse(g, &self.a2a, agent, agent, &batch.agent_pos, &batch.agent_pos, &batch.a2a)
    }

    pub fn encode(&self, g: &mut Graph<T>, batch: &Batch) -> Result<EncoderOutputs> {
        let agent = self.agent_encode(g, batch)?;
        let map = self.map_encode(g, batch, &batch.node_feats)?;
        let m2a = self.fuse_m2a(g, agent, map, batch)?;
        let a2a = self.fuse_a2a(g, m2a, batch)?;
        Ok(EncoderOutputs { agent, map, m2a, a2a })
    }

    /// Per-mode displacement regression turned into positions by cumulative
    /// sum from each agent's t=0 position, plus mode logits.
    pub fn decode_trajectories(&self, g: &mut Graph<T>, feats: Var, batch: &Batch) -> Result<ForecastVars> {
        let n = g.shape(feats).0;
        let t = self.cfg.horizon;
        let mut per_mode = Vec::with_capacity(self.cfg.modes);
        for (hidden, out) in &self.decoder.modes {
            let h = hidden.apply(g, &self.store, feats)?;
            per_mode.push(out.apply(g, &self.store, h)?);
        }
        let disp = g.concat_rows(&per_mode)?;
        let mut c = vec![0.0; 4 * t * t];
        for s in 0..t {
            for u in s..t {
                for d in 0..2 {
                    c[(2 * s + d) * 2 * t + 2 * u + d] = 1.0;
                }
            }
        }
        let c = g.constant_f64(2 * t, 2 * t, &c)?;
        let cum = g.matmul(disp, c)?;
        let origin: Vec<f64> = (0..self.cfg.modes)
            .flat_map(|_| batch.agent_pos.iter())
            .flat_map(|p| (0..t).flat_map(move |_| [p[0], p[1]]))
            .collect();
        let origin = g.constant_f64(self.cfg.modes * n, 2 * t, &origin)?;
        let traj = g.add(cum, origin)?;
        let h = self.decoder.cls.0.apply(g, &self.store, feats)?;
        let logits = self.decoder.cls.1.apply(g, &self.store, h)?;
        Ok(ForecastVars { traj, logits, n_agents: n })
    }

    fn mismatch(&self, head: &'static str, expected: Pretext) -> Error {
        Error::PretextMismatch {
            head,
            expected: expected.as_str(),
            actual: self.cfg.pretext.as_str(),
        }
    }

    /// Feature reconstructions (`len(nodes) x F`) from map features.
    pub fn head_mask(&self, g: &mut Graph<T>, map: Var, nodes: &[usize]) -> Result<Var> {
        let Head::Mask(mlp) = &self.head else {
            return Err(self.mismatch("mask", Pretext::Mask));
        };
        let y = g.gather_rows(map, nodes)?;
        mlp.apply(g, &self.store, y)
    }

    /// Per-node distance regression (`M x 1`).
    pub fn head_d2i(&self, g: &mut Graph<T>, map: Var) -> Result<Var> {
        let Head::D2i(mlp) = &self.head else {
            return Err(self.mismatch("d2i", Pretext::D2i));
        };
        mlp.apply(g, &self.store, map)
    }

    /// Maneuver logits (`rows x 6`) for the given agent rows.
    pub fn head_maneuver(&self, g: &mut Graph<T>, agents: Var, rows: &[usize]) -> Result<Var> {
        let Head::Maneuver(mlp) = &self.head else {
            return Err(self.mismatch("maneuver", Pretext::Maneuver));
        };
        let x = g.gather_rows(agents, rows)?;
        mlp.apply(g, &self.store, x)
    }

    /// One logit per lane node: is it within the goal radius of the focus
    /// agent's endpoint? Input is `[p_focus, y_node, phi(node - focus)]`.
    pub fn head_goal(&self, g: &mut Graph<T>, agents: Var, map: Var, batch: &Batch) -> Result<Var> {
        let Head::Goal { delta, mlp } = &self.head else {
            return Err(self.mismatch("goal", Pretext::Goal));
        };
        let mut focus_row = Vec::with_capacity(batch.num_nodes());
        let mut off = Vec::with_capacity(2 * batch.num_nodes());
        for s in 0..batch.num_scenes() {
            let f = batch.focus[s];
            for j in batch.node_offsets[s]..batch.node_offsets[s + 1] {
                focus_row.push(f);
                off.push(batch.node_pos[j][0] - batch.agent_pos[f][0]);
                off.push(batch.node_pos[j][1] - batch.agent_pos[f][1]);
            }
        }
        let off = g.constant_f64(batch.num_nodes(), 2, &off)?;
        let d = delta.apply(g, &self.store, off)?;
        let p = g.gather_rows(agents, &focus_row)?;
        let cat = g.concat_cols(&[p, map, d])?;
        mlp.apply(g, &self.store, cat)
    }

    /// Focus-agent forecasts for a set of scenes.
    pub fn predict_inputs(&self, inputs: &[&SceneInputs]) -> Result<Vec<Forecast>> {
        let batch = Batch::new(inputs)?;
        let mut g = Graph::new();
        let enc = self.encode(&mut g, &batch)?;
        let out = self.decode_trajectories(&mut g, enc.a2a, &batch)?;
        Ok(batch
            .focus
            .iter()
            .map(|&i| forecast_row(&g, &out, i, self.cfg.modes, self.cfg.horizon))
            .collect())
    }

    pub fn predict(&self, scene: &Scene) -> Result<Forecast> {
        let inputs = SceneInputs::new(scene, &self.cfg)?;
        Ok(self.predict_inputs(&[&inputs])?.remove(0))
    }

    /// Focus-agent features after agent-to-agent fusion, one row per scene.
    pub fn focus_features(&self, inputs: &[&SceneInputs]) -> Result<Vec<Vec<f64>>> {
        let batch = Batch::new(inputs)?;
        let mut g = Graph::new();
        let enc = self.encode(&mut g, &batch)?;
        let v = g.value(enc.a2a);
        Ok(batch.focus.iter().map(|&i| v.row(i).iter().map(|x| x.as_f64()).collect()).collect())
    }
}

/// Reads agent `i`'s forecast out of evaluated decoder outputs.
pub fn forecast_row<T: Real>(g: &Graph<T>, out: &ForecastVars, i: usize, modes: usize, horizon: usize) -> Forecast {
    let traj: &Tensor<T> = g.value(out.traj);
    let logits = g.value(out.logits).row(i);
    let mx = logits.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v.as_f64() - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    Forecast {
        modes: (0..modes)
            .map(|k| {
                let row = traj.row(k * out.n_agents + i);
                (0..horizon).map(|t| [row[2 * t].as_f64(), row[2 * t + 1].as_f64()]).collect()
            })
            .collect(),
        scores: e.iter().map(|v| v / z).collect(),
    }
}
