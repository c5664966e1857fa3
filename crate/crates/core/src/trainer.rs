//! Joint training loop: batch sampling, optional rotation augmentation,
//! pseudo-label plumbing, Adam with a step learning-rate schedule, logs
//! and map-encoder warm start.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{read_checkpoint, Adam, Graph, ParamGroup, ParameterStore, Real};
use crate::error::{Error, Result};
use crate::losses::{
    loss_d2i, loss_goal, loss_mask, loss_maneuver, masked_rows, supervised_losses, total_loss, LossReport,
    LossWeights,
};
use crate::model::{Batch, Model, ModelConfig, Pretext, SceneInputs};
use crate::pseudolabels::{
    bfs_distance_to_intersection, label_goal_candidates, label_maneuvers, mask_lanes, DistanceLabels, GoalLabels,
    MaskSpec, PseudoLabelRecord, DEFAULT_GOAL_EPSILON, DEFAULT_MASK_RATIO,
};
use crate::scene::{LaneGraph, Maneuver, Scene};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_after: f64,
    pub lr_decay_step: usize,
    pub seed: u64,
    /// Rotation augmentation on or off.
    pub augment: bool,
    /// Candidate rotations in degrees, one drawn uniformly per batch.
    pub augmentation_gammas: Vec<f64>,
    pub weights: LossWeights,
    pub mask_ratio: f64,
    pub goal_epsilon: f64,
    pub warm_start_path: Option<PathBuf>,
    /// Progress line every this many steps; 0 is silent.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            lr_initial: 1e-3,
            lr_after: 1e-4,
            lr_decay_step: 1600,
            seed: 0,
            augment: false,
            augmentation_gammas: (0..12).map(|i| 30.0 * i as f64).collect(),
            weights: LossWeights::default(),
            mask_ratio: DEFAULT_MASK_RATIO,
            goal_epsilon: DEFAULT_GOAL_EPSILON,
            warm_start_path: None,
            log_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.lr_decay_step > self.steps {
            return bad(format!("lr_decay_step {} exceeds steps {}", self.lr_decay_step, self.steps));
        }
        if let Some(g) = self.augmentation_gammas.iter().find(|g| !(0.0..360.0).contains(*g)) {
            return bad(format!("augmentation gamma {g} outside [0, 360)"));
        }
        if self.augment && self.augmentation_gammas.is_empty() {
            return bad("augmentation enabled without gammas".into());
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio <= 1.0) {
            return bad(format!("mask ratio {} outside (0, 1]", self.mask_ratio));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.lr_decay_step {
            self.lr_initial
        } else {
            self.lr_after
        }
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub report: LossReport,
}

pub const LOG_HEADER: &str = "step,total,cls,reg,terminal,ss,lr";

pub fn write_log<W: Write>(mut w: W, rows: &[LogRow]) -> Result<()> {
    writeln!(w, "{LOG_HEADER}")?;
    for r in rows {
        let ss = r.report.ss.map(|v| v.to_string()).unwrap_or_default();
        let p = &r.report;
        writeln!(w, "{},{},{},{},{},{},{}", r.step, p.total, p.cls, p.reg, p.terminal, ss, r.lr)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_log(path: impl AsRef<Path>, rows: &[LogRow]) -> Result<()> {
    write_log(BufWriter::new(File::create(path)?), rows)
}

/// Mean of the supervised loss over a window of log rows.
pub fn supervised_average(rows: &[LogRow]) -> f64 {
    rows.iter().map(|r| r.report.supervised()).sum::<f64>() / rows.len().max(1) as f64
}

/// A scene with its model inputs and the labels its pretext needs.
#[derive(Clone, Debug)]
pub struct PreparedScene {
    pub inputs: SceneInputs,
    pub graph: LaneGraph,
    pub maneuver: Option<Maneuver>,
    pub d2i: Option<DistanceLabels>,
    pub goal: Option<GoalLabels>,
}

/// Builds inputs and pretext labels for every scene. Maneuver clusters are
/// fitted once over the whole set; distance and goal labels per scene.
pub fn prepare(scenes: &[Scene], cfg: &ModelConfig, train: &TrainConfig) -> Result<Vec<PreparedScene>> {
    if scenes.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let maneuvers = match cfg.pretext {
        Pretext::Maneuver => Some(label_maneuvers(scenes, train.seed)?),
        _ => None,
    };
    let mut out = Vec::with_capacity(scenes.len());
    for (i, s) in scenes.iter().enumerate() {
        let d2i = match cfg.pretext {
            Pretext::D2i => match bfs_distance_to_intersection(&s.graph) {
                Ok(d) => Some(d),
                Err(Error::NoIntersection) => None,
                Err(e) => return Err(e),
            },
            _ => None,
        };
        let goal = match cfg.pretext {
            Pretext::Goal => Some(label_goal_candidates(s, train.goal_epsilon)?),
            _ => None,
        };
        out.push(PreparedScene {
            inputs: SceneInputs::new(s, cfg)?,
            graph: s.graph.clone(),
            maneuver: maneuvers.as_ref().and_then(|m| m.labels[i]),
            d2i,
            goal,
        });
    }
    if cfg.pretext == Pretext::D2i && out.iter().all(|p| p.d2i.is_none()) {
        return Err(Error::Config("pretext d2i needs scenes with intersection nodes".into()));
    }
    Ok(out)
}

/// Replaces computed pretext labels with those of a sidecar file, matched
/// by scene id. Fields absent from a record keep their computed value.
pub fn apply_labels(data: &mut [PreparedScene], scenes: &[Scene], records: &[PseudoLabelRecord]) -> Result<()> {
    let by_id: HashMap<&str, &PseudoLabelRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    for (p, s) in data.iter_mut().zip(scenes) {
        let id = s.id().ok_or_else(|| Error::MissingTags(vec!["id".into()]))?;
        let r = by_id
            .get(id)
            .ok_or_else(|| Error::Config(format!("no pseudo-labels for scene {id}")))?;
        if r.maneuver.is_some() {
            p.maneuver = r.maneuver;
        }
        if let Some(d) = &r.d2i {
            if d.d.len() != p.inputs.num_nodes() {
                return Err(Error::Config(format!("scene {id}: {} distance labels for {} nodes", d.d.len(), p.inputs.num_nodes())));
            }
            p.d2i = Some(d.clone());
        }
        if let Some(g) = &r.goal {
            p.goal = Some(g.clone());
        }
    }
    Ok(())
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome<T: Real> {
    pub model: Model<T>,
    pub log: Vec<LogRow>,
}

/// Replaces every map-encoder parameter of `store` with the checkpoint's
/// value of the same name. Other groups are left alone. Returns how many
/// parameters were loaded.
pub fn warm_start_map_encoder<T: Real>(store: &mut ParameterStore<T>, path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let entries = read_checkpoint(File::open(path)?, path)?;
    let err = |msg: String| Error::Checkpoint {
        path: path.to_path_buf(),
        msg,
    };
    let mut loaded = 0;
    for p in store.iter_mut().filter(|p| p.group == ParamGroup::MapEncoder) {
        let Some(e) = entries.iter().find(|e| e.name == p.name && e.group == ParamGroup::MapEncoder) else {
            return Err(err(format!("map encoder parameter {} not in checkpoint", p.name)));
        };
        if (e.rows, e.cols) != p.value.shape() {
            return Err(err(format!(
                "parameter {}: checkpoint shape {}x{}, model shape {:?}",
                p.name,
                e.rows,
                e.cols,
                p.value.shape()
            )));
        }
        for (dst, &src) in p.value.data_mut().iter_mut().zip(&e.values) {
            *dst = T::from_f64(src as f64);
        }
        loaded += 1;
    }
    Ok(loaded)
}

/// Lane-masked copy of a scene's features for the batch: masked rows are
/// zeroed; targets are the clean (possibly rotated) features.
fn draw_masks(
    batch: &Batch,
    scenes: &[&PreparedScene],
    ratio: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<[f64; 4]>, Vec<MaskSpec>)> {
    let mut feats = batch.node_feats.clone();
    let mut specs = Vec::with_capacity(scenes.len());
    for (s, p) in scenes.iter().enumerate() {
        let (_, mut spec) = mask_lanes(&p.graph, ratio, rng.next_u64())?;
        let off = batch.node_offsets[s];
        spec.targets = spec.nodes.iter().map(|&j| batch.node_feats[off + j]).collect();
        for &j in &spec.nodes {
            feats[off + j] = [0.0; 4];
        }
        specs.push(spec);
    }
    Ok((feats, specs))
}

/// One optimization objective evaluation on a batch. Returns the graph,
/// the total loss variable and its report.
pub fn batch_loss<T: Real>(
    model: &Model<T>,
    scenes: &[&PreparedScene],
    batch: &Batch,
    train: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Graph<T>, crate::autodiff::Var, LossReport)> {
    let mut g = Graph::new();
    let enc = model.encode(&mut g, batch)?;
    let out = model.decode_trajectories(&mut g, enc.a2a, batch)?;
    let sup = supervised_losses(&mut g, &out, batch)?;
    let ss = match model.cfg.pretext {
        Pretext::None => None,
        Pretext::Mask => {
            let (feats, specs) = draw_masks(batch, scenes, train.mask_ratio, rng)?;
            let refs: Vec<&MaskSpec> = specs.iter().collect();
            let rows = masked_rows(batch, &refs)?;
            let y = model.map_encode(&mut g, batch, &feats)?;
            let recon = model.head_mask(&mut g, y, &rows)?;
            Some(loss_mask(&mut g, recon, &refs)?)
        }
        Pretext::D2i => {
            let pred = model.head_d2i(&mut g, enc.map)?;
            let labels: Vec<_> = scenes.iter().map(|p| p.d2i.as_ref()).collect();
            loss_d2i(&mut g, pred, batch, &labels)?
        }
        Pretext::Maneuver => {
            let (rows, labels): (Vec<usize>, Vec<Maneuver>) = scenes
                .iter()
                .enumerate()
                .filter_map(|(s, p)| Some((batch.focus[s], p.maneuver?)))
                .unzip();
            if rows.is_empty() {
                None
            } else {
                let logits = model.head_maneuver(&mut g, enc.a2a, &rows)?;
                Some(loss_maneuver(&mut g, logits, &labels)?)
            }
        }
        Pretext::Goal => {
            let logits = model.head_goal(&mut g, enc.a2a, enc.map, batch)?;
            let labels: Vec<_> = scenes.iter().map(|p| p.goal.as_ref()).collect();
            loss_goal(&mut g, logits, batch, &labels)?
        }
    };
    let (total, report) = total_loss(&mut g, sup, ss, train.weights)?;
    Ok((g, total, report))
}

/// Trains a fresh model seeded from `train.seed`.
pub fn train<T: Real>(data: &[PreparedScene], cfg: &ModelConfig, train: &TrainConfig) -> Result<TrainOutcome<T>> {
    train.validate()?;
    let mut model = Model::<T>::new(cfg.clone(), train.seed)?;
    if let Some(p) = &train.warm_start_path {
        warm_start_map_encoder(&mut model.store, p)?;
    }
    continue_training(model, data, train)
}

/// Runs the training loop from an existing model.
pub fn continue_training<T: Real>(
    mut model: Model<T>,
    data: &[PreparedScene],
    train: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train.validate()?;
    if data.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed ^ 0x5eed_7a1e);
    let mut adam = Adam::default();
    let mut order: Vec<usize> = Vec::new();
    let mut log = Vec::with_capacity(train.steps);
    for step in 0..train.steps {
        let mut picked = Vec::with_capacity(train.batch_size);
        while picked.len() < train.batch_size.min(data.len()) {
            if order.is_empty() {
                order = (0..data.len()).collect();
                order.shuffle(&mut rng);
            }
            picked.push(order.pop().expect("refilled"));
        }
        let scenes: Vec<&PreparedScene> = picked.iter().map(|&i| &data[i]).collect();
        let gamma = if train.augment {
            train.augmentation_gammas[rng.random_range(0..train.augmentation_gammas.len())]
        } else {
            0.0
        };
        let inputs: Vec<SceneInputs> = scenes.iter().map(|p| if gamma == 0.0 { p.inputs.clone() } else { p.inputs.rotated(gamma.to_radians()) }).collect();
        let batch = Batch::new(&inputs.iter().collect::<Vec<_>>())?;
        let (g, total, report) = batch_loss(&model, &scenes, &batch, train, &mut rng)?;
        if !report.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                breakdown: format!(
                    "cls={} reg={} terminal={} ss={:?}",
                    report.cls, report.reg, report.terminal, report.ss
                ),
            });
        }
        model.store.zero_grad();
        g.backward(total, &mut model.store)?;
        let lr = train.lr_at(step);
        adam.step(&mut model.store, lr);
        log.push(LogRow { step, lr, report });
        if train.log_every > 0 && (step + 1) % train.log_every == 0 {
            let window = &log[log.len().saturating_sub(train.log_every)..];
            println!(
                "step {:>6}  loss {:.4}  supervised {:.4}  lr {:.0e}",
                step + 1,
                window.iter().map(|r| r.report.total).sum::<f64>() / window.len() as f64,
                supervised_average(window),
                lr
            );
        }
    }
    Ok(TrainOutcome { model, log })
}
