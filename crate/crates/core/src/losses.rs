//! Supervised forecasting losses, the pretext losses and the joint
//! objective. Every batch loss is a per-scene mean followed by a mean over
//! scenes.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{Batch, ForecastVars};
use crate::pseudolabels::{DistanceLabels, Features, GoalLabels, MaskSpec};
use crate::scene::{Maneuver, Point, NODE_FEATURES};

/// Score margin of the mode classification loss.
pub const CLS_MARGIN: f64 = 0.2;
pub const GOAL_FOCAL_GAMMA: f64 = 2.0;
pub const GOAL_FOCAL_ALPHA: f64 = 0.25;

/// Index of the mode whose final point is closest to `gt`'s; ties go to
/// the lowest index.
pub fn best_mode(modes: &[&[f64]], gt_end: Point) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, m) in modes.iter().enumerate() {
        let n = m.len();
        let d = (m[n - 2] - gt_end[0]).hypot(m[n - 1] - gt_end[1]);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// Agents of scene `s` that carry a ground-truth future.
fn supervised(batch: &Batch, s: usize) -> Vec<usize> {
    (batch.agent_offsets[s]..batch.agent_offsets[s + 1])
        .filter(|&i| !batch.futures[i].is_empty())
        .collect()
}

/// Best mode for every agent with a future; `None` elsewhere.
pub fn best_modes<T: Real>(g: &Graph<T>, out: &ForecastVars, batch: &Batch) -> Vec<Option<usize>> {
    let traj = g.value(out.traj).to_f64();
    let cols = g.shape(out.traj).1;
    let k = g.shape(out.logits).1;
    let n = out.n_agents;
    (0..n)
        .map(|i| {
            let end = *batch.futures[i].last()?;
            let modes: Vec<&[f64]> = (0..k).map(|m| &traj[(m * n + i) * cols..(m * n + i + 1) * cols]).collect();
            Some(best_mode(&modes, end))
        })
        .collect()
}

fn scene_mean<T: Real>(g: &mut Graph<T>, parts: Vec<Var>) -> Result<Option<Var>> {
    if parts.is_empty() {
        return Ok(None);
    }
    let cat = g.concat_rows(&parts)?;
    g.mean(cat).map(Some)
}

fn zero<T: Real>(g: &mut Graph<T>) -> Var {
    g.constant(Tensor::scalar(T::zero()))
}

fn check_best(batch: &Batch, best: &[Option<usize>]) -> Result<()> {
    if best.len() != batch.num_agents() {
        return Err(Error::invalid("losses", format!("{} best modes for {} agents", best.len(), batch.num_agents())));
    }
    if batch.futures.iter().zip(best).any(|(f, b)| f.is_empty() != b.is_none()) {
        return Err(Error::invalid("losses", "best modes do not match the agents with futures"));
    }
    Ok(())
}

/// Smooth-L1 between the best mode and the ground truth, summed over x and
/// y and averaged over agents and time steps.
pub fn loss_reg<T: Real>(g: &mut Graph<T>, out: &ForecastVars, batch: &Batch, best: &[Option<usize>]) -> Result<Var> {
    check_best(batch, best)?;
    let mut parts = Vec::new();
    for s in 0..batch.num_scenes() {
        let rows = supervised(batch, s);
        if rows.is_empty() {
            continue;
        }
        let idx: Vec<usize> = rows.iter().map(|&i| best[i].unwrap_or(0) * out.n_agents + i).collect();
        let pred = g.gather_rows(out.traj, &idx)?;
        let gt: Vec<f64> = rows.iter().flat_map(|&i| batch.futures[i].iter().flatten().copied()).collect();
        let cols = g.shape(pred).1;
        if gt.len() != rows.len() * cols {
            return Err(Error::invalid("loss_reg", "future length does not match the horizon"));
        }
        let gt = g.constant_f64(rows.len(), cols, &gt)?;
        let l = g.smooth_l1(pred, gt)?;
        parts.push(g.mul_scalar(l, T::from_f64(2.0)));
    }
    Ok(scene_mean(g, parts)?.unwrap_or_else(|| zero(g)))
}

/// Max-margin mode classification:
/// `1/(K-1) sum_{k != best} max(0, s_k + margin - s_best)` per agent.
pub fn loss_cls<T: Real>(g: &mut Graph<T>, out: &ForecastVars, batch: &Batch, best: &[Option<usize>]) -> Result<Var> {
    check_best(batch, best)?;
    let k = g.shape(out.logits).1;
    if k < 2 {
        return Ok(zero(g));
    }
    let ones = g.constant(Tensor::from_f64(k, k, &vec![1.0; k * k])?);
    let mut parts = Vec::new();
    for s in 0..batch.num_scenes() {
        let rows = supervised(batch, s);
        if rows.is_empty() {
            continue;
        }
        let n = rows.len();
        let logits = g.gather_rows(out.logits, &rows)?;
        let mut sel = vec![0.0; n * k];
        for (r, &i) in rows.iter().enumerate() {
            sel[r * k + best[i].unwrap_or(0)] = 1.0;
        }
        let others: Vec<f64> = sel.iter().map(|v| 1.0 - v).collect();
        let sel = g.constant_f64(n, k, &sel)?;
        let others = g.constant_f64(n, k, &others)?;
        let picked = g.mul(logits, sel)?;
        let s_best = g.matmul(picked, ones)?;
        let d = g.sub(logits, s_best)?;
        let d = g.add_scalar(d, T::from_f64(CLS_MARGIN));
        let d = g.relu(d);
        let d = g.mul(d, others)?;
        let total = g.sum(d);
        parts.push(g.mul_scalar(total, T::from_f64(1.0 / (n * (k - 1)) as f64)));
    }
    Ok(scene_mean(g, parts)?.unwrap_or_else(|| zero(g)))
}

/// Euclidean distance between the best mode's endpoint and the true one.
pub fn loss_terminal<T: Real>(
    g: &mut Graph<T>,
    out: &ForecastVars,
    batch: &Batch,
    best: &[Option<usize>],
) -> Result<Var> {
    check_best(batch, best)?;
    let cols = g.shape(out.traj).1;
    let mut parts = Vec::new();
    for s in 0..batch.num_scenes() {
        let rows = supervised(batch, s);
        if rows.is_empty() {
            continue;
        }
        let idx: Vec<usize> = rows.iter().map(|&i| best[i].unwrap_or(0) * out.n_agents + i).collect();
        let pred = g.gather_rows(out.traj, &idx)?;
        let end = g.slice_cols(pred, cols - 2, cols)?;
        let gt: Vec<f64> = rows.iter().flat_map(|&i| batch.futures[i].last().copied().unwrap_or_default()).collect();
        let gt = g.constant_f64(rows.len(), 2, &gt)?;
        let d = g.sub(end, gt)?;
        let d = g.row_norm(d);
        parts.push(g.mean(d)?);
    }
    Ok(scene_mean(g, parts)?.unwrap_or_else(|| zero(g)))
}

/// Global node rows of every scene's masked nodes, in batch order.
pub fn masked_rows(batch: &Batch, masks: &[&MaskSpec]) -> Result<Vec<usize>> {
    if masks.len() != batch.num_scenes() {
        return Err(Error::invalid("loss_mask", format!("{} masks for {} scenes", masks.len(), batch.num_scenes())));
    }
    let mut out = Vec::new();
    for (s, m) in masks.iter().enumerate() {
        let off = batch.node_offsets[s];
        let count = batch.node_offsets[s + 1] - off;
        if let Some(&bad) = m.nodes.iter().find(|&&j| j >= count) {
            return Err(Error::invalid("loss_mask", format!("masked node {bad} outside scene of {count} nodes")));
        }
        out.extend(m.nodes.iter().map(|&j| off + j));
    }
    Ok(out)
}

/// Mean squared reconstruction error over masked nodes. `recon` rows
/// follow [`masked_rows`].
pub fn loss_mask<T: Real>(g: &mut Graph<T>, recon: Var, masks: &[&MaskSpec]) -> Result<Var> {
    let total: usize = masks.iter().map(|m| m.nodes.len()).sum();
    if g.shape(recon) != (total, NODE_FEATURES) {
        return Err(Error::invalid(
            "loss_mask",
            format!("reconstruction {:?} for {total} masked nodes", g.shape(recon)),
        ));
    }
    let mut parts = Vec::new();
    let mut at = 0;
    for m in masks {
        if m.targets.len() != m.nodes.len() {
            return Err(Error::invalid("loss_mask", "targets and masked nodes differ in length"));
        }
        let n = m.nodes.len();
        if n == 0 {
            continue;
        }
        let idx: Vec<usize> = (at..at + n).collect();
        at += n;
        let pred = g.gather_rows(recon, &idx)?;
        let flat: Vec<f64> = m.targets.iter().flat_map(|f: &Features| f.iter().copied()).collect();
        let t = g.constant_f64(n, NODE_FEATURES, &flat)?;
        parts.push(g.mse(pred, t)?);
    }
    Ok(scene_mean(g, parts)?.unwrap_or_else(|| zero(g)))
}

/// Mean squared error of per-node distance predictions over reachable
/// nodes. Scenes with no labels are skipped; `None` when none remain.
pub fn loss_d2i<T: Real>(
    g: &mut Graph<T>,
    pred: Var,
    batch: &Batch,
    labels: &[Option<&DistanceLabels>],
) -> Result<Option<Var>> {
    if labels.len() != batch.num_scenes() || g.shape(pred) != (batch.num_nodes(), 1) {
        return Err(Error::invalid("loss_d2i", "labels do not match the batch"));
    }
    let mut parts = Vec::new();
    for (s, l) in labels.iter().enumerate() {
        let Some(l) = l else { continue };
        let off = batch.node_offsets[s];
        if l.d.len() != batch.node_offsets[s + 1] - off || l.reachable.len() != l.d.len() {
            return Err(Error::invalid("loss_d2i", format!("scene {s}: {} labels", l.d.len())));
        }
        let idx: Vec<usize> = (0..l.d.len()).filter(|&j| l.reachable[j]).collect();
        if idx.is_empty() {
            continue;
        }
        let target: Vec<f64> = idx.iter().map(|&j| l.d[j]).collect();
        let rows: Vec<usize> = idx.iter().map(|j| off + j).collect();
        let p = g.gather_rows(pred, &rows)?;
        let t = g.constant_f64(rows.len(), 1, &target)?;
        parts.push(g.mse(p, t)?);
    }
    scene_mean(g, parts)
}

/// Cross-entropy over the six maneuver classes, one row per labelled scene.
pub fn loss_maneuver<T: Real>(g: &mut Graph<T>, logits: Var, labels: &[Maneuver]) -> Result<Var> {
    let ids: Vec<usize> = labels.iter().map(|m| m.id()).collect();
    g.cross_entropy(logits, &ids)
}

/// Binary focal loss over goal candidates. `logits` has one row per lane
/// node of the batch.
pub fn loss_goal<T: Real>(
    g: &mut Graph<T>,
    logits: Var,
    batch: &Batch,
    labels: &[Option<&GoalLabels>],
) -> Result<Option<Var>> {
    if labels.len() != batch.num_scenes() || g.shape(logits) != (batch.num_nodes(), 1) {
        return Err(Error::invalid("loss_goal", "labels do not match the batch"));
    }
    let mut parts = Vec::new();
    for (s, l) in labels.iter().enumerate() {
        let Some(l) = l else { continue };
        let off = batch.node_offsets[s];
        let count = batch.node_offsets[s + 1] - off;
        if l.labels.len() != l.candidates.len() || l.candidates.iter().any(|&c| c >= count) {
            return Err(Error::invalid("loss_goal", format!("scene {s}: candidates do not match {count} nodes")));
        }
        if l.candidates.is_empty() {
            continue;
        }
        let rows: Vec<usize> = l.candidates.iter().map(|c| off + c).collect();
        let z = g.gather_rows(logits, &rows)?;
        parts.push(g.binary_focal_loss(
            z,
            &l.labels,
            T::from_f64(GOAL_FOCAL_GAMMA),
            T::from_f64(GOAL_FOCAL_ALPHA),
        )?);
    }
    scene_mean(g, parts)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha1: 1.0, alpha2: 1.0 }
    }
}

/// The three supervised terms of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct Supervised {
    pub cls: Var,
    pub reg: Var,
    pub terminal: Var,
}

/// Scalar values of one evaluation of the joint objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub cls: f64,
    pub reg: f64,
    pub terminal: f64,
    /// `None` when no pretext term was evaluated.
    pub ss: Option<f64>,
    pub weights: LossWeights,
}

impl LossReport {
    pub fn supervised(&self) -> f64 {
        self.cls + self.reg + self.terminal
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

/// All three supervised losses with best modes picked from `out`.
pub fn supervised_losses<T: Real>(g: &mut Graph<T>, out: &ForecastVars, batch: &Batch) -> Result<Supervised> {
    let best = best_modes(g, out, batch);
    Ok(Supervised {
        cls: loss_cls(g, out, batch, &best)?,
        reg: loss_reg(g, out, batch, &best)?,
        terminal: loss_terminal(g, out, batch, &best)?,
    })
}

/// `alpha1 (cls + reg + terminal) + alpha2 ss`; the pretext term is dropped
/// when absent.
pub fn total_loss<T: Real>(
    g: &mut Graph<T>,
    sup: Supervised,
    ss: Option<Var>,
    weights: LossWeights,
) -> Result<(Var, LossReport)> {
    let s = g.add(sup.cls, sup.reg)?;
    let s = g.add(s, sup.terminal)?;
    let mut total = g.mul_scalar(s, T::from_f64(weights.alpha1));
    if let Some(ss) = ss {
        let w = g.mul_scalar(ss, T::from_f64(weights.alpha2));
        total = g.add(total, w)?;
    }
    let v = |g: &Graph<T>, x: Var| g.value(x).item().as_f64();
    let (cls, reg, terminal) = (v(g, sup.cls), v(g, sup.reg), v(g, sup.terminal));
    let ss = ss.map(|x| v(g, x));
    let report = LossReport {
        total: weights.alpha1 * (cls + reg + terminal) + weights.alpha2 * ss.unwrap_or(0.0),
        cls,
        reg,
        terminal,
        ss,
        weights,
    };
    Ok((total, report))
}
