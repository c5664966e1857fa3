use std::fmt;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, MetricReport, TableRow};
use super::noise::{inject_noise, NoiseTarget, NOISE_VARIANCE};
use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::model::{Forecast, Model, ModelConfig, SceneInputs};
use crate::scene::{Maneuver, Point, Scene};
use crate::trainer::{prepare, train, TrainConfig};

/// Scenes predicted per forward pass during evaluation.
pub const EVAL_CHUNK: usize = 64;

/// Focus-agent metrics of `model` over `scenes`.
pub fn evaluate_model<T: Real>(model: &Model<T>, scenes: &[Scene], k: usize) -> Result<MetricReport> {
    let forecasts = predict_all(model, scenes)?;
    let gts: Vec<&[Point]> = scenes.iter().map(|s| s.focus().future_positions()).collect();
    evaluate(&forecasts, &gts, k)
}

pub fn predict_all<T: Real>(model: &Model<T>, scenes: &[Scene]) -> Result<Vec<Forecast>> {
    let mut out = Vec::with_capacity(scenes.len());
    for chunk in scenes.chunks(EVAL_CHUNK) {
        let inputs: Vec<SceneInputs> = chunk.iter().map(|s| SceneInputs::new(s, &model.cfg)).collect::<Result<_>>()?;
        out.extend(model.predict_inputs(&inputs.iter().collect::<Vec<_>>())?);
    }
    Ok(out)
}

/// Single-mode forecast that repeats the focus agent's last observed
/// displacement.
pub fn constant_velocity_forecast(scene: &Scene, horizon: usize) -> Forecast {
    let a = scene.focus();
    let v = a
        .past_displacements()
        .iter()
        .zip(a.observed_mask())
        .rev()
        .find(|(_, &m)| m)
        .map_or([0.0, 0.0], |(d, _)| *d);
    let c = a.current();
    let mode = (1..=horizon).map(|t| [c[0] + v[0] * t as f64, c[1] + v[1] * t as f64]).collect();
    Forecast {
        modes: vec![mode],
        scores: vec![1.0],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub train_fraction: f64,
    pub region_b_fraction: f64,
    pub straight_oversample: usize,
    pub noise_ps: [f64; 2],
    pub noise_variance: f64,
    pub k: usize,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.25,
            region_b_fraction: 0.2,
            straight_oversample: 2,
            noise_ps: [0.25, 0.5],
            noise_variance: NOISE_VARIANCE,
            k: 6,
            seed: 0,
        }
    }
}

/// The six generalization settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Setting {
    /// Train on a fraction of the training scenes.
    TrainFraction,
    /// Train on region A plus a slice of region B; evaluate on region B.
    CrossRegion,
    /// Evaluate on lane-change and turn scenes only.
    LateralManeuvers,
    /// Oversample straight driving in training; evaluate on turns.
    StraightBiased,
    /// Evaluate under noise injected with probability `p`.
    Noise(f64),
}

impl Setting {
    pub fn all(cfg: &SuiteConfig) -> [Setting; 6] {
        [
            Setting::TrainFraction,
            Setting::CrossRegion,
            Setting::LateralManeuvers,
            Setting::StraightBiased,
            Setting::Noise(cfg.noise_ps[0]),
            Setting::Noise(cfg.noise_ps[1]),
        ]
    }

    /// Whether the setting trains its own model rather than reusing the
    /// one fitted on the full training set.
    pub fn retrains(self, cfg: &SuiteConfig) -> bool {
        match self {
            Setting::TrainFraction => cfg.train_fraction < 1.0,
            Setting::CrossRegion | Setting::StraightBiased => true,
            Setting::LateralManeuvers | Setting::Noise(_) => false,
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Setting::TrainFraction => f.write_str("train-fraction"),
            Setting::CrossRegion => f.write_str("cross-region"),
            Setting::LateralManeuvers => f.write_str("lane-change-turn"),
            Setting::StraightBiased => f.write_str("straight-biased"),
            Setting::Noise(p) => write!(f, "noise-p{p:.2}"),
        }
    }
}

pub const REQUIRED_TAGS: [&str; 2] = ["region", "maneuver"];

/// Errors listing every required tag some scene lacks.
pub fn require_tags(scenes: &[Scene]) -> Result<()> {
    let missing: Vec<String> = REQUIRED_TAGS
        .iter()
        .filter(|t| scenes.iter().any(|s| s.tag(t).is_none()))
        .map(|t| t.to_string())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingTags(missing))
    }
}

fn maneuver(s: &Scene) -> Option<Maneuver> {
    s.tag("maneuver")?.parse().ok()
}

/// A seeded subset of about `fraction` of the scenes, in original order.
fn subset(scenes: &[Scene], fraction: f64, seed: u64) -> Vec<Scene> {
    let n = scenes.len();
    let keep = ((n as f64 * fraction).round() as usize).min(n);
    let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(seed), n, keep).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| scenes[i].clone()).collect()
}

pub fn setting_train_set(setting: Setting, train: &[Scene], cfg: &SuiteConfig) -> Result<Vec<Scene>> {
    require_tags(train)?;
    let out = match setting {
        Setting::TrainFraction => subset(train, cfg.train_fraction, cfg.seed),
        Setting::CrossRegion => {
            let b: Vec<Scene> = train.iter().filter(|s| s.tag("region") == Some("B")).cloned().collect();
            let b_keep = subset(&b, cfg.region_b_fraction, cfg.seed);
            let mut out: Vec<Scene> = train.iter().filter(|s| s.tag("region") != Some("B")).cloned().collect();
            out.extend(b_keep);
            out
        }
        Setting::StraightBiased => {
            let mut out = train.to_vec();
            for _ in 1..cfg.straight_oversample {
                out.extend(train.iter().filter(|s| maneuver(s).is_some_and(Maneuver::is_longitudinal)).cloned());
            }
            out
        }
        Setting::LateralManeuvers | Setting::Noise(_) => train.to_vec(),
    };
    if out.is_empty() {
        return Err(Error::Config(format!("setting {setting} leaves no training scenes")));
    }
    Ok(out)
}

pub fn setting_eval_set(setting: Setting, eval: &[Scene], cfg: &SuiteConfig) -> Result<Vec<Scene>> {
    require_tags(eval)?;
    let out: Vec<Scene> = match setting {
        Setting::TrainFraction => eval.to_vec(),
        Setting::CrossRegion => eval.iter().filter(|s| s.tag("region") == Some("B")).cloned().collect(),
        Setting::LateralManeuvers => eval
            .iter()
            .filter(|s| maneuver(s).is_some_and(|m| m.is_turn() || m == Maneuver::LaneChange))
            .cloned()
            .collect(),
        Setting::StraightBiased => eval.iter().filter(|s| maneuver(s).is_some_and(Maneuver::is_turn)).cloned().collect(),
        Setting::Noise(p) => inject_noise(eval, p, cfg.noise_variance, cfg.seed, NoiseTarget::Both)?.scenes,
    };
    if out.is_empty() {
        return Err(Error::Config(format!("setting {setting} has no evaluation scenes")));
    }
    Ok(out)
}

/// A named model configuration taking part in the suite.
#[derive(Clone, Debug)]
pub struct SuiteModel {
    pub name: String,
    pub cfg: ModelConfig,
}

/// Trains every model on the full set and on each retraining setting's
/// set, then evaluates all six settings. Rows are grouped by setting.
pub fn generalization_suite(
    models: &[SuiteModel],
    train_scenes: &[Scene],
    eval_scenes: &[Scene],
    train_cfg: &TrainConfig,
    cfg: &SuiteConfig,
) -> Result<Vec<TableRow>> {
    require_tags(train_scenes)?;
    require_tags(eval_scenes)?;
    let settings = Setting::all(cfg);
    let mut reports: Vec<Vec<MetricReport>> = vec![Vec::new(); settings.len()];
    for m in models {
        let base_data = prepare(train_scenes, &m.cfg, train_cfg)?;
        let base = train::<f32>(&base_data, &m.cfg, train_cfg)?.model;
        for (i, &s) in settings.iter().enumerate() {
            let eval = setting_eval_set(s, eval_scenes, cfg)?;
            let report = if s.retrains(cfg) {
                let data = prepare(&setting_train_set(s, train_scenes, cfg)?, &m.cfg, train_cfg)?;
                let model = train::<f32>(&data, &m.cfg, train_cfg)?.model;
                evaluate_model(&model, &eval, cfg.k)?
            } else {
                evaluate_model(&base, &eval, cfg.k)?
            };
            reports[i].push(report);
        }
    }
    let mut rows = Vec::new();
    for (s, reps) in settings.iter().zip(reports) {
        for (m, report) in models.iter().zip(reps) {
            rows.push(TableRow {
                setting: s.to_string(),
                model: m.name.clone(),
                report,
            });
        }
    }
    Ok(rows)
}
