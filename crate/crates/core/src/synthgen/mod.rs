//! Procedural lane graphs and scripted agent trajectories.

mod geometry;
mod templates;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{
    crop_radius, normalize_scene, rotate, AgentTrack, LaneGraph, Maneuver, NormalizationFrame, Point, Scene, DT,
    FEAT_DIR_X, FEAT_DIR_Y,
};
pub use geometry::{Route, Seg};
use geometry::{add, left_normal, scale};
pub use templates::{Template, JUNCTION_HALF, LANE_WIDTH};
use templates::{build, TemplateMap};

/// Longitudinal acceleration magnitude of accelerate/decelerate scripts (m/s²).
pub const SCRIPT_ACCEL: f64 = 1.5;
/// Turning agents drive at this fraction of the sampled cruise speed.
pub const TURN_SPEED_FACTOR: f64 = 0.7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub seed: u64,
    pub n_scenes: usize,
    pub maneuver_mix: BTreeMap<Maneuver, f64>,
    /// Region tag weights. Region `B` draws curve templates only; every other
    /// region draws straight roads and intersections.
    pub region_mix: BTreeMap<String, f64>,
    /// Inclusive range of agents per scene, focus agent included.
    pub agents_per_scene: [usize; 2],
    pub node_spacing: f64,
    pub noise_sigma: f64,
    /// Inclusive range of the focus agent's cruise speed (m/s).
    pub speed_range: [f64; 2],
    pub history: usize,
    pub horizon: usize,
    pub val_fraction: f64,
    pub crop_radius: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_scenes: 2000,
            maneuver_mix: Maneuver::ALL.into_iter().map(|m| (m, 1.0)).collect(),
            region_mix: [("A".to_string(), 1.0)].into_iter().collect(),
            agents_per_scene: [3, 6],
            node_spacing: 2.5,
            noise_sigma: 0.05,
            speed_range: [9.0, 11.0],
            history: crate::scene::DEFAULT_HISTORY,
            horizon: crate::scene::DEFAULT_HORIZON,
            val_fraction: 0.2,
            crop_radius: 100.0,
        }
    }
}

pub fn region_templates(region: &str) -> &'static [Template] {
    if region == "B" {
        &[Template::Curve]
    } else {
        &[Template::Straight, Template::TIntersection, Template::CrossIntersection]
    }
}

impl WorldConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Config(format!("{}: {}", e.path(), e.inner())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let check_weights = |name: &str, w: &mut dyn Iterator<Item = f64>| -> Result<()> {
            let mut any = false;
            for v in w {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("{name}: weight {v} is not a finite nonnegative number")));
                }
                any |= v > 0.0;
            }
            if any {
                Ok(())
            } else {
                Err(Error::Config(format!("{name}: no positive weight")))
            }
        };
        check_weights("maneuver_mix", &mut self.maneuver_mix.values().copied())?;
        check_weights("region_mix", &mut self.region_mix.values().copied())?;
        for (region, &w) in &self.region_mix {
            if w > 0.0 && self.region_weights(region).iter().all(|&x| x == 0.0) {
                return bad(format!("region {region} supports none of the requested maneuvers"));
            }
        }
        if !(self.node_spacing > 0.0) {
            return bad(format!("node_spacing must be positive, got {}", self.node_spacing));
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be nonnegative".into());
        }
        let [lo, hi] = self.agents_per_scene;
        if lo == 0 || lo > hi {
            return bad(format!("agents_per_scene range [{lo}, {hi}] is empty or excludes the focus agent"));
        }
        let [vlo, vhi] = self.speed_range;
        if !(vlo > 0.0 && vlo <= vhi) {
            return bad(format!("speed_range [{vlo}, {vhi}] invalid"));
        }
        if vlo - SCRIPT_ACCEL * self.horizon as f64 * DT <= 0.0 {
            return bad("speed_range too low: decelerating agents would stop".into());
        }
        if self.history == 0 || self.horizon == 0 {
            return bad("history and horizon must be positive".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must lie in [0, 1)".into());
        }
        if !(self.crop_radius > 0.0) {
            return bad("crop_radius must be positive".into());
        }
        Ok(())
    }

    fn region_weights(&self, region: &str) -> Vec<f64> {
        let templates = region_templates(region);
        Maneuver::ALL
            .iter()
            .map(|m| {
                if templates.iter().any(|t| t.supports(*m)) {
                    self.maneuver_mix.get(m).copied().unwrap_or(0.0)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Lane graph of one template in its canonical frame.
pub fn gen_lane_graph(seed: u64, template: Template, spacing: f64) -> Result<LaneGraph> {
    if !(spacing > 0.0) {
        return Err(Error::invalid("gen_lane_graph", format!("spacing must be positive, got {spacing}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(build(&mut rng, template, spacing).graph)
}

fn pick_weighted<'a, R: Rng>(rng: &mut R, items: impl Iterator<Item = (&'a String, &'a f64)>) -> &'a String {
    let items: Vec<_> = items.collect();
    let dist = WeightedIndex::new(items.iter().map(|(_, &w)| w)).expect("validated weights");
    items[dist.sample(rng)].0
}

struct Script {
    route: Route,
    s0: f64,
    speed: f64,
    accel: f64,
    /// Signed lateral displacement reached by a lane change.
    shift: f64,
    shift_duration: f64,
}

impl Script {
    fn position(&self, t: f64) -> Point {
        let mut s = self.s0 + self.speed * t;
        let mut off = 0.0;
        if t > 0.0 {
            s += 0.5 * self.accel * t * t;
            if self.shift != 0.0 {
                let u = (t / self.shift_duration).min(1.0);
                off = self.shift * (1.0 - (PI * u).cos()) / 2.0;
            }
        }
        add(self.route.point_at(s), scale(left_normal(self.route.heading_at(s)), off))
    }
}

fn focus_script<R: Rng>(rng: &mut R, map: &TemplateMap, m: Maneuver, cfg: &WorldConfig) -> Script {
    let v0 = rng.random_range(cfg.speed_range[0]..=cfg.speed_range[1]);
    let accel = match m {
        Maneuver::Accelerate => SCRIPT_ACCEL,
        Maneuver::Decelerate => -SCRIPT_ACCEL,
        _ => 0.0,
    };
    let past_len = v0 * cfg.history as f64 * DT;
    match map.template {
        Template::Straight | Template::Curve => {
            let lane = rng.random_range(0..2);
            let (shift, shift_duration) = if m == Maneuver::LaneChange {
                let sign = if lane == 0 { 1.0 } else { -1.0 };
                (sign * LANE_WIDTH, rng.random_range(2.0..2.8))
            } else {
                (0.0, 1.0)
            };
            Script {
                route: map.lanes[lane].route.clone(),
                s0: past_len + rng.random_range(5.0..15.0),
                speed: v0,
                accel,
                shift,
                shift_duration,
            }
        }
        Template::TIntersection | Template::CrossIntersection => {
            let kind = if m.is_turn() { m } else { Maneuver::MaintainSpeed };
            let options: Vec<_> = map.movements.iter().filter(|mv| mv.kind == kind).collect();
            let mv = options.choose(rng).expect("template supports the maneuver");
            let incoming = &map.lanes[mv.incoming].route;
            let route = incoming
                .then(&map.lanes[mv.connector].route)
                .then(&map.lanes[mv.outgoing].route);
            let (speed, lead) = if m.is_turn() {
                (TURN_SPEED_FACTOR * v0, rng.random_range(1.0..5.0))
            } else {
                (v0, rng.random_range(1.0..10.0))
            };
            Script {
                route,
                s0: incoming.length() - lead,
                speed,
                accel,
                shift: 0.0,
                shift_duration: 1.0,
            }
        }
    }
}

fn background_script<R: Rng>(rng: &mut R, map: &TemplateMap, cfg: &WorldConfig) -> Script {
    let lane = rng.random_range(0..map.lanes.len());
    let mut route = map.lanes[lane].route.clone();
    let s0 = rng.random_range(0.0..route.length());
    let speed = rng.random_range(4.0..12.0);
    let need = s0 + speed * cfg.horizon as f64 * DT;
    let mut at = lane;
    while route.length() < need {
        let next: Vec<usize> = map.successors(at).collect();
        let Some(&n) = next.choose(rng) else { break };
        route = route.then(&map.lanes[n].route);
        at = n;
    }
    Script {
        route,
        s0,
        speed,
        accel: 0.0,
        shift: 0.0,
        shift_duration: 1.0,
    }
}

fn track_from_script<R: Rng>(
    rng: &mut R,
    script: &Script,
    cfg: &WorldConfig,
    observed: usize,
    pose: &NormalizationFrame,
    noise: Option<&Normal<f64>>,
) -> AgentTrack {
    let l = cfg.history;
    let first_obs = l + 1 - observed;
    let mut past: Vec<Point> = (0..=l)
        .map(|i| pose.invert(script.position((i as f64 - l as f64) * DT)))
        .collect();
    if let Some(n) = noise {
        for p in past.iter_mut().skip(first_obs) {
            p[0] += n.sample(rng);
            p[1] += n.sample(rng);
        }
    }
    for i in 0..first_obs {
        past[i] = past[first_obs];
    }
    let future = (1..=cfg.horizon)
        .map(|i| pose.invert(script.position(i as f64 * DT)))
        .collect();
    let mask = (0..l).map(|i| i >= first_obs).collect();
    AgentTrack::new(past, future, mask).expect("consistent lengths")
}

/// One normalized, cropped scene. Tags: `id`, `region`, `maneuver`, `template`.
pub fn gen_scene(seed: u64, config: &WorldConfig) -> Result<Scene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let region = pick_weighted(&mut rng, config.region_mix.iter().filter(|(_, &w)| w > 0.0)).clone();
    let weights = config.region_weights(&region);
    let m = Maneuver::ALL[WeightedIndex::new(&weights).expect("validated").sample(&mut rng)];
    let templates: Vec<Template> = region_templates(&region).iter().copied().filter(|t| t.supports(m)).collect();
    let template = *templates.choose(&mut rng).expect("region supports maneuver");
    let map = build(&mut rng, template, config.node_spacing);

    let pose = NormalizationFrame {
        origin: [rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0)],
        rotation: rng.random_range(0.0..2.0 * PI),
    };
    // `pose.invert` maps canonical coordinates into the world.
    let mut graph = map.graph.clone();
    for p in &mut graph.node_positions {
        *p = pose.invert(*p);
    }
    for f in &mut graph.node_features {
        let d = rotate([f[FEAT_DIR_X], f[FEAT_DIR_Y]], pose.rotation);
        f[FEAT_DIR_X] = d[0];
        f[FEAT_DIR_Y] = d[1];
    }

    // Noise has its own stream so that toggling it leaves everything else fixed.
    let mut noise_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
    let noise = (config.noise_sigma > 0.0).then(|| Normal::new(0.0, config.noise_sigma).expect("sigma validated"));
    let focus = focus_script(&mut rng, &map, m, config);
    let mut agents = vec![track_from_script(&mut noise_rng, &focus, config, config.history + 1, &pose, noise.as_ref())];
    let n_agents = rng.random_range(config.agents_per_scene[0]..=config.agents_per_scene[1]);
    for _ in 1..n_agents {
        let script = background_script(&mut rng, &map, config);
        let observed = if rng.random_bool(0.25) {
            rng.random_range(2..=config.history + 1)
        } else {
            config.history + 1
        };
        agents.push(track_from_script(&mut noise_rng, &script, config, observed, &pose, noise.as_ref()));
    }

    let tags = [
        ("id", format!("{seed:016x}")),
        ("region", region),
        ("maneuver", m.to_string()),
        ("template", template.as_str().to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let world = Scene {
        graph,
        agents,
        focus_agent: 0,
        frame: NormalizationFrame::IDENTITY,
        tags,
    };
    crop_radius(&normalize_scene(&world)?, config.crop_radius)
}

/// Generates `n_scenes` scenes and splits them into train and validation
/// sets. Scene `i` gets id `scene-{i:06}`.
pub fn gen_dataset(config: &WorldConfig) -> Result<(Vec<Scene>, Vec<Scene>)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let seeds: Vec<u64> = (0..config.n_scenes).map(|_| rng.next_u64()).collect();
    let mut scenes = Vec::with_capacity(config.n_scenes);
    for (i, &s) in seeds.iter().enumerate() {
        let mut scene = gen_scene(s, config)?;
        scene.tags.insert("id".into(), format!("scene-{i:06}"));
        scenes.push(scene);
    }
    let n_val = (config.n_scenes as f64 * config.val_fraction).round() as usize;
    let mut perm: Vec<usize> = (0..config.n_scenes).collect();
    perm.shuffle(&mut rng);
    let mut is_val = vec![false; config.n_scenes];
    for &i in &perm[..n_val] {
        is_val[i] = true;
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (scene, v) in scenes.into_iter().zip(is_val) {
        if v {
            val.push(scene);
        } else {
            train.push(scene);
        }
    }
    Ok((train, val))
}
