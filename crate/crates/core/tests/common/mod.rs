#![allow(dead_code)]

use laneforecast::autodiff::{Graph, ParameterStore, Var};
use laneforecast::model::{ModelConfig, Pretext};
use laneforecast::scene::Scene;
use laneforecast::synthgen::{gen_scene, WorldConfig};

/// Short tracks and a coarse, tightly cropped map.
pub fn tiny_world() -> WorldConfig {
    WorldConfig {
        history: 4,
        horizon: 3,
        node_spacing: 6.0,
        crop_radius: 25.0,
        agents_per_scene: [2, 3],
        ..WorldConfig::default()
    }
}

pub fn tiny_config(pretext: Pretext) -> ModelConfig {
    ModelConfig {
        hidden: 4,
        dilations: vec![1, 2],
        modes: 2,
        horizon: 3,
        history: 4,
        pretext,
        ..ModelConfig::default()
    }
}

pub fn tiny_scene(seed: u64) -> Scene {
    gen_scene(seed, &tiny_world()).unwrap()
}

pub fn scenes(seed: u64, n: usize, world: &WorldConfig) -> Vec<Scene> {
    (0..n as u64).map(|i| gen_scene(seed * 1000 + i, world).unwrap()).collect()
}

/// Central differences over up to `per_param` entries of every parameter,
/// compared to the reverse-mode gradient. Returns the joint relative error.
pub fn param_gradcheck<F>(store: &mut ParameterStore<f64>, per_param: usize, f: F) -> f64
where
    F: Fn(&mut Graph<f64>, &ParameterStore<f64>) -> Var,
{
    store.zero_grad();
    let mut g = Graph::new();
    let loss = f(&mut g, store);
    g.backward(loss, store).unwrap();
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
    let h = 1e-6;
    for id in ids {
        let len = store.get(id).value.len();
        let stride = (len / per_param).max(1);
        for j in (0..len).step_by(stride).take(per_param) {
            let a = store.get(id).grad.data()[j];
            let orig = store.get(id).value.data()[j];
            let mut eval = |v: f64| {
                store.get_mut(id).value.data_mut()[j] = v;
                let mut g = Graph::new();
                let l = f(&mut g, store);
                g.value(l).item()
            };
            let num = (eval(orig + h) - eval(orig - h)) / (2.0 * h);
            store.get_mut(id).value.data_mut()[j] = orig;
            diff += (a - num).powi(2);
            na += a * a;
            nn += num * num;
        }
    }
    diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-8)
}
