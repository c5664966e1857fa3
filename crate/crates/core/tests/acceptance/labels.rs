//! Mask counts, balanced clustering, maneuver agreement and goal labels.

use laneforecast::pseudolabels::{constrained_kmeans, label_goal_candidates, label_maneuvers, mask_lanes, ClusterSizes};
use laneforecast::synthgen::{gen_dataset, gen_lane_graph, gen_scene, Template, WorldConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Verdict};

fn masks() -> Result<String, String> {
    let mut lanes = 0;
    for seed in 0..100u64 {
        let t = Template::ALL[seed as usize % 4];
        let g = gen_lane_graph(seed, t, 2.5).map_err(|e| e.to_string())?;
        let (x, spec) = mask_lanes(&g, 0.4, seed).map_err(|e| e.to_string())?;
        for lane in &g.lanes {
            let n = lane.nodes.len();
            // round(0.4 n) never lands on .5, so this is exact integer rounding.
            let want = ((4 * n + 5) / 10).max(1);
            let zeroed = lane.nodes.iter().filter(|&&i| x[i] == [0.0; 4]).count();
            ensure(zeroed == want, || format!("{t:?} seed {seed}: lane of {n} has {zeroed} masked, want {want}"))?;
            lanes += 1;
        }
        for (i, row) in x.iter().enumerate() {
            let masked = spec.nodes.binary_search(&i).is_ok();
            ensure(masked || *row == g.node_features[i], || format!("seed {seed}: unmasked row {i} changed"))?;
        }
    }
    Ok(format!("{lanes} lanes exact"))
}

fn kmeans() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in 0..100 {
        let size = rng.random_range(2..200);
        let k = rng.random_range(1..=6.min(size));
        let pts: Vec<[f64; 2]> = (0..size).map(|_| [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)]).collect();
        let c = constrained_kmeans(&pts, k, ClusterSizes::balanced(size, k), n).map_err(|e| e.to_string())?;
        let mut sizes = vec![0usize; k];
        for &a in &c.assignments {
            sizes[a] += 1;
        }
        ensure(sizes.iter().all(|&s| (s as f64 - size as f64 / k as f64).abs() <= 1.0), || format!("instance {n}: sizes {sizes:?}"))?;
        ensure(c.history.windows(2).all(|w| w[1] <= w[0] + 1e-9), || format!("instance {n}: objective rose {:?}", c.history))?;
    }
    Ok("100 instances balanced and monotone".into())
}

fn maneuvers() -> Result<String, String> {
    let cfg = WorldConfig { n_scenes: 1000, seed: 2024, val_fraction: 0.0, ..WorldConfig::default() };
    let (scenes, _) = gen_dataset(&cfg).map_err(|e| e.to_string())?;
    let labels = label_maneuvers(&scenes, 0).map_err(|e| e.to_string())?;
    let agree = scenes.iter().zip(&labels.labels).filter(|(s, l)| l.map(|m| m.as_str()) == s.tag("maneuver")).count();
    ensure(agree >= 950, || format!("maneuver agreement {agree}/1000 < 95%"))?;
    Ok(format!("maneuver agreement {agree}/1000"))
}

fn goals() -> Result<String, String> {
    let cfg = WorldConfig::default();
    let mut nodes = 0;
    for seed in 0..200 {
        let s = gen_scene(seed, &cfg).map_err(|e| e.to_string())?;
        let g = label_goal_candidates(&s, 2.0).map_err(|e| e.to_string())?;
        let e = s.focus().future_positions().last().copied().unwrap();
        for (i, p) in s.graph.node_positions.iter().enumerate() {
            let inside = (p[0] - e[0]).powi(2) + (p[1] - e[1]).powi(2) < 4.0;
            ensure(g.labels[i] == inside, || format!("scene {seed} node {i}"))?;
        }
        nodes += s.graph.num_nodes();
    }
    Ok(format!("goal labels exact on {nodes} nodes"))
}

pub fn criterion() -> Verdict {
    let parts = [masks()?, kmeans()?, maneuvers()?, goals()?];
    Ok(parts.join("; "))
}
