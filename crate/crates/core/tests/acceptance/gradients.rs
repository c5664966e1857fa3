//! Every autodiff op and every loss against central differences, 50 random
//! instances each, in f64.

use laneforecast::autodiff::gradcheck::check;
use laneforecast::autodiff::{Graph, Tensor, Var};
use laneforecast::losses::{
    best_modes, loss_cls, loss_d2i, loss_goal, loss_mask, loss_maneuver, loss_reg, loss_terminal, supervised_losses,
    total_loss, LossWeights,
};
use laneforecast::model::{Batch, ForecastVars, Pretext, SceneInputs};
use laneforecast::pseudolabels::{bfs_distance_to_intersection, label_goal_candidates, mask_lanes, DistanceLabels, GoalLabels, MaskSpec};
use laneforecast::scene::Maneuver;
use laneforecast::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::{tiny_config, tiny_scene};
use crate::Verdict;

const INSTANCES: usize = 50;
const TOL: f64 = 1e-4;

type Inputs = Vec<Tensor<f64>>;

fn uniform(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> Tensor<f64> {
    Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(-s..s)).collect()).unwrap()
}

fn away_from_zero(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
    let v = (0..r * c)
        .map(|_| {
            let m: f64 = rng.random_range(0.05..2.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(r, c, v).unwrap()
}

fn project(g: &mut Graph<f64>, x: Var, seed: u64) -> Result<Var> {
    let (r, c) = g.shape(x);
    let w = uniform(&mut ChaCha8Rng::seed_from_u64(seed), r, c, 2.0);
    let w = g.constant(w);
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

fn small(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(1..5)
}

/// Worst relative error of `f` over fresh instances.
fn worst<M, F>(seed: u64, mut make: M, f: F) -> f64
where
    M: FnMut(&mut ChaCha8Rng) -> Inputs,
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + Copy,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..INSTANCES)
        .map(|_| check(&make(&mut rng), f).unwrap().relative_error())
        .fold(0.0, f64::max)
}

fn mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
    uniform(rng, r, c, 2.0)
}

fn any_mat(rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let (r, c) = (small(rng), small(rng));
    mat(rng, r, c)
}

fn same_shape_pair(rng: &mut ChaCha8Rng) -> Inputs {
    let (r, c) = (small(rng), small(rng));
    vec![mat(rng, r, c), mat(rng, r, c)]
}

/// Pairs whose differences stay clear of the smooth-L1 kink at 1.
fn regression_pair(rng: &mut ChaCha8Rng) -> Inputs {
    let (r, c) = (small(rng), small(rng));
    let x = mat(rng, r, c);
    let y: Vec<f64> = x
        .data()
        .iter()
        .map(|&v| {
            let d: f64 = if rng.random_bool(0.5) { rng.random_range(0.05..0.9) } else { rng.random_range(1.1..3.0) };
            if rng.random_bool(0.5) { v + d } else { v - d }
        })
        .collect();
    vec![x, Tensor::new(r, c, y).unwrap()]
}

fn logits_and_labels(rng: &mut ChaCha8Rng) -> Inputs {
    let (n, c) = (small(rng), small(rng) + 1);
    let labels = (0..n).map(|_| rng.random_range(0..c) as f64).collect();
    vec![mat(rng, n, c), Tensor::new(n, 1, labels).unwrap()]
}

fn labels_of(g: &Graph<f64>, v: Var) -> Vec<usize> {
    g.value(v).data().iter().map(|&x| x.round() as usize).collect()
}

fn ops() -> Vec<(&'static str, f64)> {
    vec![
        ("matmul", worst(1, |r| {
            let (m, k, n) = (small(r), small(r), small(r));
            vec![mat(r, m, k), mat(r, k, n)]
        }, |g, v| {
            let y = g.matmul(v[0], v[1])?;
            project(g, y, 1)
        })),
        ("add", worst(2, same_shape_pair, |g, v| {
            let y = g.add(v[0], v[1])?;
            project(g, y, 2)
        })),
        ("sub", worst(3, same_shape_pair, |g, v| {
            let y = g.sub(v[0], v[1])?;
            project(g, y, 3)
        })),
        ("mul", worst(4, same_shape_pair, |g, v| {
            let y = g.mul(v[0], v[1])?;
            project(g, y, 4)
        })),
        ("mul_scalar", worst(5, |r| vec![any_mat(r)], |g, v| {
            let y = g.mul_scalar(v[0], -1.3);
            project(g, y, 5)
        })),
        ("add_scalar", worst(6, |r| vec![any_mat(r)], |g, v| {
            let y = g.add_scalar(v[0], 0.7);
            project(g, y, 6)
        })),
        ("add_row", worst(7, |r| {
            let (a, b) = (small(r), small(r));
            vec![mat(r, a, b), mat(r, 1, b)]
        }, |g, v| {
            let y = g.add_row(v[0], v[1])?;
            project(g, y, 7)
        })),
        ("linear", worst(8, |r| {
            let (m, k, n) = (small(r), small(r), small(r));
            vec![mat(r, m, k), mat(r, k, n), mat(r, 1, n)]
        }, |g, v| {
            let y = g.linear(v[0], v[1], Some(v[2]))?;
            project(g, y, 8)
        })),
        ("concat_cols", worst(9, |r| {
            let (m, a, b) = (small(r), small(r), small(r));
            vec![mat(r, m, a), mat(r, m, b)]
        }, |g, v| {
            let y = g.concat_cols(&[v[0], v[1]])?;
            project(g, y, 9)
        })),
        ("concat_rows", worst(10, |r| {
            let (c, a, b) = (small(r), small(r), small(r));
            vec![mat(r, a, c), mat(r, b, c)]
        }, |g, v| {
            let y = g.concat_rows(&[v[0], v[1], v[0]])?;
            project(g, y, 10)
        })),
        ("gather_rows", worst(11, |r| {
            let m = small(r) + 1;
            vec![mat(r, m, 3)]
        }, |g, v| {
            let m = g.shape(v[0]).0;
            let idx: Vec<usize> = (0..m + 4).map(|i| (i * 5 + 2) % m).collect();
            let y = g.gather_rows(v[0], &idx)?;
            project(g, y, 11)
        })),
        ("scatter_add_rows", worst(12, |r| {
            let m = small(r) + 2;
            vec![mat(r, m, 2)]
        }, |g, v| {
            let m = g.shape(v[0]).0;
            let dst: Vec<usize> = (0..m).map(|i| (i * 3) % (m - 1)).collect();
            let y = g.scatter_add_rows(v[0], &dst, m - 1)?;
            project(g, y, 12)
        })),
        ("slice_cols", worst(13, |r| {
            let m = small(r);
            vec![mat(r, m, 5)]
        }, |g, v| {
            let y = g.slice_cols(v[0], 1, 4)?;
            project(g, y, 13)
        })),
        ("reshape", worst(14, |r| {
            let m = 2 * small(r);
            vec![mat(r, m, 3)]
        }, |g, v| {
            let (a, b) = g.shape(v[0]);
            let y = g.reshape(v[0], a / 2, 2 * b)?;
            project(g, y, 14)
        })),
        ("relu", worst(15, |r| {
            let (a, b) = (small(r), small(r));
            vec![away_from_zero(r, a, b)]
        }, |g, v| {
            let y = g.relu(v[0]);
            project(g, y, 15)
        })),
        ("layer_norm", worst(16, |r| {
            let (a, b) = (small(r), small(r) + 1);
            vec![mat(r, a, b)]
        }, |g, v| {
            let y = g.layer_norm(v[0]);
            project(g, y, 16)
        })),
        ("softmax", worst(17, |r| vec![any_mat(r)], |g, v| {
            let y = g.softmax(v[0]);
            project(g, y, 17)
        })),
        ("conv1d", worst(18, |r| {
            let (n, l, ci, co) = (r.random_range(1..3), r.random_range(1..7), small(r), small(r));
            vec![mat(r, n * l, ci), mat(r, 3 * ci, co), mat(r, 1, co), Tensor::scalar(n as f64)]
        }, |g, v| {
            let n = g.value(v[3]).item().round() as usize;
            let a = g.conv1d(v[0], v[1], v[2], n, 1)?;
            let b = g.conv1d(v[0], v[1], v[2], n, 2)?;
            let a = project(g, a, 18)?;
            let b = project(g, b, 19)?;
            g.add(a, b)
        })),
        ("sum", worst(19, |r| vec![any_mat(r)], |g, v| Ok(g.sum(v[0])))),
        ("mean", worst(20, |r| vec![any_mat(r)], |g, v| g.mean(v[0]))),
        ("masked_mean", worst(21, |r| {
            let (a, b) = (small(r) + 1, small(r));
            vec![mat(r, a, b)]
        }, |g, v| {
            let mask: Vec<bool> = (0..g.shape(v[0]).0).map(|i| i % 2 == 0).collect();
            let y = g.masked_mean(v[0], &mask)?;
            project(g, y, 21)
        })),
        ("smooth_l1", worst(22, regression_pair, |g, v| g.smooth_l1(v[0], v[1]))),
        ("mse", worst(23, regression_pair, |g, v| g.mse(v[0], v[1]))),
        ("cross_entropy", worst(24, logits_and_labels, |g, v| {
            let l = labels_of(g, v[1]);
            g.cross_entropy(v[0], &l)
        })),
        ("focal_loss", worst(25, logits_and_labels, |g, v| {
            let l = labels_of(g, v[1]);
            g.focal_loss(v[0], &l, 2.0, 0.25)
        })),
        ("binary_focal_loss", worst(26, |r| {
            let n = r.random_range(1..8);
            let t = (0..n).map(|_| f64::from(u8::from(r.random_bool(0.3)))).collect();
            vec![mat(r, n, 1), Tensor::new(n, 1, t).unwrap()]
        }, |g, v| {
            let t: Vec<bool> = g.value(v[1]).data().iter().map(|&x| x > 0.5).collect();
            g.binary_focal_loss(v[0], &t, 2.0, 0.25)
        })),
        ("row_norm", worst(27, |r| {
            let (a, b) = (small(r), small(r));
            vec![away_from_zero(r, a, b)]
        }, |g, v| {
            let y = g.row_norm(v[0]);
            project(g, y, 27)
        })),
        ("ln", worst(28, |r| {
            let (a, b) = (small(r), small(r));
            vec![Tensor::new(a, b, (0..a * b).map(|_| r.random_range(0.1..3.0)).collect()).unwrap()]
        }, |g, v| {
            let y = g.ln(v[0])?;
            project(g, y, 28)
        })),
    ]
}

const K: usize = 2;

fn scene_batch(rng: &mut ChaCha8Rng) -> (Vec<laneforecast::scene::Scene>, Batch) {
    let cfg = tiny_config(Pretext::None);
    let n = rng.random_range(1..4);
    let scenes: Vec<_> = (0..n).map(|_| tiny_scene(rng.random_range(0..100_000))).collect();
    let si: Vec<SceneInputs> = scenes.iter().map(|s| SceneInputs::new(s, &cfg).unwrap()).collect();
    let b = Batch::new(&si.iter().collect::<Vec<_>>()).unwrap();
    (scenes, b)
}

/// Trajectories scattered around the ground truth plus random logits.
fn forecast_inputs(rng: &mut ChaCha8Rng, b: &Batch) -> Inputs {
    let n = b.num_agents();
    let t = b.futures[0].len();
    let mut traj = Vec::new();
    for _ in 0..K {
        for i in 0..n {
            for s in 0..t {
                traj.push(b.futures[i][s][0] + rng.random_range(-3.0..3.0));
                traj.push(b.futures[i][s][1] + rng.random_range(-3.0..3.0));
            }
        }
    }
    vec![Tensor::new(K * n, 2 * t, traj).unwrap(), uniform(rng, n, K, 1.0)]
}

fn losses() -> Vec<(&'static str, f64)> {
    type LossFn = fn(&mut Graph<f64>, &ForecastVars, &Batch, &[Option<usize>]) -> Result<Var>;
    let mut out = Vec::new();
    let supervised: [(&str, LossFn); 3] = [("L_cls", loss_cls), ("L_reg", loss_reg), ("L_terminal", loss_terminal)];
    for (i, (name, f)) in supervised.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let mut w: f64 = 0.0;
        for _ in 0..INSTANCES {
            let (_, b) = scene_batch(&mut rng);
            let inputs = forecast_inputs(&mut rng, &b);
            let n = b.num_agents();
            let r = check(&inputs, |g, v| {
                let fv = ForecastVars { traj: v[0], logits: v[1], n_agents: n };
                let best = best_modes(g, &fv, &b);
                f(g, &fv, &b, &best)
            })
            .unwrap();
            w = w.max(r.relative_error());
        }
        out.push((name, w));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let mut w: f64 = 0.0;
    for _ in 0..INSTANCES {
        let (_, b) = scene_batch(&mut rng);
        let inputs = forecast_inputs(&mut rng, &b);
        let n = b.num_agents();
        let r = check(&inputs, |g, v| {
            let fv = ForecastVars { traj: v[0], logits: v[1], n_agents: n };
            let s = supervised_losses(g, &fv, &b)?;
            Ok(total_loss(g, s, None, LossWeights::default())?.0)
        })
        .unwrap();
        w = w.max(r.relative_error());
    }
    out.push(("supervised total", w));

    let (mut wm, mut wd, mut wg, mut wn) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut rng = ChaCha8Rng::seed_from_u64(111);
    for _ in 0..INSTANCES {
        let (scenes, b) = scene_batch(&mut rng);
        let masks: Vec<MaskSpec> = scenes.iter().map(|s| mask_lanes(&s.graph, 0.4, rng.random()).unwrap().1).collect();
        let d2i: Vec<Option<DistanceLabels>> = scenes.iter().map(|s| bfs_distance_to_intersection(&s.graph).ok()).collect();
        let goals: Vec<GoalLabels> = scenes.iter().map(|s| label_goal_candidates(s, 2.0).unwrap()).collect();
        let masked: usize = masks.iter().map(|m| m.nodes.len()).sum();
        let m = b.num_nodes();
        let mask_refs: Vec<&MaskSpec> = masks.iter().collect();
        wm = wm.max(check(&[uniform(&mut rng, masked, 4, 1.0)], |g, v| loss_mask(g, v[0], &mask_refs)).unwrap().relative_error());
        if d2i.iter().any(Option::is_some) {
            let refs: Vec<Option<&DistanceLabels>> = d2i.iter().map(Option::as_ref).collect();
            let r = check(&[uniform(&mut rng, m, 1, 5.0)], |g, v| Ok(loss_d2i(g, v[0], &b, &refs)?.unwrap())).unwrap();
            wd = wd.max(r.relative_error());
        }
        let refs: Vec<Option<&GoalLabels>> = goals.iter().map(Some).collect();
        wg = wg.max(check(&[uniform(&mut rng, m, 1, 2.0)], |g, v| Ok(loss_goal(g, v[0], &b, &refs)?.unwrap())).unwrap().relative_error());
        let labels: Vec<Maneuver> = (0..scenes.len()).map(|_| Maneuver::ALL[rng.random_range(0..6)]).collect();
        wn = wn.max(check(&[uniform(&mut rng, scenes.len(), 6, 2.0)], |g, v| loss_maneuver(g, v[0], &labels)).unwrap().relative_error());
    }
    out.extend([("L_mask", wm), ("L_d2i", wd), ("L_goal", wg), ("L_maneuver", wn)]);
    out
}

pub fn criterion() -> Verdict {
    let all: Vec<(&str, f64)> = ops().into_iter().chain(losses()).collect();
    let (name, w) = all.iter().copied().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let bad: Vec<String> = all.iter().filter(|(_, e)| *e >= TOL).map(|(n, e)| format!("{n}={e:.2e}")).collect();
    let detail = format!("{} ops/losses x {INSTANCES} instances, worst rel. error {w:.2e} ({name}) < {TOL:e}", all.len());
    if bad.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; over tolerance: {}", bad.join(", ")))
    }
}
