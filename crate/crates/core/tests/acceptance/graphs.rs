//! Distance labels against Floyd–Warshall; LaneConv and adjacency powers
//! against dense matrix algebra.

use laneforecast::autodiff::{Graph, Tensor};
use laneforecast::model::{Model, ModelConfig, Relations};
use laneforecast::pseudolabels::bfs_distance_to_intersection;
use laneforecast::scene::{adjacency_powers, Adjacency, Lane, LaneGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Verdict};

fn random_graph(rng: &mut ChaCha8Rng, m: usize) -> LaneGraph {
    let p = rng.random_range(0.02..0.15);
    let mut rel = [Vec::new(), Vec::new(), Vec::new()];
    for i in 0..m {
        for j in 0..m {
            for r in rel.iter_mut() {
                if i != j && rng.random_bool(p / 3.0) {
                    r.push((i, j));
                }
            }
        }
    }
    let mut flags: Vec<bool> = (0..m).map(|_| rng.random_bool(0.1)).collect();
    flags[rng.random_range(0..m)] = true;
    let [suc, left, right] = rel;
    LaneGraph {
        node_positions: (0..m).map(|i| [i as f64, 0.0]).collect(),
        node_features: flags.iter().map(|&f| [1.0, 0.0, f64::from(u8::from(f)), 0.0]).collect(),
        adjacency: Adjacency::from_suc(suc, left, right),
        lanes: (0..m).map(|i| Lane { id: i as u32, nodes: vec![i] }).collect(),
        intersection_flags: flags,
    }
}

fn floyd_warshall(g: &LaneGraph) -> Vec<f64> {
    let m = g.num_nodes();
    let mut d = vec![vec![f64::INFINITY; m]; m];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0.0;
    }
    for (a, b) in g.adjacency.all_edges() {
        d[a][b] = 1.0;
        d[b][a] = 1.0;
    }
    for k in 0..m {
        for i in 0..m {
            for j in 0..m {
                d[i][j] = d[i][j].min(d[i][k] + d[k][j]);
            }
        }
    }
    (0..m)
        .map(|i| (0..m).filter(|&j| g.intersection_flags[j]).map(|j| d[i][j]).fold(f64::INFINITY, f64::min))
        .collect()
}

pub fn bfs_criterion() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut nodes = 0;
    for n in 0..200 {
        let m = rng.random_range(1..=50);
        let g = random_graph(&mut rng, m);
        let got = bfs_distance_to_intersection(&g).map_err(|e| e.to_string())?;
        ensure(got.d == floyd_warshall(&g), || format!("graph {n} ({m} nodes) differs from Floyd-Warshall"))?;
        nodes += m;
    }
    Ok(format!("200 random graphs ({nodes} nodes) match Floyd-Warshall exactly"))
}

type Dense = Vec<Vec<f64>>;

fn dense(m: usize, edges: &[(usize, usize)]) -> Dense {
    let mut a = vec![vec![0.0; m]; m];
    for &(i, j) in edges {
        a[i][j] = 1.0;
    }
    a
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Dense {
    a.iter()
        .map(|r| (0..b[0].len()).map(|j| r.iter().zip(b).map(|(x, br)| x * br[j]).sum()).collect())
        .collect()
}

fn bool_power(a: &Dense, k: usize) -> Dense {
    let m = a.len();
    let mut p: Dense = (0..m).map(|i| (0..m).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    for _ in 0..k {
        p = matmul(&p, a).into_iter().map(|r| r.into_iter().map(|v| f64::from(u8::from(v > 0.0))).collect()).collect();
    }
    p
}

fn edges_of(a: &Dense) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, r) in a.iter().enumerate() {
        for (j, &v) in r.iter().enumerate() {
            if v > 0.0 {
                out.push((i, j));
            }
        }
    }
    out
}

fn param(model: &Model<f64>, name: &str) -> Dense {
    let p = model.store.by_name(name).unwrap();
    (0..p.value.rows()).map(|r| p.value.row(r).to_vec()).collect()
}

pub fn lane_conv_criterion() -> Verdict {
    let hidden = 6;
    let cfg = ModelConfig { hidden, ..ModelConfig::default() };
    let dil = cfg.dilations.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for n in 0..50 {
        let model: Model<f64> = Model::new(cfg.clone(), n).unwrap();
        let m = rng.random_range(2..=40);
        let g = random_graph(&mut rng, m);
        let adj = &g.adjacency;
        let powers = adjacency_powers(&g, &dil).map_err(|e| e.to_string())?;
        let (pre_d, suc_d) = (dense(m, &adj.pre), dense(m, &adj.suc));
        for &k in &dil {
            ensure(powers.suc[&k] == edges_of(&bool_power(&suc_d, k)), || format!("graph {n}: suc^{k} differs"))?;
            ensure(powers.pre[&k] == edges_of(&bool_power(&pre_d, k)), || format!("graph {n}: pre^{k} differs"))?;
        }
        let rel = Relations {
            left: adj.left.clone(),
            right: adj.right.clone(),
            pre: dil.iter().map(|k| powers.pre[k].clone()).collect(),
            suc: dil.iter().map(|k| powers.suc[k].clone()).collect(),
        };
        let x: Dense = (0..m).map(|_| (0..hidden).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let block = (n % 2) as usize;
        let mut gr = Graph::new();
        let xv = gr.constant(Tensor::from_rows(&x).unwrap());
        let y = model.lane_conv_forward(&mut gr, block, xv, &rel).map_err(|e| e.to_string())?;
        let got = gr.value(y).clone();

        let pre = format!("map.block{block}");
        let mut want = matmul(&x, &param(&model, &format!("{pre}.center.w")));
        let bias = param(&model, &format!("{pre}.center.b"));
        let mut terms = vec![
            matmul(&matmul(&dense(m, &adj.left), &x), &param(&model, &format!("{pre}.left.w"))),
            matmul(&matmul(&dense(m, &adj.right), &x), &param(&model, &format!("{pre}.right.w"))),
        ];
        for &k in &dil {
            terms.push(matmul(&matmul(&bool_power(&pre_d, k), &x), &param(&model, &format!("{pre}.pre{k}.w"))));
            terms.push(matmul(&matmul(&bool_power(&suc_d, k), &x), &param(&model, &format!("{pre}.suc{k}.w"))));
        }
        for (i, row) in want.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v += bias[0][j] + terms.iter().map(|t| t[i][j]).sum::<f64>();
                worst = worst.max((got.get(i, j) - *v).abs());
            }
        }
    }
    ensure(worst < 1e-5, || format!("max |gather/scatter - dense| = {worst:.2e}"))?;
    Ok(format!("50 random graphs: powers exact for dilations {dil:?}, max LaneConv deviation {worst:.1e} < 1e-5"))
}
