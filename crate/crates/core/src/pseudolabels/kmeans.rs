use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 100;
/// Independent seeded initializations; the lowest objective wins.
pub const RESTARTS: usize = 4;

/// Inclusive bounds on every cluster's size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClusterSizes {
    pub min: usize,
    pub max: usize,
}

impl ClusterSizes {
    /// `floor(n/k) ..= ceil(n/k)`: every size within one of `n/k`.
    pub fn balanced(n: usize, k: usize) -> Self {
        Self {
            min: n / k.max(1),
            max: n.div_ceil(k.max(1)),
        }
    }

    pub fn at_least(min: usize) -> Self {
        Self { min, max: usize::MAX }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    pub centroids: Vec<[f64; 2]>,
    /// Sum of squared distances to assigned centroids.
    pub objective: f64,
    /// Objective after each iteration of the winning restart.
    pub history: Vec<f64>,
}

impl Clustering {
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.centroids.len()];
        for &a in &self.assignments {
            s[a] += 1;
        }
        s
    }
}

fn sq(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn cost(points: &[[f64; 2]], centroids: &[[f64; 2]], assign: &[usize]) -> f64 {
    points.iter().zip(assign).map(|(&p, &a)| sq(p, centroids[a])).sum()
}

/// k-means with per-cluster size bounds.
///
/// Assignment is greedy in order of regret (gap between a point's best and
/// second-best centroid), honouring capacities and reserving enough points to
/// reach every minimum, followed by improving moves and swaps. An assignment
/// that would raise the objective under the current centroids is rejected, so
/// the objective never increases.
pub fn constrained_kmeans(points: &[[f64; 2]], k: usize, sizes: ClusterSizes, seed: u64) -> Result<Clustering> {
    let n = points.len();
    let infeasible = || Error::InfeasibleClusters {
        n,
        k,
        min_size: sizes.min,
        max_size: sizes.max,
    };
    if k == 0 || n < k.saturating_mul(sizes.min) || sizes.min > sizes.max || (sizes.max as u128) * (k as u128) < n as u128 {
        return Err(infeasible());
    }
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::invalid("constrained_kmeans", "non-finite point"));
    }
    // Canonical order makes the result independent of input order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        points[a][0]
            .total_cmp(&points[b][0])
            .then(points[a][1].total_cmp(&points[b][1]))
    });
    let sorted: Vec<[f64; 2]> = order.iter().map(|&i| points[i]).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<Clustering> = None;
    for _ in 0..RESTARTS {
        let c = run(&sorted, k, sizes, &mut rng);
        if best.as_ref().is_none_or(|b| c.objective < b.objective) {
            best = Some(c);
        }
    }
    let mut best = best.expect("at least one restart");
    let mut assignments = vec![0; n];
    for (pos, &orig) in order.iter().enumerate() {
        assignments[orig] = best.assignments[pos];
    }
    best.assignments = assignments;
    Ok(best)
}

fn run<R: Rng>(points: &[[f64; 2]], k: usize, sizes: ClusterSizes, rng: &mut R) -> Clustering {
    let mut centroids = plus_plus(points, k, rng);
    let mut assign = assign_constrained(points, &centroids, sizes, None);
    let mut history = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        centroids = update(points, &assign, &centroids);
        history.push(cost(points, &centroids, &assign));
        let next = assign_constrained(points, &centroids, sizes, Some(&assign));
        if next == assign {
            break;
        }
        if cost(points, &centroids, &next) > cost(points, &centroids, &assign) {
            break;
        }
        assign = next;
    }
    let objective = cost(points, &centroids, &assign);
    Clustering {
        assignments: assign,
        centroids,
        objective,
        history,
    }
}

fn plus_plus<R: Rng>(points: &[[f64; 2]], k: usize, rng: &mut R) -> Vec<[f64; 2]> {
    let mut c = vec![points[rng.random_range(0..points.len())]];
    while c.len() < k {
        let d: Vec<f64> = points
            .iter()
            .map(|&p| c.iter().map(|&q| sq(p, q)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        if total <= 0.0 {
            c.push(points[rng.random_range(0..points.len())]);
            continue;
        }
        let mut r = rng.random_range(0.0..total);
        let mut pick = points.len() - 1;
        for (i, &di) in d.iter().enumerate() {
            if r < di {
                pick = i;
                break;
            }
            r -= di;
        }
        c.push(points[pick]);
    }
    c
}

fn update(points: &[[f64; 2]], assign: &[usize], old: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let k = old.len();
    let mut sum = vec![[0.0; 2]; k];
    let mut cnt = vec![0usize; k];
    for (&p, &a) in points.iter().zip(assign) {
        sum[a][0] += p[0];
        sum[a][1] += p[1];
        cnt[a] += 1;
    }
    (0..k)
        .map(|j| {
            if cnt[j] == 0 {
                old[j]
            } else {
                [sum[j][0] / cnt[j] as f64, sum[j][1] / cnt[j] as f64]
            }
        })
        .collect()
}

fn assign_constrained(
    points: &[[f64; 2]],
    centroids: &[[f64; 2]],
    sizes: ClusterSizes,
    previous: Option<&[usize]>,
) -> Vec<usize> {
    let n = points.len();
    let k = centroids.len();
    let dist: Vec<Vec<f64>> = points.iter().map(|&p| centroids.iter().map(|&c| sq(p, c)).collect()).collect();
    let regret = |i: usize| {
        let mut d = dist[i].clone();
        d.sort_by(f64::total_cmp);
        if d.len() > 1 {
            d[1] - d[0]
        } else {
            0.0
        }
    };
    let mut order: Vec<usize> = (0..n).collect();
    let regrets: Vec<f64> = (0..n).map(regret).collect();
    order.sort_by(|&a, &b| regrets[b].total_cmp(&regrets[a]).then(a.cmp(&b)));

    let mut size = vec![0usize; k];
    let mut assign = vec![usize::MAX; n];
    let mut remaining = n;
    for &i in &order {
        let deficit: usize = size.iter().map(|&s| sizes.min.saturating_sub(s)).sum();
        let must_fill = remaining <= deficit;
        let mut choice = None;
        for j in 0..k {
            if size[j] >= sizes.max || (must_fill && size[j] >= sizes.min) {
                continue;
            }
            if choice.is_none_or(|c: usize| dist[i][j] < dist[i][c]) {
                choice = Some(j);
            }
        }
        let j = choice.expect("feasible bounds leave a slot");
        assign[i] = j;
        size[j] += 1;
        remaining -= 1;
    }
    improve(&dist, &mut assign, &mut size, sizes);
    if let Some(prev) = previous {
        // Prefer the previous assignment on exact ties to reach a fixpoint.
        let c_new: f64 = (0..n).map(|i| dist[i][assign[i]]).sum();
        let c_old: f64 = (0..n).map(|i| dist[i][prev[i]]).sum();
        if c_old <= c_new {
            return prev.to_vec();
        }
    }
    assign
}

/// Repair pass: single moves that respect the bounds, then pairwise swaps,
/// each applied only when it strictly lowers the cost.
fn improve(dist: &[Vec<f64>], assign: &mut [usize], size: &mut [usize], sizes: ClusterSizes) {
    let n = assign.len();
    let k = size.len();
    for _ in 0..n.max(10) {
        let mut changed = false;
        for i in 0..n {
            let a = assign[i];
            if size[a] <= sizes.min {
                continue;
            }
            let mut best = a;
            for j in 0..k {
                if j != a && size[j] < sizes.max && dist[i][j] < dist[i][best] {
                    best = j;
                }
            }
            if best != a {
                assign[i] = best;
                size[a] -= 1;
                size[best] += 1;
                changed = true;
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                let (a, b) = (assign[i], assign[j]);
                if a != b && dist[i][b] + dist[j][a] < dist[i][a] + dist[j][b] - 1e-12 {
                    assign[i] = b;
                    assign[j] = a;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
}
