//! Metrics against exhaustive loops, plus the miss-threshold boundary.

use laneforecast::evalsuite::{brier_min_fde, evaluate, miss_rate, min_ade, min_fde, MISS_THRESHOLD};
use laneforecast::model::Forecast;
use laneforecast::scene::Point;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Verdict};

const T: usize = 30;

fn random_set(rng: &mut ChaCha8Rng) -> (Forecast, Vec<Point>) {
    let gt: Vec<Point> = (0..T).map(|t| [t as f64 + rng.random_range(-1.0..1.0), rng.random_range(-2.0..2.0)]).collect();
    let modes = (0..6)
        .map(|_| {
            let s = rng.random_range(0.0..4.0);
            gt.iter().map(|p| [p[0] + rng.random_range(-s..s), p[1] + rng.random_range(-s..s)]).collect()
        })
        .collect();
    let raw: Vec<f64> = (0..6).map(|_| rng.random_range(0.01..1.0)).collect();
    let z: f64 = raw.iter().sum();
    (Forecast { modes, scores: raw.iter().map(|v| v / z).collect() }, gt)
}

fn d(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// minADE, minFDE, brier-minFDE by selection sort and explicit loops.
fn naive(f: &Forecast, gt: &[Point], k: usize) -> (f64, f64, f64) {
    let mut used = vec![false; f.modes.len()];
    let (mut ade, mut fde, mut p) = (f64::INFINITY, f64::INFINITY, 0.0);
    for _ in 0..k {
        let mut m = usize::MAX;
        for c in 0..f.modes.len() {
            if !used[c] && (m == usize::MAX || f.scores[c] > f.scores[m]) {
                m = c;
            }
        }
        used[m] = true;
        let mut s = 0.0;
        for t in 0..gt.len() {
            s += d(f.modes[m][t], gt[t]);
        }
        ade = ade.min(s / gt.len() as f64);
        let e = d(f.modes[m][gt.len() - 1], gt[gt.len() - 1]);
        if e < fde {
            fde = e;
            p = f.scores[m];
        }
    }
    (ade, fde, fde + (1.0 - p) * (1.0 - p))
}

fn offset_case(off: f64) -> (Forecast, Vec<Point>) {
    let gt: Vec<Point> = (0..T).map(|t| [t as f64, 0.0]).collect();
    let mut m = gt.clone();
    m[T - 1][1] += off;
    (Forecast { modes: vec![m], scores: vec![1.0] }, gt)
}

pub fn criterion() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut fs, mut gts) = (Vec::new(), Vec::new());
    for n in 0..500 {
        let (f, gt) = random_set(&mut rng);
        for k in [1, 3, 6] {
            let (a, e, b) = naive(&f, &gt, k);
            let got = (min_ade(&f, &gt, k).unwrap(), min_fde(&f, &gt, k).unwrap(), brier_min_fde(&f, &gt, k).unwrap());
            ensure(got == (a, e, b), || format!("set {n}, k={k}: {got:?} vs ({a}, {e}, {b})"))?;
        }
        ensure(min_fde(&f, &gt, 6).unwrap() <= min_fde(&f, &gt, 1).unwrap(), || format!("set {n}: minFDE_6 > minFDE_1"))?;
        fs.push(f);
        gts.push(gt);
    }
    let refs: Vec<&[Point]> = gts.iter().map(Vec::as_slice).collect();
    for k in [1, 6] {
        let misses = fs.iter().zip(&gts).filter(|(f, g)| naive(f, g, k).1 >= 2.0).count();
        let mr = miss_rate(&fs, &refs, k, MISS_THRESHOLD).unwrap();
        ensure(mr == misses as f64 / 500.0, || format!("k={k}: MR {mr} vs {misses}/500"))?;
        ensure(evaluate(&fs, &refs, k).unwrap().miss_rate == mr, || "evaluate disagrees with miss_rate".into())?;
    }
    let mr_at = |off: f64| {
        let (f, gt) = offset_case(off);
        miss_rate(&[f], &[&gt], 1, MISS_THRESHOLD).unwrap()
    };
    ensure(MISS_THRESHOLD == 2.0, || format!("threshold {MISS_THRESHOLD}"))?;
    ensure(mr_at(1.9) == 0.0 && mr_at(2.1) == 1.0 && mr_at(2.0) == 1.0, || "boundary cases wrong".into())?;
    Ok("500 sets x k in {1,3,6} equal exhaustive loops exactly; minFDE_6 <= minFDE_1; 1.9 m hit, 2.0/2.1 m miss".into())
}
