//! Training smoke run, the straight-biased pretext comparison, CKA across
//! the trained models, and warm start.

use std::fs::File;
use std::time::{Duration, Instant};

use laneforecast::autodiff::{read_checkpoint, CheckpointEntry, ParamGroup};
use laneforecast::evalsuite::{cka, cka_matrix, evaluate_model, setting_eval_set, setting_train_set, write_cka_csv, Setting, SuiteConfig};
use laneforecast::model::{Model, ModelConfig, Pretext, SceneInputs};
use laneforecast::scene::Scene;
use laneforecast::synthgen::{gen_dataset, WorldConfig};
use laneforecast::trainer::{prepare, save_log, supervised_average, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{artifact_dir, ensure, quick, Verdict};

/// Rows averaged for the initial and final moving averages.
const WINDOW: usize = 20;
const SEEDS: [u64; 3] = [0, 1, 2];

fn scenes(seed: u64, n: usize) -> Vec<Scene> {
    let cfg = WorldConfig { seed, n_scenes: n, val_fraction: 0.0, ..WorldConfig::default() };
    gen_dataset(&cfg).unwrap().0
}

fn train_config(steps: usize, seed: u64) -> TrainConfig {
    TrainConfig { steps, lr_decay_step: steps * 4 / 5, seed, ..TrainConfig::default() }
}

fn tag() -> &'static str {
    if quick() { " [quick]" } else { "" }
}

pub fn smoke_criterion() -> Verdict {
    let (n, steps) = if quick() { (400, 300) } else { (2000, 2000) };
    let cfg = ModelConfig::default();
    let tc = train_config(steps, 0);
    let dir = artifact_dir();
    let start = Instant::now();
    let data = prepare(&scenes(6, n), &cfg, &tc).map_err(|e| e.to_string())?;
    let a = train::<f32>(&data, &cfg, &tc).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let b = train::<f32>(&data, &cfg, &tc).map_err(|e| e.to_string())?;
    let (pa, pb) = (dir.join("smoke_a.ckpt"), dir.join("smoke_b.ckpt"));
    a.model.save(&pa).unwrap();
    b.model.save(&pb).unwrap();
    save_log(dir.join("smoke_log.csv"), &a.log).unwrap();
    let initial = supervised_average(&a.log[..WINDOW]);
    let fin = supervised_average(&a.log[a.log.len() - WINDOW..]);
    let ratio = fin / initial;
    let same = std::fs::read(&pa).unwrap() == std::fs::read(&pb).unwrap();
    let detail = format!(
        "{n} scenes, H={}, {steps} steps: supervised loss {initial:.3} -> {fin:.3} ({:.0}% of start), checkpoints identical: {same}, {:.0} s per run{}",
        cfg.hidden,
        100.0 * ratio,
        took.as_secs_f64(),
        tag()
    );
    ensure(ratio <= 0.5, || format!("{detail}; reduction below 50%"))?;
    ensure(same, || format!("{detail}; checkpoints differ"))?;
    ensure(took < Duration::from_secs(15 * 60), || format!("{detail}; over 15 min"))?;
    Ok(detail)
}

/// Seed-0 models of every pretext with the scenes they are compared on.
pub struct SmokeModels {
    pub eval: Vec<Scene>,
    pub models: Vec<(Pretext, Model<f32>)>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

pub fn directional_criterion() -> (Verdict, SmokeModels) {
    let (n_train, n_eval, steps) = if quick() { (400, 300, 200) } else { (2000, 1000, 2000) };
    let sc = SuiteConfig::default();
    let setting = Setting::StraightBiased;
    let train_set = setting_train_set(setting, &scenes(7, n_train), &sc).unwrap();
    let eval = setting_eval_set(setting, &scenes(8, n_eval), &sc).unwrap();
    let mut kept = Vec::new();
    let mut table = Vec::new();
    for p in Pretext::ALL {
        let cfg = ModelConfig { pretext: p, ..ModelConfig::default() };
        let mut fdes = Vec::new();
        for &seed in &SEEDS {
            let tc = train_config(steps, seed);
            let data = prepare(&train_set, &cfg, &tc).unwrap();
            let model = train::<f32>(&data, &cfg, &tc).unwrap().model;
            fdes.push(evaluate_model(&model, &eval, 6).unwrap().min_fde);
            if seed == SEEDS[0] {
                kept.push((p, model));
            }
        }
        let med = median(&mut fdes.clone());
        table.push((p, fdes, med));
    }
    let base = table[0].2;
    let mut csv = String::from("model,seed0,seed1,seed2,median_min_fde6,vs_baseline_pct\n");
    println!("    straight-biased training ({} scenes), turn evaluation ({} scenes), minFDE_6 in m:", train_set.len(), eval.len());
    println!("    {:<10} {:>8} {:>8} {:>8} {:>8} {:>8}", "model", "seed 0", "seed 1", "seed 2", "median", "vs base");
    for (p, f, med) in &table {
        let pct = 100.0 * (med / base - 1.0);
        println!("    {:<10} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>+7.1}%", p.as_str(), f[0], f[1], f[2], med, pct);
        csv.push_str(&format!("{},{},{},{},{},{:.3}\n", p.as_str(), f[0], f[1], f[2], med, pct));
    }
    std::fs::write(artifact_dir().join("straight_biased.csv"), csv).unwrap();
    let worse: Vec<String> = table[1..]
        .iter()
        .filter(|(_, _, m)| *m > base * 1.02)
        .map(|(p, _, m)| format!("{p} {:+.1}%", 100.0 * (m / base - 1.0)))
        .collect();
    let detail = format!("baseline median minFDE_6 {base:.3} m, {steps} steps x 3 seeds per model{}", tag());
    let verdict = if worse.is_empty() {
        Ok(format!("{detail}; every pretext within +2%"))
    } else {
        Err(format!("{detail}; above baseline +2%: {}", worse.join(", ")))
    };
    (verdict, SmokeModels { eval, models: kept })
}

/// Short-budget stand-ins when the comparison run did not produce models.
pub fn fallback_models() -> SmokeModels {
    let train_set = scenes(7, 200);
    let models = Pretext::ALL
        .into_iter()
        .map(|p| {
            let cfg = ModelConfig { pretext: p, ..ModelConfig::default() };
            let tc = train_config(100, 0);
            (p, train::<f32>(&prepare(&train_set, &cfg, &tc).unwrap(), &cfg, &tc).unwrap().model)
        })
        .collect();
    SmokeModels { eval: scenes(8, 200), models }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect()
}

fn orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for u in &q {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        q.push(v.into_iter().map(|x| x / n).collect());
    }
    q
}

pub fn cka_criterion(sm: &SmokeModels) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = rng.random_range(5..60);
        let d = rng.random_range(2..12);
        let x = gaussian(&mut rng, n, d);
        let q = orthogonal(&mut rng, d);
        let rot: Vec<Vec<f64>> = x
            .iter()
            .map(|r| (0..d).map(|j| r.iter().zip(&q).map(|(a, qr)| a * qr[j]).sum()).collect())
            .collect();
        let c = rng.random_range(0.01..100.0);
        let scaled: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| v * c).collect()).collect();
        for y in [&x, &rot, &scaled] {
            worst = worst.max((cka(&x, y).unwrap() - 1.0).abs());
        }
    }
    ensure(worst < 1e-8, || format!("identity/orthogonal/scale deviation {worst:.2e}"))?;

    let eval = &sm.eval[..sm.eval.len().min(500)];
    let mut names = Vec::new();
    let mut sets = Vec::new();
    for (p, model) in &sm.models {
        let inputs: Vec<SceneInputs> = eval.iter().map(|s| SceneInputs::new(s, &model.cfg).unwrap()).collect();
        let mut feats = Vec::new();
        for chunk in inputs.chunks(64) {
            feats.extend(model.focus_features(&chunk.iter().collect::<Vec<_>>()).unwrap());
        }
        names.push(p.as_str().to_string());
        sets.push(feats);
    }
    let m = cka_matrix(&sets).map_err(|e| e.to_string())?;
    let path = artifact_dir().join("cka.csv");
    write_cka_csv(File::create(&path).unwrap(), &names, &m).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let values: Vec<f64> = text.lines().skip(1).flat_map(|l| l.split(',').skip(1).map(|v| v.parse::<f64>().unwrap())).collect();
    ensure(values.len() == names.len() * names.len(), || "CSV has the wrong shape".into())?;
    ensure(values.iter().all(|v| (0.0..=1.0).contains(v)), || format!("entry outside [0,1] in {}", path.display()))?;
    for (i, row) in m.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
        println!("    {:<10} {}", names[i], cells.join(" "));
    }
    let off = m.iter().enumerate().flat_map(|(i, r)| r.iter().enumerate().filter(move |(j, _)| *j != i).map(|(_, v)| *v));
    let min_off = off.fold(1.0f64, f64::min);
    Ok(format!(
        "identities within {worst:.1e}; {0}x{0} matrix over {1} scenes in [0,1] (min off-diagonal {min_off:.3}) written to {2}",
        names.len(),
        eval.len(),
        path.display()
    ))
}

fn group(entries: &[CheckpointEntry], g: ParamGroup) -> Vec<(String, Vec<u8>)> {
    entries
        .iter()
        .filter(|e| e.group == g)
        .map(|e| (e.name.clone(), e.values.iter().flat_map(|v| v.to_le_bytes()).collect()))
        .collect()
}

pub fn warm_start_criterion(sm: &SmokeModels) -> Verdict {
    let dir = artifact_dir();
    let (_, source) = sm.models.iter().find(|(p, _)| *p == Pretext::Mask).unwrap();
    let src_path = dir.join("warm_source_mask.ckpt");
    source.save(&src_path).unwrap();
    let mut checked = 0;
    for target_pretext in [Pretext::None, Pretext::Goal, Pretext::D2i] {
        let mut target = Model::<f32>::new(ModelConfig { pretext: target_pretext, ..ModelConfig::default() }, 123).unwrap();
        let before = target.store.clone();
        let n = laneforecast::trainer::warm_start_map_encoder(&mut target.store, &src_path).map_err(|e| e.to_string())?;
        let dst_path = dir.join(format!("warm_target_{target_pretext}.ckpt"));
        target.save(&dst_path).unwrap();
        let src = read_checkpoint(File::open(&src_path).unwrap(), &src_path).unwrap();
        let dst = read_checkpoint(File::open(&dst_path).unwrap(), &dst_path).unwrap();
        let (a, b) = (group(&src, ParamGroup::MapEncoder), group(&dst, ParamGroup::MapEncoder));
        ensure(!a.is_empty() && a == b && n == a.len(), || format!("{target_pretext}: map encoder not byte-identical"))?;
        for ((_, p), (_, q)) in target.store.iter().zip(before.iter()) {
            if p.group != ParamGroup::MapEncoder {
                ensure(p.value == q.value, || format!("{target_pretext}: {} changed", p.name))?;
            }
        }
        checked += n;
    }
    Ok(format!("{checked} map-encoder tensors byte-identical across 3 targets; other groups untouched"))
}
