use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use laneforecast::evalsuite::{
    cka_matrix, evaluate, format_table, generalization_suite, predict_all, write_cka_csv, write_table_csv, SuiteConfig,
    SuiteModel, TableRow,
};
use laneforecast::model::{Forecast, Model, ModelConfig, Pretext, SceneInputs};
use laneforecast::pseudolabels::{
    bfs_distance_to_intersection, label_goal_candidates, label_maneuvers, mask_lanes, save_labels, PseudoLabelRecord,
};
use laneforecast::scene::{load_scenes, save_scenes, Point, Scene};
use laneforecast::synthgen::{gen_dataset, WorldConfig};
use laneforecast::trainer::{apply_labels, prepare, save_log, train as fit, TrainConfig};
use laneforecast::Error;

use crate::manifest::{manifest_path_for_file, ManifestBuilder};
use crate::plot::scene_svg;
use crate::{CkaArgs, EvalArgs, GenArgs, LabelsArgs, ModelArgs, OptimArgs, PlotArgs, SuiteArgs, TrainArgs};

const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
const MODEL_FILE: &str = "model.json";

fn read_scenes(path: &Path) -> Result<Vec<Scene>> {
    let scenes = load_scenes(path).with_context(|| format!("reading scenes from {}", path.display()))?;
    ensure!(!scenes.is_empty(), "{} holds no scenes", path.display());
    Ok(scenes)
}

fn parse_region_mix(s: &str) -> Result<BTreeMap<String, f64>> {
    s.split(',')
        .map(|part| {
            let (k, v) = part
                .split_once('=')
                .with_context(|| format!("region mix entry `{part}` is not NAME=WEIGHT"))?;
            let w: f64 = v.trim().parse().with_context(|| format!("bad weight in `{part}`"))?;
            Ok((k.trim().to_string(), w))
        })
        .collect()
}

pub fn gen(a: GenArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => WorldConfig::from_json_file(p).with_context(|| format!("reading {}", p.display()))?,
        None => WorldConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.n {
        cfg.n_scenes = n;
    }
    if let Some(m) = &a.region_mix {
        cfg.region_mix = parse_region_mix(m)?;
    }
    if a.val_out.is_none() {
        cfg.val_fraction = 0.0;
    }
    let mut man = ManifestBuilder::new("gen", Some(cfg.seed), &cfg)?;
    if let Some(p) = &a.config {
        man.input(p);
    }
    let (train, val) = gen_dataset(&cfg)?;
    save_scenes(&a.out, &train).with_context(|| format!("writing {}", a.out.display()))?;
    man.output(&a.out);
    if let Some(v) = &a.val_out {
        save_scenes(v, &val).with_context(|| format!("writing {}", v.display()))?;
        man.output(v);
    }
    man.finish(manifest_path_for_file(&a.out))?;
    eprintln!("wrote {} training and {} validation scenes", train.len(), val.len());
    Ok(())
}

pub fn labels(a: LabelsArgs) -> Result<()> {
    let scenes = read_scenes(&a.scenes)?;
    let mut man = ManifestBuilder::new(
        "labels",
        Some(a.seed),
        json!({"mask_ratio": a.mask_ratio, "epsilon": a.epsilon}),
    )?;
    man.input(&a.scenes);
    let maneuvers = label_maneuvers(&scenes, a.seed)?;
    let mut records = Vec::with_capacity(scenes.len());
    for (i, s) in scenes.iter().enumerate() {
        let id = s.id().map(str::to_string).unwrap_or_else(|| format!("scene-{i:06}"));
        let (_, mask) = mask_lanes(&s.graph, a.mask_ratio, a.seed.wrapping_add(i as u64))?;
        let d2i = match bfs_distance_to_intersection(&s.graph) {
            Ok(d) => Some(d),
            Err(Error::NoIntersection) => None,
            Err(e) => return Err(e.into()),
        };
        let goal = if s.focus().has_future() {
            Some(label_goal_candidates(s, a.epsilon)?)
        } else {
            None
        };
        records.push(PseudoLabelRecord {
            id,
            mask: Some(mask),
            d2i,
            maneuver: maneuvers.labels[i],
            goal,
        });
    }
    save_labels(&a.out, &records).with_context(|| format!("writing {}", a.out.display()))?;
    man.output(&a.out);
    man.finish(manifest_path_for_file(&a.out))?;
    eprintln!("wrote pseudo-labels for {} scenes", records.len());
    Ok(())
}

fn model_config(m: &ModelArgs, scenes: &[Scene]) -> ModelConfig {
    model_config_parts(m.pretext, m.hidden, m.modes, scenes)
}

/// History and horizon follow the data.
fn model_config_parts(pretext: Pretext, hidden: usize, modes: usize, scenes: &[Scene]) -> ModelConfig {
    let f = scenes[0].focus();
    ModelConfig {
        hidden,
        modes,
        pretext,
        history: f.history_len(),
        horizon: if f.has_future() { f.future_positions().len() } else { ModelConfig::default().horizon },
        ..ModelConfig::default()
    }
}

fn train_config(o: &OptimArgs) -> TrainConfig {
    TrainConfig {
        steps: o.steps,
        batch_size: o.batch_size,
        lr_decay_step: o.lr_decay_step.unwrap_or(o.steps * 4 / 5),
        seed: o.seed,
        augment: o.augment,
        log_every: o.log_every,
        ..TrainConfig::default()
    }
}

pub fn train(a: TrainArgs) -> Result<()> {
    let scenes = read_scenes(&a.scenes)?;
    let cfg = model_config(&a.model, &scenes);
    let mut tc = train_config(&a.optim);
    tc.warm_start_path = a.warm_start.clone();
    let mut man = ManifestBuilder::new("train", Some(tc.seed), json!({"model": cfg, "train": tc}))?;
    man.input(&a.scenes);
    let mut data = prepare(&scenes, &cfg, &tc)?;
    if let Some(l) = &a.labels {
        let records = laneforecast::pseudolabels::load_labels(l).with_context(|| format!("reading {}", l.display()))?;
        apply_labels(&mut data, &scenes, &records)?;
        man.input(l);
    }
    if let Some(w) = &a.warm_start {
        man.input(w);
    }
    let outcome = fit::<f32>(&data, &cfg, &tc)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let ckpt = a.out.join(CHECKPOINT_FILE);
    outcome.model.save(&ckpt)?;
    let cfg_path = a.out.join(MODEL_FILE);
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg)? + "\n")?;
    let log_path = a.out.join("train_log.csv");
    save_log(&log_path, &outcome.log)?;
    for p in [&ckpt, &cfg_path, &log_path] {
        man.output(p);
    }
    man.finish(a.out.join("manifest.json"))?;
    if let (Some(first), Some(last)) = (outcome.log.first(), outcome.log.last()) {
        eprintln!(
            "trained {} steps: supervised loss {:.4} -> {:.4}",
            outcome.log.len(),
            first.report.supervised(),
            last.report.supervised()
        );
    }
    Ok(())
}

/// Resolves a run directory or checkpoint file to the checkpoint and its
/// `model.json`.
fn checkpoint_paths(p: &Path) -> (PathBuf, PathBuf) {
    if p.is_dir() {
        (p.join(CHECKPOINT_FILE), p.join(MODEL_FILE))
    } else {
        (p.to_path_buf(), p.with_file_name(MODEL_FILE))
    }
}

fn load_model(p: &Path) -> Result<Model<f32>> {
    let (ckpt, cfg_path) = checkpoint_paths(p);
    let text = std::fs::read_to_string(&cfg_path).with_context(|| format!("reading {}", cfg_path.display()))?;
    let cfg: ModelConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", cfg_path.display()))?;
    Model::load(cfg, &ckpt).with_context(|| format!("loading {}", ckpt.display()))
}

fn run_name(p: &Path) -> String {
    let p = if p.is_dir() { p } else { p.parent().unwrap_or(p) };
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string())
}

#[derive(Debug, Serialize, Deserialize)]
struct ForecastLine {
    id: String,
    #[serde(flatten)]
    forecast: Forecast,
}

fn read_forecasts(path: &Path, scenes: &[Scene]) -> Result<Vec<Forecast>> {
    let mut by_id = BTreeMap::new();
    let file = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: ForecastLine =
            serde_json::from_str(&line).with_context(|| format!("{}:{}: bad forecast", path.display(), i + 1))?;
        by_id.insert(f.id, f.forecast);
    }
    scenes
        .iter()
        .map(|s| {
            let id = s.id().context("scene without id tag")?;
            by_id.remove(id).with_context(|| format!("no forecast for scene {id}"))
        })
        .collect()
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let scenes = read_scenes(&a.scenes)?;
    if let Some(s) = scenes.iter().find(|s| !s.focus().has_future()) {
        bail!("scene {} has no ground-truth future", s.id().unwrap_or("?"));
    }
    let mut man = ManifestBuilder::new("eval", None, json!({"k": a.k}))?;
    man.input(&a.scenes);
    let (forecasts, name) = match (&a.checkpoint, &a.forecasts) {
        (Some(c), _) => {
            man.input(c);
            let model = load_model(c)?;
            (predict_all(&model, &scenes)?, run_name(c))
        }
        (None, Some(f)) => {
            man.input(f);
            (read_forecasts(f, &scenes)?, f.display().to_string())
        }
        (None, None) => bail!("either --checkpoint or --forecasts is required"),
    };
    let modes = forecasts.iter().map(|f| f.modes.len()).min().unwrap_or(1);
    let ks = if a.k.is_empty() {
        let mut ks = vec![1, modes];
        ks.dedup();
        ks
    } else {
        a.k.clone()
    };
    let gts: Vec<&[Point]> = scenes.iter().map(|s| s.focus().future_positions()).collect();
    let rows = ks
        .iter()
        .map(|&k| {
            Ok(TableRow {
                setting: a.scenes.display().to_string(),
                model: name.clone(),
                report: evaluate(&forecasts, &gts, k)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    print!("{}", format_table(&rows));
    if let Some(d) = &a.dump_forecasts {
        let mut w = BufWriter::new(File::create(d).with_context(|| format!("writing {}", d.display()))?);
        for (s, f) in scenes.iter().zip(&forecasts) {
            let line = ForecastLine {
                id: s.id().unwrap_or_default().to_string(),
                forecast: f.clone(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        man.output(d);
    }
    if let Some(out) = &a.out {
        write_table_csv(BufWriter::new(File::create(out).with_context(|| format!("writing {}", out.display()))?), &rows)?;
        man.output(out);
        man.finish(manifest_path_for_file(out))?;
    }
    Ok(())
}

pub fn cka(a: CkaArgs) -> Result<()> {
    ensure!(a.checkpoints.len() >= 2, "need at least two checkpoints");
    let mut scenes = read_scenes(&a.scenes)?;
    scenes.truncate(a.limit.max(1));
    let mut man = ManifestBuilder::new("analyze cka", None, json!({"limit": a.limit}))?;
    man.input(&a.scenes);
    let mut names = Vec::new();
    let mut sets = Vec::new();
    for c in &a.checkpoints {
        man.input(c);
        let model = load_model(c)?;
        let inputs: Vec<SceneInputs> = scenes
            .iter()
            .map(|s| SceneInputs::new(s, &model.cfg))
            .collect::<laneforecast::Result<_>>()?;
        let mut feats = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(64) {
            feats.extend(model.focus_features(&chunk.iter().collect::<Vec<_>>())?);
        }
        names.push(run_name(c));
        sets.push(feats);
    }
    let m = cka_matrix(&sets)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_cka_csv(BufWriter::new(File::create(&a.out).with_context(|| format!("writing {}", a.out.display()))?), &names, &m)?;
    man.output(&a.out);
    man.finish(manifest_path_for_file(&a.out))?;
    for (n, row) in names.iter().zip(&m) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
        println!("{n:>16}  {}", cells.join("  "));
    }
    Ok(())
}

pub fn suite(a: SuiteArgs) -> Result<()> {
    let train_scenes = read_scenes(&a.scenes)?;
    let eval_scenes = read_scenes(&a.eval_scenes)?;
    let tc = train_config(&a.optim);
    let sc = SuiteConfig {
        train_fraction: a.train_fraction,
        k: a.modes,
        seed: a.optim.seed,
        ..SuiteConfig::default()
    };
    let models: Vec<SuiteModel> = a
        .pretexts
        .iter()
        .map(|&p| SuiteModel {
            name: if p == Pretext::None { "baseline".into() } else { p.to_string() },
            cfg: model_config_parts(p, a.hidden, a.modes, &train_scenes),
        })
        .collect();
    let mut man = ManifestBuilder::new(
        "analyze suite",
        Some(tc.seed),
        json!({"train": tc, "suite": sc, "models": models.iter().map(|m| &m.cfg).collect::<Vec<_>>()}),
    )?;
    man.input(&a.scenes);
    man.input(&a.eval_scenes);
    let rows = generalization_suite(&models, &train_scenes, &eval_scenes, &tc, &sc)?;
    std::fs::create_dir_all(&a.out)?;
    let csv = a.out.join("suite.csv");
    write_table_csv(BufWriter::new(File::create(&csv)?), &rows)?;
    let txt = a.out.join("suite.txt");
    let table = format_table(&rows);
    std::fs::write(&txt, &table)?;
    print!("{table}");
    man.output(&csv);
    man.output(&txt);
    man.finish(a.out.join("manifest.json"))?;
    Ok(())
}

pub fn plot(a: PlotArgs) -> Result<()> {
    let mut scenes = read_scenes(&a.scenes)?;
    scenes.truncate(a.limit);
    let model = load_model(&a.checkpoint)?;
    let mut man = ManifestBuilder::new("plot", None, json!({"limit": a.limit}))?;
    man.input(&a.checkpoint);
    man.input(&a.scenes);
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let forecasts = predict_all(&model, &scenes)?;
    for (i, (s, f)) in scenes.iter().zip(&forecasts).enumerate() {
        let name = s.id().map(str::to_string).unwrap_or_else(|| format!("scene-{i:06}"));
        let path = a.out.join(format!("{name}.svg"));
        std::fs::write(&path, scene_svg(s, f)).with_context(|| format!("writing {}", path.display()))?;
        man.output(&path);
    }
    man.finish(a.out.join("manifest.json"))?;
    eprintln!("wrote {} figures to {}", scenes.len(), a.out.display());
    Ok(())
}
