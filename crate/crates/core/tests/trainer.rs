mod common;

use common::{tiny_config, tiny_world};
use laneforecast::autodiff::{read_checkpoint, ParamGroup};
use laneforecast::model::{Model, Pretext};
use laneforecast::synthgen::{gen_dataset, WorldConfig};
use laneforecast::trainer::*;
use laneforecast::Error;

fn quick(steps: usize) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 4,
        lr_decay_step: steps / 2,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn data(pretext: Pretext, n: usize) -> Vec<PreparedScene> {
    let (train, _) = gen_dataset(&WorldConfig {
        n_scenes: n,
        seed: 12,
        val_fraction: 0.0,
        ..tiny_world()
    })
    .unwrap();
    prepare(&train, &tiny_config(pretext), &quick(1)).unwrap()
}

#[test]
fn learning_rate_switches_exactly_at_decay_step() {
    let c = TrainConfig::default();
    assert_eq!((c.lr_initial, c.lr_after, c.lr_decay_step), (1e-3, 1e-4, 1600));
    for s in [0, 1, 1599] {
        assert_eq!(c.lr_at(s), 1e-3);
    }
    for s in [1600, 1601, 5000] {
        assert_eq!(c.lr_at(s), 1e-4);
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        TrainConfig { lr_decay_step: 10, steps: 5, ..quick(5) },
        TrainConfig { augmentation_gammas: vec![360.0], ..quick(5) },
        TrainConfig { augmentation_gammas: vec![-30.0], ..quick(5) },
        TrainConfig { batch_size: 0, ..quick(5) },
    ];
    for c in bad {
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
    assert_eq!(TrainConfig::default().augmentation_gammas.len(), 12);
    assert!(!TrainConfig::default().augment);
}

#[test]
fn zero_steps_returns_the_initialization() {
    let d = data(Pretext::None, 6);
    let cfg = tiny_config(Pretext::None);
    let out = train::<f32>(&d, &cfg, &quick(0)).unwrap();
    let init = Model::<f32>::new(cfg, 3).unwrap();
    for ((_, a), (_, b)) in out.model.store.iter().zip(init.store.iter()) {
        assert_eq!(a.value, b.value);
    }
    assert!(out.log.is_empty());
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    for pretext in Pretext::ALL {
        let d = data(pretext, 8);
        let cfg = tiny_config(pretext);
        let mut bytes = Vec::new();
        for run in 0..2 {
            let out = train::<f32>(&d, &cfg, &quick(6)).unwrap();
            let p = dir.path().join(format!("{pretext}-{run}.ckpt"));
            out.model.save(&p).unwrap();
            bytes.push(std::fs::read(&p).unwrap());
            assert_eq!(out.log.len(), 6);
            assert!(out.log.iter().all(|r| r.report.is_finite()));
            assert_eq!(out.log[0].report.ss.is_some(), pretext != Pretext::None);
        }
        assert_eq!(bytes[0], bytes[1], "{pretext}");
    }
}

#[test]
fn log_has_expected_columns() {
    let d = data(Pretext::Mask, 6);
    let out = train::<f32>(&d, &tiny_config(Pretext::Mask), &quick(4)).unwrap();
    let mut buf = Vec::new();
    write_log(&mut buf, &out.log).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,total,cls,reg,terminal,ss,lr");
    assert_eq!(lines.len(), 5);
    assert!(lines.iter().skip(1).all(|l| l.split(',').count() == 7));
    assert!(lines[4].starts_with("3,"));
}

#[test]
fn warm_start_copies_only_the_map_encoder() {
    let dir = tempfile::tempdir().unwrap();
    let d = data(Pretext::Mask, 8);
    let src = train::<f32>(&d, &tiny_config(Pretext::Mask), &quick(5)).unwrap();
    let src_path = dir.path().join("mask.ckpt");
    src.model.save(&src_path).unwrap();

    let mut target = Model::<f32>::new(tiny_config(Pretext::Goal), 99).unwrap();
    let before = target.store.clone();
    let n = warm_start_map_encoder(&mut target.store, &src_path).unwrap();
    assert!(n > 0);
    let dst_path = dir.path().join("goal.ckpt");
    target.save(&dst_path).unwrap();

    let src_entries = read_checkpoint(std::fs::File::open(&src_path).unwrap(), &src_path).unwrap();
    let dst_entries = read_checkpoint(std::fs::File::open(&dst_path).unwrap(), &dst_path).unwrap();
    let map = |e: &[laneforecast::autodiff::CheckpointEntry]| -> Vec<(String, Vec<u8>)> {
        e.iter()
            .filter(|e| e.group == ParamGroup::MapEncoder)
            .map(|e| (e.name.clone(), e.values.iter().flat_map(|v| v.to_le_bytes()).collect()))
            .collect()
    };
    assert_eq!(map(&src_entries), map(&dst_entries));
    for ((_, a), (_, b)) in target.store.iter().zip(before.iter()) {
        if a.group != ParamGroup::MapEncoder {
            assert_eq!(a.value, b.value, "{}", a.name);
        }
    }
}

#[test]
fn warm_start_shape_mismatch_names_the_parameter() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wide.ckpt");
    let wide = laneforecast::model::ModelConfig {
        hidden: 6,
        ..tiny_config(Pretext::Mask)
    };
    Model::<f32>::new(wide, 1).unwrap().save(&path).unwrap();
    let mut m = Model::<f32>::new(tiny_config(Pretext::None), 1).unwrap();
    let err = warm_start_map_encoder(&mut m.store, &path).unwrap_err().to_string();
    assert!(err.contains("map.input.feat.w"), "{err}");
}

#[test]
fn warm_start_then_fine_tune() {
    let dir = tempfile::tempdir().unwrap();
    let d = data(Pretext::Mask, 8);
    let pre = train::<f32>(&d, &tiny_config(Pretext::Mask), &quick(4)).unwrap();
    let path = dir.path().join("pre.ckpt");
    pre.model.save(&path).unwrap();
    let d = data(Pretext::None, 8);
    let tc = TrainConfig {
        warm_start_path: Some(path),
        ..quick(4)
    };
    let fine = train::<f32>(&d, &tiny_config(Pretext::None), &tc).unwrap();
    assert_eq!(pre.log.len() + fine.log.len(), 8);
    assert!(fine.log.iter().all(|r| r.report.is_finite() && r.report.ss.is_none()));
}

#[test]
fn non_finite_loss_reports_step_and_breakdown() {
    let mut d = data(Pretext::None, 4);
    for p in &mut d {
        for f in &mut p.inputs.futures {
            for q in f.iter_mut() {
                *q = [f64::NAN, 0.0];
            }
        }
    }
    match train::<f32>(&d, &tiny_config(Pretext::None), &quick(3)) {
        Err(Error::NonFiniteLoss { step, breakdown }) => {
            assert_eq!(step, 0);
            assert!(breakdown.contains("reg="));
        }
        other => panic!("expected a non-finite loss error, got {other:?}"),
    }
}

#[test]
fn distance_pretext_needs_intersections() {
    let (train, _) = gen_dataset(&WorldConfig {
        n_scenes: 5,
        region_mix: [("B".to_string(), 1.0)].into(),
        val_fraction: 0.0,
        ..tiny_world()
    })
    .unwrap();
    let r = prepare(&train, &tiny_config(Pretext::D2i), &quick(1));
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn augmented_training_stays_finite_and_aligned() {
    let d = data(Pretext::Goal, 8);
    let tc = TrainConfig {
        augment: true,
        ..quick(6)
    };
    let out = train::<f32>(&d, &tiny_config(Pretext::Goal), &tc).unwrap();
    assert!(out.log.iter().all(|r| r.report.is_finite()));
    for p in d.iter().take(3) {
        let f = out.model.predict_inputs(&[&p.inputs]).unwrap();
        let gt = &p.inputs.futures[p.inputs.focus];
        let fde = f[0]
            .modes
            .iter()
            .map(|m| (m[2][0] - gt[2][0]).hypot(m[2][1] - gt[2][1]))
            .fold(f64::INFINITY, f64::min);
        assert!(fde.is_finite());
    }
}
