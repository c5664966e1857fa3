//! Noise injection statistics and an end-to-end pass of the six settings.

use std::fs::File;

use laneforecast::evalsuite::{format_table, generalization_suite, inject_noise, write_table_csv, NoiseTarget, Setting, SuiteConfig, SuiteModel, NOISE_VARIANCE};
use laneforecast::model::{ModelConfig, Pretext};
use laneforecast::scene::Scene;
use laneforecast::synthgen::{gen_dataset, WorldConfig};
use laneforecast::trainer::TrainConfig;
use statrs::distribution::{Binomial, ChiSquared, ContinuousCDF, DiscreteCDF};

use crate::{artifact_dir, ensure, quick, Verdict};

fn scenes(seed: u64, n: usize, region_b: f64) -> Vec<Scene> {
    let cfg = WorldConfig {
        seed,
        n_scenes: n,
        val_fraction: 0.0,
        region_mix: [("A".to_string(), 1.0 - region_b), ("B".to_string(), region_b)].into_iter().collect(),
        ..WorldConfig::default()
    };
    gen_dataset(&cfg).unwrap().0
}

fn selection(s: &[Scene]) -> Result<String, String> {
    let mut parts = Vec::new();
    for p in [0.25, 0.5] {
        let o = inject_noise(s, p, NOISE_VARIANCE, 11, NoiseTarget::Both).map_err(|e| e.to_string())?;
        for (what, k, n) in [("agents", o.agents_selected, o.agents_total), ("nodes", o.nodes_selected, o.nodes_total)] {
            let b = Binomial::new(p, n as u64).unwrap();
            let (lo, hi) = (b.inverse_cdf(0.0005), b.inverse_cdf(0.9995));
            ensure((lo..=hi).contains(&(k as u64)), || format!("p={p}: {what} {k}/{n} outside [{lo}, {hi}]"))?;
            parts.push(format!("p={p} {what} {:.3}", k as f64 / n as f64));
        }
    }
    Ok(parts.join(", "))
}

/// Per-component sample variance of the injected offsets against the 99.9%
/// chi-square interval around 0.2.
fn variance(s: &[Scene]) -> Result<String, String> {
    let mut comps: Vec<Vec<f64>> = vec![Vec::new(); 6];
    let mut seed = 20;
    while comps.iter().any(|c| c.len() < 20_000) {
        let o = inject_noise(s, 1.0, NOISE_VARIANCE, seed, NoiseTarget::Both).map_err(|e| e.to_string())?;
        for (a, b) in s.iter().zip(&o.scenes) {
            for (fa, fb) in a.graph.node_features.iter().zip(&b.graph.node_features) {
                for c in 0..4 {
                    comps[c].push(fb[c] - fa[c]);
                }
            }
            for (ta, tb) in a.agents.iter().zip(&b.agents) {
                for ((da, db), &m) in ta.past_displacements().iter().zip(tb.past_displacements()).zip(ta.observed_mask()) {
                    if m {
                        comps[4].push(db[0] - da[0]);
                        comps[5].push(db[1] - da[1]);
                    }
                }
            }
        }
        seed += 1;
    }
    let names = ["node dir x", "node dir y", "node intersection", "node turn", "disp x", "disp y"];
    let mut out = Vec::new();
    for (name, c) in names.iter().zip(&comps) {
        let n = c.len() as f64;
        let mean = c.iter().sum::<f64>() / n;
        let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let chi = ChiSquared::new(n - 1.0).unwrap();
        let lo = NOISE_VARIANCE * chi.inverse_cdf(0.0005) / (n - 1.0);
        let hi = NOISE_VARIANCE * chi.inverse_cdf(0.9995) / (n - 1.0);
        ensure(var > lo && var < hi, || format!("{name}: variance {var:.4} outside [{lo:.4}, {hi:.4}]"))?;
        out.push(format!("{var:.3}"));
    }
    Ok(format!("component variances [{}]", out.join(", ")))
}

fn suite() -> Result<String, String> {
    let (n, steps) = if quick() { (200, 30) } else { (600, 150) };
    let train = scenes(30, n, 0.2);
    let eval = scenes(31, n / 2, 0.2);
    let models: Vec<SuiteModel> = Pretext::ALL
        .into_iter()
        .map(|p| SuiteModel {
            name: if p == Pretext::None { "baseline".into() } else { p.to_string() },
            cfg: ModelConfig { pretext: p, ..ModelConfig::default() },
        })
        .collect();
    let tc = TrainConfig { steps, lr_decay_step: steps * 4 / 5, ..TrainConfig::default() };
    let sc = SuiteConfig::default();
    let rows = generalization_suite(&models, &train, &eval, &tc, &sc).map_err(|e| e.to_string())?;
    let path = artifact_dir().join("suite.csv");
    write_table_csv(File::create(&path).unwrap(), &rows).unwrap();
    for line in format_table(&rows).lines() {
        println!("    {line}");
    }
    let settings: Vec<String> = Setting::all(&sc).iter().map(ToString::to_string).collect();
    ensure(rows.len() == settings.len() * models.len(), || format!("{} rows", rows.len()))?;
    for (i, r) in rows.iter().enumerate() {
        ensure(r.setting == settings[i / models.len()] && r.model == models[i % models.len()].name, || format!("row {i} is {}/{}", r.setting, r.model))?;
        ensure(r.report.min_fde.is_finite() && r.report.n_scenes > 0, || format!("row {i} not finite"))?;
    }
    Ok(format!("suite: {} settings x {} models ({steps} steps each) written to {}", settings.len(), models.len(), path.display()))
}

pub fn criterion() -> Verdict {
    let s = scenes(12, 300, 0.0);
    Ok([selection(&s)?, variance(&s)?, suite()?].join("; "))
}
