use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::Scene;

pub const NOISE_VARIANCE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseTarget {
    Agents,
    Map,
    Both,
}

impl NoiseTarget {
    fn agents(self) -> bool {
        self != NoiseTarget::Map
    }

    fn map(self) -> bool {
        self != NoiseTarget::Agents
    }
}

impl fmt::Display for NoiseTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseTarget::Agents => "agents",
            NoiseTarget::Map => "map",
            NoiseTarget::Both => "both",
        })
    }
}

impl FromStr for NoiseTarget {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "agents" => Ok(NoiseTarget::Agents),
            "map" => Ok(NoiseTarget::Map),
            "both" => Ok(NoiseTarget::Both),
            _ => Err(Error::Config(format!("unknown noise target `{s}`"))),
        }
    }
}

/// Perturbed scenes plus how many entities were drawn.
#[derive(Clone, Debug)]
pub struct NoisyScenes {
    pub scenes: Vec<Scene>,
    pub agents_selected: usize,
    pub agents_total: usize,
    pub nodes_selected: usize,
    pub nodes_total: usize,
}

/// Selects each agent track and/or lane node independently with
/// probability `p` and adds zero-mean Gaussian noise of the given variance
/// to every component of its past displacements or node features. Futures
/// and the t=0 positions are untouched.
pub fn inject_noise(scenes: &[Scene], p: f64, variance: f64, seed: u64, target: NoiseTarget) -> Result<NoisyScenes> {
    if !(0.0..=1.0).contains(&p) || variance < 0.0 {
        return Err(Error::invalid("inject_noise", format!("p={p}, variance={variance}")));
    }
    let normal = Normal::new(0.0, variance.sqrt()).map_err(|e| Error::invalid("inject_noise", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = NoisyScenes {
        scenes: Vec::with_capacity(scenes.len()),
        agents_selected: 0,
        agents_total: 0,
        nodes_selected: 0,
        nodes_total: 0,
    };
    for s in scenes {
        let mut s = s.clone();
        if target.agents() {
            for a in &mut s.agents {
                out.agents_total += 1;
                if rng.random_bool(p) {
                    out.agents_selected += 1;
                    let disp: Vec<_> = a
                        .past_displacements()
                        .iter()
                        .map(|d| [d[0] + normal.sample(&mut rng), d[1] + normal.sample(&mut rng)])
                        .collect();
                    *a = a.with_displacements(&disp)?;
                }
            }
        }
        if target.map() {
            for f in &mut s.graph.node_features {
                out.nodes_total += 1;
                if rng.random_bool(p) {
                    out.nodes_selected += 1;
                    f.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
                }
            }
        }
        out.scenes.push(s);
    }
    Ok(out)
}
