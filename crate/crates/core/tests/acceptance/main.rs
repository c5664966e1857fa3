//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria 6 and 7 train full-size models and take most of the runtime.
//! Set `LANEFORECAST_ACCEPTANCE=quick` to shrink them for a fast local run;
//! their lines are then tagged `[quick]`.

#[path = "../common/mod.rs"]
mod common;

mod gradients;
mod graphs;
mod labels;
mod metrics;
mod noise;
mod training;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

/// `Ok` carries the evidence for a pass, `Err` the reason for a failure.
pub type Verdict = Result<String, String>;

pub fn quick() -> bool {
    std::env::var("LANEFORECAST_ACCEPTANCE").is_ok_and(|v| v == "quick")
}

/// Directory for artifacts written by the run.
pub fn artifact_dir() -> PathBuf {
    let d = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&d).unwrap();
    d
}

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

struct Run {
    failed: Vec<usize>,
}

impl Run {
    fn check(&mut self, id: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Verdict) {
        let start = Instant::now();
        let res = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(r) => r,
            Err(p) => Err(format!(
                "panicked: {}",
                p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
            )),
        };
        let took = start.elapsed();
        let res = match (res, limit) {
            (Ok(_), Some(l)) if took > l => Err(format!("took {:.1} s, limit {:.0} s", took.as_secs_f64(), l.as_secs_f64())),
            (r, _) => r,
        };
        let (tag, detail) = match &res {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {id:>2} {tag}  {name}: {detail} ({:.1} s)", took.as_secs_f64());
        if res.is_err() {
            self.failed.push(id);
        }
    }
}

fn main() -> ExitCode {
    let mut run = Run { failed: Vec::new() };
    let min = |m: u64| Some(Duration::from_secs(60 * m));
    run.check(1, "gradient fidelity", min(2), gradients::criterion);
    run.check(2, "distance-to-intersection oracle", Some(Duration::from_secs(10)), graphs::bfs_criterion);
    run.check(3, "LaneConv and adjacency-power oracle", None, graphs::lane_conv_criterion);
    run.check(4, "metric oracle", None, metrics::criterion);
    run.check(5, "pseudo-label contracts", None, labels::criterion);
    run.check(6, "training smoke", None, training::smoke_criterion);
    let mut models = None;
    run.check(7, "directional pretext effect (straight-biased setting)", min(120), || {
        let (verdict, trained) = training::directional_criterion();
        models = Some(trained);
        verdict
    });
    let models = models.unwrap_or_else(training::fallback_models);
    run.check(8, "CKA sanity", None, || training::cka_criterion(&models));
    run.check(9, "warm start", None, || training::warm_start_criterion(&models));
    run.check(10, "noise harness and six-setting suite", None, noise::criterion);
    if run.failed.is_empty() {
        println!("acceptance: all 10 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {:?}", run.failed);
        ExitCode::FAILURE
    }
}
