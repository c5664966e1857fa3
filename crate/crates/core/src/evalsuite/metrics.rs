use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Forecast;
use crate::scene::{dist, Point};

/// Endpoint error at or above which a forecast counts as a miss.
pub const MISS_THRESHOLD: f64 = 2.0;

/// Indices of the `k` highest-scoring modes, best first; ties keep the
/// lower index first.
pub fn top_k(f: &Forecast, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > f.modes.len() {
        return Err(Error::invalid("top_k", format!("k={k} with {} modes", f.modes.len())));
    }
    let mut idx: Vec<usize> = (0..f.modes.len()).collect();
    idx.sort_by(|&a, &b| f.scores[b].total_cmp(&f.scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    Ok(idx)
}

fn check_gt(f: &Forecast, gt: &[Point]) -> Result<()> {
    if gt.is_empty() {
        return Err(Error::MissingFuture);
    }
    if f.modes.iter().any(|m| m.len() != gt.len()) {
        return Err(Error::invalid("metrics", format!("forecast horizon differs from {} ground-truth steps", gt.len())));
    }
    Ok(())
}

pub fn ade(mode: &[Point], gt: &[Point]) -> f64 {
    mode.iter().zip(gt).map(|(&p, &q)| dist(p, q)).sum::<f64>() / gt.len() as f64
}

pub fn fde(mode: &[Point], gt: &[Point]) -> f64 {
    dist(mode[mode.len() - 1], gt[gt.len() - 1])
}

pub fn min_ade(f: &Forecast, gt: &[Point], k: usize) -> Result<f64> {
    check_gt(f, gt)?;
    Ok(top_k(f, k)?.into_iter().map(|m| ade(&f.modes[m], gt)).fold(f64::INFINITY, f64::min))
}

/// Mode with the smallest endpoint error among the top `k`, and that error.
pub fn best_fde(f: &Forecast, gt: &[Point], k: usize) -> Result<(usize, f64)> {
    check_gt(f, gt)?;
    let mut best = (usize::MAX, f64::INFINITY);
    for m in top_k(f, k)? {
        let e = fde(&f.modes[m], gt);
        if e < best.1 {
            best = (m, e);
        }
    }
    Ok(best)
}

pub fn min_fde(f: &Forecast, gt: &[Point], k: usize) -> Result<f64> {
    Ok(best_fde(f, gt, k)?.1)
}

/// `minFDE + (1 - p)^2` with `p` the score of the mode achieving minFDE.
pub fn brier_min_fde(f: &Forecast, gt: &[Point], k: usize) -> Result<f64> {
    let (m, e) = best_fde(f, gt, k)?;
    Ok(e + (1.0 - f.scores[m]).powi(2))
}

/// Fraction of forecasts whose best top-`k` endpoint error is at least
/// `threshold`.
pub fn miss_rate(fs: &[Forecast], gts: &[&[Point]], k: usize, threshold: f64) -> Result<f64> {
    if fs.len() != gts.len() || fs.is_empty() {
        return Err(Error::invalid("miss_rate", format!("{} forecasts, {} ground truths", fs.len(), gts.len())));
    }
    let mut misses = 0;
    for (f, gt) in fs.iter().zip(gts) {
        if min_fde(f, gt, k)? >= threshold {
            misses += 1;
        }
    }
    Ok(misses as f64 / fs.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub k: usize,
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss_rate: f64,
    pub brier_min_fde: f64,
    pub n_scenes: usize,
}

pub fn evaluate(fs: &[Forecast], gts: &[&[Point]], k: usize) -> Result<MetricReport> {
    if fs.len() != gts.len() || fs.is_empty() {
        return Err(Error::invalid("evaluate", format!("{} forecasts, {} ground truths", fs.len(), gts.len())));
    }
    let n = fs.len() as f64;
    let (mut ade_s, mut fde_s, mut brier_s, mut miss) = (0.0, 0.0, 0.0, 0usize);
    for (f, gt) in fs.iter().zip(gts) {
        ade_s += min_ade(f, gt, k)?;
        let (m, e) = best_fde(f, gt, k)?;
        fde_s += e;
        brier_s += e + (1.0 - f.scores[m]).powi(2);
        if e >= MISS_THRESHOLD {
            miss += 1;
        }
    }
    Ok(MetricReport {
        k,
        min_ade: ade_s / n,
        min_fde: fde_s / n,
        miss_rate: miss as f64 / n,
        brier_min_fde: brier_s / n,
        n_scenes: fs.len(),
    })
}

/// A named row of a results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub setting: String,
    pub model: String,
    pub report: MetricReport,
}

pub const TABLE_HEADER: [&str; 8] = ["setting", "model", "k", "min_ade", "min_fde", "miss_rate", "brier_min_fde", "n_scenes"];

fn cells(r: &TableRow) -> [String; 8] {
    let m = &r.report;
    [
        r.setting.clone(),
        r.model.clone(),
        m.k.to_string(),
        format!("{:.4}", m.min_ade),
        format!("{:.4}", m.min_fde),
        format!("{:.4}", m.miss_rate),
        format!("{:.4}", m.brier_min_fde),
        m.n_scenes.to_string(),
    ]
}

pub fn write_table_csv<W: Write>(mut w: W, rows: &[TableRow]) -> Result<()> {
    writeln!(w, "{}", TABLE_HEADER.join(","))?;
    for r in rows {
        writeln!(w, "{}", cells(r).join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Space-aligned plain-text rendering.
pub fn format_table(rows: &[TableRow]) -> String {
    let body: Vec<[String; 8]> = rows.iter().map(cells).collect();
    let mut width = TABLE_HEADER.map(str::len);
    for r in &body {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let mut line = |cols: Vec<&str>| {
        let parts: Vec<String> = cols
            .iter()
            .zip(width)
            .enumerate()
            .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(TABLE_HEADER.to_vec());
    for r in &body {
        line(r.iter().map(String::as_str).collect());
    }
    out
}
