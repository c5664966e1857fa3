use std::io::Write;

use crate::error::{Error, Result};

fn centered(x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = x.len();
    let d = x.first().map_or(0, Vec::len);
    if n < 2 || d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("cka", format!("need at least 2 rows of equal nonzero width, got {n}")));
    }
    let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    Ok(x.iter().map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect()).collect())
}

/// `A^T B` for row-major `n x da` and `n x db`.
fn cross(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<f64> {
    let (da, db) = (a[0].len(), b[0].len());
    let mut out = vec![0.0; da * db];
    for (ra, rb) in a.iter().zip(b) {
        for (i, &x) in ra.iter().enumerate() {
            for (j, &y) in rb.iter().enumerate() {
                out[i * db + j] += x * y;
            }
        }
    }
    out
}

fn frob(m: &[f64]) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Linear centered kernel alignment between two feature sets over the same
/// `n` examples.
pub fn cka(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid("cka", format!("{} vs {} rows", a.len(), b.len())));
    }
    let (a, b) = (centered(a)?, centered(b)?);
    let ab = frob(&cross(&b, &a));
    let aa = frob(&cross(&a, &a));
    let bb = frob(&cross(&b, &b));
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((ab * ab / (aa * bb)).clamp(0.0, 1.0))
}

/// Pairwise CKA of several feature sets.
pub fn cka_matrix(sets: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    let mut m = vec![vec![0.0; sets.len()]; sets.len()];
    for i in 0..sets.len() {
        for j in i..sets.len() {
            let v = cka(&sets[i], &sets[j])?;
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    Ok(m)
}

pub fn write_cka_csv<W: Write>(mut w: W, names: &[String], m: &[Vec<f64>]) -> Result<()> {
    writeln!(w, ",{}", names.join(","))?;
    for (name, row) in names.iter().zip(m) {
        let vals: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
        writeln!(w, "{name},{}", vals.join(","))?;
    }
    w.flush()?;
    Ok(())
}
