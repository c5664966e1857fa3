//! Checkpoint layout:
//!
//! ```text
//! LFCKPT 1\n
//! {"params":[{"name":..,"group":..,"shape":[rows,cols]},...]}\n
//! <little-endian f32 payload, parameters in manifest order>
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ParamGroup, ParameterStore, Real, Tensor};
use crate::error::{Error, Result};

const MAGIC: &str = "LFCKPT 1";

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    group: ParamGroup,
    shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    params: Vec<ManifestEntry>,
}

/// One stored parameter, values in checkpoint precision.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub group: ParamGroup,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

pub fn write_checkpoint<T: Real, W: Write>(mut w: W, store: &ParameterStore<T>) -> Result<()> {
    let manifest = Manifest {
        params: store
            .iter()
            .map(|(_, p)| ManifestEntry {
                name: p.name.clone(),
                group: p.group,
                shape: [p.value.rows(), p.value.cols()],
            })
            .collect(),
    };
    writeln!(w, "{MAGIC}")?;
    serde_json::to_writer(&mut w, &manifest).map_err(std::io::Error::other)?;
    writeln!(w)?;
    for (_, p) in store.iter() {
        for &v in p.value.data() {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: R, origin: &Path) -> Result<Vec<CheckpointEntry>> {
    let bad = |msg: String| Error::Checkpoint {
        path: origin.to_path_buf(),
        msg,
    };
    let mut r = BufReader::new(r);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(bad(format!("bad header {:?}", line.trim_end())));
    }
    line.clear();
    r.read_line(&mut line)?;
    let manifest: Manifest = serde_json::from_str(&line).map_err(|e| bad(format!("manifest: {e}")))?;
    let mut out = Vec::with_capacity(manifest.params.len());
    for e in manifest.params {
        let n = e.shape[0] * e.shape[1];
        let mut buf = vec![0u8; n * 4];
        r.read_exact(&mut buf)
            .map_err(|err| bad(format!("payload for `{}`: {err}", e.name)))?;
        let values = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push(CheckpointEntry {
            name: e.name,
            group: e.group,
            rows: e.shape[0],
            cols: e.shape[1],
            values,
        });
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes", rest.len())));
    }
    Ok(out)
}

pub fn save_checkpoint<T: Real>(path: impl AsRef<Path>, store: &ParameterStore<T>) -> Result<()> {
    let f = File::create(path.as_ref())?;
    write_checkpoint(BufWriter::new(f), store)
}

/// Loads a checkpoint as a fresh store.
pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<ParameterStore<T>> {
    let path = path.as_ref();
    let entries = read_checkpoint(File::open(path)?, path)?;
    let mut store = ParameterStore::new();
    for e in entries {
        let data = e.values.iter().map(|&v| T::from_f64(v as f64)).collect();
        store.add(e.name, e.group, Tensor::new(e.rows, e.cols, data)?)?;
    }
    Ok(store)
}
