//! Line-delimited JSON scene files, one scene per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::Scene;
use crate::error::{Error, Result};

pub fn write_scenes<W: Write>(mut w: W, scenes: &[Scene]) -> Result<()> {
    for s in scenes {
        serde_json::to_writer(&mut w, s).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_scenes(path: impl AsRef<Path>, scenes: &[Scene]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_scenes(BufWriter::new(File::create(path)?), scenes)
}

/// Parses scenes from a reader. Blank lines are skipped; errors carry the
/// 1-based line number and the JSON path of the offending field.
pub fn parse_scenes<R: BufRead>(r: R) -> Result<Vec<Scene>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let de = &mut serde_json::Deserializer::from_str(&line);
        let scene: Scene = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            line: i + 1,
            path: e.path().to_string(),
            msg: e.inner().to_string(),
        })?;
        scene.validate().map_err(|e| Error::Parse {
            line: i + 1,
            path: ".".into(),
            msg: e.to_string(),
        })?;
        out.push(scene);
    }
    Ok(out)
}

pub fn load_scenes(path: impl AsRef<Path>) -> Result<Vec<Scene>> {
    parse_scenes(BufReader::new(File::open(path)?))
}
