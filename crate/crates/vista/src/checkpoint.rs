//! Parameter checkpoints: a JSON manifest next to a flat little-endian f64
//! blob.
//!
//! ```text
//! <dir>/manifest.json   {"config": {...}, "tensors": [{"name", "shape", "offset"}], "total": n}
//! <dir>/params.bin      n × f64 LE, tensors in manifest order
//! ```
//!
//! Offsets and `total` count values, not bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Vista};
use crate::nn::Module;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    pub total: usize,
}

/// Serializes every parameter of `m` in visit order.
pub fn dump_params(m: &impl Module) -> (Vec<TensorEntry>, Vec<u8>) {
    let mut entries = Vec::new();
    let mut bytes = Vec::with_capacity(m.num_params() * 8);
    let mut offset = 0;
    m.visit("", &mut |name, t| {
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    });
    (entries, bytes)
}

/// Fills the parameters of `m` from a dump, matching tensors by name and
/// shape. Every parameter must be present.
pub fn load_params(m: &mut impl Module, entries: &[TensorEntry], bytes: &[u8]) -> Result<()> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Checkpoint(format!(
            "parameter blob has {} bytes, not a multiple of 8",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut failure = None;
    let mut seen = 0;
    m.visit_mut("", &mut |name, t| {
        if failure.is_some() {
            return;
        }
        let Some(entry) = entries.iter().find(|e| e.name == name) else {
            failure = Some(format!("missing tensor {name}"));
            return;
        };
        if entry.shape != t.shape() {
            failure = Some(format!(
                "{name}: checkpoint shape {:?}, model shape {:?}",
                entry.shape,
                t.shape()
            ));
            return;
        }
        let Some(src) = values.get(entry.offset..entry.offset + t.len()) else {
            failure = Some(format!("{name}: data runs past the end of the blob"));
            return;
        };
        if src.iter().any(|v| !v.is_finite()) {
            failure = Some(format!("{name}: non-finite value"));
            return;
        }
        t.data_mut().copy_from_slice(src);
        seen += 1;
    });
    if let Some(msg) = failure {
        return Err(Error::Checkpoint(msg));
    }
    if seen != entries.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, model uses {seen}",
            entries.len()
        )));
    }
    Ok(())
}

pub fn save(model: &Vista, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let (tensors, bytes) = dump_params(&model.params);
    let manifest = Manifest {
        config: model.config.clone(),
        total: bytes.len() / 8,
        tensors,
    };
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| io(&mpath, e))?;
    let ppath = dir.join(PARAMS_FILE);
    fs::write(&ppath, bytes).map_err(|e| io(&ppath, e))
}

pub fn load(dir: impl AsRef<Path>) -> Result<Vista> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let ppath = dir.join(PARAMS_FILE);
    let bytes = fs::read(&ppath).map_err(|e| io(&ppath, e))?;
    if bytes.len() != manifest.total * 8 {
        return Err(Error::Checkpoint(format!(
            "manifest declares {} values, blob holds {} bytes",
            manifest.total,
            bytes.len()
        )));
    }
    let mut model = Vista::new(manifest.config)?;
    load_params(&mut model.params, &manifest.tensors, &bytes)?;
    Ok(model)
}

fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}
