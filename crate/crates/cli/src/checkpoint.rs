//! Checkpoint archive: JSON header (config + named entries) followed by raw
//! little-endian f64 data.
//!
//! Entries are matched by name on load, so models can evolve as long as
//! names stay stable; unknown names are an error, missing names keep their
//! initialized values. Byte-identical for identical state: the header
//! serializes structs in declaration order and the payload follows registry
//! order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use vcl_core::model::ConceptModel;
use vcl_core::tensor::Tensor;
use vcl_core::trainer::{restore, snapshot, Sgd, Snapshot};

use crate::config::ExperimentConfig;

const MAGIC: &[u8; 8] = b"VCLCKPT1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    epoch: usize,
    config: ExperimentConfig,
    entries: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    kind: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug)]
pub struct CkptError(pub String);

impl std::fmt::Display for CkptError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "checkpoint error: {}", self.0)
    }
}

impl std::error::Error for CkptError {}

fn io_err<E: std::fmt::Display>(e: E) -> CkptError {
    CkptError(e.to_string())
}

pub fn save(
    path: &Path,
    config: &ExperimentConfig,
    model: &ConceptModel,
    opt: &Sgd,
    epoch: usize,
) -> Result<(), CkptError> {
    let snap = snapshot(model, opt);
    let mut entries = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    let push = |name: &str, kind: &str, t: &Tensor, entries: &mut Vec<Entry>, data: &mut Vec<u8>| {
        let offset = data.len();
        for v in t.data() {
            data.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(Entry {
            name: name.to_string(),
            kind: kind.to_string(),
            shape: t.shape().to_vec(),
            offset,
            len: t.len(),
        });
    };
    for (name, t) in &snap.params {
        push(name, "param", t, &mut entries, &mut data);
    }
    for (name, t) in &snap.velocity {
        push(name, "velocity", t, &mut entries, &mut data);
    }
    let header = Header { version: 1, epoch, config: config.clone(), entries };
    let hjson = serde_json::to_vec(&header).map_err(io_err)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    f.write_all(MAGIC).map_err(io_err)?;
    f.write_all(&(hjson.len() as u64).to_le_bytes()).map_err(io_err)?;
    f.write_all(&hjson).map_err(io_err)?;
    f.write_all(&data).map_err(io_err)?;
    Ok(())
}

pub struct Loaded {
    pub config: ExperimentConfig,
    pub epoch: usize,
    pub snapshot: Snapshot,
}

pub fn load(path: &Path) -> Result<Loaded, CkptError> {
    let mut f = std::io::BufReader::new(
        std::fs::File::open(path).map_err(|e| CkptError(format!("{}: {e}", path.display())))?,
    );
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(CkptError(format!("{} is not a checkpoint archive", path.display())));
    }
    let mut len8 = [0u8; 8];
    f.read_exact(&mut len8).map_err(io_err)?;
    let hlen = u64::from_le_bytes(len8) as usize;
    let mut hjson = vec![0u8; hlen];
    f.read_exact(&mut hjson).map_err(io_err)?;
    let header: Header = serde_json::from_slice(&hjson).map_err(io_err)?;
    if header.version != 1 {
        return Err(CkptError(format!("unsupported checkpoint version {}", header.version)));
    }
    let mut data = Vec::new();
    f.read_to_end(&mut data).map_err(io_err)?;
    let mut params = Vec::new();
    let mut velocity = Vec::new();
    for e in &header.entries {
        let bytes = data
            .get(e.offset..e.offset + e.len * 8)
            .ok_or_else(|| CkptError(format!("entry '{}' out of bounds", e.name)))?;
        let values: Vec<f64> =
            bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::from_vec(&e.shape, values);
        match e.kind.as_str() {
            "param" => params.push((e.name.clone(), t)),
            "velocity" => velocity.push((e.name.clone(), t)),
            other => return Err(CkptError(format!("unknown entry kind '{other}'"))),
        }
    }
    Ok(Loaded { config: header.config, epoch: header.epoch, snapshot: Snapshot { params, velocity } })
}

/// Rebuild the model and optimizer a checkpoint was saved from.
pub fn instantiate(loaded: &Loaded) -> Result<(ConceptModel, Sgd), CkptError> {
    let mut model =
        ConceptModel::new(loaded.config.model_config(), loaded.config.seed).map_err(io_err)?;
    let mut opt = Sgd::new(&model);
    restore(&mut model, &mut opt, &loaded.snapshot).map_err(io_err)?;
    Ok((model, opt))
}
