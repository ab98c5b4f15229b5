//! Bit-exact binary checkpoints.
//!
//! Layout: a magic line, one JSON header line (version, kind, model config,
//! tensor names and shapes), then the raw little-endian `f64` payload of
//! every tensor in registration order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::store::ParamStore;

const MAGIC: &str = "PDPNET1";

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: String,
    config: ModelConfig,
    tensors: Vec<TensorMeta>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

pub fn save(path: &Path, kind: &str, config: &ModelConfig, store: &ParamStore) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = Header {
        version: 1,
        kind: kind.to_string(),
        config: *config,
        tensors: store
            .iter()
            .map(|(name, t)| TensorMeta { name: name.to_string(), shape: t.shape().to_vec() })
            .collect(),
    };
    writeln!(w, "{MAGIC}")?;
    serde_json::to_writer(&mut w, &header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    writeln!(w)?;
    for (_, t) in store.iter() {
        for &x in t.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Load a checkpoint. `expected_kind` guards against mixing policy and value
/// network files. Tensor names and shapes must match the store layout built
/// from the stored config, so parameters land where they were registered.
pub fn load(path: &Path, expected_kind: &str) -> Result<(ModelConfig, Vec<(String, ArrayD<f64>)>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = String::new();
    read_line(&mut r, &mut magic)?;
    if magic.trim_end() != MAGIC {
        return Err(Error::Checkpoint(format!("bad magic in {}", path.display())));
    }
    let mut header_line = String::new();
    read_line(&mut r, &mut header_line)?;
    let header: Header =
        serde_json::from_str(header_line.trim_end()).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if header.kind != expected_kind {
        return Err(Error::Checkpoint(format!(
            "expected a {expected_kind} checkpoint, found {}",
            header.kind
        )));
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for meta in header.tensors {
        let len: usize = meta.shape.iter().product();
        let mut buf = vec![0u8; len * 8];
        r.read_exact(&mut buf)?;
        let data: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let arr = ArrayD::from_shape_vec(IxDyn(&meta.shape), data)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        tensors.push((meta.name, arr));
    }
    Ok((header.config, tensors))
}

/// Copy loaded tensors into a freshly constructed store, by name and shape.
pub fn restore_into(store: &mut ParamStore, tensors: Vec<(String, ArrayD<f64>)>) -> Result<()> {
    if tensors.len() != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} tensors, model expects {}",
            tensors.len(),
            store.len()
        )));
    }
    for (idx, (name, arr)) in tensors.into_iter().enumerate() {
        if store.name(idx) != name {
            return Err(Error::Checkpoint(format!(
                "tensor {idx} is `{name}`, expected `{}`",
                store.name(idx)
            )));
        }
        if store.raw(idx).shape() != arr.shape() {
            return Err(Error::Checkpoint(format!("tensor `{name}` has the wrong shape")));
        }
        *store.raw_mut(idx) = arr;
    }
    Ok(())
}

fn read_line<R: Read>(r: &mut R, out: &mut String) -> Result<()> {
    let mut byte = [0u8; 1];
    loop {
        r.read_exact(&mut byte)?;
        if byte[0] == b'\n' {
            return Ok(());
        }
        out.push(byte[0] as char);
    }
}
