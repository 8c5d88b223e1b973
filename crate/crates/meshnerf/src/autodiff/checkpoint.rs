//! Checkpoints: a JSON header (names, shapes, dtype, step counter, free-form
//! metadata) followed by the raw little-endian f64 parameter arrays in
//! header order. Writes go to a temp file and rename into place.

use super::matrix::Matrix;
use super::tape::ParamStore;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: String,
    step: u64,
    params: Vec<ParamHeader>,
    meta: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamHeader {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Clone)]
pub struct CheckpointData {
    pub step: u64,
    pub params: Vec<(String, Matrix)>,
    pub meta: BTreeMap<String, String>,
}

pub fn save_checkpoint(
    path: &Path,
    store: &ParamStore,
    step: u64,
    meta: &BTreeMap<String, String>,
) -> Result<()> {
    let header = Header {
        dtype: "f64".into(),
        step,
        params: store
            .params
            .iter()
            .map(|p| ParamHeader {
                name: p.name.clone(),
                shape: [p.value.rows, p.value.cols],
            })
            .collect(),
        meta: meta.clone(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::InvalidInput(format!("checkpoint header: {e}")))?;
    let tmp = path.with_extension("tmp");
    {
        let mut file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        file.write_all(&(header_bytes.len() as u64).to_le_bytes())
            .map_err(|e| Error::io(&tmp, e))?;
        file.write_all(&header_bytes).map_err(|e| Error::io(&tmp, e))?;
        let mut buf = Vec::new();
        for p in &store.params {
            buf.clear();
            buf.reserve(p.value.data.len() * 8);
            for v in &p.value.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            file.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
        }
        file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointData> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes).map_err(|e| Error::io(path, e))?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes).map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_slice(&header_bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        line: 0,
        message: format!("checkpoint header: {e}"),
    })?;
    if header.dtype != "f64" {
        return Err(Error::InvalidInput(format!(
            "unsupported checkpoint dtype {}",
            header.dtype
        )));
    }
    let mut params = Vec::with_capacity(header.params.len());
    for ph in &header.params {
        let count = ph.shape[0] * ph.shape[1];
        let mut raw = vec![0u8; count * 8];
        file.read_exact(&mut raw).map_err(|e| Error::io(path, e))?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.push((ph.name.clone(), Matrix::from_vec(ph.shape[0], ph.shape[1], data)));
    }
    Ok(CheckpointData {
        step: header.step,
        params,
        meta: header.meta,
    })
}

/// Copy loaded values into a store with identical names and shapes.
pub fn restore_into(data: &CheckpointData, store: &mut ParamStore) -> Result<()> {
    if data.params.len() != store.params.len() {
        return Err(Error::InvalidInput(format!(
            "checkpoint has {} params, store has {}",
            data.params.len(),
            store.params.len()
        )));
    }
    for ((name, value), param) in data.params.iter().zip(store.params.iter_mut()) {
        if *name != param.name || value.shape() != param.value.shape() {
            return Err(Error::InvalidInput(format!(
                "checkpoint param {name:?} {:?} does not match store param {:?} {:?}",
                value.shape(),
                param.name,
                param.value.shape()
            )));
        }
        param.value = value.clone();
    }
    Ok(())
}
