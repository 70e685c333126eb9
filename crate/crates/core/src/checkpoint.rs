//! Parameter checkpoints: one line of JSON header naming every tensor and
//! its shape, then the raw little-endian `f64` payload in header order.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DTYPE_TAG: &str = "f64le";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dtype: String,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn write_checkpoint<W: Write>(
    mut out: W,
    params: &ParamStore,
    meta: serde_json::Value,
) -> Result<()> {
    let header = Header {
        dtype: DTYPE_TAG.into(),
        tensors: params
            .iter()
            .map(|(_, name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        meta,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for (_, _, t) in params.iter() {
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(mut input: R) -> Result<(ParamStore, serde_json::Value)> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    let header: Header = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::Parse(format!("checkpoint header: {e}")))?;
    if header.dtype != DTYPE_TAG {
        return Err(Error::Parse(format!("unsupported dtype tag `{}`", header.dtype)));
    }
    let mut params = ParamStore::new();
    let mut buf = [0u8; 8];
    for entry in header.tensors {
        let len: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            input
                .read_exact(&mut buf)
                .map_err(|e| Error::Parse(format!("truncated payload for `{}`: {e}", entry.name)))?;
            data.push(f64::from_le_bytes(buf));
        }
        params.insert(entry.name, Tensor::new(entry.shape, data)?);
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Parse(format!("{} trailing bytes after payload", rest.len())));
    }
    Ok((params, header.meta))
}
