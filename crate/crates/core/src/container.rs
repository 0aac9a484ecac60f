//! Binary tensor container shared by weight files and dataset dumps.
//!
//! Layout: 8-byte magic, `u64` little-endian header length, UTF-8 JSON
//! header, then little-endian `f32` payloads back to back in manifest order.
//! Manifest offsets are byte offsets from the start of the payload section.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::encoder::{LayerNormParams, LayerWeights, ModelDims, ModelWeights};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const WEIGHTS_MAGIC: &[u8; 8] = b"TMVIT001";
pub const DATASET_MAGIC: &[u8; 8] = b"TMDATA01";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    #[serde(flatten)]
    meta: serde_json::Map<String, Value>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    fn numel(shape: &[usize]) -> usize {
        shape.iter().product()
    }
}

/// Writes `tensors` with `meta` merged into the JSON header.
pub fn write_container<W: Write>(
    mut out: W,
    magic: &[u8; 8],
    meta: serde_json::Map<String, Value>,
    tensors: &[Tensor],
) -> Result<()> {
    let mut offset = 0u64;
    let mut manifest = Vec::with_capacity(tensors.len());
    for t in tensors {
        if Tensor::numel(&t.shape) != t.data.len() {
            return Err(Error::Shape(format!(
                "tensor {} declares {:?} but holds {} values",
                t.name,
                t.shape,
                t.data.len()
            )));
        }
        manifest.push(TensorEntry {
            name: t.name.clone(),
            shape: t.shape.clone(),
            offset,
        });
        offset += 4 * t.data.len() as u64;
    }
    let header = serde_json::to_vec(&Header {
        meta,
        tensors: manifest,
    })?;
    out.write_all(magic)?;
    out.write_all(&(header.len() as u64).to_le_bytes())?;
    out.write_all(&header)?;
    let mut buf = Vec::with_capacity(offset as usize);
    for t in tensors {
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Reads a container, returning the header metadata (without the manifest)
/// and the tensors in manifest order.
pub fn read_container<R: Read>(
    mut input: R,
    magic: &[u8; 8],
) -> Result<(serde_json::Map<String, Value>, Vec<Tensor>)> {
    let mut found = [0u8; 8];
    input.read_exact(&mut found)?;
    if &found != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&found),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut header = vec![0u8; len];
    input.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    let mut payload = Vec::new();
    input.read_to_end(&mut payload)?;

    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        let count = Tensor::numel(&entry.shape);
        let start = entry.offset as usize;
        let end = start + 4 * count;
        if end > payload.len() {
            return Err(Error::Format(format!(
                "tensor {} runs past the end of the payload",
                entry.name
            )));
        }
        let data = payload[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.push(Tensor {
            name: entry.name,
            shape: entry.shape,
            data,
        });
    }
    Ok((header.meta, tensors))
}

fn matrix_tensor(name: String, m: &Matrix) -> Tensor {
    Tensor {
        name,
        shape: vec![m.rows(), m.cols()],
        data: m.as_slice().to_vec(),
    }
}

fn vector_tensor(name: String, v: &[f32]) -> Tensor {
    Tensor {
        name,
        shape: vec![v.len()],
        data: v.to_vec(),
    }
}

/// Tensor names in the order they appear in a weight file.
pub fn weight_tensors(w: &ModelWeights) -> Vec<Tensor> {
    let mut out = vec![
        matrix_tensor("patch_projection".into(), &w.patch_projection),
        matrix_tensor("positional_embeddings".into(), &w.positional_embeddings),
        vector_tensor("class_token".into(), &w.class_token),
    ];
    for (i, l) in w.layers.iter().enumerate() {
        let p = format!("layers.{i}");
        out.push(vector_tensor(format!("{p}.norm_attn.scale"), &l.norm_attn.scale));
        out.push(vector_tensor(format!("{p}.norm_attn.shift"), &l.norm_attn.shift));
        out.push(matrix_tensor(format!("{p}.attn.query"), &l.query));
        out.push(matrix_tensor(format!("{p}.attn.key"), &l.key));
        out.push(matrix_tensor(format!("{p}.attn.value"), &l.value));
        out.push(matrix_tensor(format!("{p}.attn.output"), &l.output));
        out.push(vector_tensor(format!("{p}.norm_mlp.scale"), &l.norm_mlp.scale));
        out.push(vector_tensor(format!("{p}.norm_mlp.shift"), &l.norm_mlp.shift));
        out.push(matrix_tensor(format!("{p}.mlp.fc1.weight"), &l.fc1));
        out.push(vector_tensor(format!("{p}.mlp.fc1.bias"), &l.fc1_bias));
        out.push(matrix_tensor(format!("{p}.mlp.fc2.weight"), &l.fc2));
        out.push(vector_tensor(format!("{p}.mlp.fc2.bias"), &l.fc2_bias));
    }
    out.push(vector_tensor("final_norm.scale".into(), &w.final_norm.scale));
    out.push(vector_tensor("final_norm.shift".into(), &w.final_norm.shift));
    out
}

pub fn write_weights<W: Write>(out: W, weights: &ModelWeights) -> Result<()> {
    let mut meta = serde_json::Map::new();
    meta.insert("dims".into(), serde_json::to_value(weights.dims)?);
    write_container(out, WEIGHTS_MAGIC, meta, &weight_tensors(weights))
}

/// Loads a weight file. Tensors are looked up by name, so manifest order is
/// free for external converters; every expected tensor must be present with
/// its exact shape.
pub fn read_weights<R: Read>(input: R) -> Result<ModelWeights> {
    let (meta, tensors) = read_container(input, WEIGHTS_MAGIC)?;
    let dims: ModelDims = serde_json::from_value(
        meta.get("dims")
            .cloned()
            .ok_or_else(|| Error::Format("header has no dims".into()))?,
    )?;
    dims.validate()?;
    let mut by_name: std::collections::HashMap<String, Tensor> =
        tensors.into_iter().map(|t| (t.name.clone(), t)).collect();
    let mut take = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
        let t = by_name
            .remove(name)
            .ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
        if t.shape != shape {
            return Err(Error::Shape(format!(
                "tensor {name} is {:?}, expected {shape:?}",
                t.shape
            )));
        }
        Ok(t.data)
    };
    let d = dims.dim;
    let f = dims.mlp_dim;
    let mat = |rows, cols, data| Matrix::from_vec(rows, cols, data);
    let patch_projection = mat(dims.patch_len(), d, take("patch_projection", &[dims.patch_len(), d])?)?;
    let positional_embeddings = mat(dims.tokens, d, take("positional_embeddings", &[dims.tokens, d])?)?;
    let class_token = take("class_token", &[d])?;
    let mut layers = Vec::with_capacity(dims.layers);
    for i in 0..dims.layers {
        let p = format!("layers.{i}");
        layers.push(LayerWeights {
            norm_attn: LayerNormParams {
                scale: take(&format!("{p}.norm_attn.scale"), &[d])?,
                shift: take(&format!("{p}.norm_attn.shift"), &[d])?,
            },
            query: mat(d, d, take(&format!("{p}.attn.query"), &[d, d])?)?,
            key: mat(d, d, take(&format!("{p}.attn.key"), &[d, d])?)?,
            value: mat(d, d, take(&format!("{p}.attn.value"), &[d, d])?)?,
            output: mat(d, d, take(&format!("{p}.attn.output"), &[d, d])?)?,
            norm_mlp: LayerNormParams {
                scale: take(&format!("{p}.norm_mlp.scale"), &[d])?,
                shift: take(&format!("{p}.norm_mlp.shift"), &[d])?,
            },
            fc1: mat(d, f, take(&format!("{p}.mlp.fc1.weight"), &[d, f])?)?,
            fc1_bias: take(&format!("{p}.mlp.fc1.bias"), &[f])?,
            fc2: mat(f, d, take(&format!("{p}.mlp.fc2.weight"), &[f, d])?)?,
            fc2_bias: take(&format!("{p}.mlp.fc2.bias"), &[d])?,
        });
    }
    let final_norm = LayerNormParams {
        scale: take("final_norm.scale", &[d])?,
        shift: take("final_norm.shift", &[d])?,
    };
    let weights = ModelWeights {
        dims,
        patch_projection,
        positional_embeddings,
        class_token,
        layers,
        final_norm,
    };
    weights.validate()?;
    Ok(weights)
}
