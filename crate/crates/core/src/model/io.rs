//! Weight file: `"TTADAW01"`, a u32-LE header length, a JSON header, then
//! little-endian `f32` tensor data at the header's byte offsets.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vocab::Vocabulary;
use super::weights::{ModelDims, ModelWeights, Pooling};
use crate::dsp::DspConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"TTADAW01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dims: ModelDims,
    pooling: Pooling,
    dsp: DspConfig,
    vocab: Vec<String>,
    tensors: Vec<TensorEntry>,
}

pub fn weights_to_bytes(w: &ModelWeights) -> Vec<u8> {
    let mut entries = Vec::new();
    let mut offset = 0;
    for (name, t) in w.tensors() {
        entries.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype: "f32".into(),
            offset,
        });
        offset += 4 * t.numel();
    }
    let header = Header {
        format_version: FORMAT_VERSION,
        dims: w.dims,
        pooling: w.pooling,
        dsp: w.dsp.clone(),
        vocab: w.vocab.tokens().to_vec(),
        tensors: entries,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");

    let mut out = Vec::with_capacity(12 + json.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in w.tensors() {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn weights_from_bytes(bytes: &[u8]) -> Result<ModelWeights> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::format("magic", "missing or wrong magic bytes"));
    }
    let len_bytes: [u8; 4] = bytes
        .get(8..12)
        .ok_or_else(|| Error::format("header_length", "file ends before header length"))?
        .try_into()
        .expect("4 bytes");
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let json = bytes
        .get(12..12 + header_len)
        .ok_or_else(|| Error::format("header", "file ends inside the header"))?;
    let header: Header =
        serde_json::from_slice(json).map_err(|e| Error::format("header", e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::format(
            "format_version",
            format!("expected {FORMAT_VERSION}, found {}", header.format_version),
        ));
    }
    let data = &bytes[12 + header_len..];
    let vocab = Vocabulary::from_tokens(header.vocab)?;

    let entries: HashMap<&str, &TensorEntry> =
        header.tensors.iter().map(|e| (e.name.as_str(), e)).collect();
    let mut loaded: HashMap<&'static str, Tensor> = HashMap::new();
    let mut total = 0;
    for (name, shape) in ModelWeights::expected_shapes(vocab.len(), header.dsp.mel_bins, header.dims) {
        let entry = entries
            .get(name)
            .ok_or_else(|| Error::format(name, "tensor missing from header"))?;
        if entry.dtype != "f32" {
            return Err(Error::format(name, format!("unsupported dtype {:?}", entry.dtype)));
        }
        if entry.shape != shape {
            return Err(Error::format(
                name,
                format!("shape {:?}, expected {:?}", entry.shape, shape),
            ));
        }
        let n: usize = shape.iter().product();
        let raw = data
            .get(entry.offset..entry.offset + 4 * n)
            .ok_or_else(|| Error::format(name, "tensor data truncated"))?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        loaded.insert(name, Tensor::new(shape, values)?);
        total += 4 * n;
    }
    if data.len() != total {
        return Err(Error::format(
            "data",
            format!("{} data bytes, header accounts for {total}", data.len()),
        ));
    }

    let mut take = |name: &str| loaded.remove(name).expect("loaded above");
    let w = ModelWeights {
        vocab,
        dsp: header.dsp,
        dims: header.dims,
        pooling: header.pooling,
        token_embedding: take("token_embedding"),
        text_w1: take("text_w1"),
        text_b1: take("text_b1"),
        text_w2: take("text_w2"),
        text_b2: take("text_b2"),
        text_proj: take("text_proj"),
        audio_shift: take("audio_shift"),
        audio_scale: take("audio_scale"),
        audio_w1: take("audio_w1"),
        audio_b1: take("audio_b1"),
        audio_w2: take("audio_w2"),
        audio_b2: take("audio_b2"),
        audio_proj: take("audio_proj"),
        temperature: take("temperature"),
    };
    w.validate()
        .map_err(|e| Error::format("tensors", e.to_string()))?;
    Ok(w)
}

pub fn save_weights(w: &ModelWeights, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, weights_to_bytes(w)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelWeights> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    weights_from_bytes(&bytes)
}
