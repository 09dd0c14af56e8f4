//! Binary checkpoint format.
//!
//! Layout: `b"PKGE"`, `u32` format version, `u32` header length, JSON header,
//! raw little-endian tensor payload in header order, and a trailing CRC32 of
//! everything before it.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::kg::TripleStore;
use crate::model::AnyModel;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PKGE";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    /// Byte offset of the first element within the payload.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub dtype: String,
    pub config: RunConfig,
    pub num_entities: usize,
    pub num_relation_ids: usize,
    /// Epoch the weights were taken from.
    pub epoch: usize,
    pub valid_mrr: Option<f64>,
    pub tensors: Vec<TensorEntry>,
}

pub fn to_bytes<T: Scalar>(
    model: &AnyModel<T>,
    config: &RunConfig,
    epoch: usize,
    valid_mrr: Option<f64>,
) -> Result<Vec<u8>> {
    let store = model.params();
    let mut offset = 0;
    let header = Header {
        dtype: T::DTYPE.into(),
        config: RunConfig {
            model: model.config().clone(),
            train: config.train.clone(),
        },
        num_entities: model.num_entities(),
        num_relation_ids: model.num_relation_ids(),
        epoch,
        valid_mrr,
        tensors: store
            .iter()
            .map(|(_, p)| {
                let entry = TensorEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    trainable: p.trainable,
                    offset,
                };
                offset += p.value.len() * T::BYTES;
                entry
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let payload: usize = store.iter().map(|(_, p)| p.value.len() * T::BYTES).sum();
    let mut out = Vec::with_capacity(16 + json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, p) in store.iter() {
        for &x in p.value.data() {
            x.write_le(&mut out);
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Checkpoint("truncated file".into()))
}

/// Validates framing and checksum and splits off the header.
pub fn read_header(bytes: &[u8]) -> Result<(Header, &[u8])> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = u32_at(bytes, 4)?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32_at(bytes, bytes.len() - 4)?;
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Checkpoint(format!(
            "checksum mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    let len = u32_at(bytes, 8)? as usize;
    let json = body
        .get(12..12 + len)
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    Ok((header, &body[12 + len..]))
}

fn decode<T: Scalar>(dtype: &str, payload: &[u8], header: &Header) -> Result<Vec<(String, Tensor<T>)>> {
    let width = match dtype {
        "f32" => 4,
        "f64" => 8,
        other => return Err(Error::Checkpoint(format!("unknown dtype {other}"))),
    };
    let total: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if payload.len() != total * width {
        return Err(Error::Checkpoint(format!(
            "payload holds {} bytes, header describes {}",
            payload.len(),
            total * width
        )));
    }
    let mut chunks = payload.chunks_exact(width);
    let mut out = Vec::with_capacity(header.tensors.len());
    let mut offset = 0;
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        if entry.offset != offset {
            return Err(Error::Checkpoint(format!("tensor {} has offset {}, expected {offset}", entry.name, entry.offset)));
        }
        offset += n * width;
        let data = chunks
            .by_ref()
            .take(n)
            .map(|c| match width {
                4 => T::of(f32::read_le(c) as f64),
                _ => T::of(f64::read_le(c)),
            })
            .collect();
        out.push((entry.name.clone(), Tensor::new(&entry.shape, data)?));
    }
    Ok(out)
}

/// Rebuilds the model described by the header and restores its weights.
pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<(AnyModel<T>, Header)> {
    let (header, payload) = read_header(bytes)?;
    let tensors = decode::<T>(&header.dtype, payload, &header)?;
    let mut rng = crate::seeded_rng(header.config.train.seed);
    let mut model = AnyModel::build(&header.config.model, header.num_entities, header.num_relation_ids, &mut rng)?;
    model.params_mut().load_from(tensors)?;
    Ok((model, header))
}

pub fn save<T: Scalar>(
    path: impl AsRef<Path>,
    model: &AnyModel<T>,
    config: &RunConfig,
    epoch: usize,
    valid_mrr: Option<f64>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(model, config, epoch, valid_mrr)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<(AnyModel<T>, Header)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Checks that a restored model was trained on a graph of the same size.
pub fn check_dataset(header: &Header, store: &TripleStore) -> Result<()> {
    if header.num_entities != store.num_entities() {
        return Err(Error::Mismatch(format!(
            "entity_emb has {} rows but the dataset has {} entities",
            header.num_entities,
            store.num_entities()
        )));
    }
    if header.num_relation_ids != store.num_relation_ids() {
        return Err(Error::Mismatch(format!(
            "relation_emb has {} rows but the dataset has {} relation ids",
            header.num_relation_ids,
            store.num_relation_ids()
        )));
    }
    Ok(())
}
