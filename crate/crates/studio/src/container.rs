//! Model container file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"NAEMODEL"
//! u64            header length in bytes
//! [u8]           JSON header (config, STFT and training settings, hash)
//! u64            matrix count
//! per matrix:    u64 rows, u64 cols, rows*cols f64 in row-major order
//! ```
//!
//! Matrices follow the model's weight order: encoder outer to inner, then
//! decoder inner to outer.

use std::path::Path;

use nae_core::{Matrix, ModelHash, NaeConfig, NaeModel, StftParams, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{IoContext, Result, StudioError};

pub const MAGIC: &[u8; 8] = b"NAEMODEL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub version: u32,
    pub config: NaeConfig,
    pub content_hash: ModelHash,
    pub stft: Option<StftParams>,
    pub train: Option<TrainConfig>,
    /// Shape of each stored matrix, in file order.
    pub matrices: Vec<MatrixShape>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixShape {
    pub role: MatrixRole,
    /// 1-based layer index within its side.
    pub layer: usize,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixRole {
    Encoder,
    Decoder,
}

impl ModelHeader {
    pub fn new(model: &NaeModel, stft: Option<StftParams>, train: Option<TrainConfig>) -> Self {
        let depth = model.depth();
        let encoder = model.encoder.iter().enumerate().map(|(i, w)| MatrixShape {
            role: MatrixRole::Encoder,
            layer: depth - i,
            rows: w.rows(),
            cols: w.cols(),
        });
        let decoder = model.decoder.iter().enumerate().map(|(i, w)| MatrixShape {
            role: MatrixRole::Decoder,
            layer: i + 1,
            rows: w.rows(),
            cols: w.cols(),
        });
        Self {
            version: FORMAT_VERSION,
            config: model.config.clone(),
            content_hash: model.content_hash(),
            stft,
            train,
            matrices: encoder.chain(decoder).collect(),
        }
    }
}

pub fn encode_model(model: &NaeModel, stft: Option<StftParams>, train: Option<TrainConfig>) -> Vec<u8> {
    let header = serde_json::to_vec_pretty(&ModelHeader::new(model, stft, train)).expect("header serialises");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    let weights: Vec<&Matrix> = model.weights().collect();
    out.extend_from_slice(&(weights.len() as u64).to_le_bytes());
    for w in weights {
        out.extend_from_slice(&(w.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(w.cols() as u64).to_le_bytes());
        for v in w.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(StudioError::format("model file is truncated"));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| StudioError::format("length does not fit in memory"))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<(ModelHeader, NaeModel)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(StudioError::format("not a model file"));
    }
    let header_len = r.len()?;
    let header: ModelHeader =
        serde_json::from_slice(r.take(header_len)?).map_err(|e| StudioError::format(format!("model header: {e}")))?;
    if header.version != FORMAT_VERSION {
        return Err(StudioError::format(format!("unsupported model format version {}", header.version)));
    }
    let count = r.len()?;
    let mut matrices = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let rows = r.len()?;
        let cols = r.len()?;
        let n = rows.checked_mul(cols).ok_or_else(|| StudioError::format("matrix too large"))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| StudioError::format("matrix too large"))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        matrices.push(Matrix::from_vec(rows, cols, data)?);
    }
    if r.pos != bytes.len() {
        return Err(StudioError::format("trailing bytes after the last matrix"));
    }
    let depth = header.config.depth();
    if matrices.len() != 2 * depth {
        return Err(StudioError::format(format!("expected {} matrices, found {}", 2 * depth, matrices.len())));
    }
    let decoder = matrices.split_off(depth);
    let model = NaeModel { config: header.config.clone(), encoder: matrices, decoder };
    model.validate()?;
    if model.content_hash() != header.content_hash {
        return Err(StudioError::format("model weights do not match the recorded hash"));
    }
    Ok((header, model))
}

pub fn save_model(path: &Path, model: &NaeModel, stft: Option<StftParams>, train: Option<TrainConfig>) -> Result<()> {
    std::fs::write(path, encode_model(model, stft, train)).at(path)
}

pub fn load_model(path: &Path) -> Result<(ModelHeader, NaeModel)> {
    let bytes = std::fs::read(path).at(path)?;
    decode_model(&bytes).map_err(|e| match e {
        StudioError::Format(msg) => StudioError::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}
