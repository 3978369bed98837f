//! Component view document: everything a display of the decoder needs,
//! as JSON.

use std::path::Path;

use nae_core::deconstruction::decimate_max;
use nae_core::{ComponentSet, ModelHash, StftParams};
use serde::{Deserialize, Serialize};

use crate::error::{IoContext, Result, StudioError};

/// Activation rows longer than this are max-pooled for display.
pub const DEFAULT_FRAME_CAP: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_hash: ModelHash,
    pub source: Option<String>,
    /// SHA-256 of the source audio file.
    pub source_hash: Option<String>,
    pub stft: StftParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDoc {
    pub index: usize,
    pub units: usize,
    /// One row per unit, possibly decimated.
    pub activations: Vec<Vec<f64>>,
    /// One column per unit: the weights through which that unit feeds the
    /// next layer. For the outer layer these are the spectra.
    pub weights: Vec<Vec<f64>>,
    /// Computed on the full-resolution activations.
    pub silent: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewDocument {
    pub provenance: Provenance,
    /// Latent unit isolated in this view, if any.
    pub selection: Option<usize>,
    pub frames: usize,
    /// Frames per displayed activation value.
    pub decimation: usize,
    pub layers: Vec<LayerDoc>,
}

pub fn build_view(set: &ComponentSet, provenance: Provenance, frame_cap: usize) -> ViewDocument {
    let frames = set.frames();
    let decimation = if frame_cap == 0 || frames <= frame_cap { 1 } else { frames.div_ceil(frame_cap) };
    let layers = set
        .layers
        .iter()
        .map(|v| LayerDoc {
            index: v.index,
            units: v.units(),
            activations: (0..v.units()).map(|k| decimate_max(v.activations.row(k), frame_cap)).collect(),
            weights: (0..v.weights.cols()).map(|k| v.weights.column(k)).collect(),
            silent: v.silent.clone(),
        })
        .collect();
    ViewDocument { provenance, selection: set.selection, frames, decimation, layers }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("document serialises");
    bytes.push(b'\n');
    std::fs::write(path, bytes).at(path)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).at(path)?;
    serde_json::from_slice(&bytes).map_err(|e| StudioError::format(format!("{}: {e}", path.display())))
}
