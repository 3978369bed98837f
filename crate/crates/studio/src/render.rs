//! Rendering components of a bundle to WAV files.

use std::path::{Path, PathBuf};

use nae_core::resynthesis::{conservative_mask_against, mix};
use nae_core::{hierarchical_select, render, render_component, ComponentSet, RenderSpec, Spectrogram};

use crate::bundle::{fresh_dir, Bundle};
use crate::error::{Result, StudioError};
use crate::wav::save_wav;

#[derive(Debug, Clone, PartialEq)]
pub enum RenderRequest {
    /// Original component `k`.
    Component(usize),
    /// Spectrum `basis` driven by activation `activation` of `layer`
    /// (outer layer when `None`).
    Cross { basis: usize, activation: usize, layer: Option<usize>, gamma: Option<f64> },
    /// Every outer component still sounding when only latent unit `u` is
    /// kept.
    Hierarchical(usize),
    /// Every original component plus their sum.
    All,
}

impl RenderRequest {
    pub fn spec(&self, set: &ComponentSet) -> Option<RenderSpec> {
        let depth = set.depth();
        match *self {
            Self::Component(k) => Some(RenderSpec::original(k, depth)),
            Self::Cross { basis, activation, layer, gamma } => {
                let m = layer.unwrap_or(depth);
                Some(if m == depth {
                    RenderSpec::cross_component(basis, activation, depth, gamma)
                } else {
                    RenderSpec::cross_layer(basis, activation, m, gamma)
                })
            }
            Self::Hierarchical(_) | Self::All => None,
        }
    }
}

pub fn render_spec_audio(set: &ComponentSet, spectrogram: &Spectrogram, spec: &RenderSpec) -> Result<Vec<f64>> {
    Ok(render_component(set, spectrogram, spec)?.audio)
}

pub fn peak(signal: &[f64]) -> f64 {
    signal.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Scales every signal by one common gain so that none peaks above
/// `limit`. Signals already within the limit are untouched.
pub fn limit_peaks(signals: &mut [(String, Vec<f64>)], limit: f64) {
    let max = signals.iter().map(|(_, s)| peak(s)).fold(0.0, f64::max);
    if max > limit && max > 0.0 {
        let gain = limit / max;
        for (_, s) in signals.iter_mut() {
            s.iter_mut().for_each(|v| *v *= gain);
        }
    }
}

/// Renders `request` into WAV files in the fresh directory `out` and
/// returns their paths.
pub fn render_to_dir(bundle: &Bundle, request: &RenderRequest, out: &Path, peak_limit: Option<f64>) -> Result<Vec<PathBuf>> {
    if let Some(l) = peak_limit {
        if !(l > 0.0) || !l.is_finite() {
            return Err(StudioError::Config(format!("peak limit must be positive, got {l}")));
        }
    }
    let set = bundle.components()?;
    let spec = &bundle.spectrogram;
    let mut signals: Vec<(String, Vec<f64>)> = Vec::new();
    match request {
        RenderRequest::Component(_) | RenderRequest::Cross { .. } => {
            let rs = request.spec(&set).expect("single-spec request");
            let name = match rs.mode {
                nae_core::RenderMode::Original => format!("component_{}.wav", rs.basis_unit),
                _ => format!("cross_{}_{}_layer{}.wav", rs.basis_unit, rs.activation_unit, rs.activation_layer),
            };
            signals.push((name, render_spec_audio(&set, spec, &rs)?));
        }
        RenderRequest::Hierarchical(u) => {
            let sel = hierarchical_select(&set, *u)?;
            for (k, silent) in sel.outer().silent.iter().enumerate() {
                if !silent {
                    let mask = conservative_mask_against(&sel, &set, k)?;
                    signals.push((format!("hier{u}_component_{k}.wav"), render(spec, &mask)?.audio));
                }
            }
        }
        RenderRequest::All => {
            for k in 0..set.outer().units() {
                let rs = RenderSpec::original(k, set.depth());
                signals.push((format!("component_{k}.wav"), render_spec_audio(&set, spec, &rs)?));
            }
            let parts: Vec<Vec<f64>> = signals.iter().map(|(_, s)| s.clone()).collect();
            signals.push(("sum.wav".into(), mix(&parts)));
        }
    }
    if let Some(limit) = peak_limit {
        limit_peaks(&mut signals, limit);
    }
    fresh_dir(out)?;
    let mut paths = Vec::with_capacity(signals.len());
    for (name, audio) in &signals {
        let path = out.join(name);
        save_wav(&path, audio, bundle.stft().sample_rate)?;
        paths.push(path);
    }
    Ok(paths)
}
