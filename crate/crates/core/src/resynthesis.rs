//! Turning components back into sound: masks over the source magnitude
//! spectrogram, the source phase reattached, then overlap-add.

use alloc::vec::Vec;

use num_complex::Complex64;

use crate::deconstruction::ComponentSet;
use crate::error::{bail, Result};
use crate::matrix::Matrix;
use crate::stft::{istft, Spectrogram};

/// Floor for the denominator of an unbounded (`γ = 0`) cross mask.
pub const MASK_FLOOR: f64 = 1e-12;

/// Fraction of the denominator maximum used as `γ` when none is given.
pub const DEFAULT_GAMMA_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RenderMode {
    Original,
    CrossComponent,
    CrossLayer,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RenderSpec {
    pub mode: RenderMode,
    /// Spectrum index, always into the outer layer.
    pub basis_unit: usize,
    pub activation_unit: usize,
    /// 1-based layer the activation row is read from.
    pub activation_layer: usize,
    /// Bounding factor for cross modes; `None` picks [`default_gamma`].
    #[cfg_attr(feature = "serde", serde(default))]
    pub gamma: Option<f64>,
}

impl RenderSpec {
    pub fn original(k: usize, depth: usize) -> Self {
        Self { mode: RenderMode::Original, basis_unit: k, activation_unit: k, activation_layer: depth, gamma: None }
    }

    pub fn cross_component(basis: usize, activation: usize, depth: usize, gamma: Option<f64>) -> Self {
        Self {
            mode: RenderMode::CrossComponent,
            basis_unit: basis,
            activation_unit: activation,
            activation_layer: depth,
            gamma,
        }
    }

    pub fn cross_layer(basis: usize, activation: usize, layer: usize, gamma: Option<f64>) -> Self {
        Self { mode: RenderMode::CrossLayer, basis_unit: basis, activation_unit: activation, activation_layer: layer, gamma }
    }

    /// Checks mode consistency and index ranges against `set`.
    pub fn validate(&self, set: &ComponentSet) -> Result<()> {
        let depth = set.depth();
        let outer = set.outer().units();
        let (i, j, m) = (self.basis_unit, self.activation_unit, self.activation_layer);
        match self.mode {
            RenderMode::Original if i != j || m != depth => {
                bail!(Input, "original mode needs basis == activation on layer {depth}")
            }
            RenderMode::CrossComponent if i == j || m != depth => {
                bail!(Input, "cross_component needs distinct units on layer {depth}")
            }
            RenderMode::CrossLayer if m == depth || m == 0 => {
                bail!(Input, "cross_layer needs an activation layer in 1..{depth}")
            }
            _ => {}
        }
        if i >= outer {
            bail!(Input, "basis unit {i} outside 0..{outer}");
        }
        let units = set.layer(m)?.units();
        if j >= units {
            bail!(Input, "activation unit {j} outside 0..{units} in layer {m}");
        }
        if let Some(g) = self.gamma {
            if !(g >= 0.0) || !g.is_finite() {
                bail!(Input, "gamma must be finite and non-negative, got {g}");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    bins: usize,
    frames: usize,
    data: Vec<Complex64>,
}

impl ComplexSpectrogram {
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn get(&self, f: usize, t: usize) -> Complex64 {
        self.data[f * self.frames + t]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedComponent {
    pub mask: Matrix,
    pub stft: ComplexSpectrogram,
    pub audio: Vec<f64>,
    pub spec: Option<RenderSpec>,
}

/// `w_(i,L) ⊗ h_(j,m)`.
pub fn component_spectrogram(set: &ComponentSet, basis: usize, activation: usize, layer: usize) -> Result<Matrix> {
    let w = set.spectrum(basis)?;
    let h = set.activation(layer, activation)?;
    Ok(Matrix::outer(&w, h))
}

/// Sum of same-index components built from layer-`m` activations and the
/// first `min(KL, Km)` outer spectra.
fn component_sum(set: &ComponentSet, m: usize) -> Result<Matrix> {
    let layer = set.layer(m)?;
    let w = &set.outer().weights;
    let n = w.cols().min(layer.units());
    if n == w.cols() && n == layer.units() {
        return w.matmul(&layer.activations);
    }
    let w = Matrix::from_fn(w.rows(), n, |r, c| w[(r, c)]);
    let a = Matrix::from_fn(n, layer.activations.cols(), |r, c| layer.activations[(r, c)]);
    w.matmul(&a)
}

/// Wiener mask of outer component `k`. Entries lie in `[0, 1]` and the
/// masks of all components sum to one at every bin. Where the model
/// predicts nothing at all the bin is shared equally between components,
/// so the mixture is still reproduced in full.
pub fn conservative_mask(set: &ComponentSet, k: usize) -> Result<Matrix> {
    conservative_mask_against(set, set, k)
}

/// Mask of outer component `k` of `part` relative to the components of
/// `whole`. With `part` a hierarchical selection of `whole`, the masks of
/// all selections and components again sum to one.
pub fn conservative_mask_against(part: &ComponentSet, whole: &ComponentSet, k: usize) -> Result<Matrix> {
    let kl = whole.outer().units();
    if part.outer().weights != whole.outer().weights {
        bail!(Input, "component sets come from different models");
    }
    let num = component_spectrogram(part, k, k, part.depth())?;
    let den = component_sum(whole, whole.depth())?;
    let share = match part.selection {
        Some(_) => 1.0 / (kl * part.latent.rows()) as f64,
        None => 1.0 / kl as f64,
    };
    num.zip_map(&den, |n, d| if d > 0.0 { (n / d).min(1.0) } else { share })
}

/// All conservative masks at once.
pub fn conservative_masks(set: &ComponentSet) -> Result<Vec<Matrix>> {
    (0..set.outer().units()).map(|k| conservative_mask(set, k)).collect()
}

/// `(w_(i,L) ⊗ h_(j,m) + γ/Km) / (Σ_k w_(k,L) ⊗ h_(k,m) + γ)`.
///
/// Not bounded by one. At bins where every term is zero the value is
/// exactly `1/Km` for any `γ > 0`; with `γ = 0` the denominator is floored
/// and such bins are zero.
pub fn bounded_mask(set: &ComponentSet, basis: usize, activation: usize, layer: usize, gamma: f64) -> Result<Matrix> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        bail!(Input, "gamma must be finite and non-negative, got {gamma}");
    }
    let km = set.layer(layer)?.units();
    let num = component_spectrogram(set, basis, activation, layer)?;
    let den = component_sum(set, layer)?;
    let uniform = 1.0 / km as f64;
    let bias = gamma / km as f64;
    num.zip_map(&den, |n, d| {
        if gamma > 0.0 && n == 0.0 && d == 0.0 {
            uniform
        } else {
            (n + bias) / (d + gamma).max(MASK_FLOOR)
        }
    })
}

/// `0.01 ×` the largest entry of the layer-`m` denominator.
pub fn default_gamma(set: &ComponentSet, layer: usize) -> Result<f64> {
    let max = component_sum(set, layer)?.max();
    Ok(if max > 0.0 { DEFAULT_GAMMA_FRACTION * max } else { 0.0 })
}

/// Applies `mask` to the source magnitudes, reattaches the source phase and
/// resynthesises at the source length.
pub fn render(spectrogram: &Spectrogram, mask: &Matrix) -> Result<RenderedComponent> {
    spectrogram.validate()?;
    mask.check_same_shape(&spectrogram.magnitudes)?;
    if !mask.is_nonnegative() {
        bail!(Input, "mask has negative or NaN entries");
    }
    let (bins, frames) = mask.shape();
    let mut data = Vec::with_capacity(bins * frames);
    for f in 0..bins {
        for t in 0..frames {
            data.push(spectrogram.complex_at(f, t) * mask[(f, t)]);
        }
    }
    let stft = ComplexSpectrogram { bins, frames, data };
    let audio = istft(spectrogram.params, frames, spectrogram.signal_len, |f, t| stft.get(f, t))?;
    Ok(RenderedComponent { mask: mask.clone(), stft, audio, spec: None })
}

pub fn render_component(set: &ComponentSet, spectrogram: &Spectrogram, spec: &RenderSpec) -> Result<RenderedComponent> {
    spec.validate(set)?;
    if set.bins() != spectrogram.bins() || set.frames() != spectrogram.frames() {
        bail!(
            Shape,
            "components are {}x{} but the spectrogram is {}x{}",
            set.bins(),
            set.frames(),
            spectrogram.bins(),
            spectrogram.frames()
        );
    }
    let mask = match spec.mode {
        RenderMode::Original => conservative_mask(set, spec.basis_unit)?,
        RenderMode::CrossComponent | RenderMode::CrossLayer => {
            let gamma = match spec.gamma {
                Some(g) => g,
                None => default_gamma(set, spec.activation_layer)?,
            };
            bounded_mask(set, spec.basis_unit, spec.activation_unit, spec.activation_layer, gamma)?
        }
    };
    let mut out = render(spectrogram, &mask)?;
    out.spec = Some(*spec);
    Ok(out)
}

/// Sample-wise sum of equally long signals.
pub fn mix(signals: &[Vec<f64>]) -> Vec<f64> {
    let len = signals.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = alloc::vec![0.0; len];
    for s in signals {
        for (o, v) in out.iter_mut().zip(s) {
            *o += v;
        }
    }
    out
}
