//! The readable surface of a trained model: per-layer activations, the
//! decoder weights that consume them, and single-latent-unit
//! (hierarchical) views.
//!
//! Layers are numbered from 1 (latent, `K1` units) to `L` (outer, `KL`
//! units). Layer `l` holds a `Kl x T` activation matrix and the decoder
//! matrix `W_dl` that reads it; for the outer layer that matrix is the
//! `F x KL` set of spectra.

use alloc::vec::Vec;

use crate::activation::Activation;
use crate::error::{bail, Result};
use crate::matrix::Matrix;
use crate::model::NaeModel;

/// Activation rows whose maximum falls below this are "silent".
pub const SILENCE_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerView {
    /// 1 for the latent layer up to `L` for the outer layer.
    pub index: usize,
    /// `Kl x T`.
    pub activations: Matrix,
    /// `W_dl`: `K(l+1) x Kl`, or `F x KL` spectra for the outer layer.
    pub weights: Matrix,
    /// One flag per unit.
    pub silent: Vec<bool>,
}

impl LayerView {
    fn new(index: usize, activations: Matrix, weights: Matrix) -> Self {
        let silent = silent_rows(&activations);
        Self { index, activations, weights, silent }
    }

    pub fn units(&self) -> usize {
        self.activations.rows()
    }
}

pub fn silent_rows(activations: &Matrix) -> Vec<bool> {
    (0..activations.rows())
        .map(|r| activations.row(r).iter().copied().fold(0.0, f64::max) < SILENCE_THRESHOLD)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSet {
    pub layers: Vec<LayerView>,
    /// Unmasked latent activations, kept so a hierarchical view can be
    /// recomputed from any other view.
    pub latent: Matrix,
    pub inner_activation: Activation,
    pub output_activation: Activation,
    /// Latent unit isolated by [`hierarchical_select`], if any.
    pub selection: Option<usize>,
}

impl ComponentSet {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Layer `l`, counted from 1.
    pub fn layer(&self, l: usize) -> Result<&LayerView> {
        match l.checked_sub(1).and_then(|i| self.layers.get(i)) {
            Some(v) => Ok(v),
            None => bail!(Input, "layer {l} outside 1..={}", self.layers.len()),
        }
    }

    pub fn outer(&self) -> &LayerView {
        self.layers.last().expect("at least one layer")
    }

    pub fn bins(&self) -> usize {
        self.outer().weights.rows()
    }

    pub fn frames(&self) -> usize {
        self.latent.cols()
    }

    /// Spectrum `k`: column `k` of the outer decoder matrix.
    pub fn spectrum(&self, k: usize) -> Result<Vec<f64>> {
        let w = &self.outer().weights;
        if k >= w.cols() {
            bail!(Input, "spectrum {k} outside 0..{}", w.cols());
        }
        Ok(w.column(k))
    }

    /// Activation row `unit` of layer `l`.
    pub fn activation(&self, l: usize, unit: usize) -> Result<&[f64]> {
        let view = self.layer(l)?;
        if unit >= view.units() {
            bail!(Input, "unit {unit} outside 0..{} in layer {l}", view.units());
        }
        Ok(view.activations.row(unit))
    }

    /// `W_dL · A_L`: the model output before the output nonlinearity.
    pub fn outer_pre_activation(&self) -> Matrix {
        let outer = self.outer();
        outer.weights.matmul(&outer.activations).expect("layer shapes chain")
    }

    /// Reconstructed spectrogram.
    pub fn output(&self) -> Matrix {
        let g = self.output_activation;
        self.outer_pre_activation().map(|v| g.apply(v))
    }
}

/// Encodes `x` and walks the decoder, capturing every layer's activations
/// and weights.
pub fn extract(model: &NaeModel, x: &Matrix) -> Result<ComponentSet> {
    model.validate()?;
    let latent = model.encode(x)?;
    Ok(build(model.decoder.to_vec(), latent.clone(), latent, model, None))
}

fn build(
    decoder: Vec<Matrix>,
    latent: Matrix,
    first: Matrix,
    model: &NaeModel,
    selection: Option<usize>,
) -> ComponentSet {
    let layers = propagate(decoder, first, model.config.inner_activation);
    ComponentSet {
        layers,
        latent,
        inner_activation: model.config.inner_activation,
        output_activation: model.config.output_activation,
        selection,
    }
}

fn propagate(decoder: Vec<Matrix>, first: Matrix, inner: Activation) -> Vec<LayerView> {
    let mut layers: Vec<LayerView> = Vec::with_capacity(decoder.len());
    let mut a = first;
    for (i, w) in decoder.into_iter().enumerate() {
        let mut next = w.matmul(&a).expect("layer shapes chain");
        next.map_inplace(|v| inner.apply(v));
        layers.push(LayerView::new(i + 1, core::mem::replace(&mut a, next), w));
    }
    layers
}

/// Recomputes every layer from a latent matrix in which all rows except
/// `inner_unit` are zeroed. Weights are unchanged.
pub fn hierarchical_select(set: &ComponentSet, inner_unit: usize) -> Result<ComponentSet> {
    let k1 = set.latent.rows();
    if inner_unit >= k1 {
        bail!(Input, "inner unit {inner_unit} outside 0..{k1}");
    }
    let mut first = Matrix::zeros(k1, set.latent.cols());
    first.row_mut(inner_unit).copy_from_slice(set.latent.row(inner_unit));
    let decoder = set.layers.iter().map(|v| v.weights.clone()).collect();
    Ok(ComponentSet {
        layers: propagate(decoder, first, set.inner_activation),
        latent: set.latent.clone(),
        inner_activation: set.inner_activation,
        output_activation: set.output_activation,
        selection: Some(inner_unit),
    })
}

/// Max-pools `row` into at most `max_len` bins of equal width, keeping
/// transient peaks visible in a shortened display.
pub fn decimate_max(row: &[f64], max_len: usize) -> Vec<f64> {
    if max_len == 0 || row.len() <= max_len {
        return row.to_vec();
    }
    let factor = row.len().div_ceil(max_len);
    row.chunks(factor).map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect()
}

/// Fraction of outer-layer activation entries above 10% of that layer's
/// maximum. A rough proxy for how many sound events are sounding at once.
pub fn activation_density(set: &ComponentSet) -> f64 {
    let a = &set.outer().activations;
    let n = a.as_slice().len();
    let max = a.max();
    if n == 0 || !(max > 0.0) {
        return 0.0;
    }
    let threshold = 0.1 * max;
    a.as_slice().iter().filter(|&&v| v > threshold).count() as f64 / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, NaeConfig};
    use alloc::vec;

    fn hand_model() -> NaeModel {
        // F = 6, layers [2, 3]; latent unit 0 feeds only outer unit 1.
        let mut m = init_model(NaeConfig::new(6, vec![2, 3], 0)).unwrap();
        m.encoder[0] = Matrix::from_rows(&[
            [1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 1.0, 1.0],
        ]);
        m.encoder[1] = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 1.0]]);
        m.decoder[0] = Matrix::from_rows(&[[0.0, 0.5], [2.0, 0.0], [0.0, 1.0]]);
        m.decoder[1] = Matrix::from_fn(6, 3, |r, c| if r / 2 == c { 1.0 } else { 0.0 });
        m
    }

    fn input() -> Matrix {
        Matrix::from_fn(6, 5, |r, c| ((r + 2 * c) % 4) as f64)
    }

    #[test]
    fn extract_shapes() {
        let m = init_model(NaeConfig::new(513, vec![3, 9], 1)).unwrap();
        let x = Matrix::filled(513, 100, 0.25);
        let set = extract(&m, &x).unwrap();
        assert_eq!(set.layers.len(), 2);
        assert_eq!(set.layers[0].activations.shape(), (3, 100));
        assert_eq!(set.layers[1].activations.shape(), (9, 100));
        assert_eq!(set.layers[0].weights.shape(), (9, 3));
        assert_eq!(set.layers[1].weights.shape(), (513, 9));

        let deep = init_model(NaeConfig::new(513, vec![3, 6, 12], 1)).unwrap();
        let set = extract(&deep, &x).unwrap();
        let sizes: Vec<usize> = set.layers.iter().map(LayerView::units).collect();
        assert_eq!(sizes, vec![3, 6, 12]);
    }

    #[test]
    fn output_matches_forward() {
        let m = hand_model();
        let set = extract(&m, &input()).unwrap();
        assert_eq!(set.output(), m.forward(&input()).unwrap());
        assert!(set.layers.iter().all(|v| v.activations.is_nonnegative()));
    }

    #[test]
    fn zero_input_gives_silent_latent() {
        let m = init_model(NaeConfig::new(20, vec![2, 5], 3)).unwrap();
        let set = extract(&m, &Matrix::zeros(20, 4)).unwrap();
        assert!(set.latent.as_slice().iter().all(|&v| v == 0.0));
        assert!(set.layers.iter().all(|v| v.silent.iter().all(|&s| s)));
    }

    #[test]
    fn single_connection_propagates_to_one_outer_unit() {
        let set = extract(&hand_model(), &input()).unwrap();
        let sel = hierarchical_select(&set, 0).unwrap();
        assert_eq!(sel.layers[1].silent, vec![true, false, true]);
        let sel = hierarchical_select(&set, 1).unwrap();
        assert_eq!(sel.layers[1].silent, vec![false, true, false]);
        assert_eq!(sel.selection, Some(1));
    }

    #[test]
    fn selections_add_up() {
        let m = init_model(NaeConfig::new(30, vec![3, 7, 12], 5)).unwrap();
        let x = Matrix::from_fn(30, 9, |r, c| ((r * c) % 7) as f64 * 0.4);
        let set = extract(&m, &x).unwrap();
        let full = set.outer_pre_activation();
        let mut sum = Matrix::zeros(full.rows(), full.cols());
        for u in 0..3 {
            sum = sum.add(&hierarchical_select(&set, u).unwrap().outer_pre_activation()).unwrap();
        }
        assert!(sum.max_abs_diff(&full) < 1e-9);
    }

    #[test]
    fn zero_activation_unit_silences_everything() {
        let m = hand_model();
        // Input with nothing in the bins read by latent unit 0.
        let x = Matrix::from_fn(6, 4, |r, _| if r < 2 { 0.0 } else { 1.0 });
        let set = extract(&m, &x).unwrap();
        let sel = hierarchical_select(&set, 0).unwrap();
        assert!(sel.layers.iter().all(|v| v.silent.iter().all(|&s| s)));
        assert!(sel.outer_pre_activation().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_range_selection() {
        let set = extract(&hand_model(), &input()).unwrap();
        assert!(matches!(hierarchical_select(&set, 2), Err(crate::Error::Input(_))));
        assert!(set.layer(0).is_err());
        assert!(set.layer(3).is_err());
        assert!(set.spectrum(3).is_err());
    }

    #[test]
    fn decimation_keeps_global_max() {
        let row: Vec<f64> = (0..5000).map(|i| libm::sin(i as f64 * 0.01).abs() * (i % 13) as f64).collect();
        let d = decimate_max(&row, 2000);
        assert!(d.len() <= 2000);
        let max = row.iter().copied().fold(0.0, f64::max);
        assert_eq!(d.iter().copied().fold(0.0, f64::max), max);
        assert_eq!(decimate_max(&row[..10], 2000), row[..10].to_vec());
    }

    #[test]
    fn density_counts_entries_above_a_tenth_of_max() {
        let mut set = extract(&hand_model(), &input()).unwrap();
        set.layers[1].activations = Matrix::from_rows(&[[10.0, 0.5, 2.0, 0.0]]);
        assert_eq!(activation_density(&set), 0.5);
    }
}
