//! Declarative edits to a trained model's decoder weights.
//!
//! Every op is a pure function from a model to a derived model. Random ops
//! carry their own seed, and a sampled permutation is written back into the
//! op (see [`ManipulationOp::resolve`]) so a saved script replays exactly.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};

use crate::error::{bail, Error, Result};
use crate::matrix::Matrix;
use crate::model::{ModelHash, NaeModel};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum WeightDistribution {
    Uniform { low: f64, high: f64 },
    /// Normal samples with negatives clamped to zero.
    RectifiedNormal { mean: f64, std_dev: f64 },
}

impl WeightDistribution {
    fn validate(&self) -> Result<()> {
        match *self {
            Self::Uniform { low, high } => {
                if !(low >= 0.0 && high >= low && high.is_finite()) {
                    bail!(Input, "uniform bounds need 0 <= low <= high, got [{low}, {high}]");
                }
            }
            Self::RectifiedNormal { mean, std_dev } => {
                if !(mean.is_finite() && std_dev >= 0.0 && std_dev.is_finite()) {
                    bail!(Input, "normal needs finite mean and std_dev >= 0, got ({mean}, {std_dev})");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum ManipulationOp {
    SetWeight {
        layer: usize,
        row: usize,
        col: usize,
        value: f64,
    },
    ScaleColumn {
        layer: usize,
        col: usize,
        factor: f64,
    },
    /// Column `c` moves to position `permutation[c]`. Without an explicit
    /// permutation one is drawn from `seed`.
    PermuteColumns {
        layer: usize,
        #[cfg_attr(feature = "serde", serde(default))]
        permutation: Option<Vec<usize>>,
        #[cfg_attr(feature = "serde", serde(default))]
        seed: Option<u64>,
        #[cfg_attr(feature = "serde", serde(default))]
        derangement: bool,
    },
    RandomizeReplace {
        layer: usize,
        /// Empty means every column.
        #[cfg_attr(feature = "serde", serde(default))]
        columns: Vec<usize>,
        distribution: WeightDistribution,
        seed: u64,
    },
    /// `w ← w·u`, `u` uniform in `[1 − δ, 1 + δ]`.
    RandomizeMultiplicative {
        layer: usize,
        #[cfg_attr(feature = "serde", serde(default))]
        columns: Vec<usize>,
        delta: f64,
        seed: u64,
    },
}

impl ManipulationOp {
    pub fn layer(&self) -> usize {
        match *self {
            Self::SetWeight { layer, .. }
            | Self::ScaleColumn { layer, .. }
            | Self::PermuteColumns { layer, .. }
            | Self::RandomizeReplace { layer, .. }
            | Self::RandomizeMultiplicative { layer, .. } => layer,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::SetWeight { .. } => "set_weight",
            Self::ScaleColumn { .. } => "scale_column",
            Self::PermuteColumns { .. } => "permute_columns",
            Self::RandomizeReplace { .. } => "randomize_replace",
            Self::RandomizeMultiplicative { .. } => "randomize_multiplicative",
        }
    }

    /// Fills in a sampled permutation so the op no longer depends on the
    /// sampler. Other ops are returned unchanged.
    pub fn resolve(&self, model: &NaeModel) -> Result<Self> {
        match self {
            Self::PermuteColumns { layer, permutation: None, seed, derangement } => {
                let Some(seed) = seed else {
                    bail!(Input, "permute_columns needs a permutation or a seed");
                };
                let cols = decoder(model, *layer)?.cols();
                Ok(Self::PermuteColumns {
                    layer: *layer,
                    permutation: Some(sample_permutation(cols, *seed, *derangement)?),
                    seed: Some(*seed),
                    derangement: *derangement,
                })
            }
            other => Ok(other.clone()),
        }
    }
}

fn decoder(model: &NaeModel, layer: usize) -> Result<&Matrix> {
    if layer == 0 || layer > model.depth() {
        bail!(Input, "decoder layer {layer} outside 1..={}", model.depth());
    }
    Ok(model.decoder_layer(layer))
}

fn derive(model: &NaeModel, layer: usize, edit: impl FnOnce(&mut Matrix) -> Result<()>) -> Result<NaeModel> {
    decoder(model, layer)?;
    let mut out = model.clone();
    edit(out.decoder_layer_mut(layer))?;
    let w = out.decoder_layer(layer);
    if !w.is_nonnegative() || !w.is_finite() {
        bail!(Numeric, "edit left negative or non-finite weights in layer {layer}");
    }
    Ok(out)
}

fn target_columns(w: &Matrix, columns: &[usize]) -> Result<Vec<usize>> {
    if columns.is_empty() {
        return Ok((0..w.cols()).collect());
    }
    let mut seen = alloc::vec![false; w.cols()];
    for &c in columns {
        if c >= w.cols() {
            bail!(Input, "column {c} outside 0..{}", w.cols());
        }
        if core::mem::replace(&mut seen[c], true) {
            bail!(Input, "column {c} listed twice");
        }
    }
    Ok(columns.to_vec())
}

pub fn set_weight(model: &NaeModel, layer: usize, row: usize, col: usize, value: f64) -> Result<NaeModel> {
    if !(value >= 0.0) || !value.is_finite() {
        bail!(Input, "weights must be finite and non-negative, got {value}");
    }
    derive(model, layer, |w| {
        if row >= w.rows() || col >= w.cols() {
            bail!(Input, "entry ({row}, {col}) outside {}x{}", w.rows(), w.cols());
        }
        w[(row, col)] = value;
        Ok(())
    })
}

pub fn scale_column(model: &NaeModel, layer: usize, col: usize, factor: f64) -> Result<NaeModel> {
    if !(factor >= 0.0) || !factor.is_finite() {
        bail!(Input, "scale factor must be finite and non-negative, got {factor}");
    }
    derive(model, layer, |w| {
        if col >= w.cols() {
            bail!(Input, "column {col} outside 0..{}", w.cols());
        }
        for r in 0..w.rows() {
            w[(r, col)] *= factor;
        }
        Ok(())
    })
}

pub fn check_permutation(permutation: &[usize], n: usize) -> Result<()> {
    if permutation.len() != n {
        bail!(Input, "permutation has {} entries, layer has {n} columns", permutation.len());
    }
    let mut seen = alloc::vec![false; n];
    for &p in permutation {
        if p >= n || core::mem::replace(&mut seen[p], true) {
            bail!(Input, "{permutation:?} is not a bijection on 0..{n}");
        }
    }
    Ok(())
}

pub fn invert_permutation(permutation: &[usize]) -> Vec<usize> {
    let mut inv = alloc::vec![0; permutation.len()];
    for (c, &p) in permutation.iter().enumerate() {
        inv[p] = c;
    }
    inv
}

/// Uniform permutation of `0..n`, or a uniform derangement by rejection.
pub fn sample_permutation(n: usize, seed: u64, derangement: bool) -> Result<Vec<usize>> {
    if derangement && n < 2 {
        bail!(Input, "no derangement of {n} element(s)");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        p.shuffle(&mut rng);
        if !derangement || p.iter().enumerate().all(|(i, &v)| i != v) {
            return Ok(p);
        }
    }
}

pub fn permute_columns(model: &NaeModel, layer: usize, permutation: &[usize]) -> Result<NaeModel> {
    derive(model, layer, |w| {
        check_permutation(permutation, w.cols())?;
        let src = w.clone();
        for (c, &p) in permutation.iter().enumerate() {
            for r in 0..w.rows() {
                w[(r, p)] = src[(r, c)];
            }
        }
        Ok(())
    })
}

pub fn randomize_replace(
    model: &NaeModel,
    layer: usize,
    columns: &[usize],
    distribution: WeightDistribution,
    seed: u64,
) -> Result<NaeModel> {
    distribution.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    derive(model, layer, |w| {
        let cols = target_columns(w, columns)?;
        let mut draw: alloc::boxed::Box<dyn FnMut(&mut ChaCha8Rng) -> f64> = match distribution {
            WeightDistribution::Uniform { low, high } => {
                alloc::boxed::Box::new(move |rng| low + (high - low) * rng.random::<f64>())
            }
            WeightDistribution::RectifiedNormal { mean, std_dev } => {
                let n = Normal::new(mean, std_dev).map_err(|e| Error::Input(alloc::format!("{e}")))?;
                alloc::boxed::Box::new(move |rng| n.sample(rng).max(0.0))
            }
        };
        for &c in &cols {
            for r in 0..w.rows() {
                w[(r, c)] = draw(&mut rng);
            }
        }
        Ok(())
    })
}

pub fn randomize_multiplicative(
    model: &NaeModel,
    layer: usize,
    columns: &[usize],
    delta: f64,
    seed: u64,
) -> Result<NaeModel> {
    if !(0.0..1.0).contains(&delta) {
        bail!(Input, "delta must lie in [0, 1), got {delta}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    derive(model, layer, |w| {
        let cols = target_columns(w, columns)?;
        if delta == 0.0 {
            return Ok(());
        }
        for &c in &cols {
            for r in 0..w.rows() {
                let u = 1.0 + delta * (2.0 * rng.random::<f64>() - 1.0);
                w[(r, c)] *= u;
            }
        }
        Ok(())
    })
}

/// Applies one op. A permutation op without an explicit permutation is
/// sampled from its seed.
pub fn apply_op(model: &NaeModel, op: &ManipulationOp) -> Result<NaeModel> {
    match op.resolve(model)? {
        ManipulationOp::SetWeight { layer, row, col, value } => set_weight(model, layer, row, col, value),
        ManipulationOp::ScaleColumn { layer, col, factor } => scale_column(model, layer, col, factor),
        ManipulationOp::PermuteColumns { layer, permutation, .. } => {
            permute_columns(model, layer, permutation.as_deref().unwrap_or_default())
        }
        ManipulationOp::RandomizeReplace { layer, columns, distribution, seed } => {
            randomize_replace(model, layer, &columns, distribution, seed)
        }
        ManipulationOp::RandomizeMultiplicative { layer, columns, delta, seed } => {
            randomize_multiplicative(model, layer, &columns, delta, seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ManipulationScript {
    pub base_hash: ModelHash,
    pub ops: Vec<ManipulationOp>,
}

impl ManipulationScript {
    pub fn new(base: &NaeModel) -> Self {
        Self { base_hash: base.content_hash(), ops: Vec::new() }
    }

    /// Resolves `op` against `current` (the model after the existing ops),
    /// applies it, and records the resolved form.
    pub fn push(&mut self, current: &NaeModel, op: &ManipulationOp) -> Result<NaeModel> {
        let resolved = op.resolve(current)?;
        let next = apply_op(current, &resolved)?;
        self.ops.push(resolved);
        Ok(next)
    }
}

/// Replays `script` over `model`, which must carry the script's base hash.
pub fn apply_script(model: &NaeModel, script: &ManipulationScript) -> Result<NaeModel> {
    Ok(replay(model, script)?.0)
}

/// Like [`apply_script`], also returning the hash after each op.
pub fn replay(model: &NaeModel, script: &ManipulationScript) -> Result<(NaeModel, Vec<ModelHash>)> {
    let hash = model.content_hash();
    if hash != script.base_hash {
        bail!(Provenance, "script expects base model {} but got {hash}", script.base_hash);
    }
    let mut current = model.clone();
    let mut chain = Vec::with_capacity(script.ops.len());
    for op in &script.ops {
        current = apply_op(&current, op)?;
        chain.push(current.content_hash());
    }
    Ok((current, chain))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deconstruction::{extract, hierarchical_select};
    use crate::model::{init_model, NaeConfig};
    use alloc::vec;

    fn model() -> NaeModel {
        init_model(NaeConfig::new(16, vec![3, 5], 11)).unwrap()
    }

    #[test]
    fn set_weight_changes_one_entry() {
        let m = model();
        let d = set_weight(&m, 1, 2, 1, 0.75).unwrap();
        let diff = d.decoder[0].zip_map(&m.decoder[0], |a, b| (a != b) as u8 as f64).unwrap();
        assert!(diff.sum() <= 1.0);
        assert_eq!(d.decoder[0][(2, 1)], 0.75);
        assert_eq!(d.encoder, m.encoder);
        assert_eq!(d.decoder[1], m.decoder[1]);

        let same = set_weight(&m, 2, 0, 0, m.decoder[1][(0, 0)]).unwrap();
        assert_eq!(same, m);
        assert!(matches!(set_weight(&m, 1, 0, 0, -0.1), Err(Error::Input(_))));
        assert!(set_weight(&m, 1, 5, 0, 0.1).is_err());
        assert!(set_weight(&m, 3, 0, 0, 0.1).is_err());
        assert!(set_weight(&m, 0, 0, 0, 0.1).is_err());
    }

    #[test]
    fn cutting_the_sole_connection_silences_the_unit() {
        let mut m = model();
        m.decoder[0] = Matrix::from_fn(5, 3, |r, c| if r == 4 && c == 1 { 0.8 } else if r < 4 { 0.3 } else { 0.0 });
        let x = Matrix::from_fn(16, 6, |r, c| 1.0 + ((r + c) % 3) as f64);
        let set = extract(&m, &x).unwrap();
        let sel = hierarchical_select(&set, 1).unwrap();
        if !set.layers[0].silent[1] {
            assert!(!sel.layers[1].silent[4]);
        }
        let cut = set_weight(&m, 1, 4, 1, 0.0).unwrap();
        let sel = hierarchical_select(&extract(&cut, &x).unwrap(), 1).unwrap();
        assert!(sel.layers[1].silent[4]);
    }

    #[test]
    fn doubling_the_only_feeding_weight_doubles_pre_activation() {
        let mut m = model();
        m.decoder[0] = Matrix::zeros(5, 3);
        m.decoder[0][(2, 0)] = 0.5;
        let x = Matrix::from_fn(16, 4, |r, c| 1.0 + (r * c % 5) as f64);
        let before = extract(&m, &x).unwrap();
        let d = set_weight(&m, 1, 2, 0, 1.0).unwrap();
        let after = extract(&d, &x).unwrap();
        let a = before.layers[1].activations.row(2);
        let b = after.layers[1].activations.row(2);
        for (a, b) in a.iter().zip(b) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn permutations() {
        let m = model();
        assert_eq!(permute_columns(&m, 2, &[0, 1, 2, 3, 4]).unwrap(), m);
        let p = [3, 0, 4, 1, 2];
        let d = permute_columns(&m, 2, &p).unwrap();
        assert_eq!(d.decoder[1].column(3), m.decoder[1].column(0));
        assert_eq!(permute_columns(&d, 2, &invert_permutation(&p)).unwrap(), m);
        assert!(permute_columns(&m, 2, &[0, 0, 1, 2, 3]).is_err());
        assert!(permute_columns(&m, 2, &[0, 1, 2]).is_err());
    }

    #[test]
    fn sampled_permutations_are_reproducible() {
        assert_eq!(sample_permutation(9, 4, false).unwrap(), sample_permutation(9, 4, false).unwrap());
        for seed in 0..50 {
            let p = sample_permutation(6, seed, true).unwrap();
            assert!(p.iter().enumerate().all(|(i, &v)| i != v));
            check_permutation(&p, 6).unwrap();
        }
        assert!(sample_permutation(1, 0, true).is_err());
        assert_eq!(sample_permutation(1, 0, false).unwrap(), vec![0]);
    }

    #[test]
    fn resolve_records_the_sample() {
        let m = model();
        let op = ManipulationOp::PermuteColumns { layer: 2, permutation: None, seed: Some(3), derangement: false };
        let resolved = op.resolve(&m).unwrap();
        let ManipulationOp::PermuteColumns { permutation: Some(p), .. } = &resolved else { panic!() };
        assert_eq!(p, &sample_permutation(5, 3, false).unwrap());
        assert_eq!(apply_op(&m, &op).unwrap(), apply_op(&m, &resolved).unwrap());
        let bare = ManipulationOp::PermuteColumns { layer: 2, permutation: None, seed: None, derangement: false };
        assert!(apply_op(&m, &bare).is_err());
    }

    #[test]
    fn replace_is_selective() {
        let m = model();
        let d = randomize_replace(&m, 2, &[1, 3], WeightDistribution::Uniform { low: 0.0, high: 0.0 }, 5).unwrap();
        assert!(d.decoder[1].column(1).iter().all(|&v| v == 0.0));
        for c in [0, 2, 4] {
            assert_eq!(d.decoder[1].column(c), m.decoder[1].column(c));
        }
        let d = randomize_replace(&m, 2, &[], WeightDistribution::Uniform { low: 0.5, high: 2.0 }, 5).unwrap();
        assert!(d.decoder[1].as_slice().iter().all(|&v| (0.5..2.0).contains(&v)));
        let n = WeightDistribution::RectifiedNormal { mean: 0.0, std_dev: 1.0 };
        let d = randomize_replace(&m, 1, &[0], n, 5).unwrap();
        assert!(d.decoder[0].is_nonnegative());
        assert!(d.decoder[0].column(0).iter().any(|&v| v == 0.0));
        assert_eq!(d, randomize_replace(&m, 1, &[0], n, 5).unwrap());
        let bad = WeightDistribution::Uniform { low: -0.1, high: 1.0 };
        assert!(randomize_replace(&m, 1, &[], bad, 0).is_err());
        assert!(randomize_replace(&m, 1, &[7], n, 0).is_err());
    }

    #[test]
    fn jitter_keeps_zero_pattern() {
        let m = model();
        assert_eq!(randomize_multiplicative(&m, 2, &[], 0.0, 9).unwrap(), m);
        let d = randomize_multiplicative(&m, 2, &[], 0.5, 9).unwrap();
        for (a, b) in m.decoder[1].as_slice().iter().zip(d.decoder[1].as_slice()) {
            assert_eq!(*a == 0.0, *b == 0.0);
            assert!(*b >= 0.5 * a && *b <= 1.5 * a);
        }
        assert!(randomize_multiplicative(&m, 2, &[], 1.0, 9).is_err());
        assert!(randomize_multiplicative(&m, 2, &[], -0.1, 9).is_err());
    }

    #[test]
    fn scripts() {
        let m = model();
        let empty = ManipulationScript::new(&m);
        assert_eq!(apply_script(&m, &empty).unwrap(), m);

        let mut script = ManipulationScript::new(&m);
        let mut cur = m.clone();
        let ops = [
            ManipulationOp::PermuteColumns { layer: 2, permutation: None, seed: Some(1), derangement: true },
            ManipulationOp::RandomizeMultiplicative { layer: 1, columns: vec![0], delta: 0.2, seed: 4 },
            ManipulationOp::ScaleColumn { layer: 2, col: 3, factor: 2.5 },
        ];
        for op in &ops {
            cur = script.push(&cur, op).unwrap();
        }
        assert!(matches!(script.ops[0], ManipulationOp::PermuteColumns { permutation: Some(_), .. }));
        let (replayed, chain) = replay(&m, &script).unwrap();
        assert_eq!(replayed, cur);
        assert_eq!(chain.len(), 3);
        assert_eq!(*chain.last().unwrap(), cur.content_hash());

        assert!(matches!(apply_script(&cur, &script), Err(Error::Provenance(_))));
    }

    #[test]
    fn permutation_and_inverse_script() {
        let m = model();
        let p = vec![2, 0, 1];
        let script = ManipulationScript {
            base_hash: m.content_hash(),
            ops: vec![
                ManipulationOp::PermuteColumns { layer: 1, permutation: Some(p.clone()), seed: None, derangement: false },
                ManipulationOp::PermuteColumns {
                    layer: 1,
                    permutation: Some(invert_permutation(&p)),
                    seed: None,
                    derangement: false,
                },
            ],
        };
        assert_eq!(apply_script(&m, &script).unwrap(), m);
    }
}
