//! Network definition and forward pass for shallow and deep non-negative
//! autoencoders.
//!
//! Layer sizes are listed innermost first: `[K1, ..., KL]` with `K1` the
//! latent size. For input dimension `F` the encoder maps
//! `F -> KL -> ... -> K1` and the decoder maps `K1 -> ... -> KL -> F`.
//! No layer has a bias.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::activation::Activation;
use crate::error::{bail, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NaeConfig {
    pub input_dim: usize,
    /// `[K1, ..., KL]`, strictly increasing, all below `input_dim`.
    pub layer_sizes: Vec<usize>,
    pub inner_activation: Activation,
    pub output_activation: Activation,
    pub seed: u64,
}

impl NaeConfig {
    /// ReLU inside, softplus on the output layer.
    pub fn new(input_dim: usize, layer_sizes: Vec<usize>, seed: u64) -> Self {
        Self {
            input_dim,
            layer_sizes,
            inner_activation: Activation::Relu,
            output_activation: Activation::Softplus,
            seed,
        }
    }

    pub fn depth(&self) -> usize {
        self.layer_sizes.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.is_empty() {
            bail!(Config, "at least one layer size is required");
        }
        if self.layer_sizes[0] == 0 {
            bail!(Config, "latent size must be positive");
        }
        if self.layer_sizes.windows(2).any(|w| w[0] >= w[1]) {
            bail!(Config, "layer sizes {:?} must strictly increase outwards", self.layer_sizes);
        }
        let outer = *self.layer_sizes.last().unwrap();
        if outer >= self.input_dim {
            bail!(Config, "outer layer size {outer} must be below input dimension {}", self.input_dim);
        }
        Ok(())
    }

    /// Unit counts along the encoder: `[F, KL, ..., K1]`.
    fn encoder_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.depth() + 1);
        dims.push(self.input_dim);
        dims.extend(self.layer_sizes.iter().rev());
        dims
    }
}

/// SHA-256 over the configuration and every weight bit.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelHash(pub [u8; 32]);

impl ModelHash {
    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(64);
        for b in self.0 {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        if s.len() != 64 || !s.is_ascii() {
            bail!(Input, "model hash must be 64 hex digits");
        }
        let mut out = [0u8; 32];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&s[2 * i..2 * i + 2], 16)
                .map_err(|_| crate::Error::Input(format!("invalid hex in model hash {s:?}")))?;
        }
        Ok(Self(out))
    }
}

impl fmt::Display for ModelHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for ModelHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ModelHash({})", &self.to_hex()[..12])
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for ModelHash {
    fn serialize<S: serde::Serializer>(&self, s: S) -> core::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for ModelHash {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> core::result::Result<Self, D::Error> {
        let s = <String as serde::Deserialize>::deserialize(d)?;
        ModelHash::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaeModel {
    pub config: NaeConfig,
    /// `[W_eL, ..., W_e1]`: outer to inner. `W_eL` is `KL x F`.
    pub encoder: Vec<Matrix>,
    /// `[W_d1, ..., W_dL]`: inner to outer. `W_dL` is `F x KL`.
    pub decoder: Vec<Matrix>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input to each of the `2L` dense layers, starting with `X`.
    pub inputs: Vec<Matrix>,
    /// Pre-activation of each dense layer.
    pub pre_activations: Vec<Matrix>,
    pub output: Matrix,
}

impl ForwardTrace {
    /// The latent representation `H`.
    pub fn latent(&self) -> &Matrix {
        &self.inputs[self.inputs.len() / 2]
    }
}

/// Glorot-uniform initialisation with negative draws rectified to zero.
pub fn init_model(config: NaeConfig) -> Result<NaeModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dims = config.encoder_dims();
    let mut glorot = |rows: usize, cols: usize| -> Matrix {
        let bound = libm::sqrt(6.0 / (rows + cols) as f64);
        let dist = Uniform::new(-bound, bound).expect("positive Glorot bound");
        Matrix::from_fn(rows, cols, |_, _| dist.sample(&mut rng).max(0.0))
    };
    let encoder: Vec<Matrix> = dims.windows(2).map(|w| glorot(w[1], w[0])).collect();
    let decoder: Vec<Matrix> = dims.windows(2).rev().map(|w| glorot(w[0], w[1])).collect();
    Ok(NaeModel { config, encoder, decoder })
}

impl NaeModel {
    pub fn depth(&self) -> usize {
        self.config.depth()
    }

    /// `W_el`, with `l` counted from 1 (innermost) to `L` (outermost).
    pub fn encoder_layer(&self, l: usize) -> &Matrix {
        &self.encoder[self.depth() - l]
    }

    /// `W_dl`, with `l` counted from 1 (innermost) to `L` (outermost).
    pub fn decoder_layer(&self, l: usize) -> &Matrix {
        &self.decoder[l - 1]
    }

    pub fn decoder_layer_mut(&mut self, l: usize) -> &mut Matrix {
        &mut self.decoder[l - 1]
    }

    /// Every dense layer in evaluation order with its nonlinearity.
    pub fn layers(&self) -> impl Iterator<Item = (&Matrix, Activation)> {
        let last = 2 * self.depth() - 1;
        let inner = self.config.inner_activation;
        let output = self.config.output_activation;
        self.encoder
            .iter()
            .chain(&self.decoder)
            .enumerate()
            .map(move |(i, w)| (w, if i == last { output } else { inner }))
    }

    pub fn weights(&self) -> impl Iterator<Item = &Matrix> {
        self.encoder.iter().chain(&self.decoder)
    }

    pub fn weights_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.encoder.iter_mut().chain(self.decoder.iter_mut())
    }

    /// Checks the configuration, the shape chain, and weight
    /// non-negativity.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let l = self.depth();
        if self.encoder.len() != l || self.decoder.len() != l {
            bail!(Shape, "expected {l} encoder and decoder matrices");
        }
        let dims = self.config.encoder_dims();
        for (i, w) in self.encoder.iter().enumerate() {
            if w.shape() != (dims[i + 1], dims[i]) {
                bail!(Shape, "encoder matrix {i} is {:?}, expected {:?}", w.shape(), (dims[i + 1], dims[i]));
            }
        }
        for (i, w) in self.decoder.iter().enumerate() {
            let expected = (dims[l - i - 1], dims[l - i]);
            if w.shape() != expected {
                bail!(Shape, "decoder matrix {i} is {:?}, expected {expected:?}", w.shape());
            }
        }
        if !self.weights().all(Matrix::is_nonnegative) {
            bail!(Input, "model has negative or NaN weights");
        }
        Ok(())
    }

    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        check_input(x, self.config.input_dim, "spectrogram")?;
        let mut a = x.clone();
        for w in &self.encoder {
            a = dense(w, &a, self.config.inner_activation)?;
        }
        Ok(a)
    }

    pub fn decode(&self, h: &Matrix) -> Result<Matrix> {
        check_input(h, self.config.layer_sizes[0], "latent")?;
        let mut a = h.clone();
        let last = self.decoder.len() - 1;
        for (i, w) in self.decoder.iter().enumerate() {
            let g = if i == last { self.config.output_activation } else { self.config.inner_activation };
            a = dense(w, &a, g)?;
        }
        Ok(a)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.decode(&self.encode(x)?)
    }

    pub fn forward_trace(&self, x: &Matrix) -> Result<ForwardTrace> {
        check_input(x, self.config.input_dim, "spectrogram")?;
        let mut inputs = Vec::with_capacity(2 * self.depth());
        let mut pre_activations = Vec::with_capacity(2 * self.depth());
        let mut a = x.clone();
        for (w, g) in self.layers() {
            let z = w.matmul(&a)?;
            let next = z.map(|v| g.apply(v));
            inputs.push(a);
            pre_activations.push(z);
            a = next;
        }
        Ok(ForwardTrace { inputs, pre_activations, output: a })
    }

    pub fn content_hash(&self) -> ModelHash {
        let mut h = Sha256::new();
        h.update(b"nae-model-v1");
        h.update((self.config.input_dim as u64).to_le_bytes());
        h.update((self.depth() as u64).to_le_bytes());
        for &k in &self.config.layer_sizes {
            h.update((k as u64).to_le_bytes());
        }
        h.update(self.config.inner_activation.name().as_bytes());
        h.update([0]);
        h.update(self.config.output_activation.name().as_bytes());
        h.update([0]);
        h.update(self.config.seed.to_le_bytes());
        for w in self.weights() {
            h.update((w.rows() as u64).to_le_bytes());
            h.update((w.cols() as u64).to_le_bytes());
            for v in w.as_slice() {
                h.update(v.to_le_bytes());
            }
        }
        ModelHash(h.finalize().into())
    }
}

fn check_input(x: &Matrix, rows: usize, what: &str) -> Result<()> {
    if x.rows() != rows {
        bail!(Shape, "{what} has {} rows, model expects {rows}", x.rows());
    }
    if x.as_slice().iter().any(|v| v.is_nan()) {
        bail!(Input, "{what} contains NaN");
    }
    if !x.is_nonnegative() {
        bail!(Input, "{what} has negative entries");
    }
    Ok(())
}

fn dense(w: &Matrix, a: &Matrix, g: Activation) -> Result<Matrix> {
    let mut z = w.matmul(a)?;
    z.map_inplace(|v| g.apply(v));
    Ok(z)
}
