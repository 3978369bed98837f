//! Sound deconstruction with shallow and deep non-negative autoencoders.
//!
//! A magnitude spectrogram is factorised by an autoencoder whose weights and
//! activations are all non-negative, which makes the decoder readable as
//! spectra (outer weights), mixing factors (inner weights) and temporal
//! envelopes (activations). The crate covers analysis, training,
//! inspection, Wiener-mask resynthesis and weight manipulation. It is
//! `no_std` and only needs an allocator; file formats and the command-line
//! front-end live in a companion crate.

#![no_std]

extern crate alloc;

pub mod activation;
pub mod deconstruction;
mod error;
pub mod fft;
pub mod loss;
pub mod manipulation;
pub mod matrix;
pub mod model;
pub mod resynthesis;
pub mod stft;
pub mod toy;
pub mod train;

pub use activation::Activation;
pub use deconstruction::{extract, hierarchical_select, ComponentSet, LayerView};
pub use error::{Error, Result};
pub use loss::{gkl_loss, loss_with_sparsity, LossBreakdown};
pub use manipulation::{apply_op, apply_script, ManipulationOp, ManipulationScript, WeightDistribution};
pub use matrix::Matrix;
pub use model::{init_model, ModelHash, NaeConfig, NaeModel};
pub use resynthesis::{render, render_component, RenderMode, RenderSpec, RenderedComponent};
pub use stft::{analyze, synthesize, Spectrogram, StftParams, WindowKind};
pub use train::{train, TrainConfig, TrainOutcome, TrainReport};
