//! Full-batch projected gradient descent with RMSprop.
//!
//! Every step computes exact gradients of the (sparse) GKL loss, applies an
//! RMSprop update to every weight matrix and then clamps negative weights
//! back to zero.

use alloc::vec::Vec;

use crate::error::{bail, Error, Result};
use crate::activation::Activation;
use crate::loss::{sparsity_penalty, LossBreakdown, DEFAULT_LOSS_EPSILON};
use crate::matrix::Matrix;
use crate::model::NaeModel;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    pub sparsity_lambda: f64,
    pub log_every: usize,
    pub loss_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            learning_rate: 1e-3,
            rmsprop_decay: 0.9,
            rmsprop_epsilon: 1e-8,
            sparsity_lambda: 0.0,
            log_every: 10,
            loss_epsilon: DEFAULT_LOSS_EPSILON,
        }
    }
}

impl TrainConfig {
    /// Defaults for a network with `depth` decoder layers: three or more
    /// layers get a small sparsity penalty to keep outer spectra diverse.
    pub fn for_depth(depth: usize) -> Self {
        Self { sparsity_lambda: if depth >= 3 { 1e-4 } else { 0.0 }, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            bail!(Config, "iterations must be at least 1");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            bail!(Config, "learning rate must be positive");
        }
        if !(self.rmsprop_decay > 0.0 && self.rmsprop_decay < 1.0) {
            bail!(Config, "RMSprop decay must lie in (0, 1)");
        }
        if !(self.rmsprop_epsilon > 0.0) {
            bail!(Config, "RMSprop epsilon must be positive");
        }
        if !(self.sparsity_lambda >= 0.0) || !self.sparsity_lambda.is_finite() {
            bail!(Config, "sparsity lambda must be non-negative");
        }
        if self.log_every == 0 {
            bail!(Config, "log_every must be at least 1");
        }
        if !(self.loss_epsilon > 0.0) {
            bail!(Config, "loss epsilon must be positive");
        }
        Ok(())
    }
}

/// Per-matrix gradients, laid out like the model's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoder: Vec<Matrix>,
    pub decoder: Vec<Matrix>,
    /// Loss at the point where the gradients were taken.
    pub loss: LossBreakdown,
}

impl Gradients {
    pub fn iter(&self) -> impl Iterator<Item = &Matrix> {
        self.encoder.iter().chain(&self.decoder)
    }
}

/// Exact gradients of `gkl(X, forward(X)) + λ(‖W_eL‖₁ + ‖W_dL‖₁)` with
/// respect to every weight matrix.
pub fn gradients(model: &NaeModel, x: &Matrix, lambda: f64, eps: f64) -> Result<Gradients> {
    GklTarget::new(x, eps).gradients(model, lambda)
}

/// Training input with its `X·log X` term cached, since it does not change
/// between iterations.
pub(crate) struct GklTarget<'a> {
    x: &'a Matrix,
    x_log_x: Vec<f64>,
    eps: f64,
}

impl<'a> GklTarget<'a> {
    pub(crate) fn new(x: &'a Matrix, eps: f64) -> Self {
        let x_log_x = x
            .as_slice()
            .iter()
            .map(|&v| if v == 0.0 { 0.0 } else { v * libm::log(v.max(eps)) })
            .collect();
        Self { x, x_log_x, eps }
    }

    pub(crate) fn gradients(&self, model: &NaeModel, lambda: f64) -> Result<Gradients> {
        let x = self.x;
        let eps = self.eps;
        if x.rows() != model.config.input_dim {
            bail!(Shape, "spectrogram has {} bins, model expects {}", x.rows(), model.config.input_dim);
        }
        let layers: Vec<_> = model.layers().collect();
        let last = layers.len() - 1;

        // Forward pass; the output layer is handled below together with the
        // loss so that its nonlinearity is evaluated once per entry.
        let mut inputs: Vec<Matrix> = Vec::with_capacity(layers.len());
        let mut pre: Vec<Matrix> = Vec::with_capacity(last);
        let mut a = x.clone();
        for &(w, g) in &layers[..last] {
            let z = w.matmul(&a)?;
            let next = z.map(|v| g.apply(v));
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        let (w_out, g_out) = layers[last];
        let z_out = w_out.matmul(&a)?;
        inputs.push(a);

        let n = x.as_slice().len() as f64;
        let mut data = 0.0;
        // Becomes dL/dZ of the output layer.
        let mut dz = z_out;
        for ((z, &xv), &xlx) in dz.as_mut_slice().iter_mut().zip(x.as_slice()).zip(&self.x_log_x) {
            let (y, dy) = match g_out {
                // Same branches as `activation::softplus`, sharing one exp.
                Activation::Softplus if *z <= 30.0 => {
                    let e = libm::exp(*z);
                    (libm::log1p(e), e / (1.0 + e))
                }
                Activation::Softplus => (*z, 1.0),
                g => (g.apply(*z), g.derivative(*z)),
            };
            let log_term = if xv == 0.0 { 0.0 } else { xlx - xv * libm::log(y.max(eps)) };
            data += log_term - xv + y;
            let d_loss = if xv == 0.0 || y <= eps { 1.0 } else { 1.0 - xv / y };
            *z = d_loss * dy / n;
        }
        data /= n;
        if !data.is_finite() {
            bail!(Numeric, "data loss is not finite");
        }

        let mut grads: Vec<Matrix> = Vec::with_capacity(layers.len());
        for i in (0..layers.len()).rev() {
            let (w, g) = layers[i];
            if i < last {
                dz = dz.zip_map(&pre[i], |d, zv| d * g.derivative(zv))?;
            }
            let mut dw = dz.matmul_t(&inputs[i])?;
            if lambda != 0.0 && (i == 0 || i == last) {
                dw = dw.zip_map(w, |d, wv| d + lambda * sign(wv))?;
            }
            if !dw.is_finite() {
                bail!(Numeric, "non-finite gradient in layer {i}");
            }
            grads.push(dw);
            if i > 0 {
                dz = w.t_matmul(&dz)?;
            }
        }
        grads.reverse();
        let decoder = grads.split_off(model.depth());
        let penalty = sparsity_penalty(model, lambda);
        Ok(Gradients {
            encoder: grads,
            decoder,
            loss: LossBreakdown { total: data + penalty, data, penalty },
        })
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One element-wise RMSprop update:
/// `v ← ρv + (1−ρ)g²`, `w ← w − lr·g/(√v + ε)`.
pub fn rmsprop_step(weights: &mut Matrix, accum: &mut Matrix, grad: &Matrix, lr: f64, decay: f64, eps: f64) {
    assert_eq!(weights.shape(), grad.shape());
    assert_eq!(accum.shape(), grad.shape());
    for ((w, v), &g) in weights.as_mut_slice().iter_mut().zip(accum.as_mut_slice()).zip(grad.as_slice()) {
        *v = decay * *v + (1.0 - decay) * g * g;
        *w -= lr * g / (libm::sqrt(*v) + eps);
    }
}

/// RMSprop state for a whole model: one squared-gradient accumulator per
/// weight matrix, starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    accumulators: Vec<Matrix>,
}

impl RmsProp {
    pub fn new(model: &NaeModel, learning_rate: f64, decay: f64, epsilon: f64) -> Self {
        let accumulators = model.weights().map(|w| Matrix::zeros(w.rows(), w.cols())).collect();
        Self { learning_rate, decay, epsilon, accumulators }
    }

    pub fn accumulators(&self) -> &[Matrix] {
        &self.accumulators
    }

    pub fn step(&mut self, model: &mut NaeModel, grads: &Gradients) {
        for ((w, v), g) in model.weights_mut().zip(&mut self.accumulators).zip(grads.iter()) {
            rmsprop_step(w, v, g, self.learning_rate, self.decay, self.epsilon);
        }
    }
}

/// Central finite differences of the total loss with respect to every
/// weight, in [`NaeModel::weights`] order. Slow; meant for checking
/// [`gradients`].
pub fn numeric_gradients(model: &NaeModel, x: &Matrix, lambda: f64, eps: f64, step: f64) -> Result<Vec<Matrix>> {
    let mut probe = model.clone();
    let shapes: Vec<(usize, usize)> = model.weights().map(Matrix::shape).collect();
    let mut out = Vec::with_capacity(shapes.len());
    for (m, &(rows, cols)) in shapes.iter().enumerate() {
        let mut g = Matrix::zeros(rows, cols);
        for i in 0..rows * cols {
            let orig = weight_entry(&mut probe, m, i, None);
            weight_entry(&mut probe, m, i, Some(orig + step));
            let up = crate::loss::loss_with_sparsity(&probe, x, lambda, eps)?.total;
            weight_entry(&mut probe, m, i, Some(orig - step));
            let down = crate::loss::loss_with_sparsity(&probe, x, lambda, eps)?.total;
            weight_entry(&mut probe, m, i, Some(orig));
            g.as_mut_slice()[i] = (up - down) / (2.0 * step);
        }
        out.push(g);
    }
    Ok(out)
}

fn weight_entry(model: &mut NaeModel, m: usize, i: usize, set: Option<f64>) -> f64 {
    let w = model.weights_mut().nth(m).expect("matrix index");
    let slot = &mut w.as_mut_slice()[i];
    if let Some(v) = set {
        *slot = v;
    }
    *slot
}

/// Sets every negative weight of every encoder and decoder matrix to zero.
pub fn project_nonnegative(model: &mut NaeModel) {
    for w in model.weights_mut() {
        w.map_inplace(|v| if v < 0.0 { 0.0 } else { v });
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossRecord {
    pub iteration: usize,
    pub data_loss: f64,
    pub sparsity_penalty: f64,
}

impl LossRecord {
    pub fn total(&self) -> f64 {
        self.data_loss + self.sparsity_penalty
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Loss before the update at every `log_every`-th iteration, plus a
    /// final entry (iteration = number of completed updates) for the
    /// trained model.
    pub loss_history: Vec<LossRecord>,
    pub initial: LossRecord,
    pub last: LossRecord,
    /// Total loss of the returned model.
    pub final_loss: f64,
    pub completed_iterations: usize,
    /// Filled in by callers that have a clock.
    pub wall_time_secs: Option<f64>,
    /// Matrix products run on the calling thread only.
    pub threads: usize,
    /// Set when training stopped early on a numeric failure; the returned
    /// model is then the last one with finite weights.
    pub aborted: Option<Error>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Progress {
    pub iteration: usize,
    pub iterations: usize,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: NaeModel,
    pub report: TrainReport,
}

pub fn train(model: NaeModel, x: &Matrix, config: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(model, x, config, |_| {})
}

/// Runs `config.iterations` steps of gradient → RMSprop → projection.
/// `progress` is called on this thread after every step.
pub fn train_with_progress(
    mut model: NaeModel,
    x: &Matrix,
    config: &TrainConfig,
    mut progress: impl FnMut(&Progress),
) -> Result<TrainOutcome> {
    config.validate()?;
    model.validate()?;
    if x.rows() != model.config.input_dim {
        bail!(Shape, "spectrogram has {} bins, model expects {}", x.rows(), model.config.input_dim);
    }
    if x.as_slice().iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        bail!(Input, "training input must be finite and non-negative");
    }

    let lambda = config.sparsity_lambda;
    let eps = config.loss_epsilon;
    let target = GklTarget::new(x, eps);
    let mut opt = RmsProp::new(&model, config.learning_rate, config.rmsprop_decay, config.rmsprop_epsilon);
    let mut history = Vec::with_capacity(config.iterations / config.log_every + 2);
    let mut initial = None;
    let mut aborted = None;
    let mut completed = 0;

    let record = |iteration: usize, loss: &LossBreakdown| LossRecord {
        iteration,
        data_loss: loss.data,
        sparsity_penalty: loss.penalty,
    };

    for it in 0..config.iterations {
        let grads = match target.gradients(&model, lambda) {
            Ok(g) => g,
            Err(e) => {
                aborted = Some(e);
                break;
            }
        };
        let rec = record(it, &grads.loss);
        initial.get_or_insert(rec);
        if it % config.log_every == 0 {
            history.push(rec);
        }

        let previous = model.clone();
        opt.step(&mut model, &grads);
        project_nonnegative(&mut model);
        if !model.weights().all(Matrix::is_finite) {
            model = previous;
            aborted = Some(Error::Numeric(alloc::format!("weights diverged at iteration {it}")));
            break;
        }
        debug_assert!(model.weights().all(Matrix::is_nonnegative));
        completed += 1;
        progress(&Progress { iteration: it + 1, iterations: config.iterations, loss: grads.loss });
    }

    let last_loss = crate::loss::loss_with_sparsity(&model, x, lambda, eps);
    let last = match last_loss {
        Ok(l) => record(completed, &l),
        Err(e) => {
            aborted.get_or_insert(e);
            history.last().copied().unwrap_or(LossRecord {
                iteration: completed,
                data_loss: f64::NAN,
                sparsity_penalty: f64::NAN,
            })
        }
    };
    history.push(last);
    let initial = initial.unwrap_or(last);

    Ok(TrainOutcome {
        model,
        report: TrainReport {
            loss_history: history,
            initial,
            last,
            final_loss: last.total(),
            completed_iterations: completed,
            wall_time_secs: None,
            threads: 1,
            aborted,
        },
    })
}
