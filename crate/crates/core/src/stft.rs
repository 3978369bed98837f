//! Magnitude/phase short-time Fourier analysis and weighted overlap-add
//! resynthesis.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{bail, Result};
use crate::fft::Fft;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum WindowKind {
    /// Periodic Hann window.
    #[default]
    Hann,
}

impl WindowKind {
    pub fn samples(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..len)
                .map(|n| 0.5 - 0.5 * libm::cos(2.0 * PI * n as f64 / len as f64))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StftParams {
    pub window_size: usize,
    pub hop_size: usize,
    pub window_kind: WindowKind,
    pub sample_rate: u32,
}

impl Default for StftParams {
    fn default() -> Self {
        Self { window_size: 2048, hop_size: 512, window_kind: WindowKind::Hann, sample_rate: 44_100 }
    }
}

impl StftParams {
    pub fn new(window_size: usize, hop_size: usize, sample_rate: u32) -> Result<Self> {
        let params = Self { window_size, hop_size, window_kind: WindowKind::Hann, sample_rate };
        params.validate()?;
        Ok(params)
    }

    /// Windows must be powers of two of at least 64 samples, and the hop
    /// must divide the window with at least 2x overlap so the squared Hann
    /// window never sums to zero inside the signal.
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 64 || !self.window_size.is_power_of_two() {
            bail!(Config, "window size {} must be a power of two >= 64", self.window_size);
        }
        if self.hop_size == 0 || self.window_size % self.hop_size != 0 {
            bail!(Config, "hop {} must divide window size {}", self.hop_size, self.window_size);
        }
        if self.hop_size * 2 > self.window_size {
            bail!(Config, "hop {} must be at most half the window size {}", self.hop_size, self.window_size);
        }
        if self.sample_rate == 0 {
            bail!(Config, "sample rate must be positive");
        }
        Ok(())
    }

    /// Number of frequency bins `F`.
    pub fn bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    /// Number of frames `T` for a signal of `len` samples. The last frame
    /// is zero-padded when the hop grid does not end exactly on the signal.
    pub fn frames(&self, len: usize) -> usize {
        if len <= self.window_size {
            1
        } else {
            (len - self.window_size).div_ceil(self.hop_size) + 1
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// `F x T`, all entries non-negative.
    pub magnitudes: Matrix,
    /// `F x T`, radians in `(-π, π]`.
    pub phases: Matrix,
    pub params: StftParams,
    /// Length of the analysed signal; resynthesis trims to it.
    pub signal_len: usize,
}

impl Spectrogram {
    pub fn bins(&self) -> usize {
        self.magnitudes.rows()
    }

    pub fn frames(&self) -> usize {
        self.magnitudes.cols()
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.magnitudes.shape() != self.phases.shape() {
            bail!(
                Input,
                "magnitudes are {:?} but phases are {:?}",
                self.magnitudes.shape(),
                self.phases.shape()
            );
        }
        if self.magnitudes.rows() != self.params.bins() {
            bail!(Input, "{} rows do not match {} bins", self.magnitudes.rows(), self.params.bins());
        }
        Ok(())
    }

    /// `magnitude · e^{j·phase}` at bin `f`, frame `t`.
    pub fn complex_at(&self, f: usize, t: usize) -> Complex64 {
        Complex64::from_polar(self.magnitudes[(f, t)], self.phases[(f, t)])
    }
}

pub fn analyze(audio: &[f64], params: &StftParams) -> Result<Spectrogram> {
    params.validate()?;
    if audio.is_empty() {
        bail!(Input, "cannot analyse empty audio");
    }
    let n = params.window_size;
    let bins = params.bins();
    let frames = params.frames(audio.len());
    let window = params.window_kind.samples(n);
    let fft = Fft::new(n);

    let mut magnitudes = Matrix::zeros(bins, frames);
    let mut phases = Matrix::zeros(bins, frames);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..frames {
        let start = t * params.hop_size;
        for (i, slot) in buf.iter_mut().enumerate() {
            let x = audio.get(start + i).copied().unwrap_or(0.0);
            *slot = Complex64::new(x * window[i], 0.0);
        }
        fft.forward(&mut buf);
        for f in 0..bins {
            let z = buf[f];
            magnitudes[(f, t)] = z.norm();
            let mut phase = libm::atan2(z.im, z.re);
            if phase <= -PI {
                phase = PI;
            }
            phases[(f, t)] = phase;
        }
    }
    Ok(Spectrogram { magnitudes, phases, params: *params, signal_len: audio.len() })
}

pub fn synthesize(spec: &Spectrogram) -> Result<Vec<f64>> {
    spec.validate()?;
    let bins = spec.bins();
    let frames = spec.frames();
    istft(spec.params, frames, spec.signal_len, |f, t| {
        debug_assert!(f < bins);
        spec.complex_at(f, t)
    })
}

/// Inverse STFT of an arbitrary complex `F x T` field given as a lookup.
/// Output is trimmed (or zero-padded) to `out_len` samples.
pub fn istft(
    params: StftParams,
    frames: usize,
    out_len: usize,
    mut bin: impl FnMut(usize, usize) -> Complex64,
) -> Result<Vec<f64>> {
    params.validate()?;
    let n = params.window_size;
    let hop = params.hop_size;
    let bins = params.bins();
    let window = params.window_kind.samples(n);
    let fft = Fft::new(n);

    let total = (frames.saturating_sub(1)) * hop + n;
    let mut out = vec![0.0; total];
    let mut weight = vec![0.0; total];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for t in 0..frames {
        for f in 0..bins {
            buf[f] = bin(f, t);
        }
        // DC and Nyquist of a real signal are real.
        buf[0].im = 0.0;
        buf[n / 2].im = 0.0;
        for f in 1..n / 2 {
            buf[n - f] = buf[f].conj();
        }
        fft.inverse(&mut buf);
        let start = t * hop;
        for i in 0..n {
            out[start + i] += buf[i].re * window[i];
            weight[start + i] += window[i] * window[i];
        }
    }

    // Steady-state overlap of the squared window; samples whose overlap
    // falls far below it (the first and last few) are not divided by a
    // vanishing weight.
    let steady: f64 = window.iter().map(|w| w * w).sum::<f64>() / hop as f64;
    let floor = 1e-3 * steady;
    for (v, &w) in out.iter_mut().zip(&weight) {
        *v /= w.max(floor);
    }
    out.resize(out_len, 0.0);
    Ok(out)
}
