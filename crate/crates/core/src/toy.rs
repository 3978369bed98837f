//! Procedural three-source test mixture: a higher harmonic tone playing
//! three notes, a lower harmonic tone playing two notes, and three gated
//! white-noise bursts.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyMixture {
    pub sample_rate: u32,
    pub mixture: Vec<f64>,
    /// High tone, low tone, noise bursts; they sum to `mixture`.
    pub sources: [Vec<f64>; 3],
}

pub const HIGH_PITCH_HZ: f64 = 415.3;
pub const LOW_PITCH_HZ: f64 = 293.66;
pub const DURATION_SECS: f64 = 6.0;

const HIGH_NOTES: [(f64, f64); 3] = [(0.25, 1.35), (2.05, 3.15), (3.85, 4.95)];
const LOW_NOTES: [(f64, f64); 2] = [(0.7, 2.6), (3.3, 5.6)];
const BURSTS: [(f64, f64); 3] = [(1.2, 1.7), (2.85, 3.35), (5.0, 5.5)];

pub fn toy_mixture(sample_rate: u32, seed: u64) -> ToyMixture {
    let len = (DURATION_SECS * sample_rate as f64) as usize;
    let sr = sample_rate as f64;
    let high = tone(len, sr, HIGH_PITCH_HZ, &HIGH_NOTES, 0.44);
    let low = tone(len, sr, LOW_PITCH_HZ, &LOW_NOTES, 0.5);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let white = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let mut noise = vec![0.0; len];
    for &(on, off) in &BURSTS {
        let (a, b) = ((on * sr) as usize, ((off * sr) as usize).min(len));
        let ramp = (0.002 * sr) as usize;
        for i in a..b {
            let gate = ((i - a).min(b - 1 - i) as f64 / ramp as f64).min(1.0);
            noise[i] = 0.24 * gate * white.sample(&mut rng);
        }
    }

    let mixture = (0..len).map(|i| high[i] + low[i] + noise[i]).collect();
    ToyMixture { sample_rate, mixture, sources: [high, low, noise] }
}

/// Harmonic tone with `1/h` partial amplitudes and an attack-decay-release
/// envelope on each note.
fn tone(len: usize, sr: f64, f0: f64, notes: &[(f64, f64)], amp: f64) -> Vec<f64> {
    let harmonics: Vec<(f64, f64)> = (1..=8)
        .map(|h| h as f64)
        .filter(|h| h * f0 < 0.45 * sr)
        .map(|h| (h * f0, 1.0 / h))
        .collect();
    let mut out = vec![0.0; len];
    for &(on, off) in notes {
        let (a, b) = ((on * sr) as usize, ((off * sr) as usize).min(len));
        for (i, slot) in out.iter_mut().enumerate().take(b).skip(a) {
            let t = (i - a) as f64 / sr;
            let remaining = (b - i) as f64 / sr;
            let attack = (t / 0.03).min(1.0);
            let decay = 0.75 + 0.25 * libm::exp(-t / 0.15);
            let release = (remaining / 0.06).min(1.0);
            let env = amp * attack * decay * release;
            let time = i as f64 / sr;
            let sample: f64 = harmonics.iter().map(|&(f, g)| g * libm::sin(2.0 * PI * f * time)).sum();
            *slot = env * sample;
        }
    }
    out
}
