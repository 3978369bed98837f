//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any fail.

use std::path::Path;
use std::time::Instant;

use nae_core::deconstruction::{activation_density, extract, hierarchical_select};
use nae_core::manipulation::{
    apply_script, invert_permutation, permute_columns, randomize_multiplicative, randomize_replace, sample_permutation,
};
use nae_core::resynthesis::{bounded_mask, component_spectrogram, conservative_masks, render, render_component};
use nae_core::stft::synthesize;
use nae_core::toy::toy_mixture;
use nae_core::train::{gradients, numeric_gradients};
use nae_core::{
    analyze, init_model, ComponentSet, ManipulationOp, ManipulationScript, Matrix, NaeConfig, NaeModel, RenderSpec,
    StftParams, WeightDistribution,
};
use nae_studio::bundle::{decompose_samples, Bundle, DecomposeOptions, DecomposeSummary, MODEL, SCRIPT};
use nae_studio::view::read_json;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SAMPLE_RATE: u32 = 16000;

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn check(name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { name, pass, detail }
}

fn toy_options() -> DecomposeOptions {
    DecomposeOptions {
        layer_sizes: vec![3, 9],
        iterations: 3000,
        learning_rate: 1e-3,
        sparsity_lambda: None,
        seed: 0,
        window_size: 1024,
        hop_size: 256,
        log_every: 10,
    }
}

fn decompose_toy(out: &Path) -> (DecomposeSummary, f64) {
    let toy = toy_mixture(SAMPLE_RATE, 0);
    let stft = StftParams::new(1024, 256, SAMPLE_RATE).unwrap();
    let started = Instant::now();
    let summary = decompose_samples(&toy.mixture, stft, None, out, &toy_options(), |_| {}).unwrap();
    (summary, started.elapsed().as_secs_f64())
}

fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn gradient_correctness() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (mut worst, mut checked) = (0.0f64, 0usize);
    let instances = 60;
    for i in 0..instances {
        let f = rng.random_range(4..=16);
        let t = rng.random_range(3..=12);
        let depth = rng.random_range(1..=3usize).min((f - 1) / 2);
        let mut sizes = vec![rng.random_range(1..=2)];
        while sizes.len() < depth {
            let next = sizes.last().unwrap() + 1;
            sizes.push(next);
        }
        let lambda = if i % 2 == 0 { 0.0 } else { 1e-3 };
        let mut model = init_model(NaeConfig::new(f, sizes, i as u64)).unwrap();
        for w in model.weights_mut() {
            w.map_inplace(|_| rng.random_range(0.05..=1.0));
        }
        let x = Matrix::from_fn(f, t, |_, _| rng.random_range(0.05..=2.0));
        let analytic = gradients(&model, &x, lambda, 1e-8).unwrap();
        let numeric = numeric_gradients(&model, &x, lambda, 1e-8, 1e-5).unwrap();
        for (a, n) in analytic.iter().zip(&numeric) {
            for (&a, &n) in a.as_slice().iter().zip(n.as_slice()) {
                if a.abs() > 1e-8 {
                    worst = worst.max((a - n).abs() / a.abs().max(n.abs()));
                    checked += 1;
                }
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    check(
        "gradient correctness",
        worst < 1e-4 && secs < 60.0,
        format!("{instances} instances, {checked} entries, worst relative error {worst:.2e}, {secs:.1} s"),
    )
}

fn non_negativity(model: &NaeModel) -> Outcome {
    let (total, negative) = model
        .weights()
        .flat_map(|w| w.as_slice())
        .fold((0usize, 0usize), |(t, n), &v| (t + 1, n + usize::from(!(v >= 0.0))));
    check("non-negativity", negative == 0, format!("{negative} of {total} weight entries below zero"))
}

fn toy_recovery(summary: &DecomposeSummary, set: &ComponentSet, secs: f64) -> Outcome {
    let toy = toy_mixture(SAMPLE_RATE, 0);
    let stft = StftParams::new(1024, 256, SAMPLE_RATE).unwrap();
    let truths: Vec<Vec<f64>> = toy
        .sources
        .iter()
        .map(|s| {
            let spec = analyze(s, &stft).unwrap();
            (0..spec.frames()).map(|t| (0..spec.bins()).map(|f| spec.magnitudes[(f, t)]).sum()).collect()
        })
        .collect();
    let latent = &set.latent;
    let orders = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let best = orders
        .iter()
        .map(|o| (0..3).map(|k| cosine(latent.row(k), &truths[o[k]])).sum::<f64>() / 3.0)
        .fold(f64::NEG_INFINITY, f64::max);
    let r = &summary.report;
    let ratio = r.last.data_loss / r.initial.data_loss;
    check(
        "toy-mixture recovery",
        best >= 0.85 && ratio <= 0.1 && secs < 300.0,
        format!("mean envelope cosine {best:.4}, loss ratio {ratio:.4}, {secs:.1} s"),
    )
}

fn conservativity(bundle: &Bundle, set: &ComponentSet) -> Outcome {
    let spec = &bundle.spectrogram;
    let mut sum = vec![0.0; spec.signal_len];
    for k in 0..set.outer().units() {
        let audio = render_component(set, spec, &RenderSpec::original(k, set.depth())).unwrap().audio;
        sum.iter_mut().zip(&audio).for_each(|(s, a)| *s += a);
    }
    let ones = Matrix::from_fn(spec.bins(), spec.frames(), |_, _| 1.0);
    let whole = render(spec, &ones).unwrap().audio;
    let err = relative_l2(&sum, &whole);
    check("conservativity", err < 1e-6, format!("relative L2 {err:.2e}"))
}

fn decoder_additivity(set: &ComponentSet) -> Outcome {
    let full = set.outer_pre_activation();
    let mut sum = Matrix::zeros(full.rows(), full.cols());
    for u in 0..set.latent.rows() {
        sum = sum.add(&hierarchical_select(set, u).unwrap().outer_pre_activation()).unwrap();
    }
    let err = sum.max_abs_diff(&full);
    check("decoder additivity", err < 1e-9, format!("max abs deviation {err:.2e}"))
}

fn mask_properties(set: &ComponentSet) -> Outcome {
    let masks = conservative_masks(set).unwrap();
    let in_range = masks.iter().all(|m| m.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    let mut total = Matrix::zeros(set.bins(), set.frames());
    for m in &masks {
        total = total.add(m).unwrap();
    }
    let partition = total.as_slice().iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);

    let mut silent_bins = 0usize;
    let mut exact = true;
    for m in 1..=set.depth() {
        let km = set.layer(m).unwrap().units();
        let k = km.min(set.outer().units());
        let mut den = Matrix::zeros(set.bins(), set.frames());
        for c in 0..k {
            den = den.add(&component_spectrogram(set, c, c, m).unwrap()).unwrap();
        }
        for gamma in [1e-9, 1e-2, 1.0, 1e6] {
            for (i, j) in [(0, 0), (1, k - 1), (k - 1, 0)] {
                let mask = bounded_mask(set, i, j, m, gamma).unwrap();
                for (d, v) in den.as_slice().iter().zip(mask.as_slice()) {
                    if *d == 0.0 {
                        silent_bins += 1;
                        exact &= *v == 1.0 / km as f64;
                    }
                }
            }
        }
    }
    check(
        "mask properties",
        in_range && partition < 1e-9 && exact && silent_bins > 0,
        format!(
            "masks in [0,1]: {in_range}, partition error {partition:.2e}, \
             {silent_bins} all-zero bins exactly 1/Km: {exact}"
        ),
    )
}

fn manipulation_contracts(model: &NaeModel, x: &Matrix) -> Outcome {
    let hash = model.content_hash();
    let mut identity = true;
    let mut zero_patterns = true;
    for l in 1..=model.depth() {
        let n = model.decoder_layer(l).cols();
        let id: Vec<usize> = (0..n).collect();
        identity &= permute_columns(model, l, &id).unwrap().content_hash() == hash;
        identity &= randomize_multiplicative(model, l, &[], 0.0, 7).unwrap().content_hash() == hash;
        for seed in 0..5 {
            let p = sample_permutation(n, seed, false).unwrap();
            let there = permute_columns(model, l, &p).unwrap();
            identity &= permute_columns(&there, l, &invert_permutation(&p)).unwrap().content_hash() == hash;
            let jittered = randomize_multiplicative(model, l, &[], 0.9, seed).unwrap();
            zero_patterns &= jittered
                .decoder_layer(l)
                .as_slice()
                .iter()
                .zip(model.decoder_layer(l).as_slice())
                .all(|(a, b)| (*a == 0.0) == (*b == 0.0));
        }
    }
    identity &= apply_script(model, &ManipulationScript::new(model)).unwrap().content_hash() == hash;

    let density = |m: &NaeModel| activation_density(&extract(m, x).unwrap());
    let base = density(model);
    let replaced = randomize_replace(model, 1, &[], WeightDistribution::Uniform { low: 0.0, high: 1.0 }, 3).unwrap();
    let raised = density(&replaced) / base;
    let drift = |layer: usize, seed: u64| {
        let jittered = randomize_multiplicative(model, layer, &[], 0.3, seed).unwrap();
        (density(&jittered) / base - 1.0).abs()
    };
    let seeds = 20;
    let inner: Vec<f64> = (0..seeds).map(|s| drift(1, s)).collect();
    let worst = inner.iter().cloned().fold(0.0, f64::max);
    let within = inner.iter().filter(|&&d| d < 0.05).count();
    let outer = (0..seeds).map(|s| drift(model.depth(), s)).fold(0.0, f64::max);
    check(
        "manipulation contracts",
        identity && zero_patterns && raised >= 1.5 && worst < 0.05,
        format!(
            "bit identities: {identity}, zero patterns kept: {zero_patterns}, density {base:.4}, \
             replacement on layer 1 x{raised:.3}, jitter on layer 1 within 5% for {within}/{seeds} seeds \
             (worst {:.2}%), jitter on outer layer worst {:.2}%",
            100.0 * worst,
            100.0 * outer
        ),
    )
}

fn determinism(first: &Path, second: &Path, scratch: &Path) -> Outcome {
    let a = std::fs::read(first.join(MODEL)).unwrap();
    let b = std::fs::read(second.join(MODEL)).unwrap();
    let bundle = Bundle::open(first).unwrap();
    let ops = [
        ManipulationOp::PermuteColumns { layer: 2, permutation: None, seed: Some(4), derangement: true },
        ManipulationOp::RandomizeReplace {
            layer: 1,
            columns: vec![0, 2],
            distribution: WeightDistribution::RectifiedNormal { mean: 0.3, std_dev: 0.2 },
            seed: 9,
        },
        ManipulationOp::RandomizeMultiplicative { layer: 2, columns: vec![], delta: 0.3, seed: 1 },
        ManipulationOp::ScaleColumn { layer: 1, col: 1, factor: 0.5 },
    ];
    bundle.derive_ops(&ops, &scratch.join("derived")).unwrap();
    let script: ManipulationScript = read_json(&scratch.join("derived").join(SCRIPT)).unwrap();
    bundle.derive_script(script, &scratch.join("replayed")).unwrap();
    let d = std::fs::read(scratch.join("derived").join(MODEL)).unwrap();
    let r = std::fs::read(scratch.join("replayed").join(MODEL)).unwrap();
    check(
        "determinism",
        a == b && d == r,
        format!("model files identical: {}, replayed script identical: {}", a == b, d == r),
    )
}

fn stft_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = [(1024, 256), (512, 128), (256, 64)];
    let mut worst = 0.0f64;
    for &(window, hop) in &params {
        let p = StftParams::new(window, hop, SAMPLE_RATE).unwrap();
        for _ in 0..20 {
            let len = rng.random_range(4 * window..12 * window);
            let signal: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let back = synthesize(&analyze(&signal, &p).unwrap()).unwrap();
            let interior = window..len - window;
            worst = worst.max(relative_l2(&back[interior.clone()], &signal[interior]));
        }
    }
    check("STFT round-trip", worst < 1e-6, format!("60 signals, worst interior relative L2 {worst:.2e}"))
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let (first, second) = (tmp.path().join("toy"), tmp.path().join("again"));
    let ((summary, secs), _) = std::thread::scope(|s| {
        let again = s.spawn(|| decompose_toy(&second));
        (decompose_toy(&first), again.join().unwrap())
    });
    let bundle = Bundle::open(&first).unwrap();
    let set = bundle.components().unwrap();

    let outcomes = [
        gradient_correctness(),
        non_negativity(&summary.model),
        toy_recovery(&summary, &set, secs),
        conservativity(&bundle, &set),
        decoder_additivity(&set),
        mask_properties(&set),
        manipulation_contracts(&bundle.model, &bundle.spectrogram.magnitudes),
        determinism(&first, &second, tmp.path()),
        stft_round_trip(),
    ];
    for o in &outcomes {
        println!("{} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
    }
    if outcomes.iter().any(|o| !o.pass) {
        std::process::exit(1);
    }
}
