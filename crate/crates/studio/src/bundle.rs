//! Project bundles: a directory holding a source recording, a trained
//! model and everything derived from it.
//!
//! ```text
//! bundle.json   manifest tying the files together by hash
//! source.wav    mono float copy of the analysed audio
//! model.nae     the model to inspect and render
//! view.json     component view of model.nae
//! loss.tsv      iteration and loss, tab separated (trained bundles)
//! base.nae      model the script was applied to (derived bundles)
//! script.json   manipulation script (derived bundles)
//! ```

use std::io::Write as _;
use std::path::{Path, PathBuf};

use nae_core::train::{train_with_progress, Progress, TrainReport};
use nae_core::{
    analyze, apply_script, extract, init_model, ComponentSet, ManipulationOp, ManipulationScript, ModelHash,
    NaeConfig, NaeModel, Spectrogram, StftParams, TrainConfig,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container::{load_model, save_model};
use crate::error::{IoContext, Result, StudioError};
use crate::view::{build_view, read_json, write_json, Provenance, ViewDocument, DEFAULT_FRAME_CAP};
use crate::wav::{encode_wav, load_wav};

pub const MANIFEST: &str = "bundle.json";
pub const SOURCE: &str = "source.wav";
pub const MODEL: &str = "model.nae";
pub const BASE_MODEL: &str = "base.nae";
pub const VIEW: &str = "view.json";
pub const LOSS_LOG: &str = "loss.tsv";
pub const SCRIPT: &str = "script.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub version: u32,
    pub source: SourceEntry,
    pub stft: StftParams,
    pub model: ModelEntry,
    pub training: Option<TrainingEntry>,
    pub derivation: Option<DerivationEntry>,
    pub view: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub file: String,
    /// Where the audio was originally read from.
    pub origin: Option<String>,
    pub sample_rate: u32,
    pub samples: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub file: String,
    pub hash: ModelHash,
    pub layer_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingEntry {
    pub config: TrainConfig,
    pub log: String,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub completed_iterations: usize,
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivationEntry {
    pub base_model: String,
    pub base_hash: ModelHash,
    pub script: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Creates `dir`, which must not exist yet or be empty.
pub fn fresh_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        let mut entries = std::fs::read_dir(dir).at(dir)?;
        if entries.next().is_some() {
            return Err(StudioError::io(
                dir,
                std::io::Error::new(std::io::ErrorKind::AlreadyExists, "output directory is not empty"),
            ));
        }
        return Ok(());
    }
    std::fs::create_dir_all(dir).at(dir)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecomposeOptions {
    pub layer_sizes: Vec<usize>,
    pub iterations: usize,
    pub learning_rate: f64,
    /// `None` picks the depth-dependent default.
    pub sparsity_lambda: Option<f64>,
    pub seed: u64,
    pub window_size: usize,
    pub hop_size: usize,
    pub log_every: usize,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        let stft = StftParams::default();
        Self {
            layer_sizes: vec![3, 9],
            iterations: 3000,
            learning_rate: 1e-3,
            sparsity_lambda: None,
            seed: 0,
            window_size: stft.window_size,
            hop_size: stft.hop_size,
            log_every: 10,
        }
    }
}

impl DecomposeOptions {
    pub fn train_config(&self) -> TrainConfig {
        let base = TrainConfig::for_depth(self.layer_sizes.len());
        TrainConfig {
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            sparsity_lambda: self.sparsity_lambda.unwrap_or(base.sparsity_lambda),
            log_every: self.log_every,
            ..base
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecomposeSummary {
    pub manifest: BundleManifest,
    pub model: NaeModel,
    pub report: TrainReport,
}

/// Trains a model on a WAV file and writes a fresh bundle to `out`. A
/// training run that stops on a numeric failure still writes its last
/// finite model; check `report.aborted`.
pub fn decompose(
    input: &Path,
    out: &Path,
    options: &DecomposeOptions,
    progress: impl FnMut(&Progress),
) -> Result<DecomposeSummary> {
    let (audio, sample_rate) = load_wav(input)?;
    let stft = StftParams::new(options.window_size, options.hop_size, sample_rate)?;
    let origin = input.to_str().map(str::to_owned);
    decompose_samples(&audio, stft, origin, out, options, progress)
}

pub fn decompose_samples(
    audio: &[f64],
    stft: StftParams,
    origin: Option<String>,
    out: &Path,
    options: &DecomposeOptions,
    progress: impl FnMut(&Progress),
) -> Result<DecomposeSummary> {
    let config = options.train_config();
    config.validate()?;
    // analyse exactly what source.wav will hold
    let audio: Vec<f64> = audio.iter().map(|&v| v as f32 as f64).collect();
    let audio = audio.as_slice();
    let spectrogram = analyze(audio, &stft)?;
    let model = init_model(NaeConfig::new(stft.bins(), options.layer_sizes.clone(), options.seed))?;
    fresh_dir(out)?;

    let outcome = train_with_progress(model, &spectrogram.magnitudes, &config, progress)?;
    let report = outcome.report;
    let model = outcome.model;

    let wav = encode_wav(audio, stft.sample_rate);
    let source = write_source(out, &wav, origin, audio.len(), stft.sample_rate)?;
    save_model(&out.join(MODEL), &model, Some(stft), Some(config.clone()))?;
    write_loss_log(&out.join(LOSS_LOG), &report)?;

    let manifest = BundleManifest {
        version: 1,
        source,
        stft,
        model: model_entry(&model),
        training: Some(TrainingEntry {
            config,
            log: LOSS_LOG.into(),
            initial_loss: report.initial.data_loss,
            final_loss: report.final_loss,
            completed_iterations: report.completed_iterations,
            aborted: report.aborted.as_ref().map(ToString::to_string),
        }),
        derivation: None,
        view: VIEW.into(),
    };
    finish(out, &manifest, &model, &spectrogram)?;
    Ok(DecomposeSummary { manifest, model, report })
}

fn write_source(out: &Path, wav: &[u8], origin: Option<String>, samples: usize, sample_rate: u32) -> Result<SourceEntry> {
    let path = out.join(SOURCE);
    std::fs::write(&path, wav).at(&path)?;
    Ok(SourceEntry { file: SOURCE.into(), origin, sample_rate, samples, sha256: sha256_hex(wav) })
}

fn model_entry(model: &NaeModel) -> ModelEntry {
    ModelEntry { file: MODEL.into(), hash: model.content_hash(), layer_sizes: model.config.layer_sizes.clone() }
}

fn finish(out: &Path, manifest: &BundleManifest, model: &NaeModel, spectrogram: &Spectrogram) -> Result<()> {
    let set = extract(model, &spectrogram.magnitudes)?;
    write_json(&out.join(VIEW), &build_view(&set, provenance(manifest), DEFAULT_FRAME_CAP))?;
    write_json(&out.join(MANIFEST), manifest)
}

fn provenance(manifest: &BundleManifest) -> Provenance {
    Provenance {
        model_hash: manifest.model.hash,
        source: Some(manifest.source.file.clone()),
        source_hash: Some(manifest.source.sha256.clone()),
        stft: manifest.stft,
    }
}

/// Two columns, iteration and total loss, one record per line.
pub fn write_loss_log(path: &Path, report: &TrainReport) -> Result<()> {
    let mut text = String::new();
    for r in &report.loss_history {
        text.push_str(&format!("{}\t{}\n", r.iteration, r.total()));
    }
    let mut f = std::fs::File::create(path).at(path)?;
    f.write_all(text.as_bytes()).at(path)
}

/// A loaded and cross-checked bundle.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub dir: PathBuf,
    pub manifest: BundleManifest,
    pub audio: Vec<f64>,
    pub spectrogram: Spectrogram,
    pub model: NaeModel,
    pub base: Option<NaeModel>,
    pub script: Option<ManipulationScript>,
}

impl Bundle {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest: BundleManifest = read_json(&dir.join(MANIFEST))?;
        let source_path = dir.join(&manifest.source.file);
        let wav = std::fs::read(&source_path).at(&source_path)?;
        if sha256_hex(&wav) != manifest.source.sha256 {
            return Err(StudioError::format(format!("{}: audio does not match the manifest", source_path.display())));
        }
        let (audio, sample_rate) = crate::wav::decode_wav(&wav)?;
        if sample_rate != manifest.stft.sample_rate {
            return Err(StudioError::format("source sample rate differs from the STFT settings"));
        }
        let (_, model) = load_model(&dir.join(&manifest.model.file))?;
        if model.content_hash() != manifest.model.hash {
            return Err(StudioError::format("model file does not match the manifest"));
        }
        let spectrogram = analyze(&audio, &manifest.stft)?;
        if spectrogram.bins() != model.config.input_dim {
            return Err(StudioError::format("model input size does not match the STFT settings"));
        }

        let (base, script) = match &manifest.derivation {
            None => (None, None),
            Some(d) => {
                let (_, base) = load_model(&dir.join(&d.base_model))?;
                let script: ManipulationScript = read_json(&dir.join(&d.script))?;
                if base.content_hash() != d.base_hash {
                    return Err(StudioError::format("base model does not match the manifest"));
                }
                if apply_script(&base, &script)?.content_hash() != model.content_hash() {
                    return Err(StudioError::format("script does not reproduce the bundle's model"));
                }
                (Some(base), Some(script))
            }
        };
        Ok(Self { dir: dir.to_path_buf(), manifest, audio, spectrogram, model, base, script })
    }

    pub fn components(&self) -> Result<ComponentSet> {
        Ok(extract(&self.model, &self.spectrogram.magnitudes)?)
    }

    pub fn provenance_for(&self, model: &NaeModel) -> Provenance {
        Provenance { model_hash: model.content_hash(), ..provenance(&self.manifest) }
    }

    pub fn view(&self) -> Result<ViewDocument> {
        Ok(build_view(&self.components()?, self.provenance_for(&self.model), DEFAULT_FRAME_CAP))
    }

    pub fn stft(&self) -> StftParams {
        self.manifest.stft
    }

    /// Applies `ops` to this bundle's model and writes the result, with
    /// the replayable script, as a fresh bundle in `out`.
    pub fn derive_ops(&self, ops: &[ManipulationOp], out: &Path) -> Result<Bundle> {
        let mut script = ManipulationScript::new(&self.model);
        let mut current = self.model.clone();
        for op in ops {
            current = script.push(&current, op)?;
        }
        self.write_derived(script, current, out)
    }

    /// Replays a saved script against this bundle's model.
    pub fn derive_script(&self, script: ManipulationScript, out: &Path) -> Result<Bundle> {
        let derived = apply_script(&self.model, &script)?;
        self.write_derived(script, derived, out)
    }

    fn write_derived(&self, script: ManipulationScript, derived: NaeModel, out: &Path) -> Result<Bundle> {
        fresh_dir(out)?;
        let src = self.dir.join(&self.manifest.source.file);
        let dst = out.join(SOURCE);
        std::fs::copy(&src, &dst).at(&dst)?;
        save_model(&out.join(BASE_MODEL), &self.model, Some(self.stft()), None)?;
        save_model(&out.join(MODEL), &derived, Some(self.stft()), None)?;
        write_json(&out.join(SCRIPT), &script)?;
        let manifest = BundleManifest {
            version: 1,
            source: SourceEntry { file: SOURCE.into(), ..self.manifest.source.clone() },
            stft: self.stft(),
            model: model_entry(&derived),
            training: None,
            derivation: Some(DerivationEntry {
                base_model: BASE_MODEL.into(),
                base_hash: self.model.content_hash(),
                script: SCRIPT.into(),
            }),
            view: VIEW.into(),
        };
        finish(out, &manifest, &derived, &self.spectrogram)?;
        Ok(Bundle {
            dir: out.to_path_buf(),
            manifest,
            audio: self.audio.clone(),
            spectrogram: self.spectrogram.clone(),
            model: derived,
            base: Some(self.model.clone()),
            script: Some(script),
        })
    }
}
