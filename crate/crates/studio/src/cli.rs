//! The `nae` command-line tool.

use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use nae_core::toy::toy_mixture;
use nae_core::{ManipulationOp, ManipulationScript, WeightDistribution};

use crate::bundle::{decompose, Bundle, DecomposeOptions};
use crate::error::{Result, StudioError};
use crate::render::{render_to_dir, RenderRequest};
use crate::service::{bind, serve, Session};
use crate::view::{read_json, write_json};
use crate::wav::save_wav;

#[derive(Debug, Parser)]
#[command(name = "nae", version, about = "Sound deconstruction with non-negative autoencoders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a WAV file and write a bundle
    Decompose(DecomposeArgs),
    /// Print a summary of a bundle, optionally exporting a view
    Inspect(InspectArgs),
    /// Resynthesise components of a bundle as WAV files
    Render(RenderArgs),
    /// Edit a bundle's decoder weights into a new bundle
    Manipulate(ManipulateArgs),
    /// Serve a bundle over HTTP for interactive editing
    Serve(ServeArgs),
    /// Write the three-source test mixture and its sources
    Toy(ToyArgs),
}

/// Comma-separated list of unsigned integers.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexList(pub Vec<usize>);

impl FromStr for IndexList {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<std::result::Result<_, _>>()
            .map(IndexList)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pair(pub usize, pub usize);

impl FromStr for Pair {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match IndexList::from_str(s)?.0.as_slice() {
            [a, b] => Ok(Pair(*a, *b)),
            _ => Err(format!("expected two indices like 0,3, got {s:?}")),
        }
    }
}

/// `u:low,high` or `n:mean,std_dev`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistArg(pub WeightDistribution);

impl FromStr for DistArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (kind, params) = s.split_once(':').ok_or("expected u:low,high or n:mean,std")?;
        let values: Vec<f64> =
            params.split(',').map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}"))).collect::<std::result::Result<_, _>>()?;
        let [a, b] = values[..] else {
            return Err(format!("expected two numbers after {kind}:"));
        };
        match kind {
            "u" | "uniform" => Ok(DistArg(WeightDistribution::Uniform { low: a, high: b })),
            "n" | "normal" => Ok(DistArg(WeightDistribution::RectifiedNormal { mean: a, std_dev: b })),
            other => Err(format!("unknown distribution {other:?}")),
        }
    }
}

/// `layer,row,col,value`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetArg {
    pub layer: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

impl FromStr for SetArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [l, r, c, v] = parts[..] else {
            return Err(format!("expected layer,row,col,value, got {s:?}"));
        };
        let idx = |p: &str| p.parse::<usize>().map_err(|e| format!("{p:?}: {e}"));
        Ok(SetArg { layer: idx(l)?, row: idx(r)?, col: idx(c)?, value: v.parse().map_err(|e| format!("{v:?}: {e}"))? })
    }
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    pub input: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Layer sizes, innermost first
    #[arg(long, default_value = "3,9")]
    pub layers: IndexList,
    #[arg(long, default_value_t = 3000)]
    pub iters: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Sparsity weight; defaults to 0, or 1e-4 for three or more layers
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2048)]
    pub window: usize,
    #[arg(long, default_value_t = 512)]
    pub hop: usize,
    #[arg(long, default_value_t = 10)]
    pub log_every: usize,
    #[arg(short, long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub bundle: PathBuf,
    /// Write the component view as JSON
    #[arg(long)]
    pub view: Option<PathBuf>,
    /// Restrict the view to one latent unit
    #[arg(long)]
    pub hier: Option<usize>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("what").required(true).args(["component", "cross", "hier", "all"])))]
pub struct RenderArgs {
    pub bundle: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Original component k
    #[arg(long)]
    pub component: Option<usize>,
    /// Spectrum i driven by activation j
    #[arg(long, value_name = "I,J")]
    pub cross: Option<Pair>,
    /// Layer the cross activation is taken from (default: outer)
    #[arg(long)]
    pub layer: Option<usize>,
    /// Mask bounding factor for cross renders
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Every component under latent unit u
    #[arg(long, value_name = "U")]
    pub hier: Option<usize>,
    /// Every original component and their sum
    #[arg(long)]
    pub all: bool,
    /// Scale all written files by one gain so none peaks above this
    #[arg(long)]
    pub peak_limit: Option<f64>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("edit").required(true).multiple(true).args(["script", "permute", "randomize", "jitter", "set"])))]
pub struct ManipulateArgs {
    pub bundle: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Replay a saved script
    #[arg(long, conflicts_with_all = ["permute", "randomize", "jitter", "set"])]
    pub script: Option<PathBuf>,
    /// Shuffle the columns of a decoder layer
    #[arg(long, value_name = "LAYER")]
    pub permute: Option<usize>,
    /// Only accept permutations without fixed points
    #[arg(long, requires = "permute")]
    pub derangement: bool,
    /// Replace weights of a decoder layer with random values
    #[arg(long, value_name = "LAYER")]
    pub randomize: Option<usize>,
    #[arg(long, default_value = "u:0,1")]
    pub dist: DistArg,
    /// Multiply weights of a decoder layer by random factors
    #[arg(long, value_name = "LAYER")]
    pub jitter: Option<usize>,
    #[arg(long, default_value_t = 0.3)]
    pub delta: f64,
    /// Columns for --randomize and --jitter (default: all)
    #[arg(long, default_value = "")]
    pub cols: IndexList,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Set one weight: layer,row,col,value
    #[arg(long, value_name = "L,R,C,V")]
    pub set: Vec<SetArg>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    pub bundle: PathBuf,
    #[arg(long, default_value_t = 8750)]
    pub port: u16,
    #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
    pub host: IpAddr,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 16000)]
    pub sample_rate: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write each source next to the mixture
    #[arg(long)]
    pub sources: bool,
}

/// Parses arguments and runs; usage errors exit with 1.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Decompose(a) => cmd_decompose(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Render(a) => cmd_render(a),
        Command::Manipulate(a) => cmd_manipulate(a),
        Command::Serve(a) => cmd_serve(a),
        Command::Toy(a) => cmd_toy(a),
    }
}

fn cmd_decompose(a: DecomposeArgs) -> Result<()> {
    let options = DecomposeOptions {
        layer_sizes: a.layers.0,
        iterations: a.iters,
        learning_rate: a.lr,
        sparsity_lambda: a.lambda,
        seed: a.seed,
        window_size: a.window,
        hop_size: a.hop,
        log_every: a.log_every,
    };
    let started = std::time::Instant::now();
    let step = (options.iterations / 20).max(1);
    let quiet = a.quiet;
    let summary = decompose(&a.input, &a.output, &options, |p| {
        if !quiet && (p.iteration % step == 0 || p.iteration + 1 == p.iterations) {
            eprintln!("iteration {:>6}/{}  loss {:.6}", p.iteration + 1, p.iterations, p.loss.total);
        }
    })?;
    let r = &summary.report;
    println!("bundle        {}", a.output.display());
    println!("model hash    {}", summary.model.content_hash());
    println!("iterations    {}", r.completed_iterations);
    println!("initial loss  {:.6}", r.initial.data_loss);
    println!("final loss    {:.6}", r.final_loss);
    println!("wall time     {:.1} s", started.elapsed().as_secs_f64());
    print_shapes(&summary.model);
    match &r.aborted {
        Some(e) => Err(StudioError::Core(e.clone())),
        None => Ok(()),
    }
}

fn print_shapes(model: &nae_core::NaeModel) {
    for l in 1..=model.depth() {
        let (r, c) = model.decoder_layer(l).shape();
        println!("decoder layer {l}: {r}x{c}");
    }
}

fn cmd_inspect(a: InspectArgs) -> Result<()> {
    let bundle = Bundle::open(&a.bundle)?;
    let m = &bundle.manifest;
    println!("model hash    {}", m.model.hash);
    println!("layers        {:?}", m.model.layer_sizes);
    println!(
        "audio         {} samples at {} Hz ({} x {} spectrogram)",
        m.source.samples,
        m.stft.sample_rate,
        bundle.spectrogram.bins(),
        bundle.spectrogram.frames()
    );
    if let Some(t) = &m.training {
        println!("loss          {:.6} -> {:.6} over {} iterations", t.initial_loss, t.final_loss, t.completed_iterations);
    }
    if let Some(d) = &m.derivation {
        let ops = bundle.script.as_ref().map_or(0, |s| s.ops.len());
        println!("derived from  {} by {ops} op(s)", d.base_hash);
    }
    print_shapes(&bundle.model);
    let mut set = bundle.components()?;
    if let Some(u) = a.hier {
        set = nae_core::hierarchical_select(&set, u)?;
    }
    for v in &set.layers {
        let silent: Vec<usize> = v.silent.iter().enumerate().filter(|(_, s)| **s).map(|(k, _)| k).collect();
        println!("layer {} silent units: {silent:?}", v.index);
    }
    if let Some(path) = a.view {
        let doc = crate::view::build_view(&set, bundle.provenance_for(&bundle.model), crate::view::DEFAULT_FRAME_CAP);
        write_json(&path, &doc)?;
    }
    Ok(())
}

impl RenderArgs {
    pub fn request(&self) -> Result<RenderRequest> {
        if self.cross.is_none() && (self.layer.is_some() || self.gamma.is_some()) {
            return Err(StudioError::Config("--layer and --gamma only apply to --cross".into()));
        }
        Ok(if let Some(k) = self.component {
            RenderRequest::Component(k)
        } else if let Some(Pair(i, j)) = self.cross {
            RenderRequest::Cross { basis: i, activation: j, layer: self.layer, gamma: self.gamma }
        } else if let Some(u) = self.hier {
            RenderRequest::Hierarchical(u)
        } else {
            RenderRequest::All
        })
    }
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let request = a.request()?;
    let bundle = Bundle::open(&a.bundle)?;
    for p in render_to_dir(&bundle, &request, &a.output, a.peak_limit)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn cmd_manipulate(a: ManipulateArgs) -> Result<()> {
    let bundle = Bundle::open(&a.bundle)?;
    let derived = if let Some(path) = &a.script {
        let script: ManipulationScript = read_json(path)?;
        bundle.derive_script(script, &a.output)?
    } else {
        let mut ops = Vec::new();
        for s in &a.set {
            ops.push(ManipulationOp::SetWeight { layer: s.layer, row: s.row, col: s.col, value: s.value });
        }
        if let Some(layer) = a.permute {
            ops.push(ManipulationOp::PermuteColumns {
                layer,
                permutation: None,
                seed: Some(a.seed),
                derangement: a.derangement,
            });
        }
        if let Some(layer) = a.randomize {
            ops.push(ManipulationOp::RandomizeReplace {
                layer,
                columns: a.cols.0.clone(),
                distribution: a.dist.0,
                seed: a.seed,
            });
        }
        if let Some(layer) = a.jitter {
            ops.push(ManipulationOp::RandomizeMultiplicative {
                layer,
                columns: a.cols.0.clone(),
                delta: a.delta,
                seed: a.seed,
            });
        }
        bundle.derive_ops(&ops, &a.output)?
    };
    println!("bundle        {}", a.output.display());
    println!("base hash     {}", bundle.model.content_hash());
    println!("model hash    {}", derived.model.content_hash());
    for op in derived.script.iter().flat_map(|s| &s.ops) {
        println!("op            {}", serde_json::to_string(op).expect("op serialises"));
    }
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let bundle = Bundle::open(&a.bundle)?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| StudioError::io("tokio runtime", e))?;
    runtime.block_on(async {
        let listener = bind(SocketAddr::new(a.host, a.port)).await?;
        eprintln!("serving {} on http://{}", a.bundle.display(), listener.local_addr().map_err(|e| StudioError::io("listener", e))?);
        serve(Session::new(bundle), listener).await
    })
}

fn cmd_toy(a: ToyArgs) -> Result<()> {
    let toy = toy_mixture(a.sample_rate, a.seed);
    save_wav(&a.output, &toy.mixture, a.sample_rate)?;
    println!("{}", a.output.display());
    if a.sources {
        let stem = a.output.with_extension("");
        for (name, src) in ["high", "low", "noise"].iter().zip(&toy.sources) {
            let path = PathBuf::from(format!("{}_{name}.wav", stem.display()));
            save_wav(&path, src, a.sample_rate)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}
