mod config;
mod render;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Preset, ResolvedRun, RunConfig};
use cryostack::pipeline::{self, PATCH_DIR, PREDICTION_FILE};
use cryostack::Error;

const FINE_TUNED_CKPT: &str = "fine_tuned.ckpt";
const PREDICTION_PNG: &str = "prediction.png";

#[derive(Parser)]
#[command(name = "cryostack", version, about = "Glacier mapping pipeline: stacks, labels, patches, training, prediction, evaluation")]
struct Cli {
    /// JSON run configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every stochastic step (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Out {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Tiling {
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Derive terrain, index, texture, PCA and tasseled-cap bands from an input stack.
    BuildStack {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        out: Out,
    },
    /// Compose the 5-class label mask from a stack and glacier/debris masks.
    MakeLabels {
        #[arg(long)]
        stack: PathBuf,
        #[arg(long)]
        glacier: PathBuf,
        #[arg(long)]
        debris: PathBuf,
        #[command(flatten)]
        out: Out,
    },
    /// Generate the synthetic 5-class test scene.
    SynthScene {
        /// Informative band index; repeat for several. Defaults to the config.
        #[arg(long = "band")]
        bands: Vec<usize>,
        #[arg(long)]
        size: Option<usize>,
        #[command(flatten)]
        out: Out,
    },
    /// Normalize, tile and split a stack with its labels.
    Patchify {
        #[arg(long)]
        stack: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Reuse the normalization statistics stored in this checkpoint.
        #[arg(long)]
        stats_from: Option<PathBuf>,
        #[command(flatten)]
        tiling: Tiling,
        #[command(flatten)]
        out: Out,
    },
    /// Train a network on a patch set.
    Train {
        #[arg(long)]
        patches: PathBuf,
        #[arg(long, value_enum)]
        preset: Option<Preset>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[command(flatten)]
        out: Out,
    },
    /// Continue training a checkpoint on another patch set.
    FineTune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        patches: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[command(flatten)]
        out: Out,
    },
    /// Predict a class map for a whole stack.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        stack: PathBuf,
        #[command(flatten)]
        tiling: Tiling,
        #[command(flatten)]
        out: Out,
    },
    /// Score a predicted class map against the labels.
    Evaluate {
        #[arg(long)]
        prediction: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[command(flatten)]
        out: Out,
    },
    /// Permutation importance of every input band on the test patches.
    Importance {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        patches: PathBuf,
        #[arg(long)]
        repeats: Option<usize>,
        #[command(flatten)]
        out: Out,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::BuildStack { .. } => "build-stack",
            Command::MakeLabels { .. } => "make-labels",
            Command::SynthScene { .. } => "synth-scene",
            Command::Patchify { .. } => "patchify",
            Command::Train { .. } => "train",
            Command::FineTune { .. } => "fine-tune",
            Command::Predict { .. } => "predict",
            Command::Evaluate { .. } => "evaluate",
            Command::Importance { .. } => "importance",
        }
    }

    fn out(&self) -> &Path {
        match self {
            Command::BuildStack { out, .. }
            | Command::MakeLabels { out, .. }
            | Command::SynthScene { out, .. }
            | Command::Patchify { out, .. }
            | Command::Train { out, .. }
            | Command::FineTune { out, .. }
            | Command::Predict { out, .. }
            | Command::Evaluate { out, .. }
            | Command::Importance { out, .. } => &out.out,
        }
    }
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_)
            | Error::Arity { .. }
            | Error::RoleNotFound(_)
            | Error::BandNotFound(_)
            | Error::Registry(_)
            | Error::Size(_)
            | Error::InvalidGrid(_)
            | Error::Geometry(_)
            | Error::Json(_) => Failure::Validation(msg),
            _ => Failure::Runtime(msg),
        }
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn load_config(cli: &Cli) -> Outcome<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::Validation(format!("cannot read config {}: {e}", p.display())))?;
            RunConfig::from_json(&text)
                .map_err(|e| Failure::Validation(format!("config {}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    Ok(cfg)
}

/// Applies the per-command flag overrides.
fn apply_overrides(cfg: &mut RunConfig, cmd: &Command) {
    match cmd {
        Command::SynthScene { bands, size, .. } => {
            if !bands.is_empty() {
                cfg.synth.informative = bands.clone();
                if bands.len() == 1 {
                    cfg.synth.texture_amplitude = 0.0;
                }
            }
            if let Some(s) = size {
                cfg.synth.width = *s;
                cfg.synth.height = *s;
            }
        }
        Command::Patchify { tiling, .. } | Command::Predict { tiling, .. } => {
            if let Some(p) = tiling.patch_size {
                cfg.patch.patch_size = p;
            }
            if tiling.stride.is_some() {
                cfg.patch.stride = tiling.stride;
            }
        }
        Command::Train { preset, epochs, lr, .. } => {
            if let Some(p) = preset {
                cfg.preset = *p;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            if let Some(lr) = lr {
                cfg.train.learning_rate = *lr;
            }
        }
        Command::FineTune { iterations, lr, .. } => {
            if let Some(i) = iterations {
                cfg.fine_tune.iterations = *i;
            }
            if lr.is_some() {
                cfg.fine_tune.learning_rate = *lr;
            }
        }
        Command::Importance { repeats, .. } => {
            if let Some(r) = repeats {
                cfg.importance.repeats = *r;
            }
        }
        Command::BuildStack { .. } | Command::MakeLabels { .. } | Command::Evaluate { .. } => {}
    }
    cfg.apply_seed();
}

fn inputs(cmd: &Command) -> Vec<(&'static str, String)> {
    let p = |path: &Path| path.display().to_string();
    match cmd {
        Command::BuildStack { input, .. } => vec![("input", p(input))],
        Command::MakeLabels { stack, glacier, debris, .. } => {
            vec![("stack", p(stack)), ("glacier", p(glacier)), ("debris", p(debris))]
        }
        Command::SynthScene { .. } => vec![],
        Command::Patchify { stack, labels, stats_from, .. } => {
            let mut v = vec![("stack", p(stack)), ("labels", p(labels))];
            if let Some(s) = stats_from {
                v.push(("stats_from", p(s)));
            }
            v
        }
        Command::Train { patches, .. } => vec![("patches", p(patches))],
        Command::FineTune { checkpoint, patches, .. } | Command::Importance { checkpoint, patches, .. } => {
            vec![("checkpoint", p(checkpoint)), ("patches", p(patches))]
        }
        Command::Predict { checkpoint, stack, .. } => vec![("checkpoint", p(checkpoint)), ("stack", p(stack))],
        Command::Evaluate { prediction, truth, .. } => vec![("prediction", p(prediction)), ("truth", p(truth))],
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Accepts either a patch directory or the directory `patchify` wrote into.
fn patch_dir(p: &Path) -> PathBuf {
    let nested = p.join(PATCH_DIR);
    if nested.join(cryostack::dataset::MANIFEST).exists() {
        nested
    } else {
        p.to_path_buf()
    }
}

fn echo(cmd: &Command, cfg: &RunConfig) -> Outcome {
    let model = matches!(cmd, Command::Train { .. }).then(|| cfg.model_config()).transpose()?;
    let resolved = ResolvedRun {
        command: cmd.name(),
        inputs: inputs(cmd),
        config: cfg,
        model,
    };
    let text = serde_json::to_string_pretty(&resolved).map_err(runtime)?;
    let out = cmd.out();
    std::fs::create_dir_all(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    let path = out.join(format!("{}.config.json", cmd.name()));
    std::fs::write(&path, &text).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    log::info!("resolved configuration written to {}", path.display());
    log::debug!("{text}");
    Ok(())
}

fn execute(cmd: &Command, cfg: &RunConfig) -> Outcome {
    let out = cmd.out();
    match cmd {
        Command::BuildStack { input, .. } => {
            let path = pipeline::build_stack_stage(input, &cfg.features, out)?;
            println!("wrote {}", path.display());
        }
        Command::MakeLabels { stack, glacier, debris, .. } => {
            let counts = pipeline::make_labels_stage(stack, glacier, debris, out)?;
            println!("label counts {:?}", counts.per_class);
        }
        Command::SynthScene { .. } => {
            pipeline::synth_stage(&cfg.synth, out)?;
            println!(
                "wrote {}x{} scene with {} bands to {}",
                cfg.synth.width,
                cfg.synth.height,
                cfg.synth.bands,
                out.display()
            );
        }
        Command::Patchify { stack, labels, stats_from, .. } => {
            let set = pipeline::patchify_stage(stack, labels, &cfg.patch, stats_from.as_deref(), out)?;
            println!(
                "{} patches ({} train, {} test) in {}",
                set.patches.len(),
                set.count(cryostack::dataset::Split::Train),
                set.count(cryostack::dataset::Split::Test),
                out.join(PATCH_DIR).display()
            );
        }
        Command::Train { patches, .. } => {
            pipeline::train_stage(&patch_dir(patches), &cfg.model_config()?, &cfg.train, out)?;
            println!("checkpoints and history in {}", out.display());
        }
        Command::FineTune { checkpoint, patches, .. } => {
            let mut tc = cfg.train.clone();
            if let Some(lr) = cfg.fine_tune.learning_rate {
                tc.learning_rate = lr;
            }
            let dest = out.join(FINE_TUNED_CKPT);
            pipeline::fine_tune_stage(checkpoint, &patch_dir(patches), cfg.fine_tune.iterations, &tc, &dest)?;
            println!("wrote {}", dest.display());
        }
        Command::Predict { checkpoint, stack, .. } => {
            let labels = pipeline::predict_stage(checkpoint, stack, cfg.patch.patch_size, cfg.patch.stride(), out)?;
            render::write_png(&labels, &out.join(PREDICTION_PNG)).map_err(runtime)?;
            println!("wrote {} and {}", out.join(PREDICTION_FILE).display(), out.join(PREDICTION_PNG).display());
        }
        Command::Evaluate { prediction, truth, .. } => {
            let m = pipeline::evaluate_stage(prediction, truth, out)?;
            println!("accuracy {:.4}, mIoU {:.4}", m.accuracy, m.mean_iou);
        }
        Command::Importance { checkpoint, patches, .. } => {
            let imp = &cfg.importance;
            pipeline::importance_stage(checkpoint, &patch_dir(patches), imp.seed, imp.repeats, out)?;
            println!("wrote {}", out.join(pipeline::IMPORTANCE_CSV).display());
        }
    }
    Ok(())
}

fn init_threads() -> Outcome {
    let Ok(v) = std::env::var("CRYOSTACK_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Validation(format!("CRYOSTACK_THREADS must be a positive integer, got `{v}`")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(runtime)?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn run(cli: &Cli) -> Outcome {
    init_threads()?;
    let mut cfg = load_config(cli)?;
    apply_overrides(&mut cfg, &cli.command);
    cfg.validate()?;
    echo(&cli.command, &cfg)?;
    execute(&cli.command, &cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
