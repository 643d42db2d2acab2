//! Command-line front end: train, eval, params, bench, dwt.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use wavemix::dwt::{compute_levels, dwt2_pyramid, idwt2_level};
use wavemix::model::build_model;
use wavemix::tensor::{concat_channels, Tensor};
use wavemix::DetRng;

use wavemix_cli::bench::{run_bench, BenchMode, BenchReport};
use wavemix_cli::config::RunConfig;
use wavemix_cli::imageio;
use wavemix_cli::trainer::{evaluate_checkpoint, run_training};

#[derive(Parser)]
#[command(name = "wavemix", version, about = "Wavelet token-mixing image classifier")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write metrics + checkpoints to the run directory.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset's test split.
    Eval(EvalArgs),
    /// Print the parameter count breakdown for a model configuration.
    Params(ParamsArgs),
    /// Measure training/inference throughput on synthetic data.
    Bench(BenchArgs),
    /// Decompose an image into wavelet subbands and verify reconstruction.
    Dwt(DwtArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON config file; command-line flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// wavemix | wavemix-lite | fnet2d | mlpmixer2d
    #[arg(long)]
    model: Option<String>,
    /// Embedding dimension C.
    #[arg(long)]
    dim: Option<usize>,
    /// Number of mixing blocks N.
    #[arg(long)]
    depth: Option<usize>,
    /// Wavelet levels (wavemix blocks); chosen from the image size if unset.
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run the training this many times (seed, seed+1, ...) and report the
    /// best test top-1.
    #[arg(long)]
    repeat: Option<usize>,
    /// Bitwise-reproducible metrics files (zeroes the wall-clock columns).
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cap the training split at this many samples.
    #[arg(long)]
    train_subset: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
}

impl CommonArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.dataset {
            cfg.dataset = v.clone();
        }
        if let Some(v) = &self.data_dir {
            cfg.data_dir = v.clone();
        }
        if let Some(v) = &self.model {
            cfg.model = v.clone();
        }
        if let Some(v) = self.dim {
            cfg.dim = v;
        }
        if let Some(v) = self.depth {
            cfg.depth = v;
        }
        if self.levels.is_some() {
            cfg.levels = self.levels;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.repeat {
            cfg.repeat = v;
        }
        if self.deterministic {
            cfg.deterministic = true;
        }
        if let Some(v) = &self.out {
            cfg.out_dir = v.clone();
        }
        if self.train_subset.is_some() {
            cfg.train_subset = self.train_subset;
        }
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Continue from a checkpoint written by the same configuration.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to score.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Also write the JSON summary here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ParamsArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Input image side length used to resolve levels and strides.
    #[arg(long, default_value_t = 32)]
    image_size: usize,
    #[arg(long, default_value_t = 3)]
    in_channels: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Image sizes to measure.
    #[arg(long, value_delimiter = ',', default_values_t = [32usize, 64])]
    sizes: Vec<usize>,
    /// train | infer | both
    #[arg(long, default_value = "both")]
    mode: String,
    /// Minimum seconds in each timed loop.
    #[arg(long, default_value_t = 10.0)]
    secs: f64,
    /// Write the CSV row(s) here.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct DwtArgs {
    /// PGM (P5) image, or raw little-endian f32 plane with --width/--height.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Levels; chosen from the image size if unset.
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long, default_value = "dwt-out")]
    out: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Train(args) => cmd_train(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Params(args) => cmd_params(args),
        Cmd::Bench(args) => cmd_bench(args),
        Cmd::Dwt(args) => cmd_dwt(args),
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    if cfg.repeat <= 1 {
        let outcome = run_training(&cfg, args.resume.as_deref())?;
        println!(
            "best test top-1 {:.4} (metrics: {})",
            outcome.best_top1,
            outcome.metrics_path.display()
        );
        return Ok(());
    }
    if args.resume.is_some() {
        bail!("--resume cannot be combined with --repeat");
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_seed = cfg.seed;
    for r in 0..cfg.repeat {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = cfg.seed + r as u64;
        run_cfg.out_dir = cfg.out_dir.join(format!("seed{}", run_cfg.seed));
        run_cfg.repeat = 1;
        let outcome = run_training(&run_cfg, None)?;
        println!("run seed {}: best top-1 {:.4}", run_cfg.seed, outcome.best_top1);
        if outcome.best_top1 > best {
            best = outcome.best_top1;
            best_seed = run_cfg.seed;
        }
    }
    println!("best of {} runs: top-1 {:.4} (seed {})", cfg.repeat, best, best_seed);
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let summary = evaluate_checkpoint(
        &args.checkpoint,
        args.dataset.as_deref(),
        args.data_dir.as_deref(),
    )?;
    println!(
        "top-1 {:.4}  top-5 {:.4}  ({} test images, {})",
        summary.top1, summary.top5, summary.num_test, summary.dataset
    );
    println!("{}", summary.to_json());
    if let Some(out) = args.out {
        if let Some(parent) = out.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&out, summary.to_json())?;
    }
    Ok(())
}

fn cmd_params(args: ParamsArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    let mc = cfg.model_config(
        args.in_channels,
        (args.image_size, args.image_size),
        args.classes,
    )?;
    let mut rng = DetRng::new(cfg.seed);
    let model = build_model::<f32>(mc, &mut rng).map_err(|e| anyhow!("{e}"))?;
    let report = model.count_params();
    println!("{:<12} {:>12}", "group", "parameters");
    for (name, count) in &report.groups {
        println!("{name:<12} {count:>12}");
    }
    println!("{:<12} {:>12}", "total", report.total);
    println!("total (M)    {:>12.4}", report.millions());
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    let modes: Vec<BenchMode> = match args.mode.as_str() {
        "train" => vec![BenchMode::Train],
        "infer" => vec![BenchMode::Infer],
        "both" => vec![BenchMode::Train, BenchMode::Infer],
        other => bail!("unknown bench mode `{other}`"),
    };
    let report = run_bench(&cfg, &args.sizes, &modes, args.secs)?;
    println!("{}", BenchReport::csv_header());
    println!("{}", report.to_csv_row());
    if let Some(csv) = args.csv {
        if let Some(parent) = csv.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut text = String::new();
        if !csv.exists() {
            text.push_str(BenchReport::csv_header());
            text.push('\n');
        } else {
            text = std::fs::read_to_string(&csv)?;
        }
        text.push_str(&report.to_csv_row());
        text.push('\n');
        std::fs::write(&csv, text)?;
    }
    Ok(())
}

fn cmd_dwt(args: DwtArgs) -> Result<()> {
    let img = match (args.width, args.height) {
        (Some(w), Some(h)) => imageio::read_f32_plane(&args.input, w, h)?,
        (None, None) => imageio::read_pgm(&args.input)?,
        _ => bail!("raw f32 input needs both --width and --height"),
    };
    let levels = match args.levels {
        Some(l) => l,
        None => compute_levels(img.height, img.width).map_err(|e| anyhow!("{e}"))?,
    };
    let x = Tensor::<f32>::from_vec(img.data.clone(), &[1, 1, img.height, img.width])
        .map_err(|e| anyhow!("{e}"))?;
    let pyramid = dwt2_pyramid(&x, levels).map_err(|e| anyhow!("{e}"))?;

    std::fs::create_dir_all(&args.out)?;
    for (l, level) in pyramid.levels.iter().enumerate() {
        let dir = args.out.join(format!("level_{}", l + 1));
        std::fs::create_dir_all(&dir)?;
        let s = level.shape();
        let (h, w) = (s[2], s[3]);
        let plane = h * w;
        let data = level.to_vec();
        for (b, name) in ["a", "dh", "dv", "dd"].iter().enumerate() {
            imageio::write_f32_plane(&dir.join(format!("{name}.f32")), &data[b * plane..][..plane])?;
        }
        std::fs::write(dir.join("size.txt"), format!("{h} {w}\n"))?;
        println!("level {}: {}x{} subbands written to {}", l + 1, h, w, dir.display());
    }

    // invert the pyramid and report the worst-case reconstruction error
    let mut approx: Option<Tensor<f32>> = None;
    for l in (0..pyramid.levels.len()).rev() {
        let level = &pyramid.levels[l];
        let full = match approx {
            Some(a) => {
                let c = pyramid.channels;
                let details = level.slice_channels(c, 4 * c).map_err(|e| anyhow!("{e}"))?;
                concat_channels(&[a, details]).map_err(|e| anyhow!("{e}"))?
            }
            None => level.clone(),
        };
        let mut up = idwt2_level(&full).map_err(|e| anyhow!("{e}"))?;
        let (pb, pr) = pyramid.pad_record[l];
        if pb + pr > 0 {
            up = up.crop2d([0, pb, 0, pr]).map_err(|e| anyhow!("{e}"))?;
        }
        approx = Some(up);
    }
    let recon = approx.context("empty pyramid")?;
    let rv = recon.to_vec();
    let max_err = img
        .data
        .iter()
        .zip(&rv)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    println!("levels: {levels}");
    println!("max reconstruction error: {max_err:e}");
    Ok(())
}
