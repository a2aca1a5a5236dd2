use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rb_cli::config_file::{resolve, ConfigFile};
use rb_cli::{cmd_eval, cmd_gen, cmd_saliency, cmd_train, exit_code, EvalArgs, GenArgs, SaliencyArgs, TrainArgs};
use rb_core::training::TrainConfig;
use rb_core::{Error, ModelVariant, Result};

/// Real/bogus CNN classifier for difference-imaging transient candidates.
#[derive(Parser)]
#[command(name = "rb", version)]
struct Cli {
    /// key = value file; explicit flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset of FITS stamps and a manifest.
    Gen(GenOpts),
    /// Train a model on a manifest's training rows.
    Train(TrainOpts),
    /// Evaluate a model: confusion matrix, ROC curve, accuracy summary.
    Eval(EvalOpts),
    /// Per-example saliency importances and per-quadrant summaries.
    Saliency(SaliencyOpts),
}

#[derive(Args)]
struct GenOpts {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    real_fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `nodia` writes only template and search stamps.
    #[arg(long)]
    variant: Option<ModelVariant>,
    #[arg(long)]
    test_fraction: Option<f64>,
    /// FITS BITPIX for written stamps: 16, 32, -32 or -64.
    #[arg(long, allow_hyphen_values = true)]
    bitpix: Option<i32>,
}

#[derive(Args)]
struct TrainOpts {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    variant: Option<ModelVariant>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a checkpoint every N epochs (0: final epoch only).
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Share of non-test rows trained on when the manifest has no `val` rows.
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Continue from the latest checkpoint under `out`.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvalOpts {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SaliencyOpts {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Render this many saliency maps as PGM images.
    #[arg(long)]
    pgm: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
}

fn required<T: std::str::FromStr>(flag: Option<T>, file: &ConfigFile, key: &str) -> Result<T> {
    match flag {
        Some(v) => Ok(v),
        None => file.get(key)?.ok_or_else(|| Error::Config(format!("missing --{key}"))),
    }
}

fn check_keys(file: &ConfigFile, known: &[&str]) {
    for k in file.unknown_keys(known) {
        log::warn!("ignoring unknown config key `{k}`");
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Gen(o) => {
            check_keys(&file, &["n", "real-fraction", "seed", "out", "variant", "test-fraction", "bitpix"]);
            let args = GenArgs {
                n: required(o.n, &file, "n")?,
                real_fraction: resolve(o.real_fraction, &file, "real-fraction", 0.5)?,
                seed: resolve(o.seed, &file, "seed", 0)?,
                out: required(o.out, &file, "out")?,
                variant: resolve(o.variant, &file, "variant", ModelVariant::Dia)?,
                test_fraction: resolve(o.test_fraction, &file, "test-fraction", 0.2)?,
                bitpix: resolve(o.bitpix, &file, "bitpix", -32)?,
            };
            let report = cmd_gen(&args)?;
            println!("wrote {} sets ({} FITS files) to {}", report.rows, report.files, report.manifest.display());
        }
        Command::Train(o) => {
            check_keys(
                &file,
                &["manifest", "variant", "epochs", "lr", "batch", "seed", "out", "checkpoint-every", "train-fraction"],
            );
            let variant = resolve(o.variant, &file, "variant", ModelVariant::Dia)?;
            let defaults = TrainConfig::for_variant(variant);
            let config = TrainConfig {
                epochs: resolve(o.epochs, &file, "epochs", defaults.epochs)?,
                learning_rate: resolve(o.lr, &file, "lr", defaults.learning_rate)?,
                batch_size: resolve(o.batch, &file, "batch", defaults.batch_size)?,
                seed: resolve(o.seed, &file, "seed", defaults.seed)?,
                checkpoint_interval: resolve(o.checkpoint_every, &file, "checkpoint-every", 0)?,
                ..defaults
            };
            let args = TrainArgs {
                manifest: required(o.manifest, &file, "manifest")?,
                variant,
                config,
                out: required(o.out, &file, "out")?,
                train_fraction: resolve(o.train_fraction, &file, "train-fraction", 0.875)?,
                resume: o.resume,
            };
            let report = cmd_train(&args, &mut io::stdout())?;
            println!(
                "trained on {} examples ({} validation); model written to {}",
                report.train_size,
                report.val_size,
                report.model.display()
            );
        }
        Command::Eval(o) => {
            check_keys(&file, &["model", "manifest", "out"]);
            let args = EvalArgs {
                model: required(o.model, &file, "model")?,
                manifest: required(o.manifest, &file, "manifest")?,
                out: required(o.out, &file, "out")?,
            };
            let r = cmd_eval(&args)?;
            let auc = r.auc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "undefined".into());
            println!("n={} accuracy={:.4} auc={auc}", r.n, r.accuracy);
            println!(
                "tp={} fn={} fp={} tn={}",
                r.confusion.tp, r.confusion.fn_, r.confusion.fp, r.confusion.tn
            );
        }
        Command::Saliency(o) => {
            check_keys(&file, &["model", "manifest", "out", "pgm", "bins"]);
            let args = SaliencyArgs {
                model: required(o.model, &file, "model")?,
                manifest: required(o.manifest, &file, "manifest")?,
                out: required(o.out, &file, "out")?,
                pgm: resolve(o.pgm, &file, "pgm", 0)?,
                bins: resolve(o.bins, &file, "bins", 20)?,
            };
            let r = cmd_saliency(&args)?;
            for q in rb_core::metrics::Quadrant::ALL {
                let s = r.summary.get(q);
                println!(
                    "{}: n={} dominant diff/srch/tmpl={}/{}/{}",
                    q.as_str(),
                    s.count,
                    s.dominant_diff,
                    s.dominant_srch,
                    s.dominant_tmpl
                );
            }
        }
    }
    Ok(())
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("RB_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("RB_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match init_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
