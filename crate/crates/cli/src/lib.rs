//! Subcommands behind the `rb` binary. Each writes only under its output directory.

pub mod config_file;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rb_core::data_io::{
    load_dataset, load_manifest, load_model, load_rows, save_manifest, save_model, write_dataset, Manifest, Split,
};
use rb_core::metrics::{confusion, roc_auc, write_confusion_csv, write_roc_csv, ConfusionMatrix};
use rb_core::preprocess::preprocess_all;
use rb_core::saliency::{self, quadrant_summary, saliency_map, write_examples_csv, write_histogram_csv, write_quadrant_csv};
use rb_core::synth::{generate_dataset, SceneConfig};
use rb_core::training::{evaluate, resume_from, split_dataset, train_with, TrainConfig};
use rb_core::{CompositeImage, DiaSet, Error, Labeled, ModelVariant, Network, Result};

pub const MODEL_FILE: &str = "model.rbnn";
pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Clone)]
pub struct GenArgs {
    pub n: usize,
    pub real_fraction: f64,
    pub seed: u64,
    pub out: PathBuf,
    /// `NoDia` skips the difference stamps.
    pub variant: ModelVariant,
    /// Fraction of rows tagged `test` (stratified); the rest are tagged `train`.
    pub test_fraction: f64,
    pub bitpix: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenReport {
    pub rows: usize,
    pub files: usize,
    pub manifest: PathBuf,
}

pub fn cmd_gen(args: &GenArgs) -> Result<GenReport> {
    if args.n == 0 {
        return Err(Error::Config("n must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&args.test_fraction) {
        return Err(Error::Config(format!("test fraction {} outside [0, 1)", args.test_fraction)));
    }
    let mut sets = generate_dataset(args.n, args.real_fraction, &SceneConfig::default(), args.seed)?;
    if args.variant == ModelVariant::NoDia {
        sets.iter_mut().for_each(|s| s.diff = None);
    }
    let splits = tag_splits(&sets, args.test_fraction, args.seed)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::Config(format!("cannot create {}: {e}", args.out.display())))?;
    let rows = write_dataset(&sets, &splits, &args.out, args.bitpix)?;
    let manifest = args.out.join(MANIFEST_FILE);
    save_manifest(&rows, &manifest)?;
    let files = rows.iter().map(|r| 2 + usize::from(r.diff.is_some())).sum();
    Ok(GenReport { rows: rows.len(), files, manifest })
}

#[derive(Clone)]
struct Tagged(usize, rb_core::Label);

impl Labeled for Tagged {
    fn label(&self) -> rb_core::Label {
        self.1
    }
}

fn tag_splits(sets: &[DiaSet], test_fraction: f64, seed: u64) -> Result<Vec<Option<Split>>> {
    if test_fraction == 0.0 || sets.len() < 2 {
        return Ok(vec![Some(Split::Train); sets.len()]);
    }
    let items: Vec<Tagged> = sets.iter().enumerate().map(|(i, s)| Tagged(i, s.label)).collect();
    let (_, test) = split_dataset(&items, 1.0 - test_fraction, seed)?;
    let mut tags = vec![Some(Split::Train); sets.len()];
    for t in test {
        tags[t.0] = Some(Split::Test);
    }
    Ok(tags)
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub manifest: PathBuf,
    pub variant: ModelVariant,
    pub config: TrainConfig,
    pub out: PathBuf,
    /// Share of non-test rows used for training when no row is tagged `val`.
    /// At 1.0 every row trains and the training rows double as validation.
    pub train_fraction: f64,
    pub resume: bool,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: PathBuf,
    pub history: rb_core::training::History,
    pub train_size: usize,
    pub val_size: usize,
}

fn composites(sets: &[DiaSet], variant: ModelVariant) -> Result<Vec<CompositeImage>> {
    let (images, skipped) = preprocess_all(sets, variant)?;
    if !skipped.is_empty() {
        log::warn!("skipped {} degenerate sets", skipped.len());
    }
    Ok(images)
}

fn open_manifest(path: &Path) -> Result<Manifest> {
    if !path.is_file() {
        return Err(Error::Config(format!("manifest {} not found", path.display())));
    }
    load_manifest(path)
}

/// Trains on the manifest's non-test rows, printing one line per epoch to `log`.
pub fn cmd_train(args: &TrainArgs, log: &mut dyn Write) -> Result<TrainReport> {
    let mut config = args.config.clone();
    let ckpt_dir = args.out.join("checkpoints");
    config.checkpoint_dir = Some(ckpt_dir.clone());
    config.validate()?;
    let manifest = open_manifest(&args.manifest)?;
    let has_val = manifest.with_split(Split::Val).next().is_some();
    let (train_set, val_set) = if has_val {
        let pick = |keep: &dyn Fn(Option<Split>) -> bool| {
            load_rows(&manifest, manifest.rows.iter().filter(|r| keep(r.split)))
        };
        let train = composites(&pick(&|s| s != Some(Split::Test) && s != Some(Split::Val))?, args.variant)?;
        let val = composites(&pick(&|s| s == Some(Split::Val))?, args.variant)?;
        (train, val)
    } else {
        let rows = manifest.rows.iter().filter(|r| r.split != Some(Split::Test));
        let all = composites(&load_rows(&manifest, rows)?, args.variant)?;
        if all.is_empty() {
            return Err(Error::Config("manifest has no training rows".into()));
        }
        if args.train_fraction >= 1.0 {
            (all.clone(), all)
        } else {
            split_dataset(&all, args.train_fraction, args.config.seed)?
        }
    };

    fs::create_dir_all(&args.out).map_err(|e| Error::Config(format!("cannot create {}: {e}", args.out.display())))?;

    let mut network = args.variant.build(config.seed);
    let resume = if args.resume && ckpt_dir.is_dir() { resume_from(&ckpt_dir, &mut network)? } else { None };
    if let Some(r) = &resume {
        writeln!(log, "resuming after epoch {}", r.epoch)?;
    }
    let epochs = config.epochs;
    let mut io_result = Ok(());
    let (network, history) = train_with(network, &train_set, &val_set, &config, resume, &mut |r| {
        let line = writeln!(
            log,
            "epoch {}/{epochs} train_loss={:.5} train_acc={:.4} val_loss={:.5} val_acc={:.4}",
            r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc
        );
        if io_result.is_ok() {
            io_result = line;
        }
    })?;
    io_result?;
    let model = args.out.join(MODEL_FILE);
    save_model(&network, &model)?;
    history.save(&args.out.join("history.jsonl"))?;
    Ok(TrainReport { model, history, train_size: train_set.len(), val_size: val_set.len() })
}

fn model_and_data(model: &Path, manifest: &Path) -> Result<(Network, ModelVariant, Vec<CompositeImage>)> {
    let network = load_model(model)?;
    let variant = ModelVariant::from_input_shape(network.input_shape()).ok_or_else(|| {
        Error::Config(format!("model input {:?} is neither the dia nor the nodia shape", network.input_shape()))
    })?;
    let manifest = open_manifest(manifest)?;
    let sets = if manifest.with_split(Split::Test).next().is_some() {
        load_rows(&manifest, manifest.with_split(Split::Test))?
    } else {
        load_dataset(&manifest)?
    };
    let data = composites(&sets, variant)?;
    if data.is_empty() {
        return Err(Error::Config("no evaluation rows in the manifest".into()));
    }
    Ok((network, variant, data))
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub model: PathBuf,
    pub manifest: PathBuf,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n: usize,
    pub accuracy: f64,
    pub auc: Option<f64>,
    pub confusion: ConfusionMatrix,
}

/// Evaluates on the manifest's `test` rows (all rows if none are tagged).
pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    let (network, variant, data) = model_and_data(&args.model, &args.manifest)?;
    let eval = evaluate(&network, &data)?;
    let cm = confusion(&eval.labels, &eval.predictions)?;
    fs::create_dir_all(&args.out)?;
    write_confusion_csv(&cm, fs::File::create(args.out.join("confusion.csv"))?)?;
    let auc = match roc_auc(&eval.labels, &eval.scores) {
        Ok(roc) => {
            write_roc_csv(&roc, fs::File::create(args.out.join("roc.csv"))?)?;
            Some(roc.auc)
        }
        Err(Error::Undefined(msg)) => {
            log::warn!("ROC skipped: {msg}");
            None
        }
        Err(e) => return Err(e),
    };

    let mut pred = String::from("id,label,p_real,predicted\n");
    for ((c, l), (s, p)) in data.iter().zip(&eval.labels).zip(eval.scores.iter().zip(&eval.predictions)) {
        pred.push_str(&format!("{},{l},{s},{p}\n", c.id));
    }
    fs::write(args.out.join("predictions.csv"), pred)?;
    let summary = format!(
        "variant,n,accuracy,auc,loss\n{variant},{},{},{},{}\n",
        data.len(),
        eval.accuracy,
        auc.map(|a| a.to_string()).unwrap_or_default(),
        eval.loss
    );
    fs::write(args.out.join("summary.csv"), summary)?;
    Ok(EvalReport { n: data.len(), accuracy: eval.accuracy, auc, confusion: cm })
}

#[derive(Debug, Clone)]
pub struct SaliencyArgs {
    pub model: PathBuf,
    pub manifest: PathBuf,
    pub out: PathBuf,
    /// Number of examples to render as PGM maps.
    pub pgm: usize,
    pub bins: usize,
}

#[derive(Debug, Clone)]
pub struct SaliencyReport {
    pub examples: Vec<saliency::ExampleSaliency>,
    pub summary: saliency::QuadrantSummary,
}

pub fn cmd_saliency(args: &SaliencyArgs) -> Result<SaliencyReport> {
    let (network, _, data) = model_and_data(&args.model, &args.manifest)?;
    let (examples, summary) = quadrant_summary(&network, &data)?;
    fs::create_dir_all(&args.out)?;
    write_examples_csv(&examples, fs::File::create(args.out.join("importance.csv"))?)?;
    write_quadrant_csv(&summary, fs::File::create(args.out.join("quadrants.csv"))?)?;
    write_histogram_csv(&summary, args.bins, fs::File::create(args.out.join("histograms.csv"))?)?;
    if args.pgm > 0 {
        let dir = args.out.join("maps");
        fs::create_dir_all(&dir)?;
        for c in data.iter().take(args.pgm) {
            let map = saliency_map(&network, c, None)?;
            fs::write(dir.join(format!("{}.pgm", c.id)), saliency::to_pgm(&map))?;
        }
    }
    Ok(SaliencyReport { examples, summary })
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err.class() {
        rb_core::ErrorClass::Config => 2,
        rb_core::ErrorClass::Data => 3,
        rb_core::ErrorClass::Numeric => 4,
        rb_core::ErrorClass::Internal => 1,
    }
}
