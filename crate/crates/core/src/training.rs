//! Dataset splitting, the minibatch SGD loop, evaluation and checkpoints.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::{save_model, write_atomic};
use crate::dataset::{Label, Labeled};
use crate::error::{Error, Result};
use crate::nn::ops::sparse_categorical_crossentropy;
use crate::nn::{Gradients, Mode, ModelVariant, Network};
use crate::preprocess::CompositeImage;
use crate::rng::{self, Purpose};

/// Examples per gradient partial sum; partial sums are added in a fixed order.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Write a checkpoint every this many epochs (0 disables checkpoints).
    pub checkpoint_interval: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainConfig {
    pub fn for_variant(variant: ModelVariant) -> Self {
        Self {
            epochs: variant.default_epochs(),
            learning_rate: 0.01,
            batch_size: 128,
            seed: 0,
            shuffle: true,
            checkpoint_interval: 0,
            checkpoint_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and non-negative", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.checkpoint_interval > 0 && self.checkpoint_dir.is_none() {
            return Err(Error::Config("checkpoint interval set without a checkpoint directory".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self> {
        let mut records = Vec::new();
        for line in r.lines() {
            let line = line?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        write_atomic(path, &buf)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Stratified split: each class contributes `round(n_class * fraction)`
/// examples to the training side (adjusted so the total is
/// `round(n * fraction)`). Both halves keep the input order.
pub fn split_dataset<T: Labeled + Clone>(sets: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if sets.is_empty() {
        return Err(Error::Parameter("cannot split an empty dataset".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Parameter(format!("split fraction {fraction} outside (0, 1)")));
    }
    let by_class: Vec<Vec<usize>> = [Label::Real, Label::Bogus]
        .iter()
        .map(|&l| (0..sets.len()).filter(|&i| sets[i].label() == l).collect())
        .collect();
    let total = (sets.len() as f64 * fraction).round() as usize;
    let real = ((by_class[0].len() as f64 * fraction).round() as usize).min(total);
    let counts = [real, (total - real).min(by_class[1].len())];

    let mut in_train = vec![false; sets.len()];
    for (class, (indices, &take)) in by_class.iter().zip(&counts).enumerate() {
        let mut shuffled = indices.clone();
        rng::shuffle(&mut shuffled, &mut rng::stream(seed, Purpose::Split, class as u64));
        for &i in &shuffled[..take] {
            in_train[i] = true;
        }
    }
    let (train, val): (Vec<_>, Vec<_>) = sets.iter().zip(&in_train).partition(|(_, &t)| t);
    Ok((train.into_iter().map(|(s, _)| s.clone()).collect(), val.into_iter().map(|(s, _)| s.clone()).collect()))
}

/// Per-example outputs of [`evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
    pub labels: Vec<Label>,
    /// `P(real)` for each example.
    pub scores: Vec<f64>,
    pub predictions: Vec<Label>,
}

/// Class with the larger probability; exact ties go to real.
pub fn predicted_label(p_real: f64, p_bogus: f64) -> Label {
    if p_bogus > p_real { Label::Bogus } else { Label::Real }
}

fn labels_of(sets: &[CompositeImage]) -> Result<Vec<Label>> {
    sets.iter()
        .map(|c| c.label.ok_or_else(|| Error::Parameter(format!("composite `{}` has no label", c.id))))
        .collect()
}

fn check_widths(network: &Network, sets: &[CompositeImage], what: &str) -> Result<()> {
    for c in sets {
        if c.pixels().shape() != network.input_shape() {
            return Err(Error::Config(format!(
                "{what} composite `{}` is {:?} but the network expects {:?}",
                c.id,
                c.pixels().shape(),
                network.input_shape()
            )));
        }
    }
    Ok(())
}

/// Runs an eval-mode network over labeled composites.
pub fn evaluate(network: &Network, sets: &[CompositeImage]) -> Result<Evaluation> {
    if sets.is_empty() {
        return Err(Error::Parameter("cannot evaluate an empty set".into()));
    }
    if network.mode() != Mode::Eval {
        return Err(Error::Contract("evaluation requires a network in eval mode".into()));
    }
    check_widths(network, sets, "evaluation")?;
    let labels = labels_of(sets)?;
    let outputs: Vec<(f64, f64)> = sets
        .par_iter()
        .zip(&labels)
        .map(|(c, &l)| {
            let probs = network.predict(c.pixels())?;
            let (loss, _) = sparse_categorical_crossentropy(&probs, l.index())?;
            Ok((probs.data()[0], loss))
        })
        .collect::<Result<_>>()?;
    let scores: Vec<f64> = outputs.iter().map(|o| o.0).collect();
    let predictions: Vec<Label> = scores.iter().map(|&p| predicted_label(p, 1.0 - p)).collect();
    let correct = predictions.iter().zip(&labels).filter(|(p, l)| p == l).count();
    let n = sets.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        loss: outputs.iter().map(|o| o.1).sum::<f64>() / n,
        labels,
        scores,
        predictions,
    })
}

struct Partial {
    grads: Gradients,
    loss: f64,
    correct: usize,
}

/// Where a resumed run picks up: completed epochs and their history.
#[derive(Debug, Clone)]
pub struct ResumePoint {
    pub epoch: usize,
    pub history: History,
}

pub fn train(network: Network, train: &[CompositeImage], val: &[CompositeImage], config: &TrainConfig) -> Result<(Network, History)> {
    train_with(network, train, val, config, None, &mut |_| {})
}

/// Full training loop. Optional `resume` continues after a checkpoint (the
/// network must already hold the checkpointed parameters); `on_epoch` sees
/// each completed epoch's record.
pub fn train_with(
    mut network: Network,
    train: &[CompositeImage],
    val: &[CompositeImage],
    config: &TrainConfig,
    resume: Option<ResumePoint>,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<(Network, History)> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Parameter(format!("need non-empty train and validation sets ({} / {})", train.len(), val.len())));
    }
    check_widths(&network, train, "training")?;
    check_widths(&network, val, "validation")?;
    let labels = labels_of(train)?;
    labels_of(val)?;
    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }

    let (start, mut history) = match resume {
        Some(r) if r.epoch != r.history.len() => {
            return Err(Error::Contract(format!("resume at epoch {} with {} history records", r.epoch, r.history.len())));
        }
        Some(r) => (r.epoch, r.history),
        None => (0, History::default()),
    };

    for epoch in start + 1..=config.epochs {
        network.set_mode(Mode::Train);
        let mut order: Vec<usize> = (0..train.len()).collect();
        if config.shuffle {
            rng::shuffle(&mut order, &mut rng::stream(config.seed, Purpose::Shuffle, epoch as u64));
        }
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let offset = b * config.batch_size;
            let partials: Vec<Partial> = batch
                .par_chunks(CHUNK)
                .enumerate()
                .map(|(c, chunk)| {
                    let mut part = Partial { grads: Gradients::zeros_like(&network), loss: 0.0, correct: 0 };
                    for (k, &i) in chunk.iter().enumerate() {
                        let position = (offset + c * CHUNK + k) as u64;
                        let mut drop_rng = rng::stream(config.seed, Purpose::Dropout, (epoch as u64) << 32 | position);
                        let trace = network.forward(train[i].pixels(), Some(&mut drop_rng))?;
                        let probs = trace.probabilities();
                        let (loss, grad) = sparse_categorical_crossentropy(&probs, labels[i].index())?;
                        network.backward(&trace, &grad, &mut part.grads, None)?;
                        part.loss += loss;
                        part.correct += usize::from(predicted_label(probs.data()[0], probs.data()[1]) == labels[i]);
                    }
                    Ok(part)
                })
                .collect::<Result<_>>()?;
            let mut parts = partials.into_iter();
            let mut total = parts.next().expect("non-empty batch");
            for p in parts {
                total.grads.add_assign(&p.grads)?;
                total.loss += p.loss;
                total.correct += p.correct;
            }
            if !total.loss.is_finite() || !total.grads.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss or gradient in epoch {epoch}, batch {b} (batch loss {})",
                    total.loss
                )));
            }
            total.grads.scale(1.0 / batch.len() as f64);
            network.apply_sgd(&total.grads, config.learning_rate)?;
            loss_sum += total.loss;
            correct += total.correct;
        }

        network.set_mode(Mode::Eval);
        let v = evaluate(&network, val)?;
        if !v.loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite validation loss in epoch {epoch}")));
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            val_loss: v.loss,
            val_acc: v.accuracy,
        };
        history.records.push(record);
        on_epoch(&record);

        if let Some(dir) = &config.checkpoint_dir {
            history.save(&dir.join(HISTORY_FILE))?;
            if config.checkpoint_interval > 0 && (epoch % config.checkpoint_interval == 0 || epoch == config.epochs) {
                write_checkpoint(dir, epoch, &network)?;
            }
        }
    }
    network.set_mode(Mode::Eval);
    Ok((network, history))
}

pub const HISTORY_FILE: &str = "history.jsonl";
const STATE_MAGIC: &[u8; 4] = b"RBST";

fn checkpoint_stem(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("ckpt_epoch{epoch:04}"))
}

/// Writes `ckpt_epochNNNN.rbnn` plus a `.state` file with the exact f64
/// parameters needed for a bitwise-identical resume.
pub fn write_checkpoint(dir: &Path, epoch: usize, network: &Network) -> Result<()> {
    let stem = checkpoint_stem(dir, epoch);
    save_model(network, &stem.with_extension("rbnn"))?;
    let params = network.flat_params();
    let mut buf = Vec::with_capacity(24 + params.len() * 8);
    buf.extend_from_slice(STATE_MAGIC);
    buf.extend_from_slice(&(epoch as u64).to_le_bytes());
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    write_atomic(&stem.with_extension("state"), &buf)
}

fn read_state(path: &Path) -> Result<(usize, Vec<f64>)> {
    let bytes = std::fs::read(path)?;
    let corrupt = |m: &str| Error::Corrupt(format!("{}: {m}", path.display()));
    if bytes.len() < 24 || &bytes[..4] != STATE_MAGIC {
        return Err(corrupt("not a checkpoint state file"));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().expect("4")) {
        return Err(corrupt("CRC mismatch"));
    }
    let epoch = u64::from_le_bytes(body[4..12].try_into().expect("8")) as usize;
    let n = u64::from_le_bytes(body[12..20].try_into().expect("8")) as usize;
    if body.len() != 20 + n * 8 {
        return Err(corrupt("length does not match parameter count"));
    }
    let params = body[20..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8"))).collect();
    Ok((epoch, params))
}

/// Finds the newest checkpoint in `dir`, loads its parameters into `network`
/// and returns the matching resume point.
pub fn resume_from(dir: &Path, network: &mut Network) -> Result<Option<ResumePoint>> {
    let mut latest: Option<(usize, PathBuf)> = None;
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let epoch = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("ckpt_epoch"))
            .and_then(|n| n.strip_suffix(".state"))
            .and_then(|n| n.parse::<usize>().ok());
        if let Some(e) = epoch {
            if latest.as_ref().is_none_or(|(best, _)| e > *best) {
                latest = Some((e, path));
            }
        }
    }
    let Some((_, path)) = latest else { return Ok(None) };
    let (epoch, params) = read_state(&path)?;
    network.set_flat_params(&params)?;
    let mut history = History::load(&dir.join(HISTORY_FILE))?;
    if history.len() < epoch {
        return Err(Error::Corrupt(format!("history has {} records, checkpoint is at epoch {epoch}", history.len())));
    }
    history.records.truncate(epoch);
    Ok(Some(ResumePoint { epoch, history }))
}
