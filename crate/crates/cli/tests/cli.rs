use std::fs;
use std::path::Path;
use std::process::Command;

use rb_cli::config_file::ConfigFile;
use rb_cli::{cmd_eval, cmd_gen, cmd_saliency, cmd_train, EvalArgs, GenArgs, SaliencyArgs, TrainArgs};
use rb_core::data_io::{load_manifest, save_model, Split};
use rb_core::nn::Activation;
use rb_core::training::{History, TrainConfig};
use rb_core::{LayerSpec, ModelVariant, Network};

fn rb() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rb"))
}

fn gen(dir: &Path, n: usize, variant: ModelVariant, test_fraction: f64, seed: u64) -> GenArgs {
    GenArgs { n, real_fraction: 0.5, seed, out: dir.to_path_buf(), variant, test_fraction, bitpix: -32 }
}

fn fits_count(dir: &Path) -> usize {
    fs::read_dir(dir.join("stamps")).unwrap().filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "fits").count()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_writes_stamps_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    let report = cmd_gen(&gen(&a, 10, ModelVariant::Dia, 0.2, 4)).unwrap();
    assert_eq!((report.rows, report.files), (10, 30));
    assert_eq!(fits_count(&a), 30);
    let manifest = load_manifest(&report.manifest).unwrap();
    assert_eq!(manifest.len(), 10);
    assert_eq!(manifest.with_split(Split::Test).count(), 2);
    assert_eq!(manifest.with_split(Split::Train).count(), 8);

    cmd_gen(&gen(&b, 10, ModelVariant::Dia, 0.2, 4)).unwrap();
    assert_eq!(dir_bytes(&a), dir_bytes(&b));

    let report = cmd_gen(&gen(&c, 10, ModelVariant::NoDia, 0.2, 4)).unwrap();
    assert_eq!(report.files, 20);
    assert_eq!(fits_count(&c), 20);
    assert!(load_manifest(&report.manifest).unwrap().rows.iter().all(|r| r.diff.is_none()));

    assert!(cmd_gen(&gen(&tmp.path().join("d"), 0, ModelVariant::Dia, 0.2, 4)).is_err());
}

#[test]
fn overfits_32_examples() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let report = cmd_gen(&gen(&data, 32, ModelVariant::NoDia, 0.0, 1)).unwrap();
    let args = TrainArgs {
        manifest: report.manifest,
        variant: ModelVariant::NoDia,
        config: TrainConfig { epochs: 60, batch_size: 4, seed: 3, ..TrainConfig::for_variant(ModelVariant::NoDia) },
        out: tmp.path().join("run"),
        train_fraction: 1.0,
        resume: false,
    };
    let mut log = Vec::new();
    let r = cmd_train(&args, &mut log).unwrap();
    assert_eq!(r.train_size, 32);
    let text = String::from_utf8(log).unwrap();
    assert_eq!(text.lines().count(), 60);
    assert!(text.lines().last().unwrap().contains("val_acc=1.0000"), "{text}");
    assert_eq!(r.history.last().unwrap().val_acc, 1.0);
    assert_eq!(History::load(&tmp.path().join("run/history.jsonl")).unwrap(), r.history);
    assert!(r.model.is_file());
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let manifest = cmd_gen(&gen(&data, 24, ModelVariant::NoDia, 0.25, 2)).unwrap().manifest;
    let args = |out: &str, epochs: usize, resume: bool| TrainArgs {
        manifest: manifest.clone(),
        variant: ModelVariant::NoDia,
        config: TrainConfig {
            epochs,
            batch_size: 4,
            seed: 8,
            checkpoint_interval: 1,
            ..TrainConfig::for_variant(ModelVariant::NoDia)
        },
        out: tmp.path().join(out),
        train_fraction: 0.75,
        resume,
    };
    let full = cmd_train(&args("full", 4, false), &mut std::io::sink()).unwrap();
    cmd_train(&args("part", 2, false), &mut std::io::sink()).unwrap();
    let mut log = Vec::new();
    let resumed = cmd_train(&args("part", 4, true), &mut log).unwrap();
    assert!(String::from_utf8(log).unwrap().starts_with("resuming after epoch 2"));
    assert_eq!(full.history, resumed.history);
    assert_eq!(fs::read(&full.model).unwrap(), fs::read(&resumed.model).unwrap());
}

/// Linear net whose real logit tracks the central 3x3 of the diff slab.
fn diff_sum_model(path: &Path) {
    let mut net = Network::new([51, 153, 1], vec![LayerSpec::Flatten, LayerSpec::dense(2, Activation::Softmax)], 0).unwrap();
    let n = net.param_count();
    let params: Vec<f64> = (0..n)
        .map(|i| {
            let (pixel, class) = (i / 2, i % 2);
            let centre = i < n - 2 && pixel % 153 < 51 && (pixel / 153).abs_diff(25) <= 1 && (pixel % 153).abs_diff(25) <= 1;
            match (centre, class) {
                (true, 0) => 1.0,
                (true, _) => -1.0,
                _ => 0.0,
            }
        })
        .collect();
    net.set_flat_params(&params).unwrap();
    save_model(&net, path).unwrap();
}

#[test]
fn eval_and_saliency_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let manifest = cmd_gen(&gen(&data, 20, ModelVariant::Dia, 0.2, 5)).unwrap().manifest;
    let model = tmp.path().join("model.rbnn");
    diff_sum_model(&model);

    let out = tmp.path().join("eval");
    let r = cmd_eval(&EvalArgs { model: model.clone(), manifest: manifest.clone(), out: out.clone() }).unwrap();
    assert_eq!(r.n, 4);
    let cm = r.confusion;
    assert_eq!(r.accuracy, (cm.tp + cm.tn) as f64 / r.n as f64);
    let roc = fs::read_to_string(out.join("roc.csv")).unwrap();
    let lines: Vec<&str> = roc.lines().collect();
    assert_eq!(lines[0], "fpr,tpr,threshold");
    assert!(lines[1].starts_with("0,0,"));
    assert!(lines.last().unwrap().starts_with("1,1,"));
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("variant,n,accuracy,auc,loss\ndia,4,"));
    assert_eq!(fs::read_to_string(out.join("predictions.csv")).unwrap().lines().count(), 5);

    let out = tmp.path().join("sal");
    let s = cmd_saliency(&SaliencyArgs { model, manifest, out: out.clone(), pgm: 2, bins: 5 }).unwrap();
    assert_eq!(s.examples.len(), 4);
    let csv = fs::read_to_string(out.join("importance.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    for row in rows {
        let f: Vec<&str> = row.split(',').collect();
        let sum: f64 = f[2..5].iter().map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-12, "{row}");
    }
    let total: usize = rb_core::metrics::Quadrant::ALL.iter().map(|&q| s.summary.get(q).count).sum();
    assert_eq!(total, 4);
    assert_eq!(fs::read_dir(out.join("maps")).unwrap().count(), 2);
}

#[test]
fn width_mismatch_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let manifest = cmd_gen(&gen(&data, 6, ModelVariant::NoDia, 0.0, 1)).unwrap().manifest;
    let args = TrainArgs {
        manifest,
        variant: ModelVariant::Dia,
        config: TrainConfig { epochs: 1, ..TrainConfig::for_variant(ModelVariant::Dia) },
        out: tmp.path().join("run"),
        train_fraction: 0.5,
        resume: false,
    };
    let err = cmd_train(&args, &mut std::io::sink()).unwrap_err();
    assert_eq!(rb_cli::exit_code(&err), 2, "{err}");
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = rb().args(["train", "--manifest"]).arg(tmp.path().join("none.csv")).arg("--out").arg(tmp.path()).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("not found"));

    let bad_variant = rb().args(["gen", "--n", "2", "--variant", "resnet", "--out"]).arg(tmp.path()).output().unwrap();
    assert_eq!(bad_variant.status.code(), Some(2));

    let corrupt = tmp.path().join("bad.rbnn");
    fs::write(&corrupt, b"not a model").unwrap();
    let data = tmp.path().join("data");
    cmd_gen(&gen(&data, 4, ModelVariant::Dia, 0.0, 1)).unwrap();
    let out = rb()
        .args(["eval", "--model"])
        .arg(&corrupt)
        .arg("--manifest")
        .arg(data.join("manifest.csv"))
        .arg("--out")
        .arg(tmp.path().join("e"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));

    let threads = rb().env("RB_THREADS", "zero").args(["gen", "--n", "1", "--out"]).arg(tmp.path().join("t")).output().unwrap();
    assert_eq!(threads.status.code(), Some(2));
}

#[test]
fn config_file_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, format!("n = 3\nseed = 9\ntest_fraction = 0\nout = {}\n", tmp.path().join("from_file").display())).unwrap();
    let status = rb().arg("gen").arg("--config").arg(&cfg).args(["--n", "2"]).status().unwrap();
    assert!(status.success());
    let m = load_manifest(&tmp.path().join("from_file/manifest.csv")).unwrap();
    assert_eq!(m.len(), 2);

    let direct = tmp.path().join("direct");
    cmd_gen(&gen(&direct, 2, ModelVariant::Dia, 0.0, 9)).unwrap();
    assert_eq!(dir_bytes(&direct), dir_bytes(&tmp.path().join("from_file")));
    assert_eq!(ConfigFile::load(&cfg).unwrap().get::<u64>("seed").unwrap(), Some(9));
}

#[test]
fn end_to_end_through_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run = |args: &[&str]| {
        let out = rb().current_dir(tmp.path()).args(args).output().unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    };
    run(&["gen", "--n", "16", "--seed", "3", "--out", data.to_str().unwrap(), "--bitpix", "16"]);
    let log = run(&["train", "--manifest", "data/manifest.csv", "--epochs", "2", "--batch", "4", "--out", "run"]);
    assert!(log.starts_with("epoch 1/2 "));
    let eval = run(&["eval", "--model", "run/model.rbnn", "--manifest", "data/manifest.csv", "--out", "eval"]);
    assert!(eval.starts_with("n=3 accuracy="), "{eval}");
    for f in ["confusion.csv", "roc.csv", "summary.csv", "predictions.csv"] {
        assert!(tmp.path().join("eval").join(f).is_file(), "{f}");
    }
    run(&["saliency", "--model", "run/model.rbnn", "--manifest", "data/manifest.csv", "--out", "sal"]);
    assert!(tmp.path().join("sal/quadrants.csv").is_file());
}
