use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rb_core::nn::Activation;
use rb_core::preprocess::{composite_from_pixels, preprocess_all};
use rb_core::synth::{generate_dataset, SceneConfig};
use rb_core::training::{
    evaluate, predicted_label, resume_from, split_dataset, train, train_with, TrainConfig, HISTORY_FILE,
};
use rb_core::{CompositeImage, Error, Label, Layout, LayerSpec, Mode, ModelVariant, Network, Tensor};

fn small_net(seed: u64) -> Network {
    let layers = vec![
        LayerSpec::conv(2, 3),
        LayerSpec::MaxPool2D,
        LayerSpec::Dropout { rate: 0.4 },
        LayerSpec::Flatten,
        LayerSpec::dense(2, Activation::Softmax),
    ];
    Network::new([51, 102, 1], layers, seed).unwrap()
}

fn pairs(n: usize, seed: u64) -> Vec<CompositeImage> {
    let sets = generate_dataset(n, 0.5, &SceneConfig::default(), seed).unwrap();
    preprocess_all(&sets, ModelVariant::NoDia).unwrap().0
}

fn config(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 4, seed: 17, ..TrainConfig::for_variant(ModelVariant::NoDia) }
}

#[test]
fn overfits_a_small_sample() {
    let data = pairs(32, 1);
    let cfg = TrainConfig { epochs: 60, batch_size: 4, seed: 3, ..TrainConfig::for_variant(ModelVariant::NoDia) };
    let (net, history) = train(ModelVariant::NoDia.build(3), &data, &data, &cfg).unwrap();
    assert_eq!(history.len(), 60);
    assert_eq!(evaluate(&net, &data).unwrap().accuracy, 1.0);
    assert_eq!(history.last().unwrap().val_acc, 1.0);
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let data = pairs(12, 2);
    let net = small_net(4);
    let before: Vec<u64> = net.flat_params().iter().map(|v| v.to_bits()).collect();
    let (after, _) = train(net, &data, &data, &TrainConfig { learning_rate: 0.0, ..config(1) }).unwrap();
    assert_eq!(after.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), before);
}

#[test]
fn seeded_runs_are_identical() {
    let data = pairs(24, 3);
    let (train_set, val_set) = split_dataset(&data, 0.75, 9).unwrap();
    let run = || train(small_net(5), &train_set, &val_set, &config(2)).unwrap();
    let (a, ha) = run();
    let (b, hb) = run();
    assert_eq!(ha, hb);
    assert_eq!(a.flat_params(), b.flat_params());
    assert_eq!(ha.len(), 2);
    let (c, _) = train(small_net(5), &train_set, &val_set, &TrainConfig { seed: 18, ..config(2) }).unwrap();
    assert_ne!(a.flat_params(), c.flat_params());
}

#[test]
fn resume_matches_uninterrupted_run() {
    let data = pairs(16, 4);
    let full_dir = tempfile::tempdir().unwrap();
    let cut_dir = tempfile::tempdir().unwrap();
    let with_ckpt = |dir: &std::path::Path, epochs| TrainConfig {
        checkpoint_interval: 2,
        checkpoint_dir: Some(dir.to_path_buf()),
        ..config(epochs)
    };

    let (full, full_history) = train(small_net(6), &data, &data, &with_ckpt(full_dir.path(), 4)).unwrap();
    for e in [2, 4] {
        assert!(full_dir.path().join(format!("ckpt_epoch{e:04}.rbnn")).is_file());
    }
    let sidecar = std::fs::read_to_string(full_dir.path().join(HISTORY_FILE)).unwrap();
    assert_eq!(sidecar.lines().count(), 4);

    train(small_net(6), &data, &data, &with_ckpt(cut_dir.path(), 3)).unwrap();
    // the run stopped after epoch 3; the newest checkpoint is epoch 2
    std::fs::remove_file(cut_dir.path().join("ckpt_epoch0003.state")).unwrap();
    let mut net = small_net(99);
    let point = resume_from(cut_dir.path(), &mut net).unwrap().unwrap();
    assert_eq!(point.epoch, 2);
    let mut seen = Vec::new();
    let (resumed, history) =
        train_with(net, &data, &data, &with_ckpt(cut_dir.path(), 4), Some(point), &mut |r| seen.push(r.epoch)).unwrap();
    assert_eq!(seen, vec![3, 4]);
    assert_eq!(history, full_history);
    let bits = |n: &Network| n.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&resumed), bits(&full));
}

fn flat_net(seed: u64) -> Network {
    Network::new([51, 102, 1], vec![LayerSpec::Flatten, LayerSpec::dense(2, Activation::Softmax)], seed).unwrap()
}

fn random_composites(n: usize, seed: u64, label_of: impl Fn(usize, &Tensor) -> Label) -> Vec<CompositeImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let px = Tensor::from_fn(&[51, 102, 1], |_| rng.random::<f64>() - 0.5);
            let label = label_of(i, &px);
            composite_from_pixels(Layout::Pair, px).unwrap().with_meta(format!("r{i}"), Some(label))
        })
        .collect()
}

#[test]
fn coin_flip_network_scores_half() {
    let data = random_composites(10_000, 7, |i, _| if i % 2 == 0 { Label::Real } else { Label::Bogus });
    let acc = evaluate(&flat_net(1), &data).unwrap().accuracy;
    assert!((acc - 0.5).abs() < 0.02, "{acc}");
}

#[test]
fn perfect_toy_classifier() {
    let data = random_composites(50, 8, |_, px| if px.sum() > 0.0 { Label::Real } else { Label::Bogus });
    let mut net = flat_net(0);
    let n = net.param_count();
    let params: Vec<f64> = (0..n).map(|i| if i < n - 2 { if i % 2 == 0 { 1.0 } else { -1.0 } } else { 0.0 }).collect();
    net.set_flat_params(&params).unwrap();
    let eval = evaluate(&net, &data).unwrap();
    assert_eq!(eval.accuracy, 1.0);
    assert!(eval.scores.iter().zip(&eval.labels).all(|(s, l)| (*s > 0.5) == (*l == Label::Real)));
}

#[test]
fn evaluation_is_side_effect_free() {
    let data = pairs(6, 5);
    let net = small_net(2);
    let before = net.flat_params();
    let a = evaluate(&net, &data).unwrap();
    let b = evaluate(&net, &data).unwrap();
    assert_eq!(a, b);
    assert_eq!(net.flat_params(), before);
    assert_eq!(net.mode(), Mode::Eval);
    assert!(evaluate(&net, &[]).is_err());
    let mut training = small_net(2);
    training.set_mode(Mode::Train);
    assert!(matches!(evaluate(&training, &data), Err(Error::Contract(_))));
}

#[test]
fn non_finite_loss_aborts() {
    let data = random_composites(4, 9, |i, _| if i % 2 == 0 { Label::Real } else { Label::Bogus });
    let poisoned: Vec<CompositeImage> = data
        .iter()
        .map(|c| composite_from_pixels(Layout::Pair, c.pixels().map(|v| if v > 0.4 { f64::NAN } else { v })).unwrap().with_meta(c.id.clone(), c.label))
        .collect();
    let err = train(flat_net(1), &poisoned, &poisoned, &config(1)).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)), "{err}");
}

#[test]
fn full_scale_split() {
    #[derive(Clone)]
    struct L(Label);
    impl rb_core::Labeled for L {
        fn label(&self) -> Label {
            self.0
        }
    }
    let items: Vec<L> = (0..100_000).map(|i| L(if i < 49_817 { Label::Real } else { Label::Bogus })).collect();
    let (train_set, val_set) = split_dataset(&items, 0.8, 1).unwrap();
    assert_eq!((train_set.len(), val_set.len()), (80_000, 20_000));
    let real_frac = |v: &[L]| v.iter().filter(|x| x.0 == Label::Real).count() as f64 / v.len() as f64;
    assert!((real_frac(&train_set) - real_frac(&val_set)).abs() < 0.02);
}

proptest! {
    #[test]
    fn half_threshold_agrees_with_argmax(p in 0.0f64..=1.0) {
        let by_threshold = if 1.0 - p > 0.5 { Label::Bogus } else { Label::Real };
        prop_assert_eq!(predicted_label(p, 1.0 - p), by_threshold);
    }
}
