use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rb_core::metrics::Quadrant;
use rb_core::nn::Activation;
use rb_core::preprocess::{composite_from_pixels, preprocess_all};
use rb_core::saliency::{dominant_third, importance, quadrant_summary, saliency_map, write_examples_csv};
use rb_core::synth::{generate_dataset, SceneConfig};
use rb_core::{CompositeImage, Label, Layout, LayerSpec, ModelVariant, Network, Tensor};

fn random_composite(layout: Layout, seed: u64) -> CompositeImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let px = Tensor::from_fn(&[51, layout.width(), 1], |_| rng.random::<f64>() * 2.0 - 1.0);
    composite_from_pixels(layout, px).unwrap().with_meta(format!("c{seed}"), Some(Label::Real))
}

#[test]
fn linear_network_map_is_absolute_weight() {
    let mut net = Network::new([51, 102, 1], vec![LayerSpec::Flatten, LayerSpec::dense(2, Activation::Softmax)], 1).unwrap();
    let n = net.param_count();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut params: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    // dense weights are [inputs, 2]; pin the largest class-1 weight to -1
    params[2 * 77 + 1] = -1.0;
    net.set_flat_params(&params).unwrap();
    let map = saliency_map(&net, &random_composite(Layout::Pair, 3), Some(1)).unwrap();
    for (i, v) in map.values.data().iter().enumerate() {
        assert_eq!(*v, params[2 * i + 1].abs());
    }
    assert_eq!(map.values.max_abs(), 1.0);
}

fn conv_net(seed: u64) -> Network {
    let layers = vec![
        LayerSpec::conv(3, 5),
        LayerSpec::MaxPool2D,
        LayerSpec::conv(4, 3),
        LayerSpec::MaxPool2D,
        LayerSpec::Flatten,
        LayerSpec::dense(8, Activation::Relu),
        LayerSpec::dense(2, Activation::Softmax),
    ];
    Network::new([51, 153, 1], layers, seed).unwrap()
}

#[test]
fn raw_gradient_matches_finite_differences() {
    let net = conv_net(4);
    let image = random_composite(Layout::Triplet, 5);
    for class in [0, 1] {
        let map = saliency_map(&net, &image, Some(class)).unwrap();
        // recover the raw scale from the largest-gradient pixel
        let (argmax, _) = map.values.data().iter().enumerate().fold((0, 0.0), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
        let score = |px: &Tensor| net.logits(px).unwrap().data()[class];
        let fd = |i: usize| {
            let h = 1e-5;
            let (mut plus, mut minus) = (image.pixels().clone(), image.pixels().clone());
            plus.data_mut()[i] += h;
            minus.data_mut()[i] -= h;
            (score(&plus) - score(&minus)) / (2.0 * h)
        };
        let scale = fd(argmax).abs();
        let mut rng = ChaCha8Rng::seed_from_u64(class as u64);
        for _ in 0..10 {
            let i = rng.random_range(0..image.pixels().len());
            let expected = fd(i).abs();
            let got = map.values.data()[i] * scale;
            let err = (got - expected).abs() / expected.max(1e-3 * scale);
            assert!(err < 1e-4, "pixel {i}: {got} vs {expected}");
        }
    }
}

#[test]
fn normalized_maxima() {
    for seed in 0..3 {
        let map = saliency_map(&conv_net(seed), &random_composite(Layout::Triplet, seed), None).unwrap();
        assert!(!map.degenerate);
        assert_eq!(map.values.data().iter().cloned().fold(0.0, f64::max), 1.0);
        assert!(map.values.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let wrong = random_composite(Layout::Pair, 1);
    assert!(saliency_map(&conv_net(0), &wrong, None).is_err());
}

#[test]
fn zero_gradient_is_flagged() {
    let mut net = conv_net(1);
    let zeros = vec![0.0; net.param_count()];
    net.set_flat_params(&zeros).unwrap();
    let map = saliency_map(&net, &random_composite(Layout::Triplet, 2), None).unwrap();
    assert!(map.degenerate);
    assert!(map.values.data().iter().all(|&v| v == 0.0));
}

#[test]
fn quadrant_counts() {
    let sets = generate_dataset(8, 0.5, &SceneConfig::default(), 6).unwrap();
    let composites = preprocess_all(&sets, ModelVariant::Dia).unwrap().0;
    let net = ModelVariant::Dia.build(2);
    let (examples, summary) = quadrant_summary(&net, &composites).unwrap();
    assert_eq!(examples.len(), 8);
    let total: usize = Quadrant::ALL.iter().map(|&q| summary.get(q).count).sum();
    assert_eq!(total, 8);
    for q in Quadrant::ALL {
        let s = summary.get(q);
        assert_eq!(s.dominant_diff + s.dominant_srch + s.dominant_tmpl + s.undefined, s.count);
    }
    for e in &examples {
        let t = e.importance.unwrap();
        assert!((t.i_diff.unwrap() + t.i_srch + t.i_tmpl - 1.0).abs() < 1e-12);
    }
    let mut buf = Vec::new();
    write_examples_csv(&examples, &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 9);
}

#[test]
fn perfect_classifier_has_no_errors() {
    // logit difference tracks the diff slab's total, which sets the label
    let mut net = Network::new([51, 153, 1], vec![LayerSpec::Flatten, LayerSpec::dense(2, Activation::Softmax)], 0).unwrap();
    let n = net.param_count();
    let params: Vec<f64> = (0..n)
        .map(|i| {
            let (pixel, class) = (i / 2, i % 2);
            let in_diff = i < n - 2 && pixel % 153 < 51;
            if in_diff { if class == 0 { 1.0 } else { -1.0 } } else { 0.0 }
        })
        .collect();
    net.set_flat_params(&params).unwrap();
    let data: Vec<CompositeImage> = (0..12)
        .map(|i| {
            let c = random_composite(Layout::Triplet, 100 + i);
            let diff_sum: f64 = c.slab(rb_core::Role::Diff).unwrap().sum();
            let label = if diff_sum > 0.0 { Label::Real } else { Label::Bogus };
            c.with_meta(format!("p{i}"), Some(label))
        })
        .collect();
    let (examples, summary) = quadrant_summary(&net, &data).unwrap();
    assert!(summary.get(Quadrant::Fp).is_empty() && summary.get(Quadrant::Fn).is_empty());
    assert_eq!(summary.get(Quadrant::Tp).count + summary.get(Quadrant::Tn).count, 12);
    assert!(examples.iter().all(|e| e.dominant == Some(rb_core::Role::Diff)));
}

proptest! {
    #[test]
    fn importance_sums_to_one(seed in any::<u64>(), triplet in any::<bool>()) {
        let layout = if triplet { Layout::Triplet } else { Layout::Pair };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = Tensor::from_fn(&[51, layout.width()], |_| rng.random::<f64>().powi(4));
        let t = importance(&map, layout).unwrap();
        let sum = t.i_diff.unwrap_or(0.0) + t.i_srch + t.i_tmpl;
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert_eq!(t.i_diff.is_some(), triplet);
    }

    #[test]
    fn dominance_is_scale_invariant(seed in any::<u64>(), scale in 1e-6f64..1e6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = Tensor::from_fn(&[51, 153], |_| rng.random::<f64>());
        let mut scaled = map.clone();
        scaled.scale(scale);
        let a = dominant_third(&importance(&map, Layout::Triplet).unwrap());
        let b = dominant_third(&importance(&scaled, Layout::Triplet).unwrap());
        prop_assert_eq!(a, b);
    }
}
