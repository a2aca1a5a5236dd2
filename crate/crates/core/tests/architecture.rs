use proptest::prelude::*;
use rb_core::nn::ops::{conv2d_forward, maxpool_forward};
use rb_core::nn::{build_dia_architecture, build_nodia_architecture, Activation};
use rb_core::{LayerSpec, ModelVariant, Network, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
enum L {
    Conv(usize, usize),
    Pool,
    Drop,
    Flat,
    Dense(usize, Activation),
}

const DIA: [L; 12] = [
    L::Conv(16, 5), L::Pool, L::Drop,
    L::Conv(32, 5), L::Pool, L::Drop,
    L::Conv(64, 5), L::Pool, L::Drop,
    L::Flat, L::Dense(32, Activation::Relu), L::Dense(2, Activation::Softmax),
];

const NODIA: [L; 11] = [
    L::Conv(1, 7), L::Pool,
    L::Conv(16, 3), L::Pool, L::Drop,
    L::Conv(32, 3), L::Pool, L::Drop,
    L::Flat, L::Dense(32, Activation::Relu), L::Dense(2, Activation::Softmax),
];

fn describe(spec: &LayerSpec) -> L {
    match *spec {
        LayerSpec::Conv2D { filters, kernel: (kh, kw), activation } => {
            assert_eq!((kh, activation), (kw, Activation::Relu));
            L::Conv(filters, kh)
        }
        LayerSpec::MaxPool2D => L::Pool,
        LayerSpec::Dropout { rate } => {
            assert_eq!(rate, 0.4);
            L::Drop
        }
        LayerSpec::Flatten => L::Flat,
        LayerSpec::Dense { units, activation } => L::Dense(units, activation),
    }
}

/// Output shapes and parameter count by walking the layer list by hand.
fn walk(input: [usize; 3], layers: &[L]) -> (Vec<Vec<usize>>, usize) {
    let mut shape = input.to_vec();
    let mut shapes = Vec::new();
    let mut params = 0;
    for &l in layers {
        shape = match l {
            L::Conv(f, k) => {
                params += k * k * shape[2] * f + f;
                vec![shape[0] - k + 1, shape[1] - k + 1, f]
            }
            L::Pool => vec![shape[0] / 2, shape[1] / 2, shape[2]],
            L::Drop => shape,
            L::Flat => vec![shape.iter().product()],
            L::Dense(m, _) => {
                params += shape[0] * m + m;
                vec![m]
            }
        };
        shapes.push(shape.clone());
    }
    (shapes, params)
}

fn check(net: &Network, expected: &[L], input: [usize; 3], pinned_params: usize) {
    assert_eq!(net.input_shape(), input);
    let layers: Vec<L> = net.layers().iter().map(describe).collect();
    assert_eq!(layers, expected);
    let (shapes, params) = walk(input, expected);
    assert_eq!(params, pinned_params);
    assert_eq!(net.param_count(), pinned_params);
    assert_eq!(net.layer_shapes(), shapes.as_slice());
    let x = Tensor::from_fn(&input, |i| ((i * 37) % 101) as f64 / 101.0);
    let trace = net.forward(&x, None).unwrap();
    for (i, s) in shapes.iter().enumerate() {
        assert_eq!(trace.layer_output(i).shape(), s.as_slice(), "layer {i}");
    }
    let p = trace.probabilities();
    assert!((p.sum() - 1.0).abs() < 1e-12);
}

#[test]
fn dia_architecture() {
    let net = build_dia_architecture(1);
    check(&net, &DIA, [51, 153, 1], 126_050);
    let (shapes, _) = walk([51, 153, 1], &DIA);
    assert_eq!(shapes[8], vec![2, 15, 64]);
    assert_eq!(shapes[9], vec![1920]);
}

#[test]
fn nodia_architecture() {
    let net = build_nodia_architecture(1);
    check(&net, &NODIA, [51, 102, 1], 45_908);
    let (shapes, _) = walk([51, 102, 1], &NODIA);
    assert_eq!(shapes[8], vec![1280]);
}

#[test]
fn variant_round_trips() {
    for v in [ModelVariant::Dia, ModelVariant::NoDia] {
        assert_eq!(v.to_string().parse::<ModelVariant>().unwrap(), v);
        assert_eq!(ModelVariant::from_input_shape(&v.input_shape()), Some(v));
    }
    assert!("resnet".parse::<ModelVariant>().is_err());
}

#[test]
fn invalid_layer_lists_rejected() {
    let bad_head = vec![LayerSpec::Flatten, LayerSpec::dense(3, Activation::Softmax)];
    assert!(Network::new([8, 8, 1], bad_head, 0).is_err());
    let too_big = vec![LayerSpec::conv(2, 9), LayerSpec::Flatten, LayerSpec::dense(2, Activation::Softmax)];
    assert!(Network::new([8, 8, 1], too_big, 0).is_err());
    let early_softmax = vec![
        LayerSpec::Flatten,
        LayerSpec::dense(4, Activation::Softmax),
        LayerSpec::dense(2, Activation::Softmax),
    ];
    assert!(Network::new([4, 4, 1], early_softmax, 0).is_err());
}

proptest! {
    #[test]
    fn conv_and_pool_shape_algebra(h in 1usize..12, w in 1usize..12, c in 1usize..4, f in 1usize..4, k in 1usize..5) {
        prop_assume!(k <= h && k <= w);
        let x = Tensor::from_fn(&[h, w, c], |i| i as f64 * 0.1);
        let kernel = Tensor::from_fn(&[k, k, c, f], |i| (i % 7) as f64 - 3.0);
        let y = conv2d_forward(&x, &kernel, &Tensor::zeros(&[f])).unwrap();
        prop_assert_eq!(y.shape(), &[h - k + 1, w - k + 1, f]);
        if h >= 2 && w >= 2 {
            let (p, _) = maxpool_forward(&x).unwrap();
            prop_assert_eq!(p.shape(), &[h / 2, w / 2, c]);
        }
    }

    #[test]
    fn initialization_and_inference_are_deterministic(seed in any::<u64>()) {
        let a = ModelVariant::NoDia.build(seed);
        let b = ModelVariant::NoDia.build(seed);
        prop_assert_eq!(a.flat_params(), b.flat_params());
        let x = Tensor::from_fn(&[51, 102, 1], |i| ((i as u64 ^ seed) % 13) as f64 / 13.0);
        let la = a.logits(&x).unwrap();
        let lb = b.logits(&x).unwrap();
        prop_assert_eq!(la.data(), lb.data());
    }
}
