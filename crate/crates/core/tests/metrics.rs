use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rb_core::metrics::{confusion, roc_auc, ConfusionMatrix};
use rb_core::Label;

fn mann_whitney(labels: &[Label], scores: &[f64]) -> f64 {
    let pos: Vec<f64> = labels.iter().zip(scores).filter(|(l, _)| **l == Label::Real).map(|(_, s)| *s).collect();
    let neg: Vec<f64> = labels.iter().zip(scores).filter(|(l, _)| **l == Label::Bogus).map(|(_, s)| *s).collect();
    let mut u = 0.0;
    for p in &pos {
        for n in &neg {
            u += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
        }
    }
    u / (pos.len() * neg.len()) as f64
}

fn random_set(rng: &mut ChaCha8Rng, n: usize, levels: u32) -> (Vec<Label>, Vec<f64>) {
    loop {
        let labels: Vec<Label> = (0..n).map(|_| if rng.random() { Label::Real } else { Label::Bogus }).collect();
        if labels.contains(&Label::Real) && labels.contains(&Label::Bogus) {
            // coarse levels force plenty of ties
            let scores = (0..n).map(|_| rng.random_range(0..=levels) as f64 / levels as f64).collect();
            return (labels, scores);
        }
    }
}

#[test]
fn trapezoid_matches_pair_counting() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..50 {
        let levels = if i % 2 == 0 { 20 } else { 1_000_000 };
        let (labels, scores) = random_set(&mut rng, 200, levels);
        let auc = roc_auc(&labels, &scores).unwrap().auc;
        assert!((auc - mann_whitney(&labels, &scores)).abs() < 1e-12);
    }
}

#[test]
fn survey_confusion_rates() {
    let cm = ConfusionMatrix::from_counts(9564, 514, 288, 9634);
    let r = cm.rates();
    let pct = |v: Option<f64>| (v.unwrap() * 100.0).round();
    assert_eq!(cm.tp + cm.fn_, 10_078);
    assert_eq!((pct(r.tpr), pct(r.fnr), pct(r.fpr), pct(r.tnr)), (95.0, 5.0, 3.0, 97.0));
    assert_eq!(cm.total(), 20_000);
}

#[test]
fn uninformative_scores_give_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let labels: Vec<Label> = (0..10_000).map(|i| if i % 2 == 0 { Label::Real } else { Label::Bogus }).collect();
    let scores: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
    let auc = roc_auc(&labels, &scores).unwrap().auc;
    assert!((auc - 0.5).abs() < 0.02, "{auc}");
}

proptest! {
    #[test]
    fn roc_is_monotone_with_exact_endpoints(seed in any::<u64>(), n in 2usize..120) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (labels, scores) = random_set(&mut rng, n, 10);
        let roc = roc_auc(&labels, &scores).unwrap();
        let (first, last) = (roc.points[0], *roc.points.last().unwrap());
        prop_assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in roc.points.windows(2) {
            prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr && w[1].threshold < w[0].threshold);
        }
        prop_assert!((0.0..=1.0).contains(&roc.auc));
    }

    #[test]
    fn auc_invariant_under_monotone_transform(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (labels, scores) = random_set(&mut rng, 60, 15);
        let squashed: Vec<f64> = scores.iter().map(|s| s.powi(3)).collect();
        prop_assert_eq!(roc_auc(&labels, &scores).unwrap().auc, roc_auc(&labels, &squashed).unwrap().auc);
    }

    #[test]
    fn confusion_invariant_under_reordering(seed in any::<u64>(), n in 0usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<Label> = (0..n).map(|_| if rng.random() { Label::Real } else { Label::Bogus }).collect();
        let preds: Vec<Label> = (0..n).map(|_| if rng.random() { Label::Real } else { Label::Bogus }).collect();
        let cm = confusion(&labels, &preds).unwrap();
        prop_assert_eq!(cm.total(), n as u64);
        let mut pairs: Vec<_> = labels.iter().copied().zip(preds.iter().copied()).collect();
        pairs.reverse();
        pairs.rotate_left(n / 3);
        let (l2, p2): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        prop_assert_eq!(confusion(&l2, &p2).unwrap(), cm);
    }
}
