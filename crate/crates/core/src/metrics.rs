//! Confusion matrices and ROC analysis. Real (label 0) is the positive class
//! and ROC scores are `P(real)`.

use std::io::Write;

use crate::dataset::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

/// Row-normalized rates; `None` where the row is empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub tpr: Option<f64>,
    pub fnr: Option<f64>,
    pub fpr: Option<f64>,
    pub tnr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quadrant {
    Tp,
    Fn,
    Fp,
    Tn,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [Quadrant::Tp, Quadrant::Fn, Quadrant::Fp, Quadrant::Tn];

    pub fn of(label: Label, predicted: Label) -> Self {
        match (label, predicted) {
            (Label::Real, Label::Real) => Quadrant::Tp,
            (Label::Real, Label::Bogus) => Quadrant::Fn,
            (Label::Bogus, Label::Real) => Quadrant::Fp,
            (Label::Bogus, Label::Bogus) => Quadrant::Tn,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Quadrant::Tp => "TP",
            Quadrant::Fn => "FN",
            Quadrant::Fp => "FP",
            Quadrant::Tn => "TN",
        }
    }
}

impl ConfusionMatrix {
    pub fn from_counts(tp: u64, fn_: u64, fp: u64, tn: u64) -> Self {
        Self { tp, fn_, fp, tn }
    }

    pub fn add(&mut self, label: Label, predicted: Label) {
        match Quadrant::of(label, predicted) {
            Quadrant::Tp => self.tp += 1,
            Quadrant::Fn => self.fn_ += 1,
            Quadrant::Fp => self.fp += 1,
            Quadrant::Tn => self.tn += 1,
        }
    }

    pub fn count(&self, q: Quadrant) -> u64 {
        match q {
            Quadrant::Tp => self.tp,
            Quadrant::Fn => self.fn_,
            Quadrant::Fp => self.fp,
            Quadrant::Tn => self.tn,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    pub fn accuracy(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| (self.tp + self.tn) as f64 / n as f64)
    }

    pub fn rates(&self) -> Rates {
        let ratio = |a: u64, b: u64| (a + b > 0).then(|| a as f64 / (a + b) as f64);
        Rates {
            tpr: ratio(self.tp, self.fn_),
            fnr: ratio(self.fn_, self.tp),
            fpr: ratio(self.fp, self.tn),
            tnr: ratio(self.tn, self.fp),
        }
    }
}

pub fn confusion(labels: &[Label], predictions: &[Label]) -> Result<ConfusionMatrix> {
    if labels.len() != predictions.len() {
        return Err(Error::dim("confusion", format!("{} labels vs {} predictions", labels.len(), predictions.len())));
    }
    let mut cm = ConfusionMatrix::default();
    for (&l, &p) in labels.iter().zip(predictions) {
        cm.add(l, p);
    }
    Ok(cm)
}

/// Same as [`confusion`] for raw 0/1 class indices.
pub fn confusion_from_indices(labels: &[usize], predictions: &[usize]) -> Result<ConfusionMatrix> {
    let convert = |v: &[usize]| v.iter().map(|&i| Label::from_index(i)).collect::<Result<Vec<_>>>();
    confusion(&convert(labels)?, &convert(predictions)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Examples with `P(real) >= threshold` are called real; `+inf` for the origin.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC curve swept over the unique values of `scores` (probability of real),
/// with trapezoidal AUC computed in exact integer arithmetic.
pub fn roc_auc(labels: &[Label], scores: &[f64]) -> Result<RocCurve> {
    if labels.len() != scores.len() {
        return Err(Error::dim("roc_auc", format!("{} labels vs {} scores", labels.len(), scores.len())));
    }
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(Error::Parameter(format!("score {s} outside [0, 1]")));
    }
    let pos = labels.iter().filter(|&&l| l == Label::Real).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined(format!("AUC needs both classes ({pos} real, {neg} bogus)")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    let (mut tp, mut fp) = (0u64, 0u64);
    // twice the area, in units of 1 / (pos * neg)
    let mut area2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == Label::Real { tp += 1 } else { fp += 1 }
            i += 1;
        }
        area2 += (fp - fp0) as u128 * (tp + tp0) as u128;
        points.push(RocPoint { fpr: fp as f64 / neg as f64, tpr: tp as f64 / pos as f64, threshold });
    }
    let auc = area2 as f64 / (2 * pos as u128 * neg as u128) as f64;
    Ok(RocCurve { points, auc })
}

pub fn write_confusion_csv(cm: &ConfusionMatrix, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["tp", "fn", "fp", "tn", "tpr", "fnr", "fpr", "tnr"])?;
    let r = cm.rates();
    let rate = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    w.write_record([
        cm.tp.to_string(),
        cm.fn_.to_string(),
        cm.fp.to_string(),
        cm.tn.to_string(),
        rate(r.tpr),
        rate(r.fnr),
        rate(r.fpr),
        rate(r.tnr),
    ])?;
    w.flush()?;
    Ok(())
}

pub fn write_roc_csv(roc: &RocCurve, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["fpr", "tpr", "threshold"])?;
    for p in &roc.points {
        w.write_record([p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
