//! Vanilla-gradient saliency: `|dS_c / dI|` for the pre-softmax score of class
//! `c`, per-slab importance fractions and their aggregation by confusion quadrant.

use std::io::Write;

use rayon::prelude::*;

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::metrics::Quadrant;
use crate::nn::{Gradients, Mode, Network};
use crate::preprocess::{CompositeImage, Layout, Role, STAMP_SIZE};
use crate::tensor::Tensor;
use crate::training::predicted_label;

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    /// `51 x W`, max-normalized to 1 (all zero when `degenerate`).
    pub values: Tensor,
    pub layout: Layout,
    pub class_index: usize,
    /// The raw gradient was identically zero.
    pub degenerate: bool,
}

/// Gradient of logit `class_index` (default: the predicted class) with respect
/// to the composite's pixels, as a max-normalized absolute map.
pub fn saliency_map(network: &Network, composite: &CompositeImage, class_index: Option<usize>) -> Result<SaliencyMap> {
    if network.mode() != Mode::Eval {
        return Err(Error::Contract("saliency requires a network in eval mode".into()));
    }
    if composite.pixels().shape() != network.input_shape() {
        return Err(Error::dim(
            "saliency_map",
            format!("composite {:?} vs network input {:?}", composite.pixels().shape(), network.input_shape()),
        ));
    }
    let trace = network.forward(composite.pixels(), None)?;
    let logits = trace.logits().data();
    let class = match class_index {
        Some(c) if c < logits.len() => c,
        Some(c) => return Err(Error::Parameter(format!("class index {c} out of range"))),
        None => predicted_label(logits[0], logits[1]).index(),
    };
    let mut seed = Tensor::zeros(trace.logits().shape());
    seed.data_mut()[class] = 1.0;
    let mut scratch = Gradients::zeros_like(network);
    let mut grad = Tensor::zeros(composite.pixels().shape());
    network.backward(&trace, &seed, &mut scratch, Some(&mut grad))?;

    let width = composite.width();
    let mut values = grad.map(f64::abs).reshape(vec![STAMP_SIZE, width])?;
    let max = values.max_abs();
    let degenerate = max == 0.0;
    if !degenerate {
        values.scale(1.0 / max);
    }
    Ok(SaliencyMap { values, layout: composite.layout(), class_index: class, degenerate })
}

/// Fractions of total saliency per slab; `i_diff` is `None` for pair layouts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImportanceTriple {
    pub i_diff: Option<f64>,
    pub i_srch: f64,
    pub i_tmpl: f64,
}

impl ImportanceTriple {
    pub fn get(&self, role: Role) -> Option<f64> {
        match role {
            Role::Diff => self.i_diff,
            Role::Srch => Some(self.i_srch),
            Role::Tmpl => Some(self.i_tmpl),
        }
    }
}

/// Sums a `51 x W` (or `51 x W x 1`) map over each slab of `layout` and divides by the total.
pub fn importance(map: &Tensor, layout: Layout) -> Result<ImportanceTriple> {
    let width = layout.width();
    if map.len() != STAMP_SIZE * width || map.shape()[..2] != [STAMP_SIZE, width] {
        return Err(Error::dim("importance", format!("map {:?} does not match a {width}-wide layout", map.shape())));
    }
    let slab_sum = |role: Role| -> f64 {
        let cols = layout.columns(role).expect("role in layout");
        (0..STAMP_SIZE).map(|y| map.data()[y * width + cols.start..y * width + cols.end].iter().sum::<f64>()).sum()
    };
    let sums: Vec<(Role, f64)> = layout.roles().iter().map(|&r| (r, slab_sum(r))).collect();
    let total: f64 = sums.iter().map(|s| s.1).sum();
    if !(total > 0.0) {
        return Err(Error::Undefined("importance of an all-zero saliency map".into()));
    }
    let frac = |role: Role| sums.iter().find(|s| s.0 == role).map(|s| s.1 / total);
    Ok(ImportanceTriple {
        i_diff: frac(Role::Diff),
        i_srch: frac(Role::Srch).expect("srch slab"),
        i_tmpl: frac(Role::Tmpl).expect("tmpl slab"),
    })
}

/// Slab with the largest importance; ties go to diff, then srch, then tmpl.
pub fn dominant_third(triple: &ImportanceTriple) -> Role {
    let mut best = (Role::Srch, triple.i_srch);
    if let Some(d) = triple.i_diff {
        if d >= best.1 {
            best = (Role::Diff, d);
        }
    }
    if triple.i_tmpl > best.1 {
        best = (Role::Tmpl, triple.i_tmpl);
    }
    best.0
}

/// Per-example analysis row.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleSaliency {
    pub id: String,
    pub quadrant: Quadrant,
    /// `None` when the gradient vanished everywhere.
    pub importance: Option<ImportanceTriple>,
    pub dominant: Option<Role>,
}

/// Saliency of the predicted class for every labeled composite.
pub fn analyze(network: &Network, sets: &[CompositeImage]) -> Result<Vec<ExampleSaliency>> {
    sets.par_iter()
        .map(|c| {
            let label = c.label.ok_or_else(|| Error::Parameter(format!("composite `{}` has no label", c.id)))?;
            let map = saliency_map(network, c, None)?;
            let predicted = Label::from_index(map.class_index)?;
            let importance = if map.degenerate { None } else { Some(importance(&map.values, map.layout)?) };
            Ok(ExampleSaliency {
                id: c.id.clone(),
                quadrant: Quadrant::of(label, predicted),
                importance,
                dominant: importance.as_ref().map(dominant_third),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuadrantStats {
    pub count: usize,
    pub dominant_diff: usize,
    pub dominant_srch: usize,
    pub dominant_tmpl: usize,
    /// Examples whose saliency vanished.
    pub undefined: usize,
    pub i_diff: Vec<f64>,
    pub i_srch: Vec<f64>,
    pub i_tmpl: Vec<f64>,
}

impl QuadrantStats {
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn dominant(&self, role: Role) -> usize {
        match role {
            Role::Diff => self.dominant_diff,
            Role::Srch => self.dominant_srch,
            Role::Tmpl => self.dominant_tmpl,
        }
    }

    pub fn values(&self, role: Role) -> &[f64] {
        match role {
            Role::Diff => &self.i_diff,
            Role::Srch => &self.i_srch,
            Role::Tmpl => &self.i_tmpl,
        }
    }
}

/// Stats for TP, FN, FP, TN in that order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuadrantSummary {
    pub quadrants: [QuadrantStats; 4],
}

impl QuadrantSummary {
    pub fn get(&self, q: Quadrant) -> &QuadrantStats {
        &self.quadrants[q as usize]
    }
}

pub fn summarize(examples: &[ExampleSaliency]) -> QuadrantSummary {
    let mut summary = QuadrantSummary::default();
    for e in examples {
        let s = &mut summary.quadrants[e.quadrant as usize];
        s.count += 1;
        match e.dominant {
            Some(Role::Diff) => s.dominant_diff += 1,
            Some(Role::Srch) => s.dominant_srch += 1,
            Some(Role::Tmpl) => s.dominant_tmpl += 1,
            None => s.undefined += 1,
        }
        if let Some(t) = e.importance {
            if let Some(d) = t.i_diff {
                s.i_diff.push(d);
            }
            s.i_srch.push(t.i_srch);
            s.i_tmpl.push(t.i_tmpl);
        }
    }
    summary
}

/// Runs [`analyze`] and aggregates the result.
pub fn quadrant_summary(network: &Network, sets: &[CompositeImage]) -> Result<(Vec<ExampleSaliency>, QuadrantSummary)> {
    let examples = analyze(network, sets)?;
    let summary = summarize(&examples);
    for q in Quadrant::ALL {
        if summary.get(q).is_empty() {
            log::warn!("quadrant {} is empty", q.as_str());
        }
    }
    Ok((examples, summary))
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_examples_csv(examples: &[ExampleSaliency], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "quadrant", "i_diff", "i_srch", "i_tmpl", "dominant"])?;
    for e in examples {
        let t = e.importance;
        w.write_record([
            e.id.clone(),
            e.quadrant.as_str().to_string(),
            opt(t.and_then(|t| t.i_diff)),
            opt(t.map(|t| t.i_srch)),
            opt(t.map(|t| t.i_tmpl)),
            e.dominant.map(|r| r.as_str().to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_quadrant_csv(summary: &QuadrantSummary, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "quadrant", "count", "dominant_diff", "dominant_srch", "dominant_tmpl", "undefined",
        "median_i_diff", "median_i_srch", "median_i_tmpl", "empty",
    ])?;
    for q in Quadrant::ALL {
        let s = summary.get(q);
        w.write_record([
            q.as_str().to_string(),
            s.count.to_string(),
            s.dominant_diff.to_string(),
            s.dominant_srch.to_string(),
            s.dominant_tmpl.to_string(),
            s.undefined.to_string(),
            opt(median(&s.i_diff)),
            opt(median(&s.i_srch)),
            opt(median(&s.i_tmpl)),
            s.is_empty().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Histogram of each importance component per quadrant over `bins` equal bins of [0, 1].
pub fn write_histogram_csv(summary: &QuadrantSummary, bins: usize, writer: impl Write) -> Result<()> {
    if bins == 0 {
        return Err(Error::Parameter("histogram needs at least one bin".into()));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["quadrant", "component", "bin_lo", "bin_hi", "count"])?;
    for q in Quadrant::ALL {
        let s = summary.get(q);
        for role in [Role::Diff, Role::Srch, Role::Tmpl] {
            let mut counts = vec![0usize; bins];
            for &v in s.values(role) {
                counts[((v * bins as f64) as usize).min(bins - 1)] += 1;
            }
            for (b, c) in counts.iter().enumerate() {
                w.write_record([
                    q.as_str().to_string(),
                    format!("i_{role}"),
                    (b as f64 / bins as f64).to_string(),
                    ((b + 1) as f64 / bins as f64).to_string(),
                    c.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// 8-bit binary PGM (P5) rendering of a map with values in [0, 1].
pub fn to_pgm(map: &SaliencyMap) -> Vec<u8> {
    let (h, w) = (map.values.shape()[0], map.values.shape()[1]);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(map.values.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}
