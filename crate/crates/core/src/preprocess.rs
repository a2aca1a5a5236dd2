//! Per-stamp scaling and composite assembly.
//!
//! Difference stamps are standardized to zero mean and unit variance. Search
//! and template stamps are mapped linearly so that `mu - 3 sigma -> 0` and
//! `mu + 3 sigma -> 1`; pixels outside that interval are kept, not clipped.
//! Stamps are then stacked horizontally into a single-channel composite.

use std::fmt;
use std::str::FromStr;

use crate::dataset::{DiaSet, Label, Labeled};
use crate::error::{Error, Result};
use crate::nn::ModelVariant;
use crate::tensor::Tensor;

/// Side length of every postage stamp, in pixels.
pub const STAMP_SIZE: usize = 51;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Diff,
    Srch,
    Tmpl,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Diff => "diff",
            Role::Srch => "srch",
            Role::Tmpl => "tmpl",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diff" => Ok(Role::Diff),
            "srch" => Ok(Role::Srch),
            "tmpl" => Ok(Role::Tmpl),
            other => Err(Error::Parameter(format!("unknown stamp role `{other}`"))),
        }
    }
}

/// A 51x51 cutout of flux values.
#[derive(Debug, Clone, PartialEq)]
pub struct PostageStamp {
    id: String,
    role: Role,
    pixels: Tensor,
}

impl PostageStamp {
    pub fn new(id: impl Into<String>, role: Role, pixels: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if pixels.len() != STAMP_SIZE * STAMP_SIZE {
            return Err(Error::dim(
                "postage stamp",
                format!("{id}: {} pixels, expected {STAMP_SIZE}x{STAMP_SIZE}", pixels.len()),
            ));
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("{id}: non-finite pixel at index {i}")));
        }
        let pixels = Tensor::new(vec![STAMP_SIZE, STAMP_SIZE], pixels)?;
        Ok(Self { id, role, pixels })
    }

    pub fn from_grid(id: impl Into<String>, role: Role, grid: Tensor) -> Result<Self> {
        if grid.shape() != [STAMP_SIZE, STAMP_SIZE] {
            return Err(Error::dim("postage stamp", format!("grid {:?}", grid.shape())));
        }
        Self::new(id, role, grid.into_data())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// Pixels as a 51x51 tensor, row-major.
    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }
}

/// Per-image mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingParams {
    pub mu: f64,
    pub sigma: f64,
}

impl ScalingParams {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mu = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        Self { mu, sigma: var.sqrt() }
    }

}

/// The exact-arithmetic sigma is zero only for a constant image; testing that
/// directly avoids rounding noise in the two-pass estimate.
fn checked_params(values: &Tensor, id: &str) -> Result<ScalingParams> {
    let d = values.data();
    if d.iter().all(|&v| v == d[0]) {
        return Err(Error::DegenerateImage { id: id.to_string() });
    }
    Ok(ScalingParams::of(d))
}

fn require_role(stamp: &PostageStamp, allowed: &[Role], op: &str) -> Result<()> {
    if !allowed.contains(&stamp.role) {
        return Err(Error::Parameter(format!("{op} does not apply to a {} stamp ({})", stamp.role, stamp.id)));
    }
    Ok(())
}

/// `(x - mu) / sigma` on any grid.
pub fn standardize(values: &Tensor, id: &str) -> Result<Tensor> {
    let p = checked_params(values, id)?;
    Ok(values.map(|x| (x - p.mu) / p.sigma))
}

/// `(x - (mu - 3 sigma)) / (6 sigma)` on any grid.
pub fn scale_to_3sigma(values: &Tensor, id: &str) -> Result<Tensor> {
    let p = checked_params(values, id)?;
    let lo = p.mu - 3.0 * p.sigma;
    let span = 6.0 * p.sigma;
    Ok(values.map(|x| (x - lo) / span))
}

pub fn standardize_diff(stamp: &PostageStamp) -> Result<Tensor> {
    require_role(stamp, &[Role::Diff], "standardize_diff")?;
    standardize(&stamp.pixels, &stamp.id)
}

pub fn scale_3sigma(stamp: &PostageStamp) -> Result<Tensor> {
    require_role(stamp, &[Role::Srch, Role::Tmpl], "scale_3sigma")?;
    scale_to_3sigma(&stamp.pixels, &stamp.id)
}

/// Left-to-right slab order of a composite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layout {
    /// diff | srch | tmpl
    Triplet,
    /// srch | tmpl
    Pair,
}

impl Layout {
    pub fn roles(self) -> &'static [Role] {
        match self {
            Layout::Triplet => &[Role::Diff, Role::Srch, Role::Tmpl],
            Layout::Pair => &[Role::Srch, Role::Tmpl],
        }
    }

    pub fn width(self) -> usize {
        self.roles().len() * STAMP_SIZE
    }

    pub fn for_variant(variant: ModelVariant) -> Self {
        match variant {
            ModelVariant::Dia => Layout::Triplet,
            ModelVariant::NoDia => Layout::Pair,
        }
    }

    pub fn from_width(width: usize) -> Option<Self> {
        [Layout::Triplet, Layout::Pair].into_iter().find(|l| l.width() == width)
    }

    /// Column range of a role's slab, if the layout contains it.
    pub fn columns(self, role: Role) -> Option<std::ops::Range<usize>> {
        let k = self.roles().iter().position(|&r| r == role)?;
        Some(k * STAMP_SIZE..(k + 1) * STAMP_SIZE)
    }
}

/// Horizontally stacked, preprocessed stamps ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeImage {
    pub id: String,
    pub label: Option<Label>,
    layout: Layout,
    pixels: Tensor,
}

impl CompositeImage {
    pub fn layout(&self) -> Layout {
        self.layout
    }

    /// Pixels as a `51 x W x 1` tensor.
    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn width(&self) -> usize {
        self.layout.width()
    }

    pub fn with_meta(mut self, id: impl Into<String>, label: Option<Label>) -> Self {
        self.id = id.into();
        self.label = label;
        self
    }

    /// Copies one slab back out as a 51x51 grid.
    pub fn slab(&self, role: Role) -> Option<Tensor> {
        let cols = self.layout.columns(role)?;
        let w = self.width();
        let mut out = Vec::with_capacity(STAMP_SIZE * STAMP_SIZE);
        for y in 0..STAMP_SIZE {
            out.extend_from_slice(&self.pixels.data()[y * w + cols.start..y * w + cols.end]);
        }
        Some(Tensor::new(vec![STAMP_SIZE, STAMP_SIZE], out).expect("slab size"))
    }

    /// Inverse of composition: the slabs in layout order.
    pub fn decompose(&self) -> Vec<Tensor> {
        self.layout.roles().iter().map(|&r| self.slab(r).expect("role in layout")).collect()
    }
}

impl Labeled for CompositeImage {
    /// Panics on unlabeled composites.
    fn label(&self) -> Label {
        self.label.expect("composite has no label")
    }
}

fn compose(layout: Layout, slabs: &[&Tensor]) -> Result<CompositeImage> {
    for (s, role) in slabs.iter().zip(layout.roles()) {
        if s.shape() != [STAMP_SIZE, STAMP_SIZE] {
            return Err(Error::dim("compose", format!("{role} slab is {:?}, expected [51, 51]", s.shape())));
        }
    }
    let w = layout.width();
    let mut data = Vec::with_capacity(STAMP_SIZE * w);
    for y in 0..STAMP_SIZE {
        for s in slabs {
            data.extend_from_slice(&s.data()[y * STAMP_SIZE..(y + 1) * STAMP_SIZE]);
        }
    }
    Ok(CompositeImage {
        id: String::new(),
        label: None,
        layout,
        pixels: Tensor::new(vec![STAMP_SIZE, w, 1], data)?,
    })
}

/// diff | srch | tmpl, 51x153.
pub fn compose_triplet(diff: &Tensor, srch: &Tensor, tmpl: &Tensor) -> Result<CompositeImage> {
    compose(Layout::Triplet, &[diff, srch, tmpl])
}

/// srch | tmpl, 51x102.
pub fn compose_pair(srch: &Tensor, tmpl: &Tensor) -> Result<CompositeImage> {
    compose(Layout::Pair, &[srch, tmpl])
}

/// Wraps an already-assembled `51 x W x 1` tensor (e.g. from a cache).
pub fn composite_from_pixels(layout: Layout, pixels: Tensor) -> Result<CompositeImage> {
    if pixels.shape() != [STAMP_SIZE, layout.width(), 1] {
        return Err(Error::dim("composite", format!("{:?} for {layout:?}", pixels.shape())));
    }
    Ok(CompositeImage { id: String::new(), label: None, layout, pixels })
}

/// Full preprocessing of one DIA set for a model variant.
pub fn preprocess(set: &DiaSet, variant: ModelVariant) -> Result<CompositeImage> {
    let srch = scale_3sigma(&set.srch)?;
    let tmpl = scale_3sigma(&set.tmpl)?;
    let composite = match variant {
        ModelVariant::Dia => {
            let diff = set
                .diff
                .as_ref()
                .ok_or_else(|| Error::Config(format!("set {} has no diff stamp; the dia model needs one", set.id)))?;
            compose_triplet(&standardize_diff(diff)?, &srch, &tmpl)?
        }
        ModelVariant::NoDia => compose_pair(&srch, &tmpl)?,
    };
    Ok(composite.with_meta(set.id.clone(), Some(set.label)))
}

/// Preprocesses every set, skipping (and logging) degenerate stamps.
pub fn preprocess_all(sets: &[DiaSet], variant: ModelVariant) -> Result<(Vec<CompositeImage>, Vec<String>)> {
    let mut out = Vec::with_capacity(sets.len());
    let mut skipped = Vec::new();
    for set in sets {
        match preprocess(set, variant) {
            Ok(c) => out.push(c),
            Err(Error::DegenerateImage { id }) => {
                log::warn!("skipping {}: constant stamp {id}", set.id);
                skipped.push(set.id.clone());
            }
            Err(e) => return Err(e),
        }
    }
    Ok((out, skipped))
}
