use std::fmt;

use crate::error::{Error, Result};
use crate::preprocess::{PostageStamp, Role};

/// Class label. Real transients are 0 and count as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Real = 0,
    Bogus = 1,
}

impl Label {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Label::Real),
            1 => Ok(Label::Bogus),
            other => Err(Error::Parameter(format!("label {other} is not 0 (real) or 1 (bogus)"))),
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        Label::from_index(v as usize)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

/// Anything that carries a class label (used by splitting and metrics).
pub trait Labeled {
    fn label(&self) -> Label;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Synthetic,
    Des,
}

/// One labeled detection: template, search and (optionally) difference stamps.
#[derive(Debug, Clone, PartialEq)]
pub struct DiaSet {
    pub id: String,
    pub tmpl: PostageStamp,
    pub srch: PostageStamp,
    pub diff: Option<PostageStamp>,
    pub label: Label,
    pub provenance: Provenance,
}

impl DiaSet {
    pub fn new(
        id: impl Into<String>,
        tmpl: PostageStamp,
        srch: PostageStamp,
        diff: Option<PostageStamp>,
        label: Label,
        provenance: Provenance,
    ) -> Result<Self> {
        let id = id.into();
        let check = |s: &PostageStamp, role: Role| {
            if s.role() != role {
                return Err(Error::Parameter(format!("set {id}: expected a {role} stamp, got {}", s.role())));
            }
            Ok(())
        };
        check(&tmpl, Role::Tmpl)?;
        check(&srch, Role::Srch)?;
        if let Some(d) = &diff {
            check(d, Role::Diff)?;
        }
        Ok(Self { id, tmpl, srch, diff, label, provenance })
    }
}

impl Labeled for DiaSet {
    fn label(&self) -> Label {
        self.label
    }
}
