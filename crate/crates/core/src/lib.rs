//! Real/bogus classification of difference-imaging transient candidates.
//!
//! The crate bundles a small CNN engine ([`nn`]), stamp preprocessing
//! ([`preprocess`]), a synthetic DIA data generator ([`synth`]), FITS/manifest/
//! model I/O ([`data_io`]), the training loop ([`training`]), classification
//! metrics ([`metrics`]) and gradient saliency analysis ([`saliency`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data_io;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod preprocess;
pub mod rng;
pub mod saliency;
pub mod synth;
pub mod tensor;
pub mod training;

pub use dataset::{DiaSet, Label, Labeled, Provenance};
pub use error::{Error, ErrorClass, Result};
pub use nn::{LayerSpec, Mode, ModelVariant, Network};
pub use preprocess::{CompositeImage, Layout, PostageStamp, Role};
pub use tensor::Tensor;
