//! The two classifier architectures: one fed the diff/srch/tmpl triplet, one
//! fed only the srch/tmpl pair.

use std::fmt;
use std::str::FromStr;

use super::network::{Activation, LayerSpec, Network};
use crate::error::{Error, Result};

pub const DROPOUT_RATE: f64 = 0.4;

/// Which input the classifier sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelVariant {
    /// diff | srch | tmpl composite, 51x153.
    Dia,
    /// srch | tmpl composite, 51x102.
    NoDia,
}

impl ModelVariant {
    pub fn input_shape(self) -> [usize; 3] {
        match self {
            ModelVariant::Dia => [51, 153, 1],
            ModelVariant::NoDia => [51, 102, 1],
        }
    }

    pub fn composite_width(self) -> usize {
        self.input_shape()[1]
    }

    pub fn layers(self) -> Vec<LayerSpec> {
        match self {
            ModelVariant::Dia => dia_layers(),
            ModelVariant::NoDia => nodia_layers(),
        }
    }

    pub fn build(self, seed: u64) -> Network {
        Network::new(self.input_shape(), self.layers(), seed).expect("fixed architectures are consistent")
    }

    /// Recognizes a network by its input width.
    pub fn from_input_shape(shape: &[usize]) -> Option<Self> {
        [ModelVariant::Dia, ModelVariant::NoDia]
            .into_iter()
            .find(|v| v.input_shape().as_slice() == shape)
    }

    pub fn default_epochs(self) -> usize {
        match self {
            ModelVariant::Dia => 400,
            ModelVariant::NoDia => 700,
        }
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelVariant::Dia => "dia",
            ModelVariant::NoDia => "nodia",
        })
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dia" => Ok(ModelVariant::Dia),
            "nodia" => Ok(ModelVariant::NoDia),
            other => Err(Error::Config(format!("unknown model variant `{other}` (expected dia or nodia)"))),
        }
    }
}

fn head() -> [LayerSpec; 3] {
    [
        LayerSpec::Flatten,
        LayerSpec::dense(32, Activation::Relu),
        LayerSpec::dense(2, Activation::Softmax),
    ]
}

/// Twelve layers: three conv(5x5)/pool/dropout blocks with 16, 32 and 64 filters.
pub fn dia_layers() -> Vec<LayerSpec> {
    let drop = LayerSpec::Dropout { rate: DROPOUT_RATE };
    let mut layers = Vec::with_capacity(12);
    for filters in [16, 32, 64] {
        layers.extend([LayerSpec::conv(filters, 5), LayerSpec::MaxPool2D, drop.clone()]);
    }
    layers.extend(head());
    layers
}

/// Eleven layers: a single 7x7 filter, then 3x3 convolutions with 16 and 32 filters.
pub fn nodia_layers() -> Vec<LayerSpec> {
    let drop = LayerSpec::Dropout { rate: DROPOUT_RATE };
    let mut layers = vec![
        LayerSpec::conv(1, 7),
        LayerSpec::MaxPool2D,
        LayerSpec::conv(16, 3),
        LayerSpec::MaxPool2D,
        drop.clone(),
        LayerSpec::conv(32, 3),
        LayerSpec::MaxPool2D,
        drop,
    ];
    layers.extend(head());
    layers
}

pub fn build_dia_architecture(seed: u64) -> Network {
    ModelVariant::Dia.build(seed)
}

pub fn build_nodia_architecture(seed: u64) -> Network {
    ModelVariant::NoDia.build(seed)
}
