//! Minimal differentiable CNN engine.

mod arch;
pub mod format;
mod network;
pub mod ops;

pub use arch::{build_dia_architecture, build_nodia_architecture, dia_layers, nodia_layers, ModelVariant, DROPOUT_RATE};
pub use network::{Activation, Gradients, LayerSpec, Network, Params, Trace};
pub use ops::Mode;
