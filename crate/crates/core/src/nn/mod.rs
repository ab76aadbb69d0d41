//! Layers, their hand-written backward passes, and sequential composition.

pub mod activation;
pub mod conv;
pub mod fc;
pub mod loss;
pub mod lrn;
mod network;
pub mod pool;
mod spec;

pub use activation::Mode;
pub use network::{ForwardCache, Gradients, Init, Layer, Network, Params};
pub use spec::{window_output, LayerKind, LayerSpec, LrnParams, NetworkSpec};
