//! Small dense/1-D convolutional classifier with analytic gradients.

mod network;
mod sgd;
mod arch;

pub use network::{softmax_cross_entropy, ActivationCache, Mode, Network, BN_EPS, BN_MOMENTUM};
pub use sgd::{sgd_step, SgdConfig};
pub use arch::{ActShape, Architecture, BackboneConfig, LayerKind, LayerSpec};
