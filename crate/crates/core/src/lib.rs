//! Segmentation-free cervical cell classification.
//!
//! Nucleus-centred patches are cut from cell images, augmented by rotation and
//! translation, and fed to a convolutional network trained with SGD. At test
//! time each cell is scored by averaging the network's abnormal-class
//! probability over many augmented views and crops, and a k-fold
//! cross-validation harness reports sensitivity, specificity, accuracy,
//! H-mean, F-measure and ROC AUC.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod tensor;
pub mod transfer;

pub use error::{Error, Result};
pub use tensor::{Real, Shape, Tensor};

/// Deterministic RNG used throughout.
pub type Rng = rand_chacha::ChaCha8Rng;

/// RNG for an independent stream identified by `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> Rng {
    use rand::SeedableRng;
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
