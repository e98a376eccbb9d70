//! Quantum pre-processing filter for image classification.
//!
//! A fixed two-qubit kernel (angle encoding followed by a CNOT) is evaluated in
//! closed form over 2×2 image patches, producing four feature channels per
//! image. Around it sit entanglement analytics, IDX dataset IO, a small dense
//! classifier trained from scratch, and an experiment grid runner.

pub mod dataset;
pub mod entanglement;
pub mod error;
pub mod experiments;
pub mod filter;
pub mod mlp;
pub mod parallel;
pub mod qkernel;

pub use error::{QpfError, Result};
pub use filter::{
    Direction, FeatureMaps, Image, KernelConfig, Observable, Pairing, Permutation, Symmetry,
};
pub use parallel::Exec;
pub use qkernel::{pair_entropy, Angle};
