//! Federated-learning label-leakage laboratory.
//!
//! Small neural networks trained under FedSGD/FedAvg, label extraction
//! attacks on the shared last-layer gradients, gradient obfuscation defenses
//! and the metrics that score them. Class labels are zero-based indices
//! throughout.

pub mod attack;
pub mod data;
pub mod defenses;
pub mod error;
pub mod experiment;
pub mod fl;
pub mod labels;
pub mod metrics;
pub mod nn;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
pub use labels::LabelMultiset;
pub use nn::{LastLayerGradient, Network};
pub use tensor::Tensor;
