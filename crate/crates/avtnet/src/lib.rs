//! Trimodal (audio / visible / thermal) person recognition that stays usable
//! when a sensor drops out.
//!
//! The crate trains a latent-embedding network with three per-modality branches
//! and a multi-head-attention joint branch. Missing sensors are represented by
//! all-zero input tensors; a dedicated loss pushes valid embeddings away from
//! the shared latent point those zero inputs collapse to, on top of classic
//! online hard triplet mining. A second phase trains a softmax recognizer on
//! the frozen embeddings.
//!
//! Module map:
//! - [`data`]: synthetic dataset generation, log-Mel spectrograms, ablation,
//!   manifests, on-disk tensors (`.npy`).
//! - [`mining`]: pairwise distances, the six mask matrices, per-anchor hard
//!   positive / hard negative / nearest-missing components.
//! - [`losses`]: the missing-modality loss, triplet hard loss, total loss,
//!   and their analytic gradients.
//! - [`nn`]: minimal f64 layers with manual backprop (dense, conv, pooling,
//!   norms, multi-head attention, Adam).
//! - [`model`]: the embedding network and the recognizer head.
//! - [`variants`]: the comparison model zoo (Prop, Prop-I/II/III, JER-1/2,
//!   E2E, Dense-Triplet, bimodal).
//! - [`training`]: the two-phase schedule, embedding export, checkpoints.
//! - [`eval`]: per-missing-condition accuracy and report rendering.
//! - [`cli`]: the `avtnet` command-line entry point.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod mining;
pub mod model;
pub mod nn;
pub mod training;
pub mod variants;

pub use error::{AvtError, Result};
