//! Siamese-label auxiliary training for classifier pairs and multi-exit
//! networks, on a small reverse-mode autodiff engine.
//!
//! The training-time trick: concatenate the N-class logits of C cooperating
//! classifiers into one `C*N`-wide block, softmax-normalize it jointly, and
//! give each classifier a cross-entropy loss with the label shifted into its
//! own column block. Every classifier's loss then carries the others'
//! logits, which keeps gradients alive longer and steers training toward
//! flatter minima — at zero test-time cost, since the coupling is dropped
//! after training.
//!
//! Modules:
//! - [`autodiff`] — tape-based reverse-mode differentiation over f64 tensors
//! - [`models`] — MLP classifiers and the multi-exit chain
//! - [`losses`] — cross-entropy, siamese/group losses, mutual-learning KL
//! - [`training`] — SGD with a multi-step schedule; joint pair and
//!   multi-exit training loops
//! - [`dynamic_eval`] — anytime and budgeted early-exit evaluation
//! - [`data`] — blobs, IDX files, CSV, batching
//! - [`experiments`] — the experiment drivers behind the `sila` CLI

pub mod autodiff;
pub mod data;
pub mod dynamic_eval;
pub mod error;
pub mod experiments;
pub mod losses;
pub mod models;
pub mod rng;
pub mod training;

pub use error::{Result, SilaError};
