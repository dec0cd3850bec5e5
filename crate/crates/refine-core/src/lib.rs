//! Training framework for miniature byte-level fast-weight language models.
//!
//! A fast-weight model replaces attention with per-layer memory matrices that
//! are updated online by a delta rule as tokens stream in. On top of that
//! model this crate implements a sequence-level training loop: per-token
//! prediction entropies select rollout positions, the policy generates short
//! continuations from truncated prefixes, continuations are scored against the
//! teacher-forced hidden states (cosine, exact-match, or hybrid rewards), and
//! the policy is updated with a clipped group-relative surrogate combined with
//! the ordinary next-token loss.
//!
//! The same machinery drives three phases: mid-training on a corpus,
//! nested post-training on prompt/response pairs, and ephemeral test-time
//! adaptation on a single prompt before answering.
//!
//! Everything runs on a small hand-rolled reverse-mode tape (`numerics`) so
//! that gradients flow through every fast-weight update, and every run is
//! bitwise reproducible for a fixed seed. Batch-level work is parallelized
//! with rayon behind the `parallel` feature (on by default); disabling it
//! yields an identical sequential build.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod parallel;
pub mod phases;
pub mod reward;
pub mod rollout;
pub mod selector;
pub mod trainer;
pub mod util;

pub use error::{Error, Result};
