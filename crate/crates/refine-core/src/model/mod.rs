//! The policy model: a small autoregressive byte LM whose sequence mixers are
//! fast-weight layers.
//!
//! Each block is pre-norm residual: `x += Wo * (M q)` where the per-layer
//! memory matrix `M` is updated online by the delta rule as tokens stream in
//! (read with the state from before the current token, then update), followed
//! by a SiLU feed-forward. Keys are L2-normalized before the update, which
//! keeps the delta step contractive for learning rates below 2. `M` starts at
//! zero for every sequence.
//!
//! Training unrolls backpropagation through every fast-weight update in the
//! sequence, so the projections that produce keys and values receive credit
//! for memory quality.

mod checkpoint;
mod fastweight;
mod forward;
mod generate;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use fastweight::FastWeightState;
pub use forward::{
    forward_sequence, prefix_state_by_forward, CapturedStates, ForwardOutput, LayerIds, ParamIds,
    PrefixState, TapedForward,
};
pub use generate::{generate, Decode, Generation};
pub use params::{init_params, LayerParams, ModelParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the fast-weight matrix absorbs keys and values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateMode {
    /// One delta-rule step per token.
    PerTokenDelta,
    /// Accumulate a chunk of tokens, apply one averaged update at each
    /// chunk boundary; reads within a chunk use the boundary state.
    Chunked,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    /// Fast-weight head dimension (the memory matrix is d_fast x d_fast).
    pub d_fast: usize,
    /// Fast-weight learning rate.
    pub eta: f32,
    pub update_mode: UpdateMode,
    /// Tokens per fast-weight chunk (used in chunked mode).
    pub chunk_size: usize,
    pub max_seq_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: crate::data::VOCAB_SIZE,
            d_model: 32,
            n_layers: 2,
            d_fast: 16,
            eta: 0.5,
            update_mode: UpdateMode::PerTokenDelta,
            chunk_size: 16,
            max_seq_len: 512,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0
            || self.d_model == 0
            || self.n_layers == 0
            || self.d_fast == 0
            || self.chunk_size == 0
            || self.max_seq_len == 0
        {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        if self.d_fast > self.d_model {
            return Err(Error::invalid(format!(
                "d_fast {} must not exceed d_model {}",
                self.d_fast, self.d_model
            )));
        }
        if self.chunk_size > self.max_seq_len {
            return Err(Error::invalid(format!(
                "chunk_size {} must not exceed max_seq_len {}",
                self.chunk_size, self.max_seq_len
            )));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::invalid("eta must be positive and finite"));
        }
        Ok(())
    }

    /// Feed-forward width.
    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }
}
