//! Autoregressive continuation from a prefix state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::TokenId;
use crate::error::{Error, Result};
use crate::model::forward::{model_step, ParamIds, PrefixState};
use crate::model::ModelParams;
use crate::numerics::{ops, Array, Tape};

/// Decoding rule for [`generate`].
#[derive(Clone, Copy, Debug)]
pub enum Decode {
    /// Highest-probability token; ties break to the lowest id.
    Greedy,
    /// Ancestral sampling from softmax(logits / temperature).
    Sample { temperature: f32, seed: u64 },
}

pub struct Generation {
    pub tokens: Vec<TokenId>,
    /// k x d final-layer hidden rows at the generated positions.
    pub hidden: Array,
    /// log pi(token | context) under the model (temperature-free), per step.
    pub logprobs: Vec<f32>,
    /// State after the generated tokens, for further continuation.
    pub end_state: PrefixState,
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn sample_from(row: &[f32], temperature: f32, rng: &mut ChaCha8Rng) -> usize {
    // softmax in f64 with max subtraction, then inverse-CDF draw
    let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let t = temperature.max(1e-6) as f64;
    let weights: Vec<f64> = row
        .iter()
        .map(|&x| (((x as f64) - max) / t).exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen_range(0.0..1.0f64) * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    row.len() - 1
}

/// Generate `steps` tokens after `prefix`. The recorded log-probabilities are
/// always the model's own (temperature 1), matching what re-scoring the
/// generated tokens with a fresh forward pass produces.
pub fn generate(
    params: &ModelParams,
    prefix: &PrefixState,
    steps: usize,
    decode: Decode,
) -> Result<Generation> {
    if steps == 0 {
        return Err(Error::invalid("generate: steps must be at least 1"));
    }
    if prefix.prefix_len + steps > params.config.max_seq_len {
        return Err(Error::invalid(format!(
            "generate: prefix {} + steps {steps} exceeds max_seq_len {}",
            prefix.prefix_len, params.config.max_seq_len
        )));
    }
    let mut logits_row = prefix
        .next_logits
        .clone()
        .ok_or_else(|| Error::invalid("generate: empty prefix has no next-token distribution"))?;

    let mut rng = match decode {
        Decode::Greedy => None,
        Decode::Sample { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
    };

    let mut tape = Tape::new();
    let pids = ParamIds::insert(&mut tape, params, false);
    let mut state = prefix.resume_on(&mut tape);

    let mut tokens = Vec::with_capacity(steps);
    let mut logprobs = Vec::with_capacity(steps);
    let mut hidden_rows = Vec::with_capacity(steps);

    for _ in 0..steps {
        let tok = match decode {
            Decode::Greedy => argmax(logits_row.data()),
            Decode::Sample { temperature, .. } => {
                sample_from(logits_row.data(), temperature, rng.as_mut().unwrap())
            }
        } as TokenId;
        let lp_row = ops::log_softmax_rows(&logits_row);
        logprobs.push(lp_row.data()[tok as usize]);
        tokens.push(tok);

        let h = model_step(&mut tape, &pids, &params.config, tok, &mut state)?;
        hidden_rows.push(tape.value(h).clone());
        let l = tape.matmul(h, pids.head)?;
        logits_row = tape.value(l).clone();
    }

    let hidden_refs: Vec<&Array> = hidden_rows.iter().collect();
    let hidden = ops::concat_rows(&hidden_refs)?;

    // snapshot the end state so callers can keep decoding
    let end_state = state.snapshot_prefix(&tape, Some(logits_row));

    Ok(Generation {
        tokens,
        hidden,
        logprobs,
        end_state,
    })
}
