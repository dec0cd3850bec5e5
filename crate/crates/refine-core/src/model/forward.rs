//! Sequence forward pass on a tape, with optional state capture.
//!
//! Internally every activation is a row vector, so the memory matrix is held
//! transposed (`M = W^T`): reading is `q_row @ M` and the delta update is
//! `M' = M - eta * k_col @ (k_row @ M - v_row)`, which is the exact transpose
//! of the column-convention rules in [`crate::model::FastWeightState`].
//! Snapshots transpose back, so captured states match the reference ops.

use crate::data::{TokenId, TokenSequence};
use crate::error::{Error, Result};
use crate::model::{FastWeightState, ModelConfig, ModelParams, UpdateMode};
use crate::numerics::{ops, Array, Tape, ValueId};

const NORM_EPS: f32 = 1e-6;

pub struct LayerIds {
    pub norm_mixer: ValueId,
    pub wq: ValueId,
    pub wk: ValueId,
    pub wv: ValueId,
    pub wo: ValueId,
    pub norm_ffn: ValueId,
    pub w_up: ValueId,
    pub w_down: ValueId,
}

/// Parameter handles on one tape, in the same structure as [`ModelParams`].
pub struct ParamIds {
    pub embed: ValueId,
    pub layers: Vec<LayerIds>,
    pub final_norm: ValueId,
    pub head: ValueId,
}

impl ParamIds {
    /// Insert every parameter tensor on the tape. `tracked` decides whether
    /// gradients flow to them (training) or not (inference).
    pub fn insert(tape: &mut Tape, params: &ModelParams, tracked: bool) -> ParamIds {
        let mut put = |a: &Array| {
            if tracked {
                tape.tracked(a.clone())
            } else {
                tape.constant(a.clone())
            }
        };
        let embed = put(&params.embed);
        let layers = params
            .layers
            .iter()
            .map(|l| LayerIds {
                norm_mixer: put(&l.norm_mixer),
                wq: put(&l.wq),
                wk: put(&l.wk),
                wv: put(&l.wv),
                wo: put(&l.wo),
                norm_ffn: put(&l.norm_ffn),
                w_up: put(&l.w_up),
                w_down: put(&l.w_down),
            })
            .collect();
        let final_norm = put(&params.final_norm);
        let head = put(&params.head);
        ParamIds {
            embed,
            layers,
            final_norm,
            head,
        }
    }

    /// Gradient tensors in canonical order (zeros where untouched).
    pub fn collect_grads(&self, grads: &mut crate::numerics::Gradients) -> Vec<Array> {
        let mut out = vec![grads.take(self.embed).expect("tracked")];
        for l in &self.layers {
            for id in [
                l.norm_mixer,
                l.wq,
                l.wk,
                l.wv,
                l.wo,
                l.norm_ffn,
                l.w_up,
                l.w_down,
            ] {
                out.push(grads.take(id).expect("tracked"));
            }
        }
        out.push(grads.take(self.final_norm).expect("tracked"));
        out.push(grads.take(self.head).expect("tracked"));
        out
    }
}

struct LayerState {
    /// Transposed fast weight (M = W^T), d_fast x d_fast.
    fast: ValueId,
    /// Keys/values accumulated since the last chunk boundary (chunked mode).
    pending_k: Vec<ValueId>,
    pending_v: Vec<ValueId>,
}

/// Streaming per-token execution state.
pub struct StepState {
    layers: Vec<LayerState>,
    /// Number of tokens processed so far (absolute position).
    pos: usize,
}

impl StepState {
    fn fresh(tape: &mut Tape, config: &ModelConfig) -> StepState {
        let layers = (0..config.n_layers)
            .map(|_| LayerState {
                fast: tape.constant(Array::zeros(&[config.d_fast, config.d_fast])),
                pending_k: Vec::new(),
                pending_v: Vec::new(),
            })
            .collect();
        StepState { layers, pos: 0 }
    }

    /// Package the current state as a resumable prefix (column convention).
    pub(crate) fn snapshot_prefix(&self, tape: &Tape, next_logits: Option<Array>) -> PrefixState {
        PrefixState {
            layer_states: snapshot_states(tape, self),
            pending: self
                .layers
                .iter()
                .map(|l| {
                    (
                        l.pending_k.iter().map(|&id| tape.value(id).clone()).collect(),
                        l.pending_v.iter().map(|&id| tape.value(id).clone()).collect(),
                    )
                })
                .collect(),
            next_logits,
            prefix_len: self.pos,
        }
    }

    /// Resume from a prefix: per-layer matrices arrive in the column
    /// convention and are transposed into the row layout used on tape.
    fn from_prefix(tape: &mut Tape, prefix: &PrefixState) -> StepState {
        let layers = prefix
            .layer_states
            .iter()
            .zip(&prefix.pending)
            .map(|(st, (pk, pv))| LayerState {
                fast: tape.constant(ops::transpose(st.matrix())),
                pending_k: pk.iter().map(|a| tape.constant(a.clone())).collect(),
                pending_v: pv.iter().map(|a| tape.constant(a.clone())).collect(),
            })
            .collect();
        StepState {
            layers,
            pos: prefix.prefix_len,
        }
    }
}

fn rms_norm(tape: &mut Tape, x: ValueId, gain: ValueId, d: usize) -> Result<ValueId> {
    let n = tape.l2_normalize_rows(x, NORM_EPS);
    let s = tape.scale(n, (d as f32).sqrt());
    tape.mul_row(s, gain)
}

fn apply_chunk_update(
    tape: &mut Tape,
    st: &mut LayerState,
    eta: f32,
    d_fast: usize,
) -> Result<()> {
    let m = st.pending_k.len();
    if m == 0 {
        return Ok(());
    }
    let kmat = tape.concat_rows(&st.pending_k)?; // m x df
    let vmat = tape.concat_rows(&st.pending_v)?;
    let read = tape.matmul(kmat, st.fast)?; // m x df
    let err = tape.sub(read, vmat)?;
    let kt = tape.transpose(kmat); // df x m
    let upd = tape.matmul(kt, err)?; // df x df
    let upd = tape.scale(upd, eta / m as f32);
    st.fast = tape.sub(st.fast, upd)?;
    st.pending_k.clear();
    st.pending_v.clear();
    debug_assert_eq!(tape.value(st.fast).shape(), &[d_fast, d_fast]);
    Ok(())
}

/// Process one token: returns the final-layer hidden row (post-norm, the
/// representation immediately before the logits head).
pub(crate) fn model_step(
    tape: &mut Tape,
    pids: &ParamIds,
    config: &ModelConfig,
    token: TokenId,
    state: &mut StepState,
) -> Result<ValueId> {
    let d = config.d_model;
    let at_chunk_boundary =
        config.update_mode == UpdateMode::Chunked && (state.pos + 1) % config.chunk_size == 0;

    let mut x = tape.embedding(pids.embed, &[token])?; // 1 x d
    for (l, lid) in pids.layers.iter().enumerate() {
        let xn = rms_norm(tape, x, lid.norm_mixer, d)?;
        let q = tape.matmul(xn, lid.wq)?;
        let k_raw = tape.matmul(xn, lid.wk)?;
        let v = tape.matmul(xn, lid.wv)?;
        let k = tape.l2_normalize_rows(k_raw, NORM_EPS);

        let st = &mut state.layers[l];
        // read with the state from before this token
        let y = tape.matmul(q, st.fast)?;
        match config.update_mode {
            UpdateMode::PerTokenDelta => {
                let read = tape.matmul(k, st.fast)?;
                let err = tape.sub(read, v)?;
                let k_col = tape.reshape(k, vec![config.d_fast, 1])?;
                let outer = tape.matmul(k_col, err)?;
                let step = tape.scale(outer, config.eta);
                st.fast = tape.sub(st.fast, step)?;
            }
            UpdateMode::Chunked => {
                st.pending_k.push(k);
                st.pending_v.push(v);
                if at_chunk_boundary {
                    apply_chunk_update(tape, st, config.eta, config.d_fast)?;
                }
            }
        }

        let mixed = tape.matmul(y, lid.wo)?;
        x = tape.add(x, mixed)?;

        let xn2 = rms_norm(tape, x, lid.norm_ffn, d)?;
        let up = tape.matmul(xn2, lid.w_up)?;
        let act = tape.silu(up);
        let down = tape.matmul(act, lid.w_down)?;
        x = tape.add(x, down)?;
    }
    state.pos += 1;
    rms_norm(tape, x, pids.final_norm, d)
}

/// Per-layer snapshots in the column convention, labeled with the number of
/// tokens incorporated.
fn snapshot_states(tape: &Tape, state: &StepState) -> Vec<FastWeightState> {
    state
        .layers
        .iter()
        .map(|l| {
            FastWeightState::new(ops::transpose(tape.value(l.fast)), state.pos)
                .expect("tape states stay finite")
        })
        .collect()
}

/// Captured fast-weight states from a forward pass.
#[derive(Clone, Debug)]
pub enum CapturedStates {
    /// Snapshot after every prefix length 0..=T (index = tokens incorporated).
    PerToken(Vec<Vec<FastWeightState>>),
    /// Snapshots at chunk boundaries only: (tokens incorporated, states).
    ChunkBoundary(Vec<(usize, Vec<FastWeightState>)>),
}

pub struct ForwardOutput {
    /// T x vocab logits.
    pub logits: Array,
    /// T x d final-layer hidden rows (post-norm, pre-logits).
    pub hidden: Array,
    /// log p(x_{t+1} | x_{<=t}) for t in 0..T-1.
    pub realized_logprobs: Vec<f32>,
    pub states: Option<CapturedStates>,
}

/// Low-level taped forward: hidden rows and logits as tape values.
/// `head_rows = Some((start, len))` applies the logits head only to that row
/// range (the rows a loss actually needs).
pub struct TapedForward {
    pub hidden: ValueId,
    pub logits: ValueId,
    pub head_row_start: usize,
}

pub(crate) fn forward_rows_on_tape(
    tape: &mut Tape,
    pids: &ParamIds,
    config: &ModelConfig,
    tokens: &[TokenId],
    head_rows: Option<(usize, usize)>,
    capture: bool,
) -> Result<(TapedForward, Option<CapturedStates>)> {
    if tokens.is_empty() {
        return Err(Error::invalid("forward over an empty sequence"));
    }
    if tokens.len() > config.max_seq_len {
        return Err(Error::invalid(format!(
            "sequence length {} exceeds max_seq_len {}",
            tokens.len(),
            config.max_seq_len
        )));
    }

    let mut state = StepState::fresh(tape, config);
    let mut captured_per_token: Vec<Vec<FastWeightState>> = Vec::new();
    let mut captured_boundaries: Vec<(usize, Vec<FastWeightState>)> = Vec::new();
    if capture {
        match config.update_mode {
            UpdateMode::PerTokenDelta => captured_per_token.push(snapshot_states(tape, &state)),
            UpdateMode::Chunked => captured_boundaries.push((0, snapshot_states(tape, &state))),
        }
    }

    let mut rows = Vec::with_capacity(tokens.len());
    for &tok in tokens {
        let h = model_step(tape, pids, config, tok, &mut state)?;
        rows.push(h);
        if capture {
            match config.update_mode {
                UpdateMode::PerTokenDelta => {
                    captured_per_token.push(snapshot_states(tape, &state))
                }
                UpdateMode::Chunked => {
                    if state.pos % config.chunk_size == 0 {
                        captured_boundaries.push((state.pos, snapshot_states(tape, &state)));
                    }
                }
            }
        }
    }

    let hidden = tape.concat_rows(&rows)?;
    let (head_in, start) = match head_rows {
        Some((start, len)) => (tape.slice_rows(hidden, start, len)?, start),
        None => (hidden, 0),
    };
    let logits = tape.matmul(head_in, pids.head)?;

    let states = if capture {
        Some(match config.update_mode {
            UpdateMode::PerTokenDelta => CapturedStates::PerToken(captured_per_token),
            UpdateMode::Chunked => CapturedStates::ChunkBoundary(captured_boundaries),
        })
    } else {
        None
    };
    Ok((
        TapedForward {
            hidden,
            logits,
            head_row_start: start,
        },
        states,
    ))
}

/// Run the model over a full sequence without gradient tracking.
pub fn forward_sequence(
    params: &ModelParams,
    seq: &TokenSequence,
    capture_states: bool,
) -> Result<ForwardOutput> {
    let mut tape = Tape::new();
    let pids = ParamIds::insert(&mut tape, params, false);
    let (fwd, states) =
        forward_rows_on_tape(&mut tape, &pids, &params.config, &seq.ids, None, capture_states)?;
    let logits = tape.value(fwd.logits).clone();
    let hidden = tape.value(fwd.hidden).clone();

    let logprobs_all = ops::log_softmax_rows(&logits);
    let realized_logprobs = (0..seq.ids.len().saturating_sub(1))
        .map(|t| logprobs_all.row(t)[seq.ids[t + 1] as usize])
        .collect();

    Ok(ForwardOutput {
        logits,
        hidden,
        realized_logprobs,
        states,
    })
}

/// Everything needed to continue generation after a prefix.
#[derive(Clone, Debug)]
pub struct PrefixState {
    /// Per-layer fast weights (column convention) conditioned on the prefix.
    pub layer_states: Vec<FastWeightState>,
    /// Chunked mode: per-layer (keys, values) gathered since the last
    /// boundary. Empty in per-token mode.
    pub pending: Vec<(Vec<Array>, Vec<Array>)>,
    /// Logits row of the last prefix token; None for an empty prefix.
    pub next_logits: Option<Array>,
    pub prefix_len: usize,
}

impl PrefixState {
    /// The zero-state prefix of length 0.
    pub fn empty(config: &ModelConfig) -> PrefixState {
        PrefixState {
            layer_states: (0..config.n_layers)
                .map(|_| FastWeightState::zero(config.d_fast))
                .collect(),
            pending: vec![(Vec::new(), Vec::new()); config.n_layers],
            next_logits: None,
            prefix_len: 0,
        }
    }

    pub(crate) fn resume_on(&self, tape: &mut Tape) -> StepState {
        StepState::from_prefix(tape, self)
    }
}

/// Rebuild a prefix state by running the first `prefix_len` tokens from
/// scratch (the only exact option in chunked mode, where mid-chunk states are
/// not captured).
pub fn prefix_state_by_forward(
    params: &ModelParams,
    tokens: &[TokenId],
    prefix_len: usize,
) -> Result<PrefixState> {
    if prefix_len > tokens.len() {
        return Err(Error::invalid(format!(
            "prefix length {prefix_len} exceeds sequence length {}",
            tokens.len()
        )));
    }
    if prefix_len == 0 {
        return Ok(PrefixState::empty(&params.config));
    }
    let mut tape = Tape::new();
    let pids = ParamIds::insert(&mut tape, params, false);
    let mut state = StepState::fresh(&mut tape, &params.config);
    let mut last_hidden = None;
    for &tok in &tokens[..prefix_len] {
        last_hidden = Some(model_step(&mut tape, &pids, &params.config, tok, &mut state)?);
    }
    let logits_row = {
        let h = last_hidden.expect("prefix_len >= 1");
        let l = tape.matmul(h, pids.head)?;
        tape.value(l).clone()
    };
    Ok(state.snapshot_prefix(&tape, Some(logits_row)))
}
