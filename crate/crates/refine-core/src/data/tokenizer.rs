//! Byte-level vocabulary: 256 byte values plus BOS and PAD specials.

use crate::error::{Error, Result};

pub type TokenId = u16;

pub const BOS_ID: TokenId = 256;
pub const PAD_ID: TokenId = 257;
pub const VOCAB_SIZE: usize = 258;

/// An ordered sequence of token ids, optionally split into a prompt span
/// `[0, prompt_len)` and a response span `[prompt_len, len)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
    /// Prompt/response split point; the spans partition the sequence.
    pub prompt_len: Option<usize>,
    /// Where the sequence came from (file, generator), for diagnostics.
    pub source: Option<String>,
}

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::invalid("token sequence must be non-empty"));
        }
        if let Some(&bad) = ids.iter().find(|&&id| (id as usize) >= VOCAB_SIZE) {
            return Err(Error::invalid(format!(
                "token id {bad} out of vocabulary {VOCAB_SIZE}"
            )));
        }
        Ok(TokenSequence {
            ids,
            prompt_len: None,
            source: None,
        })
    }

    pub fn with_prompt_len(mut self, prompt_len: usize) -> Result<Self> {
        if prompt_len > self.ids.len() {
            return Err(Error::invalid(format!(
                "prompt span {prompt_len} exceeds sequence length {}",
                self.ids.len()
            )));
        }
        self.prompt_len = Some(prompt_len);
        Ok(self)
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = Some(source.into());
        self
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Encode UTF-8 text as its raw bytes. Empty text yields an empty id list
/// (which is not a valid `TokenSequence`), so this returns the ids directly.
pub fn encode(text: &str) -> Vec<TokenId> {
    text.bytes().map(|b| b as TokenId).collect()
}

/// Decode ids back to text. Byte ids map to their byte values; BOS/PAD render
/// as nothing; anything outside the vocabulary is an error. Byte runs that do
/// not form valid UTF-8 are decoded lossily (the model is free to emit them).
pub fn decode(ids: &[TokenId]) -> Result<String> {
    let mut bytes = Vec::with_capacity(ids.len());
    for &id in ids {
        match id {
            0..=255 => bytes.push(id as u8),
            BOS_ID | PAD_ID => {}
            _ => {
                return Err(Error::invalid(format!(
                    "token id {id} out of vocabulary {VOCAB_SIZE}"
                )))
            }
        }
    }
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}
