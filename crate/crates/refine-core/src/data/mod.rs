//! Byte-level tokenization, corpus loading, and synthetic task generation.

mod corpus;
mod tasks;
mod tokenizer;

pub use corpus::{load_corpus, load_tasks, write_tasks};
pub use tasks::{gen_copy_task, gen_niah, gen_text_corpus, TaskSample};
pub use tokenizer::{decode, encode, TokenId, TokenSequence, BOS_ID, PAD_ID, VOCAB_SIZE};
