//! JSONL corpus and task-file IO.
//!
//! Corpus lines look like `{"text": "..."}`; task lines like
//! `{"prompt": "...", "answer": "...", "meta": {...}}`. Both are UTF-8, one
//! object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Deserialize;

use crate::data::tasks::TaskSample;
use crate::data::tokenizer::{encode, TokenSequence};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct CorpusLine {
    text: String,
}

/// Load a JSONL corpus, splitting each text into token windows of at most
/// `max_seq_len` starting every `stride` tokens. Order follows the file.
pub fn load_corpus(path: &Path, max_seq_len: usize, stride: usize) -> Result<Vec<TokenSequence>> {
    if max_seq_len == 0 || stride == 0 {
        return Err(Error::invalid("max_seq_len and stride must be positive"));
    }
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusLine = serde_json::from_str(&line).map_err(|e| Error::DataFormat {
            path: path.display().to_string(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        let ids = encode(&rec.text);
        if ids.is_empty() {
            continue;
        }
        let mut start = 0;
        while start < ids.len() {
            let end = (start + max_seq_len).min(ids.len());
            let window = ids[start..end].to_vec();
            out.push(
                TokenSequence::new(window)?
                    .with_source(format!("{}:{}+{}", path.display(), lineno + 1, start)),
            );
            if end == ids.len() {
                break;
            }
            start += stride;
        }
    }
    Ok(out)
}

#[derive(Deserialize)]
struct TaskLine {
    prompt: String,
    answer: String,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Load a task JSONL file.
pub fn load_tasks(path: &Path) -> Result<Vec<TaskSample>> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TaskLine = serde_json::from_str(&line).map_err(|e| Error::DataFormat {
            path: path.display().to_string(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        out.push(TaskSample {
            prompt: rec.prompt,
            answer: rec.answer,
            meta: rec.meta,
        });
    }
    Ok(out)
}

/// Write task samples as JSONL.
pub fn write_tasks(path: &Path, tasks: &[TaskSample]) -> Result<()> {
    let mut file = File::create(path)?;
    for t in tasks {
        let line = serde_json::json!({
            "prompt": t.prompt,
            "answer": t.answer,
            "meta": t.meta,
        });
        writeln!(file, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_jsonl(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn short_text_is_one_sequence() {
        let f = write_jsonl(&[r#"{"text": "abcdefghij"}"#]);
        let seqs = load_corpus(f.path(), 16, 16).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].len(), 10);
    }

    #[test]
    fn long_text_splits_with_stride() {
        let text: String = "x".repeat(20);
        let f = write_jsonl(&[&format!(r#"{{"text": "{text}"}}"#)]);
        let seqs = load_corpus(f.path(), 16, 16).unwrap();
        assert_eq!(seqs.iter().map(|s| s.len()).collect::<Vec<_>>(), [16, 4]);

        // splitting stops once a window reaches the end of the text; a
        // further window would be fully contained in the previous one
        let overlapped = load_corpus(f.path(), 16, 8).unwrap();
        assert_eq!(
            overlapped.iter().map(|s| s.len()).collect::<Vec<_>>(),
            [16, 12]
        );
    }

    #[test]
    fn empty_file_is_empty_stream() {
        let f = write_jsonl(&[]);
        assert!(load_corpus(f.path(), 16, 16).unwrap().is_empty());
    }

    #[test]
    fn malformed_line_names_its_number() {
        let f = write_jsonl(&[r#"{"text": "fine"}"#, "{broken"]);
        let err = load_corpus(f.path(), 16, 16).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }

    #[test]
    fn task_round_trip() {
        let tasks = vec![TaskSample {
            prompt: "what is it".into(),
            answer: "42".into(),
            meta: serde_json::json!({"kind": "test"}),
        }];
        let f = tempfile::NamedTempFile::new().unwrap();
        write_tasks(f.path(), &tasks).unwrap();
        let back = load_tasks(f.path()).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].prompt, tasks[0].prompt);
        assert_eq!(back[0].answer, tasks[0].answer);
        assert_eq!(back[0].meta["kind"], "test");
    }
}
