//! Synthetic long-context tasks: needle retrieval, payload copying, and
//! plain filler text. All generators are pure functions of their arguments
//! including the seed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One evaluation or training sample.
#[derive(Clone, Debug)]
pub struct TaskSample {
    pub prompt: String,
    pub answer: String,
    /// Generator-specific details (keys, values, queried subset, seed).
    pub meta: serde_json::Value,
}

impl TaskSample {
    /// Values that the prompt asks for; present for retrieval tasks.
    pub fn queried_values(&self) -> Vec<String> {
        self.meta["queried_values"]
            .as_array()
            .map(|vs| {
                vs.iter()
                    .filter_map(|v| v.as_str().map(str::to_owned))
                    .collect()
            })
            .unwrap_or_default()
    }
}

// Digit-free filler so numeric needle values can never collide with it.
const FILLER: &[&str] = &[
    "The library stays open late on weekdays. ",
    "A gentle rain fell over the quiet harbor. ",
    "The committee reviewed the proposal without comment. ",
    "Fresh bread cooled slowly on the wooden counter. ",
    "The train rolled past fields of ripening wheat. ",
    "Old maps covered the walls of the study. ",
    "The gardener trimmed the hedges before noon. ",
    "A distant bell marked the end of the lecture. ",
    "The museum rearranged its permanent collection. ",
    "Lanterns flickered along the narrow canal. ",
    "The choir rehearsed in the empty chapel. ",
    "Dust settled on the unused piano keys. ",
    "The ferry crossed the strait twice each day. ",
    "Workers repainted the fence around the orchard. ",
    "The editor returned the manuscript with notes. ",
    "Snow gathered on the ridge above the village. ",
    "The bakery sold out before the market closed. ",
    "A cat watched the pigeons from the windowsill. ",
    "The archivist catalogued letters from the estate. ",
    "Waves eroded the base of the old lighthouse. ",
    "The observatory dome opened after sunset. ",
    "Students traced the river on the classroom atlas. ",
    "The blacksmith banked the forge for the night. ",
    "Clouds drifted over the terraced hillside. ",
];

const ADJECTIVES: &[&str] = &[
    "amber", "brisk", "cedar", "dapper", "eager", "fabled", "gilded", "hollow", "ivory", "jovial",
    "keen", "lunar", "mellow", "noble", "opal", "placid", "quiet", "rustic", "silver", "tidal",
];

const NOUNS: &[&str] = &[
    "falcon", "harbor", "meadow", "anchor", "beacon", "canyon", "dynamo", "ember", "fjord",
    "garnet", "heron", "isle", "juniper", "kestrel", "lagoon", "marble", "nectar", "orchid",
    "prism", "quarry",
];

/// Cycle seeded-shuffled filler sentences until at least `budget` bytes, then
/// truncate the final sentence so the total is exactly `budget`.
fn filler_sentences(budget: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut order: Vec<usize> = (0..FILLER.len()).collect();
    order.shuffle(rng);
    let mut out = Vec::new();
    let mut total = 0;
    let mut i = 0;
    while total < budget {
        if i % FILLER.len() == 0 && i > 0 {
            order.shuffle(rng);
        }
        let s = FILLER[order[i % FILLER.len()]];
        let take = s.len().min(budget - total);
        out.push(s[..take].to_string());
        total += take;
        i += 1;
    }
    out
}

fn distinct_keys(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut combos: Vec<(usize, usize)> = (0..ADJECTIVES.len())
        .flat_map(|a| (0..NOUNS.len()).map(move |b| (a, b)))
        .collect();
    combos.shuffle(rng);
    combos
        .into_iter()
        .take(n)
        .map(|(a, b)| format!("{}-{}", ADJECTIVES[a], NOUNS[b]))
        .collect()
}

fn distinct_values(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let v: u32 = rng.gen_range(100000..1000000);
        if seen.insert(v) {
            out.push(v.to_string());
        }
    }
    out
}

/// Needle-in-a-haystack sample: filler text with `The magic number for
/// <key> is <value>.` sentences planted at seeded positions, ending with a
/// query for `n_queries` of the keys. The prompt is exactly `haystack_len`
/// bytes (one byte = one token).
pub fn gen_niah(
    haystack_len: usize,
    n_needles: usize,
    n_queries: usize,
    seed: u64,
) -> Result<TaskSample> {
    if haystack_len < 64 {
        return Err(Error::invalid("haystack_len must be at least 64 tokens"));
    }
    if n_needles < 1 || n_queries < 1 {
        return Err(Error::invalid("n_needles and n_queries must be at least 1"));
    }
    if n_queries > n_needles {
        return Err(Error::invalid(format!(
            "cannot query {n_queries} keys with only {n_needles} needles"
        )));
    }
    if n_needles > ADJECTIVES.len() * NOUNS.len() {
        return Err(Error::invalid("too many needles for the key space"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keys = distinct_keys(n_needles, &mut rng);
    let values = distinct_values(n_needles, &mut rng);

    let needles: Vec<String> = keys
        .iter()
        .zip(&values)
        .map(|(k, v)| format!("The magic number for {k} is {v}. "))
        .collect();

    let mut queried: Vec<usize> = (0..n_needles).collect();
    queried.shuffle(&mut rng);
    queried.truncate(n_queries);
    let query_keys: Vec<&str> = queried.iter().map(|&i| keys[i].as_str()).collect();
    let query = format!(
        "\nWhat is the magic number for {}?\nAnswer:",
        query_keys.join(" and ")
    );

    let overhead: usize = needles.iter().map(String::len).sum::<usize>() + query.len();
    if overhead + 32 > haystack_len {
        return Err(Error::invalid(format!(
            "haystack_len {haystack_len} too small for {n_needles} needles plus query ({overhead} bytes)"
        )));
    }

    let mut sentences = filler_sentences(haystack_len - overhead, &mut rng);
    // plant needles at uniform sentence boundaries, splicing from the back so
    // earlier draws keep their meaning
    let mut slots: Vec<usize> = (0..n_needles)
        .map(|_| rng.gen_range(0..=sentences.len()))
        .collect();
    slots.sort_unstable();
    for (i, &slot) in slots.iter().enumerate().rev() {
        sentences.insert(slot, needles[i].clone());
    }

    let mut prompt: String = sentences.concat();
    prompt.push_str(&query);
    debug_assert_eq!(prompt.len(), haystack_len);

    let answer = queried
        .iter()
        .map(|&i| values[i].clone())
        .collect::<Vec<_>>()
        .join(" ");

    Ok(TaskSample {
        prompt,
        answer,
        meta: serde_json::json!({
            "kind": "niah",
            "keys": keys,
            "values": values,
            "queried_keys": queried.iter().map(|&i| keys[i].clone()).collect::<Vec<_>>(),
            "queried_values": queried.iter().map(|&i| values[i].clone()).collect::<Vec<_>>(),
            "context_target": haystack_len,
            "seed": seed,
        }),
    })
}

fn rand_token(len: usize, alphabet: &[u8], rng: &mut ChaCha8Rng) -> String {
    (0..len)
        .map(|_| alphabet[rng.gen_range(0..alphabet.len())] as char)
        .collect()
}

/// Memorization probe: keyed records with one target payload to reproduce.
pub fn gen_copy_task(
    key_len: usize,
    payload_len: usize,
    distractors: usize,
    seed: u64,
) -> Result<TaskSample> {
    if key_len < 1 || payload_len < 1 {
        return Err(Error::invalid("key_len and payload_len must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = distractors + 1;
    let keys: Vec<String> = (0..n)
        .map(|_| rand_token(key_len, b"ABCDEFGHIJKLMNOPQRSTUVWXYZ", &mut rng))
        .collect();
    let payloads: Vec<String> = (0..n)
        .map(|_| rand_token(payload_len, b"abcdefghijklmnopqrstuvwxyz", &mut rng))
        .collect();
    let target = rng.gen_range(0..n);

    let mut prompt = String::new();
    for (k, p) in keys.iter().zip(&payloads) {
        prompt.push_str(&format!("Record {k}: {p}.\n"));
    }
    prompt.push_str(&format!("Repeat record {}:", keys[target]));

    Ok(TaskSample {
        prompt,
        answer: payloads[target].clone(),
        meta: serde_json::json!({
            "kind": "copy",
            "target_key": keys[target],
            "queried_values": [payloads[target]],
            "distractors": distractors,
            "seed": seed,
        }),
    })
}

/// Plain filler text for corpus-style training, one string per sequence,
/// each exactly `seq_len` bytes.
pub fn gen_text_corpus(n_seqs: usize, seq_len: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_seqs)
        .map(|_| filler_sentences(seq_len, &mut rng).concat())
        .collect()
}
