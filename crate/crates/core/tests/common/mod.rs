//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use ctxnorm_core::{Dataset, Document, QaSample};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const VOCAB: &[&str] = &[
    "river", "stone", "market", "signal", "harbor", "lantern", "meadow", "copper", "garden",
    "winter", "engine", "valley", "pebble", "silver", "forest", "bridge", "candle", "orchard",
    "mirror", "thunder", "velvet", "canyon", "ember", "glacier", "island", "journey", "kettle",
    "ladder", "marble", "needle", "oyster", "pepper", "quartz", "saddle", "timber", "umbrella",
];

pub const WORDS_PER_SENTENCE: usize = 20;
pub const SENTENCES_PER_DOC: usize = 5;

fn sentence(rng: &mut ChaCha8Rng, extra: Option<&str>) -> String {
    let mut words: Vec<String> = (0..WORDS_PER_SENTENCE)
        .map(|_| (*VOCAB.choose(rng).unwrap()).to_owned())
        .collect();
    if let Some(word) = extra {
        words[WORDS_PER_SENTENCE / 2] = word.to_owned();
    }
    format!("{}.", words.join(" "))
}

/// A passage of `SENTENCES_PER_DOC` sentences of `WORDS_PER_SENTENCE` words.
pub fn passage(rng: &mut ChaCha8Rng, answer: Option<&str>) -> String {
    (0..SENTENCES_PER_DOC)
        .map(|i| sentence(rng, if i == 2 { answer } else { None }))
        .collect::<Vec<_>>()
        .join(" ")
}

/// `n` samples with `docs` equal-length documents each; the gold document is
/// stored first.
pub fn qa_corpus(n: usize, docs: usize, seed: u64) -> Vec<QaSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let answer = format!("codeword{i:03}");
            let documents = (0..docs)
                .map(|d| Document {
                    id: format!("q{i:03}-d{d}"),
                    text: passage(&mut rng, (d == 0).then_some(answer.as_str())),
                    is_gold: d == 0,
                })
                .collect();
            QaSample {
                id: format!("q{i:03}"),
                question: format!("What is the code word of record {i}?"),
                gold_answers: vec![answer],
                documents,
            }
        })
        .collect()
}

pub fn qa_dataset(n: usize, docs: usize, seed: u64) -> Dataset {
    Dataset::from_qa(qa_corpus(n, docs, seed)).unwrap()
}
