#![allow(dead_code)]

pub mod oracle;
pub mod suites;

use std::sync::Arc;

use modlm::corpus::{build_vocabulary, EncodedCorpus, Vocabulary};
use modlm::counts::NGramCountStore;
use modlm::models::CountSource;
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOY: [&str; 2] = ["a b a", "a c"];

pub fn toy(order: usize) -> (Arc<Vocabulary>, EncodedCorpus, Arc<NGramCountStore>) {
    let v = build_vocabulary(TOY, None).unwrap();
    let c = EncodedCorpus::encode(TOY, &v);
    let s = NGramCountStore::accumulate(&c, &v, order).unwrap();
    (Arc::new(v), c, Arc::new(s))
}

pub fn source(store: &Arc<NGramCountStore>) -> CountSource {
    CountSource {
        store: store.clone(),
        path: None,
    }
}

/// Text from a topic-conditioned sparse trigram process: every sentence
/// draws a topic, and each word comes from the trigram table, the topic's
/// word distribution or a Zipfian background.
pub struct SyntheticLanguage {
    words: Vec<String>,
    background: WeightedIndex<f64>,
    topics: Vec<WeightedIndex<f64>>,
    topic_words: Vec<Vec<usize>>,
    successors: Vec<Vec<usize>>,
    eos_rate: f64,
}

impl SyntheticLanguage {
    pub fn new(seed: u64, vocab: usize, topics: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let words: Vec<String> = (0..vocab).map(|i| format!("w{i}")).collect();
        let zipf: Vec<f64> = (0..vocab).map(|i| 1.0 / (i + 1) as f64).collect();
        let background = WeightedIndex::new(&zipf).unwrap();
        let mut topic_dists = Vec::new();
        let mut topic_words = Vec::new();
        for _ in 0..topics {
            let ws: Vec<usize> = (0..vocab / 8)
                .map(|_| background.sample(&mut rng))
                .collect();
            let weights: Vec<f64> = (0..ws.len()).map(|i| 1.0 / (i + 1) as f64).collect();
            topic_dists.push(WeightedIndex::new(&weights).unwrap());
            topic_words.push(ws);
        }
        // successors of each (prev2 * vocab + prev) hashed into a smaller table
        let successors = (0..vocab * 4)
            .map(|_| {
                (0..1 + rng.gen_range(0..4))
                    .map(|_| background.sample(&mut rng))
                    .collect()
            })
            .collect();
        SyntheticLanguage {
            words,
            background,
            topics: topic_dists,
            topic_words,
            successors,
            eos_rate: 1.0 / 14.0,
        }
    }

    pub fn sentence<R: Rng>(&self, rng: &mut R) -> String {
        let topic = rng.gen_range(0..self.topics.len());
        let mut out: Vec<usize> = Vec::new();
        loop {
            let w = {
                let r: f64 = rng.gen();
                if r < 0.55 && !out.is_empty() {
                    let a = out[out.len() - 1];
                    let b = if out.len() > 1 {
                        out[out.len() - 2]
                    } else {
                        self.words.len()
                    };
                    let slot = (a.wrapping_mul(31) + b.wrapping_mul(7)) % self.successors.len();
                    let s = &self.successors[slot];
                    s[rng.gen_range(0..s.len())]
                } else if r < 0.85 {
                    self.topic_words[topic][self.topics[topic].sample(rng)]
                } else {
                    self.background.sample(rng)
                }
            };
            out.push(w);
            if out.len() >= 3 && rng.gen_bool(self.eos_rate) || out.len() >= 40 {
                break;
            }
        }
        out.iter()
            .map(|&i| self.words[i].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn sentences(&self, seed: u64, n: usize) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sentence(&mut rng)).collect()
    }
}

/// Train/dev/test splits of a synthetic language with a vocabulary built on
/// the training part.
pub struct SyntheticData {
    pub vocab: Arc<Vocabulary>,
    pub train: Arc<EncodedCorpus>,
    pub dev: EncodedCorpus,
    pub test: EncodedCorpus,
}

pub fn synthetic(seed: u64, vocab: usize, train: usize, dev: usize, test: usize) -> SyntheticData {
    let lang = SyntheticLanguage::new(seed, vocab, 6);
    let tr = lang.sentences(seed + 1, train);
    let v = build_vocabulary(&tr, None).unwrap();
    let encode = |lines: Vec<String>| EncodedCorpus::encode(lines, &v);
    SyntheticData {
        train: Arc::new(encode(tr.clone())),
        dev: encode(lang.sentences(seed + 2, dev)),
        test: encode(lang.sentences(seed + 3, test)),
        vocab: Arc::new(v),
    }
}

pub const LETTERS: [&str; 7] = ["a", "b", "c", "d", "e", "f", "g"];

pub fn corpus_strategy(
    max_sentences: usize,
) -> impl proptest::strategy::Strategy<Value = Vec<String>> {
    use proptest::prelude::*;
    prop::collection::vec(
        prop::collection::vec(0..LETTERS.len(), 1..8),
        1..=max_sentences,
    )
    .prop_map(|ss| {
        ss.into_iter()
            .map(|s| {
                s.into_iter()
                    .map(|i| LETTERS[i])
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect()
    })
}
