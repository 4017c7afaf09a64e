//! Synthetic corpora shared by the integration suites.
#![allow(dead_code)]

use dedup_forge::corpus::DialogueUnit;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Zipf;

pub struct CorpusShape {
    pub vocab: usize,
    pub zipf_s: f64,
    pub utterances: (usize, usize),
    pub tokens: (usize, usize),
}

impl CorpusShape {
    pub fn new(vocab: usize, utterances: (usize, usize), tokens: (usize, usize)) -> Self {
        CorpusShape {
            vocab,
            zipf_s: 1.0,
            utterances,
            tokens,
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn zipf_texts(rng: &mut ChaCha8Rng, shape: &CorpusShape) -> Vec<String> {
    let zipf = Zipf::new(shape.vocab as f64, shape.zipf_s).unwrap();
    let turns = rng.random_range(shape.utterances.0..=shape.utterances.1);
    (0..turns)
        .map(|_| {
            let len = rng.random_range(shape.tokens.0..=shape.tokens.1);
            (0..len)
                .map(|_| format!("w{}", zipf.sample(rng) as u64))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}

/// `n` units of Zipf-distributed tokens, ids `u000000`, `u000001`, ...
pub fn zipf_corpus(rng: &mut ChaCha8Rng, n: usize, shape: &CorpusShape) -> Vec<DialogueUnit> {
    (0..n)
        .map(|i| DialogueUnit::from_texts(format!("u{i:06}"), &zipf_texts(rng, shape)).unwrap())
        .collect()
}

/// Copy of `texts` with `edits` random tokens replaced by fresh ones.
pub fn perturb(rng: &mut ChaCha8Rng, texts: &[String], edits: usize, fresh: &str) -> Vec<String> {
    let mut toks: Vec<Vec<String>> = texts
        .iter()
        .map(|t| t.split(' ').map(str::to_owned).collect())
        .collect();
    let total: usize = toks.iter().map(Vec::len).sum();
    for e in 0..edits.min(total) {
        let mut k = rng.random_range(0..total);
        for utt in toks.iter_mut() {
            if k < utt.len() {
                utt[k] = format!("{fresh}{e}");
                break;
            }
            k -= utt.len();
        }
    }
    toks.into_iter().map(|t| t.join(" ")).collect()
}

/// Replaces a random `fraction` of `units` with near-copies (one or two edits)
/// of other units, so joins at high thresholds have work to do.
pub fn plant_copies(rng: &mut ChaCha8Rng, units: &mut [DialogueUnit], fraction: f64) {
    let n = units.len();
    let planted = (n as f64 * fraction) as usize;
    for p in 0..planted {
        let src = rng.random_range(0..n);
        let dst = rng.random_range(0..n);
        if src == dst {
            continue;
        }
        let texts: Vec<String> = units[src].utterances.iter().map(|u| u.raw().to_owned()).collect();
        let edits = rng.random_range(0..3);
        let copy = perturb(rng, &texts, edits, &format!("x{p}_"));
        let id = units[dst].id.clone();
        units[dst] = DialogueUnit::from_texts(id, &copy).unwrap();
    }
}
