//! Frozen index over training samples for test-vs-train overlap queries.

use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;

use super::{ratio_from_counts, OverlapRecord, TokenBag};
use crate::corpus::{Sample, Utterance};
use crate::error::{Error, Result};

/// Token interner. Tokens it has never seen map to a shared id that no
/// interned token uses, which leaves sizes right and never matches.
#[derive(Debug, Default, Clone)]
pub struct Vocab {
    ids: HashMap<String, u32>,
}

const UNSEEN: u32 = u32::MAX;

impl Vocab {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn intern_bag<'a, I>(&mut self, utterances: I) -> Result<TokenBag<u32>>
    where
        I: IntoIterator<Item = &'a Utterance>,
    {
        let mut toks = Vec::new();
        for tok in utterances.into_iter().flat_map(Utterance::tokens) {
            let next = self.ids.len() as u32;
            let id = match self.ids.get(tok) {
                Some(&id) => id,
                None => {
                    self.ids.insert(tok.to_owned(), next);
                    next
                }
            };
            toks.push(id);
        }
        TokenBag::from_tokens(toks)
    }

    pub fn lookup_bag<'a, I>(&self, utterances: I) -> Result<TokenBag<u32>>
    where
        I: IntoIterator<Item = &'a Utterance>,
    {
        TokenBag::from_tokens(
            utterances
                .into_iter()
                .flat_map(Utterance::tokens)
                .map(|t| self.ids.get(t).copied().unwrap_or(UNSEEN)),
        )
    }
}

struct Entry {
    origin: usize,
    key_unit: String,
    key_turn: usize,
    context: TokenBag<u32>,
    response: TokenBag<u32>,
}

impl Entry {
    fn key_string(&self) -> String {
        format!("{}#{}", self.key_unit, self.key_turn)
    }
}

/// Training samples with pre-built bags, sorted by key so that the first
/// maximum found is the tie-break winner.
pub struct SampleIndex {
    vocab: Vocab,
    entries: Vec<Entry>,
}

/// Best match found for one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    /// Position in key order.
    pub position: usize,
    pub ratio: f64,
}

impl SampleIndex {
    pub fn build(train: &[Sample]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptySet);
        }
        let mut sorted: Vec<(usize, &Sample)> = train.iter().enumerate().collect();
        sorted.sort_by(|a, b| a.1.key_cmp(b.1));
        let mut vocab = Vocab::default();
        let mut entries = Vec::with_capacity(sorted.len());
        for (origin, s) in sorted {
            entries.push(Entry {
                origin,
                key_unit: s.unit_id.clone(),
                key_turn: s.turn_index,
                context: vocab.intern_bag(&s.context)?,
                response: vocab.intern_bag([&s.response])?,
            });
        }
        Ok(SampleIndex { vocab, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Key string (`unit#turn`) of the training sample at `position`.
    pub fn key_at(&self, position: usize) -> String {
        self.entries[position].key_string()
    }

    /// Highest `min(context ratio, response ratio)` over the training set.
    pub fn best_sample_match(&self, x: &Sample) -> Result<Match> {
        let ctx = self.vocab.lookup_bag(&x.context)?;
        let resp = self.vocab.lookup_bag([&x.response])?;
        Ok(self.argmax(|e| {
            let bound = length_bound(&ctx, &e.context).min(length_bound(&resp, &e.response));
            (bound, || {
                ratio_of(&ctx, &e.context).min(ratio_of(&resp, &e.response))
            })
        }))
    }

    /// Highest context-only ratio over the training set.
    pub fn best_context_match(&self, context: &[Utterance]) -> Result<Match> {
        let ctx = self.vocab.lookup_bag(context)?;
        Ok(self.argmax(|e| (length_bound(&ctx, &e.context), || ratio_of(&ctx, &e.context))))
    }

    fn argmax<'s, F, R>(&'s self, mut score: F) -> Match
    where
        F: FnMut(&'s Entry) -> (f64, R),
        R: FnOnce() -> f64,
    {
        let mut best = Match {
            position: 0,
            ratio: -1.0,
        };
        for (pos, e) in self.entries.iter().enumerate() {
            let (bound, exact) = score(e);
            // A candidate must beat the current best strictly; equal scores
            // keep the earlier key.
            if bound <= best.ratio {
                continue;
            }
            let r = exact();
            if r.partial_cmp(&best.ratio) == Some(Ordering::Greater) {
                best = Match { position: pos, ratio: r };
            }
        }
        best
    }

    /// `R(x, D_train)` for every test sample, in input order.
    pub fn max_overlap_all(&self, test: &[Sample]) -> Result<Vec<OverlapRecord>> {
        let results: Vec<Result<OverlapRecord>> = test
            .par_iter()
            .map(|x| {
                let m = self.best_sample_match(x)?;
                Ok(OverlapRecord {
                    subject_id: x.key().to_string(),
                    best_match_id: self.key_at(m.position),
                    ratio: m.ratio,
                })
            })
            .collect();
        results.into_iter().collect()
    }

    /// Index into the slice the index was built from.
    pub fn origin_at(&self, position: usize) -> usize {
        self.entries[position].origin
    }
}

fn ratio_of(a: &TokenBag<u32>, b: &TokenBag<u32>) -> f64 {
    ratio_from_counts(a.intersection_size(b), a.size() + b.size())
}

/// Upper bound on the ratio from sizes alone.
fn length_bound(a: &TokenBag<u32>, b: &TokenBag<u32>) -> f64 {
    ratio_from_counts(a.size().min(b.size()), a.size() + b.size())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{flatten_units, DialogueUnit, FlattenMode};
    use crate::overlap::max_overlap_vs_set;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_units(rng: &mut ChaCha8Rng, n: usize, prefix: &str) -> Vec<DialogueUnit> {
        (0..n)
            .map(|u| {
                let turns = rng.random_range(2..6);
                let texts: Vec<String> = (0..turns)
                    .map(|_| {
                        let len = rng.random_range(1..5);
                        (0..len)
                            .map(|_| format!("w{}", rng.random_range(0..8)))
                            .collect::<Vec<_>>()
                            .join(" ")
                    })
                    .collect();
                DialogueUnit::from_texts(format!("{prefix}{u}"), &texts).unwrap()
            })
            .collect()
    }

    #[test]
    fn index_agrees_with_direct_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for mode in [FlattenMode::SingleTurn, FlattenMode::MultiTurn] {
            let train = flatten_units(&random_units(&mut rng, 40, "tr"), mode, 3).unwrap();
            let test = flatten_units(&random_units(&mut rng, 15, "te"), mode, 3).unwrap();
            let index = SampleIndex::build(&train).unwrap();
            let fast = index.max_overlap_all(&test).unwrap();
            for (x, rec) in test.iter().zip(&fast) {
                let slow = max_overlap_vs_set(x, &train).unwrap();
                assert_eq!(rec, &slow);
            }
        }
    }

    #[test]
    fn empty_train_is_rejected() {
        assert!(matches!(SampleIndex::build(&[]), Err(Error::EmptySet)));
    }

    #[test]
    fn unseen_tokens_count_toward_size() {
        let cfg = crate::corpus::TokenizerConfig::default();
        let mut v = Vocab::default();
        let a = v.intern_bag([&crate::corpus::tokenize("a b", &cfg).unwrap()]).unwrap();
        let q = v.lookup_bag([&crate::corpus::tokenize("a z y", &cfg).unwrap()]).unwrap();
        assert_eq!(q.size(), 3);
        assert_eq!(ratio_of(&a, &q), 2.0 / 5.0);
    }
}
