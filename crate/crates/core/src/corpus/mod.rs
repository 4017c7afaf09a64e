//! Corpus ingestion and flattening.
//!
//! A [`DialogueUnit`] is the object deduplication compares and removes (a
//! whole session or a whole movie). Models are trained and evaluated on
//! [`Sample`]s, the (context, response) pairs obtained by flattening a unit.

mod jsonl;
mod tokenize;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use jsonl::{
    parse_corpus, parse_samples, write_samples, write_units, CorpusSchema, ParsedCorpus,
};
pub use tokenize::{tokenize, SplitRule, TokenizerConfig, Utterance};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueUnit {
    pub id: String,
    pub utterances: Vec<Utterance>,
    pub meta: BTreeMap<String, String>,
}

impl DialogueUnit {
    pub fn new(id: impl Into<String>, utterances: Vec<Utterance>) -> Self {
        DialogueUnit {
            id: id.into(),
            utterances,
            meta: BTreeMap::new(),
        }
    }

    /// Builds a unit by tokenizing each turn with the default tokenizer.
    pub fn from_texts<S: AsRef<str>>(id: impl Into<String>, texts: &[S]) -> Result<Self> {
        let cfg = TokenizerConfig::default();
        let utterances = texts
            .iter()
            .map(|t| tokenize(t.as_ref(), &cfg))
            .collect::<Result<_>>()?;
        Ok(DialogueUnit::new(id, utterances))
    }

    pub fn sample_count(&self) -> usize {
        self.utterances.len().saturating_sub(1)
    }

    pub fn token_count(&self) -> usize {
        self.utterances.iter().map(Utterance::len).sum()
    }
}

/// Identifies a sample by its source unit and the position of its response.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleKey {
    pub unit_id: String,
    pub turn_index: usize,
}

impl fmt::Display for SampleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.unit_id, self.turn_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub context: Vec<Utterance>,
    pub response: Utterance,
    pub unit_id: String,
    pub turn_index: usize,
}

impl Sample {
    pub fn key(&self) -> SampleKey {
        SampleKey {
            unit_id: self.unit_id.clone(),
            turn_index: self.turn_index,
        }
    }

    /// Orders samples the way ties are broken everywhere: by unit id, then turn.
    pub fn key_cmp(&self, other: &Sample) -> std::cmp::Ordering {
        (self.unit_id.as_str(), self.turn_index).cmp(&(other.unit_id.as_str(), other.turn_index))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlattenMode {
    SingleTurn,
    MultiTurn,
}

impl FlattenMode {
    /// Window actually applied; single-turn always looks back one utterance.
    pub fn effective_window(self, window: usize) -> usize {
        match self {
            FlattenMode::SingleTurn => 1,
            FlattenMode::MultiTurn => window,
        }
    }
}

/// Context window for multi-turn flattening.
pub const DEFAULT_WINDOW: usize = 3;

/// Splits every unit into (context, response) samples.
///
/// The sample at turn `t` has response `utterances[t]` and context
/// `utterances[t - window .. t]`, truncated at the start of the unit rather
/// than padded.
pub fn flatten_units(
    units: &[DialogueUnit],
    mode: FlattenMode,
    window: usize,
) -> Result<Vec<Sample>> {
    if window == 0 {
        return Err(Error::InvalidConfig("context window must be at least 1".into()));
    }
    let window = mode.effective_window(window);
    let total: usize = units.iter().map(DialogueUnit::sample_count).sum();
    let mut out = Vec::with_capacity(total);
    for unit in units {
        for t in 1..unit.utterances.len() {
            out.push(Sample {
                context: unit.utterances[t.saturating_sub(window)..t].to_vec(),
                response: unit.utterances[t].clone(),
                unit_id: unit.id.clone(),
                turn_index: t,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(id: &str, texts: &[&str]) -> DialogueUnit {
        DialogueUnit::from_texts(id, texts).unwrap()
    }

    fn joined(utts: &[Utterance]) -> Vec<&str> {
        utts.iter().map(Utterance::joined).collect()
    }

    #[test]
    fn single_turn_yields_t_minus_one_pairs() {
        let s = flatten_units(&[unit("u", &["a", "b", "c"])], FlattenMode::SingleTurn, 3).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(joined(&s[0].context), ["a"]);
        assert_eq!(s[0].response.joined(), "b");
        assert_eq!(joined(&s[1].context), ["b"]);
        assert_eq!(s[1].response.joined(), "c");
    }

    #[test]
    fn multi_turn_window_truncates_at_unit_start() {
        let s = flatten_units(&[unit("u", &["a", "b", "c", "d"])], FlattenMode::MultiTurn, 3)
            .unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(joined(&s[0].context), ["a"]);
        assert_eq!(joined(&s[1].context), ["a", "b"]);
        assert_eq!(joined(&s[2].context), ["a", "b", "c"]);
        assert_eq!(s[2].response.joined(), "d");
        assert_eq!(s[2].turn_index, 3);
    }

    #[test]
    fn minimal_unit_gives_one_sample() {
        for mode in [FlattenMode::SingleTurn, FlattenMode::MultiTurn] {
            let s = flatten_units(&[unit("u", &["a", "b"])], mode, 3).unwrap();
            assert_eq!(s.len(), 1);
        }
    }

    #[test]
    fn zero_window_is_rejected() {
        assert!(flatten_units(&[], FlattenMode::MultiTurn, 0).is_err());
    }

    #[test]
    fn sample_key_ordering_breaks_ties_by_unit_then_turn() {
        let mut keys = [
            SampleKey { unit_id: "b".into(), turn_index: 1 },
            SampleKey { unit_id: "a".into(), turn_index: 10 },
            SampleKey { unit_id: "a".into(), turn_index: 2 },
        ];
        keys.sort();
        assert_eq!(keys[0].to_string(), "a#2");
        assert_eq!(keys[1].to_string(), "a#10");
    }

    proptest! {
        #[test]
        fn flatten_counts_and_contiguity(
            lens in prop::collection::vec(2usize..9, 1..12),
            window in 1usize..6,
            multi in any::<bool>(),
        ) {
            let units: Vec<DialogueUnit> = lens
                .iter()
                .enumerate()
                .map(|(u, &n)| {
                    let texts: Vec<String> = (0..n).map(|t| format!("u{u}t{t}")).collect();
                    DialogueUnit::from_texts(format!("unit{u}"), &texts).unwrap()
                })
                .collect();
            let mode = if multi { FlattenMode::MultiTurn } else { FlattenMode::SingleTurn };
            let samples = flatten_units(&units, mode, window).unwrap();
            let expected: usize = lens.iter().map(|n| n - 1).sum();
            prop_assert_eq!(samples.len(), expected);
            let w = mode.effective_window(window);
            for s in &samples {
                let unit = units.iter().find(|u| u.id == s.unit_id).unwrap();
                let t = s.turn_index;
                prop_assert!(t >= 1);
                prop_assert_eq!(s.context.len(), w.min(t));
                let mut seq = s.context.clone();
                seq.push(s.response.clone());
                prop_assert_eq!(&seq[..], &unit.utterances[t - s.context.len()..=t]);
            }
        }
    }
}
