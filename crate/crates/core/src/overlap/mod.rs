//! Bag-of-words overlap ratios between utterances, samples and units.
//!
//! The ratio of two token multisets `u`, `v` is `2|u ∩ v| / (|u| + |v|)`,
//! where the intersection keeps the smaller count of every shared token. A
//! sample is compared with another through the minimum of its context ratio
//! and its response ratio, so a generic context ("hello") paired with a
//! different response does not read as a duplicate.

mod histogram;
mod index;
mod join;

use std::cmp::Ordering;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{DialogueUnit, Sample, Utterance};
use crate::error::{Error, Result};

pub use histogram::{overlap_histogram, OverlapHistogram, DEFAULT_BIN_WIDTH};
pub use index::{SampleIndex, Vocab};
pub use join::{similarity_self_join, JoinOutput, JoinPair, JoinStats};
pub(crate) use join::{join_bags, unit_bags};

/// Slack applied when a ratio is compared with a threshold.
pub const RATIO_EPS: f64 = 1e-12;

/// A token multiset with its entries sorted by token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBag<K> {
    entries: Vec<(K, u32)>,
    size: usize,
}

impl<K: Ord> TokenBag<K> {
    pub fn from_tokens<I: IntoIterator<Item = K>>(tokens: I) -> Result<Self> {
        let mut toks: Vec<K> = tokens.into_iter().collect();
        if toks.is_empty() {
            return Err(Error::EmptyBag);
        }
        toks.sort_unstable();
        let size = toks.len();
        let mut entries: Vec<(K, u32)> = Vec::new();
        for t in toks {
            match entries.last_mut() {
                Some((k, c)) if *k == t => *c += 1,
                _ => entries.push((t, 1)),
            }
        }
        Ok(TokenBag { entries, size })
    }

    pub fn entries(&self) -> &[(K, u32)] {
        &self.entries
    }

    pub fn count(&self, token: &K) -> u32 {
        self.entries
            .binary_search_by(|(k, _)| k.cmp(token))
            .map(|i| self.entries[i].1)
            .unwrap_or(0)
    }

    /// Total number of tokens, with multiplicity.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn distinct(&self) -> usize {
        self.entries.len()
    }

    /// Size of the multiset intersection: the sum over shared tokens of the
    /// smaller count.
    pub fn intersection_size(&self, other: &TokenBag<K>) -> usize {
        let (mut a, mut b) = (self.entries.iter(), other.entries.iter());
        let (mut x, mut y) = (a.next(), b.next());
        let mut inter = 0usize;
        while let (Some((kx, cx)), Some((ky, cy))) = (x, y) {
            match kx.cmp(ky) {
                Ordering::Less => x = a.next(),
                Ordering::Greater => y = b.next(),
                Ordering::Equal => {
                    inter += (*cx).min(*cy) as usize;
                    x = a.next();
                    y = b.next();
                }
            }
        }
        inter
    }
}

/// Multiset union of the tokens of all given utterances.
pub fn bag_of<'a, I>(utterances: I) -> Result<TokenBag<&'a str>>
where
    I: IntoIterator<Item = &'a Utterance>,
{
    TokenBag::from_tokens(utterances.into_iter().flat_map(Utterance::tokens))
}

/// `2|u ∩ v| / (|u| + |v|)` from raw counts.
pub fn ratio_from_counts(intersection: usize, total_size: usize) -> f64 {
    if total_size == 0 {
        return 0.0;
    }
    (2 * intersection) as f64 / total_size as f64
}

pub fn overlap_ratio<K: Ord>(u: &TokenBag<K>, v: &TokenBag<K>) -> f64 {
    ratio_from_counts(u.intersection_size(v), u.size() + v.size())
}

/// Duplicate cut-off on overlap ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    /// Require `ratio > value` instead of `ratio >= value`.
    #[serde(default)]
    pub strict: bool,
}

impl Threshold {
    pub fn new(value: f64, strict: bool) -> Result<Self> {
        if !(value > 0.0 && value <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "threshold {value} outside (0, 1]"
            )));
        }
        Ok(Threshold { value, strict })
    }

    pub fn inclusive(value: f64) -> Result<Self> {
        Threshold::new(value, false)
    }

    /// Whether `ratio` counts as a duplicate. A zero ratio never does.
    pub fn admits(&self, ratio: f64) -> bool {
        if ratio <= 0.0 {
            return false;
        }
        if self.strict {
            ratio > self.value + RATIO_EPS
        } else {
            ratio >= self.value - RATIO_EPS
        }
    }

    pub fn admits_counts(&self, intersection: usize, total_size: usize) -> bool {
        self.admits(ratio_from_counts(intersection, total_size))
    }

    /// Smallest intersection that two bags of the given sizes need to be
    /// admitted, or `None` when no intersection suffices.
    pub fn min_overlap(&self, size_a: usize, size_b: usize) -> Option<usize> {
        let total = size_a + size_b;
        let cap = size_a.min(size_b);
        let estimate = (self.value * total as f64 / 2.0).floor() as usize;
        let mut k = estimate.saturating_sub(1).max(1);
        while k <= cap {
            if self.admits_counts(k, total) {
                return Some(k);
            }
            k += 1;
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapRecord {
    pub subject_id: String,
    pub best_match_id: String,
    pub ratio: f64,
}

/// `min(R(context, context'), R(response, response'))`; each context is
/// the bag of all its turns.
pub fn sample_overlap(x: &Sample, other: &Sample) -> Result<f64> {
    let ctx = overlap_ratio(&bag_of(&x.context)?, &bag_of(&other.context)?);
    let resp = overlap_ratio(&bag_of([&x.response])?, &bag_of([&other.response])?);
    Ok(ctx.min(resp))
}

/// Maximum sample overlap of `x` against every sample of `train`; ties go
/// to the lowest (unit id, turn index).
pub fn max_overlap_vs_set(x: &Sample, train: &[Sample]) -> Result<OverlapRecord> {
    let mut best: Option<(f64, &Sample)> = None;
    for cand in train {
        let r = sample_overlap(x, cand)?;
        let better = match best {
            None => true,
            Some((br, bs)) => r > br || (r == br && cand.key_cmp(bs) == Ordering::Less),
        };
        if better {
            best = Some((r, cand));
        }
    }
    let (ratio, s) = best.ok_or(Error::EmptySet)?;
    Ok(OverlapRecord {
        subject_id: x.key().to_string(),
        best_match_id: s.key().to_string(),
        ratio,
    })
}

/// Maximum whole-unit overlap of `u` against every other unit of `corpus`
/// (units with `u`'s id are skipped); ties go to the lowest id.
pub fn unit_max_overlap(u: &DialogueUnit, corpus: &[DialogueUnit]) -> Result<OverlapRecord> {
    let bag = bag_of(&u.utterances)?;
    let mut best: Option<(f64, &str)> = None;
    for other in corpus.iter().filter(|o| o.id != u.id) {
        let r = overlap_ratio(&bag, &bag_of(&other.utterances)?);
        let better = match best {
            None => true,
            Some((br, bid)) => r > br || (r == br && other.id.as_str() < bid),
        };
        if better {
            best = Some((r, &other.id));
        }
    }
    let (ratio, id) = best.ok_or(Error::EmptySet)?;
    Ok(OverlapRecord {
        subject_id: u.id.clone(),
        best_match_id: id.to_owned(),
        ratio,
    })
}

/// Writes `{"a", "b", "ratio"}` lines with six fractional digits.
pub fn write_records<W: Write>(mut w: W, records: &[OverlapRecord]) -> std::io::Result<()> {
    for r in records {
        writeln!(
            w,
            "{{\"a\":{},\"b\":{},\"ratio\":{:.6}}}",
            serde_json::to_string(&r.subject_id)?,
            serde_json::to_string(&r.best_match_id)?,
            r.ratio
        )?;
    }
    w.flush()
}

pub fn write_join_pairs<W: Write>(mut w: W, pairs: &[JoinPair]) -> std::io::Result<()> {
    for p in pairs {
        writeln!(
            w,
            "{{\"a\":{},\"b\":{},\"ratio\":{:.6}}}",
            serde_json::to_string(&p.a)?,
            serde_json::to_string(&p.b)?,
            p.ratio
        )?;
    }
    w.flush()
}

pub fn parse_records<R: BufRead>(reader: R, source: &str) -> Result<Vec<OverlapRecord>> {
    #[derive(Deserialize)]
    struct Line {
        a: String,
        b: String,
        ratio: f64,
    }
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let err = |message: String| Error::Parse {
            source_name: source.to_owned(),
            line: i + 1,
            message,
        };
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Line = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if !(0.0..=1.0).contains(&rec.ratio) {
            return Err(err(format!("ratio {} outside [0, 1]", rec.ratio)));
        }
        out.push(OverlapRecord {
            subject_id: rec.a,
            best_match_id: rec.b,
            ratio: rec.ratio,
        });
    }
    Ok(out)
}
