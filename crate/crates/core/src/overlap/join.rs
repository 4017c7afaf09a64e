//! Exact threshold self-join over whole-unit token bags.
//!
//! Candidate generation follows the prefix-filtering scheme for set
//! similarity joins, lifted to multisets by treating the `k`-th copy of a
//! token as its own element `(token, k)`. Under that encoding the multiset
//! intersection is the plain set intersection, so the usual guarantees
//! carry over unchanged:
//!
//! * length filter: a pair of sizes `a <= b` can only qualify when
//!   `2a / (a + b)` is admitted;
//! * prefix filter: with elements in a global order (rarest first), two bags
//!   that share at least `α` elements share one within their first
//!   `size - α + 1` elements;
//! * positional filter: a candidate first seen at prefix positions `i`, `j`
//!   can gain at most `min(a - i, b - j)` more matches.
//!
//! Every surviving candidate is verified against the full bags, so the
//! output is exactly the brute-force answer.

use std::collections::HashMap;

use rayon::prelude::*;

use super::{ratio_from_counts, Threshold, TokenBag};
use crate::corpus::DialogueUnit;

#[derive(Debug, Clone, PartialEq)]
pub struct JoinPair {
    /// Lexicographically smaller id.
    pub a: String,
    pub b: String,
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct JoinStats {
    pub units: usize,
    /// Pairs whose full bags were compared.
    pub candidates: u64,
    pub results: u64,
}

impl JoinStats {
    pub fn all_pairs(&self) -> u64 {
        let n = self.units as u64;
        n * n.saturating_sub(1) / 2
    }
}

#[derive(Debug, Clone, Default)]
pub struct JoinOutput {
    /// Sorted by `(a, b)`.
    pub pairs: Vec<JoinPair>,
    pub stats: JoinStats,
}

/// A qualifying pair by input position, `i < j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct IndexedPair {
    pub i: u32,
    pub j: u32,
    pub ratio: f64,
}

/// All unordered pairs of units whose whole-unit overlap ratio passes
/// `threshold`. With `brute_force` every pair is compared directly.
pub fn similarity_self_join(
    units: &[DialogueUnit],
    threshold: Threshold,
    brute_force: bool,
) -> JoinOutput {
    let bags = unit_bags(units);
    let (pairs, stats) = join_bags(&bags, threshold, brute_force);
    let mut pairs: Vec<JoinPair> = pairs
        .into_iter()
        .map(|p| {
            let (x, y) = (&units[p.i as usize].id, &units[p.j as usize].id);
            let (a, b) = if x <= y { (x, y) } else { (y, x) };
            JoinPair {
                a: a.clone(),
                b: b.clone(),
                ratio: p.ratio,
            }
        })
        .collect();
    pairs.sort_by(|p, q| (&p.a, &p.b).cmp(&(&q.a, &q.b)));
    JoinOutput { pairs, stats }
}

/// Interns every token and builds one bag per unit. Token ids are assigned
/// in order of first appearance, so they depend only on the input.
pub(crate) fn unit_bags(units: &[DialogueUnit]) -> Vec<TokenBag<u32>> {
    let mut ids: HashMap<&str, u32> = HashMap::new();
    let mut bags = Vec::with_capacity(units.len());
    for unit in units {
        let mut toks = Vec::with_capacity(unit.token_count());
        for tok in unit.utterances.iter().flat_map(|u| u.tokens()) {
            let next = ids.len() as u32;
            toks.push(*ids.entry(tok).or_insert(next));
        }
        bags.push(TokenBag::from_tokens(toks).expect("units hold at least two non-empty utterances"));
    }
    bags
}

pub(crate) fn join_bags(
    bags: &[TokenBag<u32>],
    threshold: Threshold,
    brute_force: bool,
) -> (Vec<IndexedPair>, JoinStats) {
    let (mut pairs, mut stats) = if brute_force {
        brute_force_join(bags, threshold)
    } else {
        PrefixIndex::build(bags, threshold).join()
    };
    pairs.sort_by_key(|p| (p.i, p.j));
    stats.units = bags.len();
    stats.results = pairs.len() as u64;
    (pairs, stats)
}

fn vocab_size(bags: &[TokenBag<u32>]) -> usize {
    bags.iter()
        .flat_map(|b| b.entries().iter().map(|&(t, _)| t as usize + 1))
        .max()
        .unwrap_or(0)
}

/// Writes the counts of `bag` into a zeroed dense vector.
fn scatter(dense: &mut [u32], bag: &TokenBag<u32>) {
    for &(t, c) in bag.entries() {
        dense[t as usize] = c;
    }
}

fn clear(dense: &mut [u32], bag: &TokenBag<u32>) {
    for &(t, _) in bag.entries() {
        dense[t as usize] = 0;
    }
}

/// Intersection size of `other` with the bag scattered into `dense`.
fn dense_intersection(dense: &[u32], other: &TokenBag<u32>) -> usize {
    other
        .entries()
        .iter()
        .map(|&(t, c)| dense[t as usize].min(c) as usize)
        .sum()
}

/// Compares every pair.
fn brute_force_join(bags: &[TokenBag<u32>], threshold: Threshold) -> (Vec<IndexedPair>, JoinStats) {
    let vocab = vocab_size(bags);
    let per_row: Vec<Vec<IndexedPair>> = (0..bags.len())
        .into_par_iter()
        .map_init(
            || vec![0u32; vocab],
            |dense, i| {
                let a = &bags[i];
                scatter(dense, a);
                let mut found = Vec::new();
                for (j, b) in bags.iter().enumerate().skip(i + 1) {
                    let ratio = ratio_from_counts(dense_intersection(dense, b), a.size() + b.size());
                    if threshold.admits(ratio) {
                        found.push(IndexedPair {
                            i: i as u32,
                            j: j as u32,
                            ratio,
                        });
                    }
                }
                clear(dense, a);
                found
            },
        )
        .collect();
    let n = bags.len() as u64;
    let stats = JoinStats {
        candidates: n * n.saturating_sub(1) / 2,
        ..JoinStats::default()
    };
    (per_row.concat(), stats)
}

/// Per-worker probe state, all indexed by size-order position.
struct Scratch {
    /// Prefix matches so far; -1 marks a pruned candidate.
    acc: Vec<i32>,
    /// Required intersection for the current probe.
    need: Vec<u32>,
    touched: Vec<u32>,
    /// Token counts of the probing bag.
    dense: Vec<u32>,
}

struct PrefixIndex<'a> {
    bags: &'a [TokenBag<u32>],
    vocab: usize,
    threshold: Threshold,
    /// Input positions sorted by (size, position).
    order: Vec<u32>,
    /// Bag sizes in `order`.
    sizes: Vec<usize>,
    /// Probe prefix of each unit in `order`, as element ranks, rarest first.
    prefixes: Vec<Vec<u32>>,
    /// Per element rank: (order position, position within that unit's prefix).
    postings: Vec<Vec<(u32, u32)>>,
}

impl<'a> PrefixIndex<'a> {
    /// Single-writer build; the index is read-only once returned.
    fn build(bags: &'a [TokenBag<u32>], threshold: Threshold) -> Self {
        let mut order: Vec<u32> = (0..bags.len() as u32).collect();
        order.sort_by_key(|&i| (bags[i as usize].size(), i));
        let sizes: Vec<usize> = order.iter().map(|&i| bags[i as usize].size()).collect();

        // Element (token, k) lives at offsets[token] + k - 1.
        let vocab = vocab_size(bags);
        let mut max_count = vec![0u32; vocab];
        for bag in bags {
            for &(t, c) in bag.entries() {
                let m = &mut max_count[t as usize];
                *m = (*m).max(c);
            }
        }
        let mut offsets = Vec::with_capacity(vocab + 1);
        let mut acc = 0usize;
        for &m in &max_count {
            offsets.push(acc);
            acc += m as usize;
        }
        offsets.push(acc);

        // Document frequency of each element: units holding at least k copies.
        let mut freq = vec![0u32; acc];
        for bag in bags {
            for &(t, c) in bag.entries() {
                let base = offsets[t as usize];
                for f in &mut freq[base..base + c as usize] {
                    *f += 1;
                }
            }
        }
        let mut by_rarity: Vec<u32> = (0..acc as u32).collect();
        by_rarity.sort_by_key(|&e| (freq[e as usize], e));
        let mut rank = vec![0u32; acc];
        for (r, &e) in by_rarity.iter().enumerate() {
            rank[e as usize] = r as u32;
        }

        let prefixes: Vec<Vec<u32>> = order
            .par_iter()
            .map(|&i| {
                let bag = &bags[i as usize];
                let len = probe_prefix_len(bag.size(), threshold);
                if len == 0 {
                    return Vec::new();
                }
                let mut elems: Vec<u32> = Vec::with_capacity(bag.size());
                for &(t, c) in bag.entries() {
                    let base = offsets[t as usize];
                    elems.extend(rank[base..base + c as usize].iter().copied());
                }
                if len < elems.len() {
                    elems.select_nth_unstable(len - 1);
                    elems.truncate(len);
                }
                elems.sort_unstable();
                elems
            })
            .collect();

        let mut postings: Vec<Vec<(u32, u32)>> = vec![Vec::new(); acc];
        for (pos, prefix) in prefixes.iter().enumerate() {
            let len = index_prefix_len(sizes[pos], threshold).min(prefix.len());
            for (j, &e) in prefix[..len].iter().enumerate() {
                postings[e as usize].push((pos as u32, j as u32));
            }
        }

        PrefixIndex {
            bags,
            vocab,
            threshold,
            order,
            sizes,
            prefixes,
            postings,
        }
    }

    fn join(&self) -> (Vec<IndexedPair>, JoinStats) {
        let n = self.order.len();
        let per_probe: Vec<(Vec<IndexedPair>, u64)> = (0..n)
            .into_par_iter()
            .map_init(
                || Scratch {
                    acc: vec![0; n],
                    need: vec![0; n],
                    touched: Vec::new(),
                    dense: vec![0; self.vocab],
                },
                |scratch, pos| self.probe(pos, scratch),
            )
            .collect();
        let mut stats = JoinStats::default();
        let mut pairs = Vec::new();
        for (found, candidates) in per_probe {
            stats.candidates += candidates;
            pairs.extend(found);
        }
        (pairs, stats)
    }

    /// Finds every qualifying partner of the unit at `pos` among units
    /// earlier in size order.
    fn probe(&self, pos: usize, scratch: &mut Scratch) -> (Vec<IndexedPair>, u64) {
        let Scratch {
            acc,
            need,
            touched,
            dense,
        } = scratch;
        let sx = self.sizes[pos];
        let Some(min_partner) = min_partner_size(sx, self.threshold) else {
            return (Vec::new(), 0);
        };
        let lo = self.sizes.partition_point(|&s| s < min_partner) as u32;
        let hi = pos as u32;
        if lo >= hi {
            return (Vec::new(), 0);
        }

        for (i, &elem) in self.prefixes[pos].iter().enumerate() {
            let list = &self.postings[elem as usize];
            let start = list.partition_point(|&(q, _)| q < lo);
            for &(q, j) in &list[start..] {
                if q >= hi {
                    break;
                }
                let a = acc[q as usize];
                if a < 0 {
                    continue;
                }
                let sy = self.sizes[q as usize];
                if a == 0 {
                    touched.push(q);
                    match self.threshold.min_overlap(sx, sy) {
                        Some(alpha) => need[q as usize] = alpha as u32,
                        None => {
                            acc[q as usize] = -1;
                            continue;
                        }
                    }
                }
                let remaining = (sx - i - 1).min(sy - j as usize - 1);
                let reachable = a as usize + 1 + remaining >= need[q as usize] as usize;
                acc[q as usize] = if reachable { a + 1 } else { -1 };
            }
        }

        let x = self.order[pos];
        let bx = &self.bags[x as usize];
        let mut found = Vec::new();
        let mut candidates = 0u64;
        scatter(dense, bx);
        for &q in touched.iter() {
            if acc[q as usize] > 0 {
                candidates += 1;
                let y = self.order[q as usize];
                let by = &self.bags[y as usize];
                let ratio = ratio_from_counts(dense_intersection(dense, by), sx + by.size());
                if self.threshold.admits(ratio) {
                    found.push(IndexedPair {
                        i: x.min(y),
                        j: x.max(y),
                        ratio,
                    });
                }
            }
            acc[q as usize] = 0;
        }
        clear(dense, bx);
        touched.clear();
        (found, candidates)
    }
}

/// Smallest partner size `b <= a` that can still reach the threshold.
fn min_partner_size(a: usize, threshold: Threshold) -> Option<usize> {
    // 2b / (a + b) grows with b, so feasibility is monotone.
    let feasible = |b: usize| threshold.admits_counts(b, a + b);
    if a == 0 || !feasible(a) {
        return None;
    }
    let (mut lo, mut hi) = (1usize, a);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Some(lo)
}

/// Prefix a unit probes with: it must cover the loosest partner it can have.
fn probe_prefix_len(size: usize, threshold: Threshold) -> usize {
    min_partner_size(size, threshold)
        .and_then(|b| threshold.min_overlap(size, b))
        .map_or(0, |alpha| size - alpha + 1)
}

/// Prefix a unit is indexed under: its partners are at least as large, so
/// the weakest requirement is against an equal-sized bag.
fn index_prefix_len(size: usize, threshold: Threshold) -> usize {
    threshold
        .min_overlap(size, size)
        .map_or(0, |alpha| size - alpha + 1)
}
