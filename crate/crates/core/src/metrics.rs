//! Corpus-level BLEU-n and Dist-n.
//!
//! BLEU-n = 100 · BP · (p₁ ⋯ pₙ)^(1/n), where pᵢ sums clipped i-gram
//! matches over all pairs and divides by the total hypothesis i-gram count,
//! and BP = min(1, exp(1 − r/c)) with r, c the total reference and
//! hypothesis lengths. Orders with no matches are smoothed according to
//! [`Smoothing`]. Dist-n is 100 · distinct n-grams / all n-grams across the
//! hypotheses.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, SampleKey, TokenizerConfig, Utterance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub hypothesis: Utterance,
    pub reference: Utterance,
    pub key: SampleKey,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothing {
    None,
    /// Add one to numerator and denominator of each order with no match.
    #[default]
    AddOne,
    /// The k-th order with no match gets precision 1 / (2^k · count).
    ExpDecay,
}

impl Smoothing {
    pub fn describe(self) -> &'static str {
        match self {
            Smoothing::None => "none",
            Smoothing::AddOne => "add-one on zero-match orders",
            Smoothing::ExpDecay => "exponential decay 1/(2^k * count) on zero-match orders",
        }
    }
}

/// One-line statement of the BLEU definition used, for report headers.
pub fn bleu_formula(smoothing: Smoothing) -> String {
    format!(
        "corpus BLEU-n = 100 * min(1, exp(1 - ref_len/hyp_len)) * (prod_i p_i)^(1/n); \
         p_i = clipped i-gram matches / hypothesis i-grams summed over pairs; smoothing: {}",
        smoothing.describe()
    )
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu: BTreeMap<usize, f64>,
    pub dist: BTreeMap<usize, f64>,
    pub pair_count: usize,
}

/// Sliding-window n-grams with their counts; empty when `tokens` is shorter
/// than `n`.
pub fn ngram_multiset<'t>(tokens: &'t [&'t str], n: usize) -> HashMap<&'t [&'t str], usize> {
    let mut out = HashMap::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for gram in tokens.windows(n) {
        *out.entry(gram).or_insert(0) += 1;
    }
    out
}

pub fn bleu_n(pairs: &[EvalPair], n: usize, smoothing: Smoothing) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyEval);
    }
    if n == 0 {
        return Err(Error::InvalidConfig("BLEU order must be at least 1".into()));
    }
    let mut matches = vec![0u64; n];
    let mut totals = vec![0u64; n];
    let (mut hyp_len, mut ref_len) = (0u64, 0u64);

    // Pair order fixes the accumulation order; all sums are integers anyway.
    for pair in pairs {
        let hyp = pair.hypothesis.token_vec();
        let refr = pair.reference.token_vec();
        hyp_len += hyp.len() as u64;
        ref_len += refr.len() as u64;
        for order in 1..=n {
            let h = ngram_multiset(&hyp, order);
            let r = ngram_multiset(&refr, order);
            for (gram, &count) in &h {
                matches[order - 1] += count.min(r.get(gram).copied().unwrap_or(0)) as u64;
            }
            totals[order - 1] += hyp.len().saturating_sub(order - 1) as u64;
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }

    let mut log_sum = 0.0;
    let mut zero_orders = 0u32;
    for (&m, &t) in matches.iter().zip(&totals) {
        let p = if m > 0 {
            m as f64 / t as f64
        } else {
            match smoothing {
                Smoothing::None => return Ok(0.0),
                Smoothing::AddOne => 1.0 / (t as f64 + 1.0),
                Smoothing::ExpDecay => {
                    zero_orders += 1;
                    1.0 / (2f64.powi(zero_orders as i32) * (t.max(1)) as f64)
                }
            }
        };
        log_sum += p.ln();
    }
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let score = 100.0 * bp * (log_sum / n as f64).exp();
    Ok(score.clamp(0.0, 100.0))
}

pub fn dist_n(hypotheses: &[Utterance], n: usize) -> f64 {
    let mut distinct: HashSet<Vec<&str>> = HashSet::new();
    let mut total = 0usize;
    for h in hypotheses {
        let toks = h.token_vec();
        if n == 0 || toks.len() < n {
            continue;
        }
        for gram in toks.windows(n) {
            total += 1;
            distinct.insert(gram.to_vec());
        }
    }
    if total == 0 {
        0.0
    } else {
        100.0 * distinct.len() as f64 / total as f64
    }
}

/// BLEU at every order in `bleu_ns` and Dist at every order in `dist_ns`.
/// An empty pair list yields an empty report.
pub fn evaluate(
    pairs: &[EvalPair],
    bleu_ns: &[usize],
    dist_ns: &[usize],
    smoothing: Smoothing,
) -> Result<MetricReport> {
    let mut report = MetricReport {
        pair_count: pairs.len(),
        ..MetricReport::default()
    };
    if pairs.is_empty() {
        return Ok(report);
    }
    for &n in bleu_ns {
        report.bleu.insert(n, bleu_n(pairs, n, smoothing)?);
    }
    let hyps: Vec<Utterance> = pairs.iter().map(|p| p.hypothesis.clone()).collect();
    for &n in dist_ns {
        report.dist.insert(n, dist_n(&hyps, n));
    }
    Ok(report)
}

#[derive(Serialize, Deserialize)]
struct PredictionRecord<S> {
    unit_id: String,
    turn_index: usize,
    hypothesis: S,
}

/// Reads `{"unit_id", "turn_index", "hypothesis"}` lines. An empty
/// hypothesis is allowed and scores zero.
pub fn parse_predictions<R: BufRead>(
    reader: R,
    source: &str,
    cfg: &TokenizerConfig,
) -> Result<Vec<(SampleKey, Utterance)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            source_name: source.to_owned(),
            line: line_no,
            message,
        };
        let rec: PredictionRecord<String> =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let hyp = match tokenize(&rec.hypothesis, cfg) {
            Ok(u) => u,
            Err(Error::EmptyUtterance) => Utterance::empty(),
            Err(e) => return Err(parse_err(e.to_string())),
        };
        let key = SampleKey {
            unit_id: rec.unit_id,
            turn_index: rec.turn_index,
        };
        out.push((key, hyp));
    }
    Ok(out)
}

pub fn write_predictions<'a, W, I>(mut w: W, predictions: I) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = (&'a SampleKey, &'a Utterance)>,
{
    for (key, hyp) in predictions {
        let rec = PredictionRecord {
            unit_id: key.unit_id.clone(),
            turn_index: key.turn_index,
            hypothesis: hyp.raw(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, TokenizerConfig};
    use proptest::prelude::*;

    fn utt(text: &str) -> Utterance {
        tokenize(text, &TokenizerConfig::default()).unwrap()
    }

    fn pair(h: &str, r: &str) -> EvalPair {
        EvalPair {
            hypothesis: utt(h),
            reference: utt(r),
            key: SampleKey {
                unit_id: "u".into(),
                turn_index: 1,
            },
        }
    }

    #[test]
    fn ngram_multiset_examples() {
        let g = ngram_multiset(&["a", "b", "c"], 2);
        assert_eq!(g.len(), 2);
        assert_eq!(g[&["a", "b"][..]], 1);
        assert_eq!(g[&["b", "c"][..]], 1);
        let g = ngram_multiset(&["a", "a", "a"], 2);
        assert_eq!(g[&["a", "a"][..]], 2);
        assert!(ngram_multiset(&["a"], 2).is_empty());
    }

    #[test]
    fn perfect_match_scores_100() {
        let pairs = vec![pair("a b c d", "a b c d"), pair("x y z w v", "x y z w v")];
        for n in [1, 2, 4] {
            for s in [Smoothing::None, Smoothing::AddOne, Smoothing::ExpDecay] {
                assert!((bleu_n(&pairs, n, s).unwrap() - 100.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn hand_counted_unigram_precision() {
        // 4 of 6 hypothesis unigrams match; lengths equal so BP = 1.
        let pairs = vec![pair("a b c d", "a b c d"), pair("x y", "p q")];
        let s = bleu_n(&pairs, 1, Smoothing::None).unwrap();
        assert!((s - 100.0 * 4.0 / 6.0).abs() < 1e-6);
        assert!((s - 66.67).abs() < 0.01);
    }

    #[test]
    fn clipping_limits_repeated_tokens() {
        // One clipped match of two; hypothesis longer than reference, BP = 1.
        let s = bleu_n(&[pair("a a", "a")], 1, Smoothing::None).unwrap();
        assert!((s - 50.0).abs() < 1e-6);
    }

    #[test]
    fn brevity_penalty_applies_to_short_output() {
        let s = bleu_n(&[pair("a b", "a b c d")], 1, Smoothing::None).unwrap();
        assert!((s - 100.0 * (1.0f64 - 2.0).exp()).abs() < 1e-9);
    }

    #[test]
    fn smoothing_modes_on_zero_order() {
        // Unigrams 2/3, bigrams 0/2.
        let pairs = vec![pair("a b z", "a x b")];
        assert_eq!(bleu_n(&pairs, 2, Smoothing::None).unwrap(), 0.0);
        let add_one = bleu_n(&pairs, 2, Smoothing::AddOne).unwrap();
        assert!((add_one - 100.0 * ((2.0 / 3.0) * (1.0 / 3.0f64)).sqrt()).abs() < 1e-9);
        let decay = bleu_n(&pairs, 2, Smoothing::ExpDecay).unwrap();
        assert!((decay - 100.0 * ((2.0 / 3.0) * (1.0 / 4.0f64)).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn empty_eval_is_an_error() {
        assert!(matches!(bleu_n(&[], 2, Smoothing::AddOne), Err(Error::EmptyEval)));
    }

    #[test]
    fn empty_hypothesis_scores_zero() {
        let p = EvalPair {
            hypothesis: Utterance::empty(),
            reference: utt("a"),
            key: SampleKey { unit_id: "u".into(), turn_index: 1 },
        };
        assert_eq!(bleu_n(&[p], 1, Smoothing::AddOne).unwrap(), 0.0);
    }

    #[test]
    fn dist_examples() {
        let copies = vec![utt("a b"); 10];
        assert_eq!(dist_n(&copies, 1), 10.0);
        assert_eq!(dist_n(&[utt("a b c d")], 1), 100.0);
        assert_eq!(dist_n(&[utt("a b c d")], 2), 100.0);
        assert_eq!(dist_n(&[utt("a"), utt("b")], 2), 0.0);
    }

    #[test]
    fn single_token_identity_ignores_smoothing() {
        let pairs = vec![pair("a", "a"), pair("b", "b")];
        for s in [Smoothing::None, Smoothing::AddOne, Smoothing::ExpDecay] {
            assert_eq!(bleu_n(&pairs, 1, s).unwrap(), 100.0);
        }
    }

    #[test]
    fn predictions_round_trip() {
        let key = SampleKey { unit_id: "d1".into(), turn_index: 2 };
        let hyp = utt("Fine ,  thanks .");
        let empty = Utterance::empty();
        let mut buf = Vec::new();
        write_predictions(&mut buf, [(&key, &hyp), (&key, &empty)]).unwrap();
        let back = parse_predictions(&buf[..], "p", &TokenizerConfig::default()).unwrap();
        assert_eq!(back, vec![(key.clone(), hyp), (key, empty)]);
        let bad = parse_predictions(&b"{\"unit_id\":1}\n"[..], "p", &TokenizerConfig::default());
        assert!(matches!(bad, Err(Error::Parse { line: 1, .. })));
    }

    fn arb_text() -> impl Strategy<Value = String> {
        prop::collection::vec(0u8..6, 1..10).prop_map(|v| {
            v.iter().map(|t| format!("w{t}")).collect::<Vec<_>>().join(" ")
        })
    }

    proptest! {
        #[test]
        fn bleu_bounded_and_order_free(
            texts in prop::collection::vec((arb_text(), arb_text()), 1..12),
            n in 1usize..5,
        ) {
            let pairs: Vec<EvalPair> = texts.iter().map(|(h, r)| pair(h, r)).collect();
            let s = bleu_n(&pairs, n, Smoothing::AddOne).unwrap();
            prop_assert!((0.0..=100.0).contains(&s));
            let mut rev = pairs.clone();
            rev.reverse();
            prop_assert_eq!(s, bleu_n(&rev, n, Smoothing::AddOne).unwrap());
        }

        #[test]
        fn dist_never_grows_under_duplication(texts in prop::collection::vec(arb_text(), 1..8), n in 1usize..3) {
            let hyps: Vec<Utterance> = texts.iter().map(|t| utt(t)).collect();
            let mut doubled = hyps.clone();
            doubled.extend(hyps.iter().cloned());
            prop_assert!(dist_n(&doubled, n) <= dist_n(&hyps, n) + 1e-12);
        }
    }
}
