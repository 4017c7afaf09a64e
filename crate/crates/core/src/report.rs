//! Leakage-stratified evaluation, the lookup baseline and report emission.
//!
//! Pairs are split by the overlap ratio of their test sample against the
//! training set: at or above the cut they are "overlapping", below it
//! "clean". A model that only memorizes the training set scores perfectly
//! on exact overlaps and poorly elsewhere, which is what the lookup model
//! here does by construction.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Sample, Utterance};
use crate::dedup::DedupAudit;
use crate::error::{Error, Result};
use crate::metrics::{bleu_formula, evaluate, EvalPair, MetricReport, Smoothing};
use crate::overlap::{OverlapHistogram, OverlapRecord, SampleIndex, DEFAULT_BIN_WIDTH};

/// Default cut between the overlapping and clean strata.
pub const DEFAULT_CUT: f64 = 0.80;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSpec {
    pub bleu_ns: Vec<usize>,
    pub dist_ns: Vec<usize>,
    pub smoothing: Smoothing,
    pub bin_width: f64,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            bleu_ns: vec![2, 4],
            dist_ns: vec![1, 2],
            smoothing: Smoothing::AddOne,
            bin_width: DEFAULT_BIN_WIDTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub bin_low: f64,
    pub bin_high: f64,
    pub report: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedReport {
    pub cut: f64,
    pub formula: String,
    pub overall: MetricReport,
    pub overlapping: MetricReport,
    pub clean: MetricReport,
    pub bins: Vec<BinRow>,
}

/// Scores `pairs` overall, per stratum and per overlap bin. Every pair must
/// have a record whose subject id is the pair's `unit#turn` key.
pub fn stratified_eval(
    pairs: &[EvalPair],
    records: &[OverlapRecord],
    cut: f64,
    spec: &EvalSpec,
) -> Result<StratifiedReport> {
    let by_subject: HashMap<&str, f64> = records
        .iter()
        .map(|r| (r.subject_id.as_str(), r.ratio))
        .collect();
    let mut ratios = Vec::with_capacity(pairs.len());
    let mut unmatched = Vec::new();
    for p in pairs {
        let key = p.key.to_string();
        match by_subject.get(key.as_str()) {
            Some(&r) => ratios.push(r),
            None => unmatched.push(key),
        }
    }
    if !unmatched.is_empty() {
        unmatched.sort();
        return Err(Error::Join { unmatched });
    }

    let hist = OverlapHistogram::empty(spec.bin_width)?;
    let mut overlapping = Vec::new();
    let mut clean = Vec::new();
    let mut per_bin: Vec<Vec<EvalPair>> = vec![Vec::new(); hist.bin_counts.len()];
    for (p, &r) in pairs.iter().zip(&ratios) {
        if r >= cut {
            overlapping.push(p.clone());
        } else {
            clean.push(p.clone());
        }
        per_bin[hist.bin_of(r)].push(p.clone());
    }

    let score = |ps: &[EvalPair]| evaluate(ps, &spec.bleu_ns, &spec.dist_ns, spec.smoothing);
    let bins = per_bin
        .iter()
        .enumerate()
        .map(|(i, ps)| {
            let (bin_low, bin_high) = hist.bin_edges(i);
            Ok(BinRow {
                bin_low,
                bin_high,
                report: score(ps)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(StratifiedReport {
        cut,
        formula: bleu_formula(spec.smoothing),
        overall: score(pairs)?,
        overlapping: score(&overlapping)?,
        clean: score(&clean)?,
        bins,
    })
}

/// Answers every context with the response of the training sample whose
/// context bag overlaps it most (ties to the lowest key). A pure
/// memorization baseline.
pub fn lookup_model(train: &[Sample], test_contexts: &[Vec<Utterance>]) -> Result<Vec<Utterance>> {
    let index = SampleIndex::build(train)?;
    let results: Vec<Result<Utterance>> = test_contexts
        .par_iter()
        .map(|ctx| {
            let m = index.best_context_match(ctx)?;
            Ok(train[index.origin_at(m.position)].response.clone())
        })
        .collect();
    results.into_iter().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

/// Something [`emit`] can write. Scores carry two decimals and ratios six.
pub trait Emit {
    fn to_json(&self) -> String;
    fn to_csv(&self) -> String;
}

pub fn render(item: &dyn Emit, format: Format) -> String {
    let mut text = match format {
        Format::Json => item.to_json(),
        Format::Csv => item.to_csv(),
    };
    if !text.ends_with('\n') {
        text.push('\n');
    }
    text
}

pub fn emit(item: &dyn Emit, format: Format, path: &Path) -> Result<()> {
    std::fs::write(path, render(item, format)).map_err(|e| Error::io(path, e))
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn metric_json(m: &MetricReport) -> String {
    let scores = |map: &std::collections::BTreeMap<usize, f64>| {
        let body: Vec<String> = map.iter().map(|(n, v)| format!("\"{n}\":{v:.2}")).collect();
        format!("{{{}}}", body.join(","))
    };
    format!(
        "{{\"pair_count\":{},\"bleu\":{},\"dist\":{}}}",
        m.pair_count,
        scores(&m.bleu),
        scores(&m.dist)
    )
}

impl StratifiedReport {
    fn orders(&self) -> (Vec<usize>, Vec<usize>) {
        let mut bleu: Vec<usize> = Vec::new();
        let mut dist: Vec<usize> = Vec::new();
        let all = [&self.overall, &self.overlapping, &self.clean]
            .into_iter()
            .chain(self.bins.iter().map(|b| &b.report));
        for m in all {
            bleu.extend(m.bleu.keys());
            dist.extend(m.dist.keys());
        }
        bleu.sort_unstable();
        bleu.dedup();
        dist.sort_unstable();
        dist.dedup();
        (bleu, dist)
    }
}

impl Emit for StratifiedReport {
    fn to_json(&self) -> String {
        let bins: Vec<String> = self
            .bins
            .iter()
            .map(|b| {
                format!(
                    "{{\"bin_low\":{:.6},\"bin_high\":{:.6},\"report\":{}}}",
                    b.bin_low,
                    b.bin_high,
                    metric_json(&b.report)
                )
            })
            .collect();
        format!(
            "{{\"cut\":{:.6},\"formula\":{},\"overall\":{},\"overlapping\":{},\"clean\":{},\"bins\":[{}]}}",
            self.cut,
            json_str(&self.formula),
            metric_json(&self.overall),
            metric_json(&self.overlapping),
            metric_json(&self.clean),
            bins.join(",")
        )
    }

    fn to_csv(&self) -> String {
        let (bleu, dist) = self.orders();
        let mut out = format!("# {}\n", self.formula);
        out.push_str("stratum,bin_low,bin_high,pair_count");
        for n in &bleu {
            let _ = write!(out, ",bleu-{n}");
        }
        for n in &dist {
            let _ = write!(out, ",dist-{n}");
        }
        out.push('\n');
        let mut row = |name: &str, low: Option<f64>, high: Option<f64>, m: &MetricReport| {
            let edge = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
            let _ = write!(out, "{name},{},{},{}", edge(low), edge(high), m.pair_count);
            for n in &bleu {
                let v = m.bleu.get(n).map(|v| format!("{v:.2}")).unwrap_or_default();
                let _ = write!(out, ",{v}");
            }
            for n in &dist {
                let v = m.dist.get(n).map(|v| format!("{v:.2}")).unwrap_or_default();
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        };
        row("overall", None, None, &self.overall);
        row("overlapping", Some(self.cut), Some(1.0), &self.overlapping);
        row("clean", Some(0.0), Some(self.cut), &self.clean);
        for b in &self.bins {
            row("bin", Some(b.bin_low), Some(b.bin_high), &b.report);
        }
        out
    }
}

impl Emit for MetricReport {
    fn to_json(&self) -> String {
        metric_json(self)
    }

    fn to_csv(&self) -> String {
        let mut out = String::from("metric,n,score\n");
        for (n, v) in &self.bleu {
            let _ = writeln!(out, "bleu,{n},{v:.2}");
        }
        for (n, v) in &self.dist {
            let _ = writeln!(out, "dist,{n},{v:.2}");
        }
        out
    }
}

impl Emit for OverlapHistogram {
    fn to_json(&self) -> String {
        let counts: Vec<String> = self.bin_counts.iter().map(u64::to_string).collect();
        format!(
            "{{\"bin_width\":{:.6},\"counts\":[{}],\"exact\":{},\"total\":{},\"exact_fraction\":{:.6}}}",
            self.bin_width,
            counts.join(","),
            self.exact_match_count,
            self.total,
            self.exact_fraction()
        )
    }

    fn to_csv(&self) -> String {
        let mut out = String::from("bin_low,bin_high,count\n");
        for (i, c) in self.bin_counts.iter().enumerate() {
            let (lo, hi) = self.bin_edges(i);
            let _ = writeln!(out, "{lo:.6},{hi:.6},{c}");
        }
        out
    }
}

impl Emit for DedupAudit {
    fn to_json(&self) -> String {
        let rows: Vec<String> = self
            .removals
            .iter()
            .map(|r| {
                format!(
                    "{{\"removed\":{},\"kept\":{},\"ratio\":{:.6},\"pass\":{}}}",
                    json_str(&r.removed),
                    json_str(&r.kept),
                    r.ratio,
                    r.pass
                )
            })
            .collect();
        format!(
            "{{\"passes\":{},\"total_removed\":{},\"removals\":[{}]}}",
            self.passes,
            self.removals.len(),
            rows.join(",")
        )
    }

    fn to_csv(&self) -> String {
        let mut out = String::from("removed,kept,ratio,pass\n");
        for r in &self.removals {
            let _ = writeln!(
                out,
                "{},{},{:.6},{}",
                csv_field(&r.removed),
                csv_field(&r.kept),
                r.ratio,
                r.pass
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, SampleKey, TokenizerConfig};
    use crate::dedup::Removal;

    fn utt(text: &str) -> Utterance {
        tokenize(text, &TokenizerConfig::default()).unwrap()
    }

    fn pair(unit: &str, hyp: &str, reference: &str) -> EvalPair {
        EvalPair {
            hypothesis: utt(hyp),
            reference: utt(reference),
            key: SampleKey {
                unit_id: unit.into(),
                turn_index: 1,
            },
        }
    }

    fn record(unit: &str, ratio: f64) -> OverlapRecord {
        OverlapRecord {
            subject_id: format!("{unit}#1"),
            best_match_id: "train#1".into(),
            ratio,
        }
    }

    fn sample(unit: &str, ctx: &str, resp: &str) -> Sample {
        Sample {
            context: vec![utt(ctx)],
            response: utt(resp),
            unit_id: unit.into(),
            turn_index: 1,
        }
    }

    #[test]
    fn all_clean_or_all_overlapping() {
        let pairs = vec![pair("a", "x y z", "x y z"), pair("b", "p q", "r s")];
        let spec = EvalSpec::default();
        let zero = stratified_eval(&pairs, &[record("a", 0.0), record("b", 0.0)], 0.8, &spec).unwrap();
        assert_eq!(zero.clean, zero.overall);
        assert_eq!(zero.overlapping.pair_count, 0);
        let one = stratified_eval(&pairs, &[record("a", 1.0), record("b", 1.0)], 0.8, &spec).unwrap();
        assert_eq!(one.overlapping, one.overall);
        assert_eq!(one.clean.pair_count, 0);
        let bin_total: usize = one.bins.iter().map(|b| b.report.pair_count).sum();
        assert_eq!(bin_total, 2);
        assert_eq!(one.bins.last().unwrap().report.pair_count, 2);
    }

    #[test]
    fn missing_records_are_listed() {
        let pairs = vec![pair("a", "x", "x"), pair("b", "y", "y"), pair("c", "z", "z")];
        match stratified_eval(&pairs, &[record("b", 0.5)], 0.8, &EvalSpec::default()) {
            Err(Error::Join { unmatched }) => assert_eq!(unmatched, ["a#1", "c#1"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lookup_returns_memorized_response() {
        let train = vec![
            sample("t1", "Nice to see you , Patrick .", "Bob ! I hear your team won the match ."),
            sample("t2", "How are you ?", "Fine , thanks ."),
        ];
        let out = lookup_model(&train, &[vec![utt("Nice to see you , Patrick .")]]).unwrap();
        assert_eq!(out[0].joined(), "Bob ! I hear your team won the match .");
        // No shared tokens: every ratio is 0 and the lowest key wins.
        let out = lookup_model(&train, &[vec![utt("zzz")]]).unwrap();
        assert_eq!(out[0].joined(), "Bob ! I hear your team won the match .");
        assert!(matches!(lookup_model(&[], &[]), Err(Error::EmptySet)));
    }

    #[test]
    fn histogram_csv_rows() {
        let mut h = OverlapHistogram::empty(0.5).unwrap();
        h.add(1.0);
        h.add(0.2);
        assert_eq!(
            render(&h, Format::Csv),
            "bin_low,bin_high,count\n0.000000,0.500000,1\n0.500000,1.000000,1\n"
        );
        assert!(render(&h, Format::Json).starts_with("{\"bin_width\":0.500000,\"counts\":[1,1],\"exact\":1,\"total\":2"));
    }

    #[test]
    fn stratified_json_and_csv_agree() {
        let pairs = vec![pair("a", "x y z", "x y z"), pair("b", "p q", "r q")];
        let report = stratified_eval(&pairs, &[record("a", 1.0), record("b", 0.1)], 0.8, &EvalSpec::default()).unwrap();
        let json = render(&report, Format::Json);
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in ["overall", "overlapping", "clean"] {
            assert!(value.get(key).is_some(), "{key}");
        }
        let back: StratifiedReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.overall.pair_count, 2);

        let csv = render(&report, Format::Csv);
        let overall_row = csv.lines().find(|l| l.starts_with("overall,")).unwrap();
        let bleu2 = format!("{:.2}", report.overall.bleu[&2]);
        assert!(overall_row.contains(&bleu2), "{overall_row} vs {bleu2}");
        assert_eq!(format!("{:.2}", back.overall.bleu[&2]), bleu2);
    }

    #[test]
    fn audit_emits_both_formats() {
        let audit = DedupAudit {
            passes: 1,
            removals: vec![Removal {
                removed: "a,b".into(),
                kept: "c".into(),
                ratio: 0.85,
                pass: 1,
            }],
        };
        assert_eq!(
            render(&audit, Format::Csv),
            "removed,kept,ratio,pass\n\"a,b\",c,0.850000,1\n"
        );
        let back: DedupAudit = serde_json::from_str(&render(&audit, Format::Json)).unwrap();
        assert_eq!(back, audit);
    }
}
