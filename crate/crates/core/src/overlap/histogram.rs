use serde::{Deserialize, Serialize};

use super::OverlapRecord;
use crate::error::{Error, Result};

pub const DEFAULT_BIN_WIDTH: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapHistogram {
    pub bin_width: f64,
    #[serde(rename = "counts")]
    pub bin_counts: Vec<u64>,
    /// Records with a ratio of exactly 1.0.
    #[serde(rename = "exact")]
    pub exact_match_count: u64,
    pub total: u64,
}

impl OverlapHistogram {
    pub fn empty(bin_width: f64) -> Result<Self> {
        let bins = bin_count(bin_width)?;
        Ok(OverlapHistogram {
            bin_width,
            bin_counts: vec![0; bins],
            exact_match_count: 0,
            total: 0,
        })
    }

    /// Bin of a ratio: `floor(r / width)`, with 1.0 folded into the last bin.
    pub fn bin_of(&self, ratio: f64) -> usize {
        bin_index(ratio, self.bin_width, self.bin_counts.len())
    }

    /// `[low, high)` edges of bin `i`.
    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        (i as f64 * self.bin_width, (i + 1) as f64 * self.bin_width)
    }

    pub fn add(&mut self, ratio: f64) {
        let b = self.bin_of(ratio);
        self.bin_counts[b] += 1;
        if ratio == 1.0 {
            self.exact_match_count += 1;
        }
        self.total += 1;
    }

    /// Share of records that are exact matches; 0 for an empty histogram.
    pub fn exact_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.exact_match_count as f64 / self.total as f64
        }
    }
}

pub(crate) fn bin_count(bin_width: f64) -> Result<usize> {
    if !(bin_width > 0.0 && bin_width <= 1.0) {
        return Err(Error::BadBinWidth(bin_width));
    }
    let bins = (1.0 / bin_width).round();
    if (bins * bin_width - 1.0).abs() > 1e-9 {
        return Err(Error::BadBinWidth(bin_width));
    }
    Ok(bins as usize)
}

pub(crate) fn bin_index(ratio: f64, bin_width: f64, bins: usize) -> usize {
    // The nudge keeps ratios such as 0.15 / 0.05 = 2.9999999999999996 in
    // the bin their decimal value names.
    let b = (ratio / bin_width + 1e-9).floor();
    if b <= 0.0 {
        0
    } else {
        (b as usize).min(bins - 1)
    }
}

pub fn overlap_histogram(records: &[OverlapRecord], bin_width: f64) -> Result<OverlapHistogram> {
    let mut h = OverlapHistogram::empty(bin_width)?;
    for r in records {
        h.add(r.ratio);
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs(ratios: &[f64]) -> Vec<OverlapRecord> {
        ratios
            .iter()
            .enumerate()
            .map(|(i, &ratio)| OverlapRecord {
                subject_id: format!("s{i}"),
                best_match_id: "t".into(),
                ratio,
            })
            .collect()
    }

    #[test]
    fn hand_binned_example() {
        let h = overlap_histogram(&recs(&[1.0, 1.0, 0.5, 0.0]), 0.25).unwrap();
        assert_eq!(h.bin_counts, [1, 0, 1, 2]);
        assert_eq!(h.exact_match_count, 2);
        assert_eq!(h.total, 4);
        assert_eq!(h.exact_fraction(), 0.5);
    }

    #[test]
    fn empty_input() {
        let h = overlap_histogram(&[], DEFAULT_BIN_WIDTH).unwrap();
        assert_eq!(h.bin_counts, vec![0; 20]);
        assert_eq!(h.total, 0);
        assert_eq!(h.exact_fraction(), 0.0);
    }

    #[test]
    fn floor_rule() {
        let h = overlap_histogram(&recs(&[0.999]), 0.05).unwrap();
        assert_eq!(h.bin_counts[19], 1);
        assert_eq!(h.exact_match_count, 0);
        let h = overlap_histogram(&recs(&[0.15, 0.8]), 0.05).unwrap();
        assert_eq!(h.bin_counts[3], 1);
        assert_eq!(h.bin_counts[16], 1);
    }

    #[test]
    fn non_divisor_width_is_rejected() {
        for w in [0.3, 0.0, -0.1, 1.5, 0.07] {
            assert!(matches!(overlap_histogram(&[], w), Err(Error::BadBinWidth(_))), "{w}");
        }
        assert!(overlap_histogram(&[], 0.1).is_ok());
        assert!(overlap_histogram(&[], 1.0).is_ok());
    }

    #[test]
    fn serializes_with_short_keys() {
        let h = overlap_histogram(&recs(&[1.0]), 0.5).unwrap();
        assert_eq!(
            serde_json::to_string(&h).unwrap(),
            r#"{"bin_width":0.5,"counts":[0,1],"exact":1,"total":1}"#
        );
    }

    proptest::proptest! {
        #[test]
        fn counts_are_conserved(ratios in proptest::collection::vec(0.0f64..=1.0, 0..200)) {
            let h = overlap_histogram(&recs(&ratios), 0.05).unwrap();
            proptest::prop_assert_eq!(h.bin_counts.iter().sum::<u64>(), ratios.len() as u64);
        }
    }
}
