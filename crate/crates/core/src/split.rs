//! Re-splitting deduplicated units and exact-duplicate sample removal.

use std::collections::HashSet;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::corpus::{flatten_units, DialogueUnit, FlattenMode, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeBasis {
    Units,
    Samples,
}

impl SizeBasis {
    fn name(self) -> &'static str {
        match self {
            SizeBasis::Units => "units",
            SizeBasis::Samples => "samples",
        }
    }

    fn weight(self, unit: &DialogueUnit) -> usize {
        match self {
            SizeBasis::Units => 1,
            SizeBasis::Samples => unit.sample_count(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub valid_size: usize,
    pub test_size: usize,
    pub size_basis: SizeBasis,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitBundle {
    pub train: Vec<DialogueUnit>,
    pub valid: Vec<DialogueUnit>,
    pub test: Vec<DialogueUnit>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SampleViews {
    pub train: Vec<Sample>,
    pub valid: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl SplitBundle {
    pub fn flatten(&self, mode: FlattenMode, window: usize) -> Result<SampleViews> {
        Ok(SampleViews {
            train: flatten_units(&self.train, mode, window)?,
            valid: flatten_units(&self.valid, mode, window)?,
            test: flatten_units(&self.test, mode, window)?,
        })
    }
}

/// Uniform integer in `0..n` from a 64-bit stream (Lemire's multiply-shift
/// with rejection, so the result is unbiased).
fn uniform_below(rng: &mut impl RngCore, n: u64) -> u64 {
    debug_assert!(n > 0);
    let reject_below = n.wrapping_neg() % n;
    loop {
        let m = u128::from(rng.next_u64()) * u128::from(n);
        if (m as u64) >= reject_below {
            return (m >> 64) as u64;
        }
    }
}

/// Fisher–Yates permutation of `0..n` driven by ChaCha8 seeded through
/// `SeedableRng::seed_from_u64`. Both are fully specified, so the same seed
/// gives the same permutation on every platform.
pub fn seeded_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = uniform_below(&mut rng, i as u64 + 1) as usize;
        perm.swap(i, j);
    }
    perm
}

/// Shuffles units, fills test, then valid, and leaves the rest to train.
/// Units are never split; on the sample basis a split can overshoot its
/// target by less than one unit's samples. Each split keeps input order.
pub fn resplit(units: &[DialogueUnit], spec: &SplitSpec) -> Result<SplitBundle> {
    let basis = spec.size_basis;
    let available: usize = units.iter().map(|u| basis.weight(u)).sum();
    let too_large = || Error::SplitTooLarge {
        valid: spec.valid_size,
        test: spec.test_size,
        available,
        basis: basis.name(),
    };
    if spec.valid_size + spec.test_size >= available {
        return Err(too_large());
    }

    let perm = seeded_permutation(units.len(), spec.seed);
    let mut assignment = vec![0u8; units.len()]; // 0 train, 1 valid, 2 test
    let mut cursor = perm.iter();
    for (label, target) in [(2u8, spec.test_size), (1u8, spec.valid_size)] {
        let mut filled = 0;
        while filled < target {
            let &i = cursor.next().ok_or_else(too_large)?;
            assignment[i] = label;
            filled += basis.weight(&units[i]);
        }
    }
    if cursor.len() == 0 {
        return Err(too_large());
    }

    let mut bundle = SplitBundle::default();
    for (unit, label) in units.iter().zip(assignment) {
        let dest = match label {
            2 => &mut bundle.test,
            1 => &mut bundle.valid,
            _ => &mut bundle.train,
        };
        dest.push(unit.clone());
    }
    Ok(bundle)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExactDupCounts {
    pub train_internal: usize,
    pub valid_internal: usize,
    pub test_internal: usize,
    pub valid_vs_train: usize,
    pub test_vs_train: usize,
    pub test_vs_valid: usize,
}

impl ExactDupCounts {
    pub fn total(&self) -> usize {
        self.train_internal
            + self.valid_internal
            + self.test_internal
            + self.valid_vs_train
            + self.test_vs_train
            + self.test_vs_valid
    }
}

/// Exact identity of a sample: its context token sequences and response.
/// Tokens never contain whitespace, so `\n` and `\t` are safe separators.
pub fn sample_key(s: &Sample) -> String {
    let mut key = String::new();
    for (i, c) in s.context.iter().enumerate() {
        if i > 0 {
            key.push('\n');
        }
        key.push_str(c.joined());
    }
    key.push('\t');
    key.push_str(s.response.joined());
    key
}

/// Flattens the bundle and drops exact (context, response) repeats: first
/// occurrence wins inside each split, valid loses to train, and test loses
/// to train and valid. Train itself is only pruned of internal repeats.
pub fn remove_exact_duplicates(
    bundle: &SplitBundle,
    mode: FlattenMode,
    window: usize,
) -> Result<(SampleViews, ExactDupCounts)> {
    let views = bundle.flatten(mode, window)?;
    let mut counts = ExactDupCounts::default();

    let mut train_keys = HashSet::new();
    let train: Vec<Sample> = views
        .train
        .into_iter()
        .filter(|s| {
            let fresh = train_keys.insert(sample_key(s));
            counts.train_internal += usize::from(!fresh);
            fresh
        })
        .collect();

    let mut valid_keys = HashSet::new();
    let valid: Vec<Sample> = views
        .valid
        .into_iter()
        .filter(|s| {
            let key = sample_key(s);
            if train_keys.contains(&key) {
                counts.valid_vs_train += 1;
                false
            } else if !valid_keys.insert(key) {
                counts.valid_internal += 1;
                false
            } else {
                true
            }
        })
        .collect();

    let mut test_keys = HashSet::new();
    let test: Vec<Sample> = views
        .test
        .into_iter()
        .filter(|s| {
            let key = sample_key(s);
            if train_keys.contains(&key) {
                counts.test_vs_train += 1;
                false
            } else if valid_keys.contains(&key) {
                counts.test_vs_valid += 1;
                false
            } else if !test_keys.insert(key) {
                counts.test_internal += 1;
                false
            } else {
                true
            }
        })
        .collect();

    Ok((SampleViews { train, valid, test }, counts))
}

/// Checks that unit ids are disjoint across splits and that no exact sample
/// key occurs twice anywhere.
pub fn check_split_contracts(bundle: &SplitBundle, views: &SampleViews) -> Result<()> {
    let mut ids = HashSet::new();
    for unit in bundle.train.iter().chain(&bundle.valid).chain(&bundle.test) {
        if !ids.insert(unit.id.as_str()) {
            return Err(Error::Invariant(format!("unit `{}` is in two splits", unit.id)));
        }
    }
    let mut keys = HashSet::new();
    for s in views.train.iter().chain(&views.valid).chain(&views.test) {
        if !keys.insert(sample_key(s)) {
            return Err(Error::Invariant(format!(
                "sample {} repeats an earlier (context, response) pair",
                s.key()
            )));
        }
    }
    Ok(())
}
