//! Iterative unit-level deduplication.
//!
//! Each pass joins the surviving units at the threshold, gives every unit its
//! best partner (highest ratio, then lowest id), and sweeps the duplicates in
//! a fixed order: a unit is removed when its partner is still present, and
//! that partner is protected for the rest of the pass. Units whose partner
//! disappeared are left for the next pass, which recomputes all ratios.
//! Passes repeat until one removes nothing.

use std::cmp::Ordering;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::DialogueUnit;
use crate::error::{Error, Result};
use crate::overlap::{join_bags, unit_bags, Threshold, TokenBag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DedupConfig {
    pub threshold: Threshold,
    pub max_passes: usize,
}

impl Default for DedupConfig {
    fn default() -> Self {
        DedupConfig {
            threshold: Threshold {
                value: 0.8,
                strict: false,
            },
            max_passes: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub removed: String,
    pub kept: String,
    pub ratio: f64,
    pub pass: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DedupAudit {
    /// Passes that removed at least one unit.
    pub passes: usize,
    pub removals: Vec<Removal>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupSummary {
    pub passes: usize,
    pub total_removed: usize,
    pub final_count: usize,
}

impl DedupAudit {
    pub fn summary(&self, final_count: usize) -> DedupSummary {
        DedupSummary {
            passes: self.passes,
            total_removed: self.removals.len(),
            final_count,
        }
    }

    /// `{"removed", "kept", "ratio", "pass"}` per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.removals {
            writeln!(
                w,
                "{{\"removed\":{},\"kept\":{},\"ratio\":{:.6},\"pass\":{}}}",
                serde_json::to_string(&r.removed)?,
                serde_json::to_string(&r.kept)?,
                r.ratio,
                r.pass
            )?;
        }
        w.flush()
    }
}

/// (removed, kept, ratio) by position in the slice handed to the pass.
type LocalRemoval = (usize, usize, f64);

fn sweep(ids: &[&str], bags: &[TokenBag<u32>], cfg: &DedupConfig) -> Vec<LocalRemoval> {
    let (pairs, _) = join_bags(bags, cfg.threshold, false);

    let mut best: Vec<Option<(f64, usize)>> = vec![None; ids.len()];
    let mut offer = |u: usize, v: usize, r: f64| {
        let slot = &mut best[u];
        let better = match *slot {
            None => true,
            Some((br, bv)) => r > br || (r == br && ids[v] < ids[bv]),
        };
        if better {
            *slot = Some((r, v));
        }
    };
    for p in &pairs {
        offer(p.i as usize, p.j as usize, p.ratio);
        offer(p.j as usize, p.i as usize, p.ratio);
    }

    // Highest ratio first; among equal ratios the larger id goes first, so
    // a group of identical units collapses onto its smallest id.
    let mut order: Vec<(usize, f64, usize)> = best
        .iter()
        .enumerate()
        .filter_map(|(u, b)| b.map(|(r, v)| (u, r, v)))
        .collect();
    order.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| ids[b.0].cmp(ids[a.0]))
    });

    let mut removed = vec![false; ids.len()];
    let mut protected = vec![false; ids.len()];
    let mut out = Vec::new();
    for (u, ratio, partner) in order {
        if protected[u] || removed[partner] {
            continue;
        }
        removed[u] = true;
        protected[partner] = true;
        out.push((u, partner, ratio));
    }
    out
}

/// One sweep over `units`. Kept units stay in input order.
pub fn dedup_pass(
    units: &[DialogueUnit],
    cfg: &DedupConfig,
    pass: usize,
) -> (Vec<DialogueUnit>, Vec<Removal>) {
    let ids: Vec<&str> = units.iter().map(|u| u.id.as_str()).collect();
    let bags = unit_bags(units);
    let local = sweep(&ids, &bags, cfg);
    let mut drop = vec![false; units.len()];
    let removals = local
        .iter()
        .map(|&(u, k, ratio)| {
            drop[u] = true;
            Removal {
                removed: ids[u].to_owned(),
                kept: ids[k].to_owned(),
                ratio,
                pass,
            }
        })
        .collect();
    let kept = units
        .iter()
        .zip(&drop)
        .filter(|(_, &d)| !d)
        .map(|(u, _)| u.clone())
        .collect();
    (kept, removals)
}

/// Repeats passes until none removes anything. On success no two kept units
/// have a ratio the threshold admits.
pub fn dedup_to_convergence(
    units: &[DialogueUnit],
    cfg: &DedupConfig,
) -> Result<(Vec<DialogueUnit>, DedupAudit)> {
    if cfg.max_passes == 0 {
        return Err(Error::InvalidConfig("max_passes must be positive".into()));
    }
    let all_bags = unit_bags(units);
    let mut alive: Vec<usize> = (0..units.len()).collect();
    let mut audit = DedupAudit::default();

    // Pass max_passes + 1 only checks for convergence.
    for pass in 1..=cfg.max_passes + 1 {
        let ids: Vec<&str> = alive.iter().map(|&i| units[i].id.as_str()).collect();
        let bags: Vec<TokenBag<u32>> = alive.iter().map(|&i| all_bags[i].clone()).collect();
        let local = sweep(&ids, &bags, cfg);
        if local.is_empty() {
            let kept = alive.iter().map(|&i| units[i].clone()).collect();
            return Ok((kept, audit));
        }
        if pass > cfg.max_passes {
            break;
        }
        log::debug!("dedup pass {pass}: {} removals among {} units", local.len(), alive.len());
        let mut drop = vec![false; alive.len()];
        for &(u, k, ratio) in &local {
            drop[u] = true;
            audit.removals.push(Removal {
                removed: ids[u].to_owned(),
                kept: ids[k].to_owned(),
                ratio,
                pass,
            });
        }
        audit.passes = pass;
        alive = alive
            .iter()
            .zip(&drop)
            .filter(|(_, &d)| !d)
            .map(|(&i, _)| i)
            .collect();
    }
    Err(Error::ConvergenceCapped {
        max_passes: cfg.max_passes,
        audit: Box::new(audit),
    })
}
