//! Gold-standard preference batch defining the global alignment objective.
//!
//! Composition for batch size `B`:
//! - `min(|D_R|, ⌊B/3⌋)` Retain pairs, original orientation;
//! - `min(|D_I|, ⌊B/3⌋)` Invert pairs, flipped to `(x, y_l, y_w)`;
//! - when the compliant pool (Retain winners ∪ Invert losers) and `D_II` are
//!   both non-empty, the remaining `B − |gold|` slots (capped at `|D_II|`) go
//!   to Punish pairs as `(x, y_c', y_w)` with `y_c'` drawn from the pool.
//!
//! Shortfalls in the Retain and Invert quotas are not redistributed.

use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{judge, PolicySpec};
use crate::triage::{PreferencePair, Tagged, TriageLabel, TriagedDataset};

/// One π_new-oriented pair of the gold batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldPair {
    pub prompt: Tagged,
    pub preferred: Tagged,
    pub dispreferred: Tagged,
    /// Set the pair was drawn from.
    pub source: TriageLabel,
    pub source_id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GoldBatch {
    pub pairs: Vec<GoldPair>,
}

impl GoldBatch {
    pub fn count(&self, source: TriageLabel) -> usize {
        self.pairs.iter().filter(|p| p.source == source).count()
    }

    /// True when every preferred side judges compliant under `policy`.
    pub fn preferred_all_compliant(&self, policy: &PolicySpec) -> Result<bool> {
        for p in &self.pairs {
            if !judge(policy, &p.prompt.tags, &p.preferred.tags)?.is_compliant() {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Uniform sample of `amount` items without replacement, kept in source order.
fn sample_ordered<'a, R: Rng>(rng: &mut R, items: &'a [PreferencePair], amount: usize) -> Vec<&'a PreferencePair> {
    let amount = amount.min(items.len());
    let mut picked = index::sample(rng, items.len(), amount).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| &items[i]).collect()
}

pub fn build_gold_batch(triaged: &TriagedDataset, batch_size: usize, seed: u64) -> Result<GoldBatch> {
    if batch_size < 1 {
        return Err(Error::InvalidBatchSize(batch_size));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let third = batch_size / 3;
    let mut gold = GoldBatch::default();

    let compliant_pool: Vec<&Tagged> = triaged
        .retain
        .iter()
        .map(|p| &p.winner)
        .chain(triaged.invert.iter().map(|p| &p.loser))
        .collect();

    for p in sample_ordered(&mut rng, &triaged.retain, third) {
        gold.pairs.push(GoldPair {
            prompt: p.prompt.clone(),
            preferred: p.winner.clone(),
            dispreferred: p.loser.clone(),
            source: TriageLabel::Retain,
            source_id: p.id,
        });
    }
    for p in sample_ordered(&mut rng, &triaged.invert, third) {
        gold.pairs.push(GoldPair {
            prompt: p.prompt.clone(),
            preferred: p.loser.clone(),
            dispreferred: p.winner.clone(),
            source: TriageLabel::Invert,
            source_id: p.id,
        });
    }

    if !compliant_pool.is_empty() && !triaged.punish.is_empty() {
        let remaining = batch_size - gold.pairs.len();
        for p in sample_ordered(&mut rng, &triaged.punish, remaining) {
            let candidates: Vec<&Tagged> = compliant_pool
                .iter()
                .copied()
                .filter(|c| c.tokens != p.winner.tokens)
                .collect();
            if candidates.is_empty() {
                continue;
            }
            let chosen = candidates[rng.gen_range(0..candidates.len())];
            gold.pairs.push(GoldPair {
                prompt: p.prompt.clone(),
                preferred: chosen.clone(),
                dispreferred: p.winner.clone(),
                source: TriageLabel::Punish,
                source_id: p.id,
            });
        }
    }
    log::debug!(
        "gold batch: retain={} invert={} punish={}",
        gold.count(TriageLabel::Retain),
        gold.count(TriageLabel::Invert),
        gold.count(TriageLabel::Punish)
    );
    Ok(gold)
}
