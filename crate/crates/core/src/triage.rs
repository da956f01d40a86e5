//! Partitioning of a preference dataset into Invert / Punish / Retain sets.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Sequence;
use crate::policy::{judge_pair, ComplianceJudgment, PolicySpec, ResponseTags, Verdict};

/// A token sequence together with its semantic tags.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tagged {
    pub tokens: Sequence,
    pub tags: ResponseTags,
}

/// One `(x, y_w, y_l)` record, preferred side first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PreferencePair {
    pub id: u64,
    pub axis: String,
    pub prompt: Tagged,
    pub winner: Tagged,
    pub loser: Tagged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriageLabel {
    Invert,
    Punish,
    Retain,
}

impl TriageLabel {
    pub const ALL: [TriageLabel; 3] = [TriageLabel::Invert, TriageLabel::Punish, TriageLabel::Retain];

    pub fn is_conflict(self) -> bool {
        self != TriageLabel::Retain
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TriageLabel::Invert => "invert",
            TriageLabel::Punish => "punish",
            TriageLabel::Retain => "retain",
        }
    }
}

/// The three disjoint sets `D_I`, `D_II`, `D_R`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TriagedDataset {
    pub invert: Vec<PreferencePair>,
    pub punish: Vec<PreferencePair>,
    pub retain: Vec<PreferencePair>,
    pub source_size: usize,
}

/// Set sizes, as written to the triage summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TriageCounts {
    pub n: usize,
    pub n_invert: usize,
    pub n_punish: usize,
    pub n_retain: usize,
}

impl TriagedDataset {
    pub fn counts(&self) -> TriageCounts {
        TriageCounts {
            n: self.source_size,
            n_invert: self.invert.len(),
            n_punish: self.punish.len(),
            n_retain: self.retain.len(),
        }
    }

    pub fn set(&self, label: TriageLabel) -> &[PreferencePair] {
        match label {
            TriageLabel::Invert => &self.invert,
            TriageLabel::Punish => &self.punish,
            TriageLabel::Retain => &self.retain,
        }
    }

    /// `D_conflict = D_I ∪ D_II`, each tagged with its label.
    pub fn conflict(&self) -> impl Iterator<Item = (&PreferencePair, TriageLabel)> {
        self.invert
            .iter()
            .map(|p| (p, TriageLabel::Invert))
            .chain(self.punish.iter().map(|p| (p, TriageLabel::Punish)))
    }

    pub fn has_conflicts(&self) -> bool {
        !self.invert.is_empty() || !self.punish.is_empty()
    }

    /// All pairs, set by set (invert, punish, retain).
    pub fn union(&self) -> Vec<PreferencePair> {
        self.invert
            .iter()
            .chain(&self.punish)
            .chain(&self.retain)
            .cloned()
            .collect()
    }
}

/// Maps a pair's compliance judgment to its triage set.
pub fn triage_pair(judgment: ComplianceJudgment) -> TriageLabel {
    match (judgment.c_w, judgment.c_l) {
        (Verdict::Compliant, _) => TriageLabel::Retain,
        (Verdict::NonCompliant, Verdict::Compliant) => TriageLabel::Invert,
        (Verdict::NonCompliant, Verdict::NonCompliant) => TriageLabel::Punish,
    }
}

/// Checks id uniqueness and `winner ≠ loser`.
pub fn validate_pairs(pairs: &[PreferencePair]) -> Result<()> {
    let mut ids = BTreeSet::new();
    for pair in pairs {
        if !ids.insert(pair.id) {
            return Err(Error::InvalidDataset(alloc::format!("duplicate pair id {}", pair.id)));
        }
        if pair.winner.tokens == pair.loser.tokens {
            return Err(Error::InvalidDataset(alloc::format!(
                "pair {} has identical winner and loser",
                pair.id
            )));
        }
    }
    Ok(())
}

/// Judges every pair under `policy` and partitions the dataset, preserving
/// input order inside each set.
pub fn triage_dataset(policy: &PolicySpec, pairs: &[PreferencePair]) -> Result<TriagedDataset> {
    validate_pairs(pairs)?;
    let mut out = TriagedDataset {
        source_size: pairs.len(),
        ..TriagedDataset::default()
    };
    for pair in pairs {
        let label = triage_pair(judge_pair(policy, pair)?);
        let set = match label {
            TriageLabel::Invert => &mut out.invert,
            TriageLabel::Punish => &mut out.punish,
            TriageLabel::Retain => &mut out.retain,
        };
        set.push(pair.clone());
    }
    let c = out.counts();
    log::info!(
        "triage under `{}`: n={} invert={} punish={} retain={}",
        policy.name,
        c.n,
        c.n_invert,
        c.n_punish,
        c.n_retain
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{AxisSpec, Rule};
    use alloc::vec;
    use proptest::prelude::*;

    fn judgment(c_w: Verdict, c_l: Verdict) -> ComplianceJudgment {
        ComplianceJudgment { c_w, c_l }
    }

    #[test]
    fn label_table() {
        use Verdict::*;
        assert_eq!(triage_pair(judgment(NonCompliant, Compliant)), TriageLabel::Invert);
        assert_eq!(triage_pair(judgment(NonCompliant, NonCompliant)), TriageLabel::Punish);
        assert_eq!(triage_pair(judgment(Compliant, NonCompliant)), TriageLabel::Retain);
        assert_eq!(triage_pair(judgment(Compliant, Compliant)), TriageLabel::Retain);
    }

    fn toy_policy(default: Verdict, rules: Vec<Rule>) -> PolicySpec {
        PolicySpec {
            name: "toy".into(),
            axes: vec![AxisSpec {
                name: "a".into(),
                labels: vec!["bad".into(), "good".into(), "meh".into()],
            }],
            rules,
            default_verdict: default,
        }
    }

    fn toy_pair(id: u64, w: &[&str], l: &[&str]) -> PreferencePair {
        let tagged = |tok: u16, labels: &[&str]| Tagged {
            tokens: Sequence::from_ids(&[tok]),
            tags: ResponseTags::new("a", labels.iter().copied()),
        };
        PreferencePair {
            id,
            axis: "a".into(),
            prompt: tagged(0, &[]),
            winner: tagged(1, w),
            loser: tagged(2, l),
        }
    }

    #[test]
    fn empty_input() {
        let t = triage_dataset(&toy_policy(Verdict::Compliant, vec![]), &[]).unwrap();
        assert_eq!(t, TriagedDataset::default());
        assert_eq!(t.source_size, 0);
    }

    #[test]
    fn rule_free_policy_retains_everything() {
        let pairs: Vec<_> = (0..5).map(|i| toy_pair(i, &["bad"], &["good"])).collect();
        let t = triage_dataset(&toy_policy(Verdict::Compliant, vec![]), &pairs).unwrap();
        assert_eq!(t.retain, pairs);
        assert!(t.invert.is_empty() && t.punish.is_empty());
    }

    #[test]
    fn unknown_tag_reports_pair_id() {
        let mut pair = toy_pair(17, &["bad"], &["good"]);
        pair.loser.tags.labels.insert("weird".into());
        let err = triage_dataset(&toy_policy(Verdict::Compliant, vec![]), &[pair]).unwrap_err();
        assert!(matches!(err, Error::UnknownTag { pair_id: Some(17), .. }));
    }

    #[test]
    fn rejects_malformed_datasets() {
        let policy = toy_policy(Verdict::Compliant, vec![]);
        let dup = [toy_pair(1, &[], &[]), toy_pair(1, &[], &[])];
        assert!(matches!(triage_dataset(&policy, &dup), Err(Error::InvalidDataset(_))));
        let mut same = toy_pair(2, &[], &[]);
        same.loser.tokens = same.winner.tokens.clone();
        assert!(matches!(triage_dataset(&policy, &[same]), Err(Error::InvalidDataset(_))));
    }

    const LABELS: [&str; 3] = ["bad", "good", "meh"];

    fn arb_labels() -> impl Strategy<Value = Vec<&'static str>> {
        proptest::sample::subsequence(&LABELS[..], 0..=3)
    }

    fn arb_rules() -> impl Strategy<Value = Vec<Rule>> {
        proptest::collection::vec(
            (arb_labels(), any::<bool>()).prop_map(|(labels, c)| {
                Rule::new("a", &labels, if c { Verdict::Compliant } else { Verdict::NonCompliant })
            }),
            0..4,
        )
    }

    fn arb_corpus() -> impl Strategy<Value = Vec<PreferencePair>> {
        proptest::collection::vec((arb_labels(), arb_labels()), 0..40).prop_map(|specs| {
            specs
                .iter()
                .enumerate()
                .map(|(i, (w, l))| toy_pair(i as u64, w, l))
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn partition_is_disjoint_covering_and_idempotent(
            rules in arb_rules(),
            default in any::<bool>(),
            pairs in arb_corpus(),
        ) {
            let default = if default { Verdict::Compliant } else { Verdict::NonCompliant };
            let policy = toy_policy(default, rules);
            let t = triage_dataset(&policy, &pairs).unwrap();
            let c = t.counts();
            prop_assert_eq!(c.n_invert + c.n_punish + c.n_retain, pairs.len());
            let mut ids = BTreeSet::new();
            for p in t.union() {
                prop_assert!(ids.insert(p.id));
            }
            prop_assert_eq!(ids.len(), pairs.len());
            for p in &t.invert {
                prop_assert_eq!(judge_pair(&policy, p).unwrap().c_l, Verdict::Compliant);
            }
            let again = triage_dataset(&policy, &t.union()).unwrap();
            prop_assert_eq!(again, t);
        }
    }
}
