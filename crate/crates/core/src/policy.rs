//! Declarative compliance policies and the template-based correction oracle.
//!
//! A policy is an ordered rule list over tagged text. The first rule whose
//! axis matches and whose `require_any` set intersects the tag labels decides
//! the verdict; otherwise `default_verdict` applies. An empty `require_any`
//! matches every tag set on its axis.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Sequence;
use crate::triage::{PreferencePair, Tagged};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Compliant,
    NonCompliant,
}

impl Verdict {
    pub fn is_compliant(self) -> bool {
        self == Verdict::Compliant
    }
}

/// Semantic tags attached to a prompt or response: one value axis and a set
/// of labels from that axis' alphabet.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResponseTags {
    pub axis: String,
    pub labels: BTreeSet<String>,
}

impl ResponseTags {
    pub fn new<'a>(axis: &str, labels: impl IntoIterator<Item = &'a str>) -> Self {
        ResponseTags {
            axis: axis.into(),
            labels: labels.into_iter().map(String::from).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub name: String,
    pub labels: Vec<String>,
}

/// Which side of a (prompt, response) pair a rule inspects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleTarget {
    #[default]
    Response,
    Prompt,
}

impl RuleTarget {
    fn is_response(&self) -> bool {
        *self == RuleTarget::Response
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub axis: String,
    pub require_any: Vec<String>,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "RuleTarget::is_response")]
    pub target: RuleTarget,
}

impl Rule {
    pub fn new(axis: &str, require_any: &[&str], verdict: Verdict) -> Self {
        Rule {
            axis: axis.into(),
            require_any: require_any.iter().map(|s| String::from(*s)).collect(),
            verdict,
            target: RuleTarget::Response,
        }
    }

    fn matches(&self, tags: &ResponseTags) -> bool {
        tags.axis == self.axis
            && (self.require_any.is_empty() || self.require_any.iter().any(|l| tags.labels.contains(l)))
    }
}

/// A policy oracle such as π_old or π_new.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub name: String,
    pub axes: Vec<AxisSpec>,
    pub rules: Vec<Rule>,
    pub default_verdict: Verdict,
}

impl PolicySpec {
    /// Checks that axis names are unique and every rule references declared axes and labels.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for axis in &self.axes {
            if !seen.insert(axis.name.as_str()) {
                return Err(Error::InvalidConfig(alloc::format!(
                    "policy `{}` declares axis `{}` twice",
                    self.name,
                    axis.name
                )));
            }
        }
        for rule in &self.rules {
            let axis = self.axis(&rule.axis).ok_or_else(|| Error::UnknownTag {
                axis: rule.axis.clone(),
                label: String::new(),
                pair_id: None,
            })?;
            for label in &rule.require_any {
                if !axis.labels.contains(label) {
                    return Err(Error::UnknownTag {
                        axis: rule.axis.clone(),
                        label: label.clone(),
                        pair_id: None,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn axis(&self, name: &str) -> Option<&AxisSpec> {
        self.axes.iter().find(|a| a.name == name)
    }

    pub fn check_tags(&self, tags: &ResponseTags) -> Result<()> {
        let axis = self.axis(&tags.axis).ok_or_else(|| Error::UnknownTag {
            axis: tags.axis.clone(),
            label: String::new(),
            pair_id: None,
        })?;
        match tags.labels.iter().find(|l| !axis.labels.contains(l)) {
            Some(label) => Err(Error::UnknownTag {
                axis: tags.axis.clone(),
                label: label.clone(),
                pair_id: None,
            }),
            None => Ok(()),
        }
    }
}

/// Verdicts of a policy on a pair's winner and loser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ComplianceJudgment {
    pub c_w: Verdict,
    pub c_l: Verdict,
}

/// Judges one (prompt, response) under `policy`. First matching rule wins.
pub fn judge(policy: &PolicySpec, prompt_tags: &ResponseTags, response_tags: &ResponseTags) -> Result<Verdict> {
    policy.check_tags(prompt_tags)?;
    policy.check_tags(response_tags)?;
    let verdict = policy
        .rules
        .iter()
        .find(|rule| match rule.target {
            RuleTarget::Response => rule.matches(response_tags),
            RuleTarget::Prompt => rule.matches(prompt_tags),
        })
        .map_or(policy.default_verdict, |rule| rule.verdict);
    Ok(verdict)
}

pub fn judge_pair(policy: &PolicySpec, pair: &PreferencePair) -> Result<ComplianceJudgment> {
    let with_id = |e: Error| match e {
        Error::UnknownTag { axis, label, .. } => Error::UnknownTag {
            axis,
            label,
            pair_id: Some(pair.id),
        },
        other => other,
    };
    let c_w = judge(policy, &pair.prompt.tags, &pair.winner.tags).map_err(with_id)?;
    let c_l = judge(policy, &pair.prompt.tags, &pair.loser.tags).map_err(with_id)?;
    Ok(ComplianceJudgment { c_w, c_l })
}

/// A tagged response template usable as a corrective response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub tokens: Sequence,
    pub tags: ResponseTags,
}

/// Supplies corrective responses y_c for Punish pairs from per-axis template pools.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionOracle {
    templates: Vec<Template>,
}

impl CorrectionOracle {
    pub fn new(templates: Vec<Template>) -> Self {
        CorrectionOracle { templates }
    }

    pub fn templates(&self) -> &[Template] {
        &self.templates
    }

    /// Draws a template on the pair's axis that `policy` judges compliant.
    ///
    /// The draw depends only on `generator_seed` and the pair id, so it is
    /// stable across calls and runs.
    pub fn corrective_response(&self, policy: &PolicySpec, pair: &PreferencePair, generator_seed: u64) -> Result<Tagged> {
        let mut candidates = Vec::new();
        for t in self.templates.iter().filter(|t| t.tags.axis == pair.axis) {
            if judge(policy, &pair.prompt.tags, &t.tags)?.is_compliant() {
                candidates.push(t);
            }
        }
        if candidates.is_empty() {
            return Err(Error::NoCorrectionAvailable {
                axis: pair.axis.clone(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(generator_seed ^ pair.id.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let chosen = candidates[rng.gen_range(0..candidates.len())];
        Ok(Tagged {
            tokens: chosen.tokens.clone(),
            tags: chosen.tags.clone(),
        })
    }
}
