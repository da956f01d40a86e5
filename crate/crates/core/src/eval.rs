//! Post-training metrics and run comparison.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::loss_retain_kl;
use crate::model::{log_prob, ModelParams};
use crate::policy::{judge_pair, PolicySpec};
use crate::triage::{triage_pair, PreferencePair, TriageLabel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Identity of the evaluated test set; see [`fingerprint`].
    pub test_set_id: String,
    pub n_pairs: usize,
    pub n_invert: usize,
    pub n_punish: usize,
    pub n_retain: usize,
    /// Fraction of pairs whose likelier response is compliant under the target policy.
    pub agreement: f64,
    /// Fraction of Invert pairs with `p_θ(y_l|x) > p_θ(y_w|x)`.
    pub inversion_rate: Option<f64>,
    /// Mean log-ratio to the reference over both responses of Punish pairs.
    pub suppression: Option<f64>,
    /// Mean per-position KL(ref ‖ θ) over Retain winners.
    pub retain_drift: Option<f64>,
}

/// FNV-1a over ids, tokens and tags; stable across platforms.
pub fn fingerprint(pairs: &[PreferencePair]) -> String {
    const PRIME: u64 = 0x0000_0100_0000_01B3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for b in bytes {
            h ^= u64::from(*b);
            h = h.wrapping_mul(PRIME);
        }
    };
    for p in pairs {
        feed(&p.id.to_le_bytes());
        feed(p.axis.as_bytes());
        for part in [&p.prompt, &p.winner, &p.loser] {
            feed(&[0xff]);
            for t in part.tokens.tokens() {
                feed(&t.0.to_le_bytes());
            }
            feed(part.tags.axis.as_bytes());
            for l in &part.tags.labels {
                feed(&[0xfe]);
                feed(l.as_bytes());
            }
        }
    }
    alloc::format!("{h:016x}")
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Computes all metrics for `params` against the frozen `reference`.
///
/// A pair agrees when the response with strictly higher likelihood is
/// compliant. Both-compliant pairs always agree and both-non-compliant pairs
/// never do; a likelihood tie on a mixed pair counts as disagreement.
pub fn evaluate(params: &ModelParams, reference: &ModelParams, test_set: &[PreferencePair], pi_new: &PolicySpec) -> Result<EvalReport> {
    if test_set.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let mut agree = 0usize;
    let mut inverted = Vec::new();
    let mut suppression = Vec::new();
    let mut drift = Vec::new();
    let (mut n_invert, mut n_punish, mut n_retain) = (0, 0, 0);
    for pair in test_set {
        let judgment = judge_pair(pi_new, pair)?;
        let x = &pair.prompt.tokens;
        let lw = log_prob(params, x, &pair.winner.tokens)?;
        let ll = log_prob(params, x, &pair.loser.tokens)?;
        let agrees = match (judgment.c_w.is_compliant(), judgment.c_l.is_compliant()) {
            (true, true) => true,
            (false, false) => false,
            (true, false) => lw > ll,
            (false, true) => ll > lw,
        };
        agree += usize::from(agrees);
        match triage_pair(judgment) {
            TriageLabel::Invert => {
                n_invert += 1;
                inverted.push(if ll > lw { 1.0 } else { 0.0 });
            }
            TriageLabel::Punish => {
                n_punish += 1;
                suppression.push(lw - log_prob(reference, x, &pair.winner.tokens)?);
                suppression.push(ll - log_prob(reference, x, &pair.loser.tokens)?);
            }
            TriageLabel::Retain => {
                n_retain += 1;
                drift.push(loss_retain_kl(params, reference, pair)?.value);
            }
        }
    }
    Ok(EvalReport {
        test_set_id: fingerprint(test_set),
        n_pairs: test_set.len(),
        n_invert,
        n_punish,
        n_retain,
        agreement: agree as f64 / test_set.len() as f64,
        inversion_rate: mean(&inverted),
        suppression: mean(&suppression),
        retain_drift: mean(&drift),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricVerdict {
    ABetter,
    BBetter,
    Tie,
    NotAvailable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub metric: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
    /// `a − b`.
    pub delta: Option<f64>,
    pub verdict: MetricVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunComparison {
    pub test_set_id: String,
    pub metrics: Vec<MetricDelta>,
}

impl RunComparison {
    pub fn metric(&self, name: &str) -> Option<&MetricDelta> {
        self.metrics.iter().find(|m| m.metric == name)
    }

    /// One line per metric.
    pub fn summary_lines(&self) -> Vec<String> {
        self.metrics
            .iter()
            .map(|m| {
                let fmt = |v: Option<f64>| v.map_or(String::from("n/a"), |v| alloc::format!("{v:.4}"));
                alloc::format!(
                    "{:<15} a={} b={} delta={} -> {:?}",
                    m.metric,
                    fmt(m.a),
                    fmt(m.b),
                    fmt(m.delta),
                    m.verdict
                )
            })
            .collect()
    }
}

fn validate(report: &EvalReport) -> Result<()> {
    if report.n_pairs == 0 || !report.agreement.is_finite() {
        return Err(Error::IncomparableRuns("report has no metrics".into()));
    }
    Ok(())
}

/// Per-metric deltas between two reports on the same test set.
pub fn compare_runs(a: &EvalReport, b: &EvalReport) -> Result<RunComparison> {
    validate(a)?;
    validate(b)?;
    if a.test_set_id != b.test_set_id {
        return Err(Error::IncomparableRuns(alloc::format!(
            "test sets differ ({} vs {})",
            a.test_set_id,
            b.test_set_id
        )));
    }
    // (name, a, b, higher_is_better)
    let rows = [
        ("agreement", Some(a.agreement), Some(b.agreement), true),
        ("inversion_rate", a.inversion_rate, b.inversion_rate, true),
        ("suppression", a.suppression, b.suppression, false),
        ("retain_drift", a.retain_drift, b.retain_drift, false),
    ];
    let metrics = rows
        .iter()
        .map(|&(name, va, vb, higher)| {
            let delta = va.zip(vb).map(|(x, y)| x - y);
            let verdict = match delta {
                None => MetricVerdict::NotAvailable,
                Some(d) if d == 0.0 => MetricVerdict::Tie,
                Some(d) if (d > 0.0) == higher => MetricVerdict::ABetter,
                Some(_) => MetricVerdict::BBetter,
            };
            MetricDelta {
                metric: name.into(),
                a: va,
                b: vb,
                delta,
                verdict,
            }
        })
        .collect();
    Ok(RunComparison {
        test_set_id: a.test_set_id.clone(),
        metrics,
    })
}
