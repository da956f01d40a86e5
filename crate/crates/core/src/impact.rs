//! Alignment-impact weights under the identity-Hessian approximation.
//!
//! For each conflict sample `i`, `w_i = ⟨g_J, g_{L_i}⟩ / γ`, with both
//! gradients taken at θ_ref. Negative weights are clamped to zero (unless
//! disabled) and the result is L1-normalised over the samples passed in.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{loss_corrected, loss_invert, npo_loss, Hyperparams};
use crate::model::{GradientVector, ModelParams};
use crate::triage::{PreferencePair, Tagged, TriageLabel};

/// Corrective responses `y_c`, keyed by Punish pair id.
pub type Corrections = BTreeMap<u64, Tagged>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImpactConfig {
    /// Zero out negative weights before normalisation.
    pub clamp_negative: bool,
    /// Also weight Invert samples (otherwise only Punish samples are weighted).
    pub weight_invert: bool,
}

impl Default for ImpactConfig {
    fn default() -> Self {
        ImpactConfig {
            clamp_negative: true,
            weight_invert: false,
        }
    }
}

/// Audit record for one weighted sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub id: u64,
    pub label: TriageLabel,
    /// `⟨g_J, g_{L_i}⟩`.
    pub raw: f64,
    /// `raw / γ`, after clamping when enabled.
    pub clamped: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactWeights {
    pub entries: BTreeMap<u64, WeightEntry>,
    pub gamma: f64,
    /// `Z = Σ |w|` before normalisation.
    pub normalization: f64,
    /// Set when `Z = 0` and uniform weights were substituted.
    pub degenerate: bool,
}

impl ImpactWeights {
    pub fn get(&self, id: u64) -> Option<f64> {
        self.entries.get(&id).map(|e| e.normalized)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Σ |normalized|.
    pub fn l1_mass(&self) -> f64 {
        self.entries.values().map(|e| e.normalized.abs()).sum()
    }

    pub fn stats(&self) -> WeightStats {
        let n = self.entries.len();
        let vals = || self.entries.values().map(|e| e.normalized);
        WeightStats {
            n,
            min: vals().fold(f64::INFINITY, f64::min),
            max: vals().fold(f64::NEG_INFINITY, f64::max),
            mean: if n == 0 { 0.0 } else { vals().sum::<f64>() / n as f64 },
            n_zero: vals().filter(|v| *v == 0.0).count(),
            normalization: self.normalization,
            degenerate: self.degenerate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightStats {
    pub n: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub n_zero: usize,
    pub normalization: f64,
    pub degenerate: bool,
}

/// `g_{L_i}` at θ_ref for one conflict sample.
///
/// Invert samples use the reversed preference loss. Punish samples use the
/// corrected preference loss when a correction is supplied and the
/// single-term suppression loss on `y_w` otherwise.
pub fn sample_update_grad(
    reference: &ModelParams,
    pair: &PreferencePair,
    label: TriageLabel,
    beta: f64,
    correction: Option<&Tagged>,
) -> Result<GradientVector> {
    let r = reference;
    let lvg = match (label, correction) {
        (TriageLabel::Retain, _) => return Err(Error::NotAConflictSample { id: pair.id }),
        (TriageLabel::Invert, _) => loss_invert(r, r, pair, beta)?,
        (TriageLabel::Punish, Some(yc)) => loss_corrected(r, r, pair, yc, beta)?,
        (TriageLabel::Punish, None) => npo_loss(r, r, &pair.prompt.tokens, &pair.winner.tokens, beta)?,
    };
    Ok(lvg.grad)
}

pub fn compute_impact_weights(
    g_j: &GradientVector,
    conflict: &[(&PreferencePair, TriageLabel)],
    reference: &ModelParams,
    hyper: &Hyperparams,
    config: &ImpactConfig,
    corrections: Option<&Corrections>,
) -> Result<ImpactWeights> {
    if g_j.dim() != reference.layout().dim() {
        return Err(Error::DimensionMismatch {
            expected: reference.layout().dim(),
            found: g_j.dim(),
        });
    }
    let mut entries = BTreeMap::new();
    for &(pair, label) in conflict {
        let yc = match (label, corrections) {
            (TriageLabel::Punish, Some(c)) => Some(c.get(&pair.id).ok_or(Error::MissingCorrection { id: pair.id })?),
            _ => None,
        };
        let g = sample_update_grad(reference, pair, label, hyper.beta, yc)?;
        let raw = g_j.dot(&g)?;
        let scaled = raw / hyper.gamma;
        let clamped = if config.clamp_negative { scaled.max(0.0) } else { scaled };
        entries.insert(
            pair.id,
            WeightEntry {
                id: pair.id,
                label,
                raw,
                clamped,
                normalized: 0.0,
            },
        );
    }
    Ok(normalize(entries, hyper.gamma))
}

fn normalize(mut entries: BTreeMap<u64, WeightEntry>, gamma: f64) -> ImpactWeights {
    let z: f64 = entries.values().map(|e| e.clamped.abs()).sum();
    let degenerate = !(z > 0.0) && !entries.is_empty();
    let uniform = 1.0 / entries.len().max(1) as f64;
    for e in entries.values_mut() {
        e.normalized = if degenerate { uniform } else { e.clamped / z };
    }
    if degenerate {
        log::warn!("all impact weights vanished; falling back to uniform weights");
    }
    ImpactWeights {
        entries,
        gamma,
        normalization: z,
        degenerate,
    }
}

/// Selects the samples that receive impact weights.
pub fn weighted_samples<'a>(
    invert: &'a [PreferencePair],
    punish: &'a [PreferencePair],
    config: &ImpactConfig,
) -> Vec<(&'a PreferencePair, TriageLabel)> {
    let mut out = Vec::new();
    if config.weight_invert {
        out.extend(invert.iter().map(|p| (p, TriageLabel::Invert)));
    }
    out.extend(punish.iter().map(|p| (p, TriageLabel::Punish)));
    out
}
