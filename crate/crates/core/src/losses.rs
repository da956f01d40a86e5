//! Re-alignment objectives and their exact gradients.
//!
//! With `r_y = log p_θ(y|x) − log p_ref(y|x)` and
//! `Δ_θ(x, y1, y2) = r_{y1} − r_{y2}`:
//!
//! ```text
//! invert     −log σ(β Δ_θ(x, y_l, y_w))
//! punish     −log σ(−β r_{y_w}) − log σ(−β r_{y_l})
//! retain-KL  mean_t KL(softmax(z_t^ref) ‖ softmax(z_t^θ)) along y_w
//! corrected  −log σ(β Δ_θ(x, y_c, y_w))
//! ```
//!
//! Reference log-likelihoods carry no gradient.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gold::GoldBatch;
use crate::model::{log_prob, log_prob_with_grad, GradientVector, ModelParams, Sequence};
use crate::triage::{PreferencePair, Tagged};

/// Pipeline hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    /// Preference temperature β.
    pub beta: f64,
    /// Retain-set KL coefficient α_KL.
    pub alpha_kl: f64,
    /// Identity-Hessian scale γ.
    pub gamma: f64,
    /// Learning rate η.
    pub eta: f64,
    /// Gold batch size B.
    pub gold_batch_size: usize,
    /// Gradient-norm convergence tolerance ε.
    pub epsilon: f64,
    pub t_max: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            beta: 0.1,
            alpha_kl: 1.0,
            gamma: 1.0,
            eta: 0.05,
            gold_batch_size: 30,
            epsilon: 1e-3,
            t_max: 2000,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(alloc::format!("{what}")));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        if !(self.alpha_kl >= 0.0 && self.alpha_kl.is_finite()) {
            return bad("alpha_kl must be non-negative");
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be positive");
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta must be positive");
        }
        if self.gold_batch_size == 0 {
            return bad("gold_batch_size must be positive");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if self.t_max == 0 {
            return bad("t_max must be positive");
        }
        Ok(())
    }
}

/// `Δ_θ(x, y1, y2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRatioMargin {
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValueGrad {
    pub value: f64,
    pub grad: GradientVector,
}

impl LossValueGrad {
    fn checked(self, context: &str) -> Result<Self> {
        if self.value.is_finite() && self.grad.is_finite() {
            Ok(self)
        } else {
            Err(Error::numerical(context))
        }
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn log_ratio(model: &ModelParams, reference: &ModelParams, prompt: &Sequence, response: &Sequence) -> Result<f64> {
    Ok(log_prob(model, prompt, response)? - log_prob(reference, prompt, response)?)
}

pub fn log_ratio_margin(
    model: &ModelParams,
    reference: &ModelParams,
    prompt: &Sequence,
    first: &Sequence,
    second: &Sequence,
) -> Result<LogRatioMargin> {
    Ok(LogRatioMargin {
        delta: log_ratio(model, reference, prompt, first)? - log_ratio(model, reference, prompt, second)?,
    })
}

/// `−log σ(β Δ_θ(x, preferred, dispreferred))`.
pub fn preference_loss(
    model: &ModelParams,
    reference: &ModelParams,
    prompt: &Sequence,
    preferred: &Sequence,
    dispreferred: &Sequence,
    beta: f64,
) -> Result<LossValueGrad> {
    let (lp_a, g_a) = log_prob_with_grad(model, prompt, preferred)?;
    let (lp_b, g_b) = log_prob_with_grad(model, prompt, dispreferred)?;
    let delta = (lp_a - log_prob(reference, prompt, preferred)?) - (lp_b - log_prob(reference, prompt, dispreferred)?);
    let value = softplus(-beta * delta);
    let coeff = -beta * sigmoid(-beta * delta);
    let mut grad = g_a;
    grad.scale(coeff);
    grad.add_scaled(&g_b, -coeff)?;
    LossValueGrad { value, grad }.checked("preference loss")
}

/// `−log σ(−β r_y)`: pushes `log p_θ(y|x)` below the reference.
pub fn npo_loss(
    model: &ModelParams,
    reference: &ModelParams,
    prompt: &Sequence,
    response: &Sequence,
    beta: f64,
) -> Result<LossValueGrad> {
    let (lp, mut grad) = log_prob_with_grad(model, prompt, response)?;
    let r = lp - log_prob(reference, prompt, response)?;
    let value = softplus(beta * r);
    grad.scale(beta * sigmoid(beta * r));
    LossValueGrad { value, grad }.checked("punish loss")
}

/// Reversed preference on an Invert pair: prefer `y_l` over `y_w`.
pub fn loss_invert(model: &ModelParams, reference: &ModelParams, pair: &PreferencePair, beta: f64) -> Result<LossValueGrad> {
    preference_loss(
        model,
        reference,
        &pair.prompt.tokens,
        &pair.loser.tokens,
        &pair.winner.tokens,
        beta,
    )
}

/// Suppresses both responses of a Punish pair.
pub fn loss_punish(model: &ModelParams, reference: &ModelParams, pair: &PreferencePair, beta: f64) -> Result<LossValueGrad> {
    let x = &pair.prompt.tokens;
    let mut w = npo_loss(model, reference, x, &pair.winner.tokens, beta)?;
    let l = npo_loss(model, reference, x, &pair.loser.tokens, beta)?;
    w.value += l.value;
    w.grad.add_scaled(&l.grad, 1.0)?;
    Ok(w)
}

/// Per-position forward KL from the reference to the model along the forced `y_w`, averaged over positions.
pub fn loss_retain_kl(model: &ModelParams, reference: &ModelParams, pair: &PreferencePair) -> Result<LossValueGrad> {
    let x = &pair.prompt.tokens;
    let y = &pair.winner.tokens;
    let theta = model.trace(x, y)?;
    let anchor = reference.trace(x, y)?;
    let n = theta.positions.len() as f64;
    let mut value = 0.0;
    let mut dlogits = Vec::with_capacity(theta.positions.len());
    for (q, p) in theta.positions.iter().zip(&anchor.positions) {
        let mut d = Vec::with_capacity(q.log_probs.len());
        for (lq, lp) in q.log_probs.iter().zip(&p.log_probs) {
            let pv = libm::exp(*lp);
            value += pv * (lp - lq);
            d.push((libm::exp(*lq) - pv) / n);
        }
        dlogits.push(d);
    }
    let mut grad = GradientVector::zeros(model.layout());
    model.backprop(&theta, &dlogits, 1.0, &mut grad)?;
    // Rounding can leave a tiny negative sum when the distributions coincide.
    let value = (value / n).max(0.0);
    LossValueGrad { value, grad }.checked("retain KL")
}

/// DPO on the oracle pair `(y_c, y_w)`.
pub fn loss_corrected(
    model: &ModelParams,
    reference: &ModelParams,
    pair: &PreferencePair,
    correction: &Tagged,
    beta: f64,
) -> Result<LossValueGrad> {
    preference_loss(
        model,
        reference,
        &pair.prompt.tokens,
        &correction.tokens,
        &pair.winner.tokens,
        beta,
    )
}

/// `g_J`: gradient at θ_ref of the summed preference loss over the gold batch,
/// accumulated in batch order.
pub fn gold_objective_grad(reference: &ModelParams, gold: &GoldBatch, beta: f64) -> Result<GradientVector> {
    if gold.pairs.is_empty() {
        return Err(Error::EmptyGoldBatch);
    }
    let mut total = GradientVector::zeros(reference.layout());
    for g in &gold.pairs {
        let term = preference_loss(reference, reference, &g.prompt.tokens, &g.preferred.tokens, &g.dispreferred.tokens, beta)?;
        total.add_scaled(&term.grad, 1.0)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{log_prob_grad, ParamLayout};
    use crate::policy::ResponseTags;
    use core::f64::consts::LN_2;

    fn tagged(ids: &[u16]) -> Tagged {
        Tagged {
            tokens: Sequence::from_ids(ids),
            tags: ResponseTags::new("a", []),
        }
    }

    fn fixture(seed: u64) -> (ModelParams, ModelParams, PreferencePair) {
        let layout = ParamLayout::with_vocab(8).unwrap();
        let reference = ModelParams::init_uniform(layout, seed);
        let mut model = reference.clone();
        let pert = ModelParams::init_uniform(layout, seed + 1000);
        for (m, p) in model.as_mut_slice().iter_mut().zip(pert.as_slice()) {
            *m += 3.0 * p;
        }
        let pair = PreferencePair {
            id: 0,
            axis: "a".into(),
            prompt: tagged(&[1, 2]),
            winner: tagged(&[3, 4, 5]),
            loser: tagged(&[6, 7]),
        };
        (model, reference, pair)
    }

    #[test]
    fn closed_forms_at_reference() {
        let (_, reference, pair) = fixture(1);
        let r = &reference;
        for beta in [0.1, 1.0, 3.0] {
            assert!((loss_invert(r, r, &pair, beta).unwrap().value - LN_2).abs() < 1e-12);
            assert!((loss_punish(r, r, &pair, beta).unwrap().value - 2.0 * LN_2).abs() < 1e-12);
            assert!((loss_corrected(r, r, &pair, &tagged(&[0, 1]), beta).unwrap().value - LN_2).abs() < 1e-12);
        }
        assert_eq!(loss_retain_kl(r, r, &pair).unwrap().value, 0.0);
    }

    #[test]
    fn invert_gradient_at_reference() {
        let (_, reference, pair) = fixture(2);
        let beta = 0.7;
        let g = loss_invert(&reference, &reference, &pair, beta).unwrap().grad;
        let gl = log_prob_grad(&reference, &pair.prompt.tokens, &pair.loser.tokens).unwrap();
        let gw = log_prob_grad(&reference, &pair.prompt.tokens, &pair.winner.tokens).unwrap();
        for i in 0..g.dim() {
            let expected = -(beta / 2.0) * (gl.values[i] - gw.values[i]);
            assert!((g.values[i] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn kl_positive_after_bias_shift() {
        let (_, reference, pair) = fixture(3);
        let mut model = reference.clone();
        let idx = reference.layout().output_bias().start + 2;
        model.as_mut_slice()[idx] += 0.05;
        assert!(loss_retain_kl(&model, &reference, &pair).unwrap().value > 0.0);
    }

    #[test]
    fn punish_decreases_when_both_likelihoods_drop() {
        let (_, reference, pair) = fixture(4);
        let x = &pair.prompt.tokens;
        let gw = log_prob_grad(&reference, x, &pair.winner.tokens).unwrap();
        let gl = log_prob_grad(&reference, x, &pair.loser.tokens).unwrap();
        let mut step = gw.clone();
        step.add_scaled(&gl, 1.0).unwrap();
        let mut model = reference.clone();
        model.add_scaled(&step, -0.05).unwrap();
        assert!(log_ratio(&model, &reference, x, &pair.winner.tokens).unwrap() < 0.0);
        assert!(log_ratio(&model, &reference, x, &pair.loser.tokens).unwrap() < 0.0);
        assert!(loss_punish(&model, &reference, &pair, 0.1).unwrap().value < 2.0 * LN_2);
    }

    #[test]
    fn corrected_loss_monotone_in_correction_likelihood() {
        let (model, reference, pair) = fixture(5);
        let yc = tagged(&[0, 1]);
        let base = loss_corrected(&model, &reference, &pair, &yc, 0.5).unwrap().value;
        // Raise log p(y_c) only through the output bias of y_c's tokens at positions not shared with y_w.
        let mut boosted = model.clone();
        let ob = model.layout().output_bias();
        boosted.as_mut_slice()[ob.start] += 0.3;
        boosted.as_mut_slice()[ob.start + 1] += 0.3;
        let x = &pair.prompt.tokens;
        assert!(log_prob(&boosted, x, &yc.tokens).unwrap() > log_prob(&model, x, &yc.tokens).unwrap());
        assert!(log_prob(&boosted, x, &pair.winner.tokens).unwrap() < log_prob(&model, x, &pair.winner.tokens).unwrap());
        assert!(loss_corrected(&boosted, &reference, &pair, &yc, 0.5).unwrap().value < base);
    }

    #[test]
    fn invert_descent_increases_reversed_margin() {
        let (model, reference, pair) = fixture(6);
        let x = &pair.prompt.tokens;
        let before = loss_invert(&model, &reference, &pair, 0.5).unwrap();
        let m0 = log_ratio_margin(&model, &reference, x, &pair.loser.tokens, &pair.winner.tokens).unwrap();
        let mut stepped = model.clone();
        stepped.add_scaled(&before.grad, -0.1).unwrap();
        let after = loss_invert(&stepped, &reference, &pair, 0.5).unwrap();
        let m1 = log_ratio_margin(&stepped, &reference, x, &pair.loser.tokens, &pair.winner.tokens).unwrap();
        assert!(after.value < before.value);
        assert!(m1.delta > m0.delta);
    }

    #[test]
    fn kl_matches_direct_summation() {
        let (model, reference, pair) = fixture(7);
        let x = &pair.prompt.tokens;
        let y = pair.winner.tokens.tokens();
        // Build the per-position distributions from single-token likelihoods.
        let v = model.layout().vocab_size as u16;
        let mut total = 0.0;
        for t in 0..y.len() {
            let mut prefix = x.clone();
            prefix.0.extend_from_slice(&y[..t]);
            for tok in 0..v {
                let resp = Sequence::from_ids(&[tok]);
                let p = libm::exp(log_prob(&reference, &prefix, &resp).unwrap());
                let q = libm::exp(log_prob(&model, &prefix, &resp).unwrap());
                total += p * libm::log(p / q);
            }
        }
        let oracle = total / y.len() as f64;
        let got = loss_retain_kl(&model, &reference, &pair).unwrap().value;
        assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
    }

    #[test]
    fn hyperparams_validation() {
        assert!(Hyperparams::default().validate().is_ok());
        for h in [
            Hyperparams { beta: 0.0, ..Default::default() },
            Hyperparams { alpha_kl: -1.0, ..Default::default() },
            Hyperparams { gamma: 0.0, ..Default::default() },
            Hyperparams { eta: f64::NAN, ..Default::default() },
            Hyperparams { gold_batch_size: 0, ..Default::default() },
            Hyperparams { t_max: 0, ..Default::default() },
        ] {
            assert!(h.validate().is_err());
        }
    }

    #[test]
    fn stable_logistic_helpers() {
        assert_eq!(softplus(0.0), LN_2);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0).is_finite());
    }
}
