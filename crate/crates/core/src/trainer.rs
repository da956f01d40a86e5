//! Re-alignment training loop.
//!
//! The combined objective over minibatches `B_I`, `B_P`, `B_R` is
//!
//! ```text
//! L = Σ_{B_I} L_invert + Σ_{B_P} w_j · L_punish + α_KL · Σ_{B_R} L_KL
//! ```
//!
//! where `L_punish` is replaced by the corrected preference loss when a
//! correction oracle is active. Updates are plain gradient descent
//! `θ ← θ − η ∇L`. The loop stops when the full-objective gradient norm,
//! checked every `grad_check_every` steps, drops to `ε`, or after `t_max`
//! steps.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gold::{build_gold_batch, GoldBatch};
use crate::impact::{compute_impact_weights, weighted_samples, Corrections, ImpactConfig, ImpactWeights, WeightStats};
use crate::losses::{gold_objective_grad, loss_corrected, loss_invert, loss_punish, loss_retain_kl, preference_loss, Hyperparams};
use crate::model::{snapshot_reference, FrozenParams, GradientVector, ModelParams, ParamLayout};
use crate::policy::{judge, CorrectionOracle, PolicySpec};
use crate::triage::{triage_dataset, PreferencePair, TriageCounts, TriagedDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Invert + impact-weighted punish + retain KL.
    Trace,
    /// As `Trace`, with punish losses replaced by corrected preference losses.
    TraceWithOracle,
    /// Impact-weighted punish losses only: no inversion, no KL anchor.
    PunishOnlyBaseline,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Trace => "trace",
            Mode::TraceWithOracle => "trace_with_oracle",
            Mode::PunishOnlyBaseline => "punish_only_baseline",
        }
    }

    fn uses_invert(self) -> bool {
        self != Mode::PunishOnlyBaseline
    }

    fn uses_kl(self) -> bool {
        self != Mode::PunishOnlyBaseline
    }
}

impl core::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trace" => Ok(Mode::Trace),
            "trace_with_oracle" => Ok(Mode::TraceWithOracle),
            "punish_only_baseline" => Ok(Mode::PunishOnlyBaseline),
            other => Err(Error::InvalidConfig(alloc::format!("unknown mode `{other}`"))),
        }
    }
}

/// Per-step minibatch sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchPlan {
    pub b_invert: usize,
    pub b_punish: usize,
    pub b_retain: usize,
    pub seed: u64,
}

impl Default for BatchPlan {
    fn default() -> Self {
        BatchPlan {
            b_invert: 8,
            b_punish: 8,
            b_retain: 8,
            seed: 0,
        }
    }
}

impl BatchPlan {
    pub fn validate(&self) -> Result<()> {
        if self.b_invert + self.b_punish + self.b_retain == 0 {
            return Err(Error::InvalidConfig("batch plan samples nothing".into()));
        }
        Ok(())
    }
}

/// How the frozen reference model is obtained: preference training on the
/// original data, starting from a seeded initialisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub init_seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    pub beta: f64,
    pub eta: f64,
    pub seed: u64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig {
            embed_dim: ParamLayout::DEFAULT_EMBED_DIM,
            hidden_dim: ParamLayout::DEFAULT_HIDDEN_DIM,
            init_seed: 42,
            steps: 300,
            batch_size: 16,
            beta: 1.0,
            eta: 0.1,
            seed: 1,
        }
    }
}

/// Everything a run needs besides data, policy and reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub hyper: Hyperparams,
    pub plan: BatchPlan,
    pub impact: ImpactConfig,
    pub gold_seed: u64,
    pub correction_seed: u64,
    pub grad_check_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            hyper: Hyperparams::default(),
            plan: BatchPlan::default(),
            impact: ImpactConfig::default(),
            gold_seed: 0,
            correction_seed: 0,
            grad_check_every: 10,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.plan.validate()?;
        if self.grad_check_every == 0 {
            return Err(Error::InvalidConfig("grad_check_every must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub t: usize,
    pub l_dpo: f64,
    pub l_ii: f64,
    pub l_kl: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub t: usize,
    pub params: ModelParams,
    pub last_grad_norm: f64,
    pub loss_trace: Vec<LossRecord>,
}

impl TrainState {
    pub fn new(params: ModelParams) -> Self {
        TrainState {
            t: 0,
            params,
            last_grad_norm: f64::INFINITY,
            loss_trace: Vec::new(),
        }
    }
}

/// Index sets into the triaged data for one evaluation of the objective.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MiniBatch {
    pub invert: Vec<usize>,
    pub punish: Vec<usize>,
    pub retain: Vec<usize>,
}

/// The combined objective with everything fixed except θ.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub reference: &'a ModelParams,
    pub triaged: &'a TriagedDataset,
    pub weights: &'a ImpactWeights,
    pub corrections: Option<&'a Corrections>,
    pub hyper: &'a Hyperparams,
    pub mode: Mode,
    pub weight_invert: bool,
}

impl<'a> Objective<'a> {
    /// Every pair the mode trains on.
    pub fn full_batch(&self) -> MiniBatch {
        MiniBatch {
            invert: if self.mode.uses_invert() { (0..self.triaged.invert.len()).collect() } else { Vec::new() },
            punish: (0..self.triaged.punish.len()).collect(),
            retain: if self.mode.uses_kl() { (0..self.triaged.retain.len()).collect() } else { Vec::new() },
        }
    }

    /// Draws step `t`'s minibatches; the draw depends only on `(plan.seed, t)`.
    pub fn sample(&self, plan: &BatchPlan, t: usize) -> MiniBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
        rng.set_stream(t as u64);
        let mut draw = |len: usize, want: usize| -> Vec<usize> {
            let mut v = index::sample(&mut rng, len, want.min(len)).into_vec();
            v.sort_unstable();
            v
        };
        let invert = if self.mode.uses_invert() { draw(self.triaged.invert.len(), plan.b_invert) } else { Vec::new() };
        let punish = draw(self.triaged.punish.len(), plan.b_punish);
        let retain = if self.mode.uses_kl() { draw(self.triaged.retain.len(), plan.b_retain) } else { Vec::new() };
        MiniBatch { invert, punish, retain }
    }

    fn weight(&self, pair: &PreferencePair) -> Result<f64> {
        self.weights.get(pair.id).ok_or(Error::MissingWeight { id: pair.id })
    }

    /// Loss components and the gradient of the total at `params`.
    pub fn evaluate(&self, params: &ModelParams, batch: &MiniBatch) -> Result<(LossRecord, GradientVector)> {
        let r = self.reference;
        let beta = self.hyper.beta;
        let mut grad = GradientVector::zeros(params.layout());
        let (mut l_dpo, mut l_ii, mut l_kl) = (0.0, 0.0, 0.0);

        for &i in &batch.invert {
            let pair = &self.triaged.invert[i];
            let w = if self.weight_invert { self.weight(pair)? } else { 1.0 };
            let lvg = loss_invert(params, r, pair, beta)?;
            l_dpo += w * lvg.value;
            grad.add_scaled(&lvg.grad, w)?;
        }
        for &i in &batch.punish {
            let pair = &self.triaged.punish[i];
            let w = self.weight(pair)?;
            let lvg = match (self.mode, self.corrections) {
                (Mode::TraceWithOracle, Some(c)) => {
                    let yc = c.get(&pair.id).ok_or(Error::MissingCorrection { id: pair.id })?;
                    loss_corrected(params, r, pair, yc, beta)?
                }
                _ => loss_punish(params, r, pair, beta)?,
            };
            l_ii += w * lvg.value;
            grad.add_scaled(&lvg.grad, w)?;
        }
        let alpha = self.hyper.alpha_kl;
        for &i in &batch.retain {
            let lvg = loss_retain_kl(params, r, &self.triaged.retain[i])?;
            l_kl += lvg.value;
            grad.add_scaled(&lvg.grad, alpha)?;
        }
        let total = l_dpo + l_ii + alpha * l_kl;
        if !total.is_finite() || !grad.is_finite() {
            return Err(Error::numerical("objective"));
        }
        Ok((
            LossRecord {
                t: 0,
                l_dpo,
                l_ii,
                l_kl,
                total,
            },
            grad,
        ))
    }
}

/// One sampled gradient-descent step.
pub fn trace_step(state: &mut TrainState, objective: &Objective<'_>, plan: &BatchPlan) -> Result<()> {
    let t = state.t;
    let batch = objective.sample(plan, t);
    let with_step = |e: Error| match e {
        Error::NumericalError { context } => Error::NumericalError {
            context: alloc::format!("{context} at step {t}"),
        },
        other => other,
    };
    let (mut record, grad) = objective.evaluate(&state.params, &batch).map_err(with_step)?;
    state.params.add_scaled(&grad, -objective.hyper.eta).map_err(with_step)?;
    record.t = t;
    state.loss_trace.push(record);
    state.t += 1;
    Ok(())
}

/// Preference-trains a seeded initialisation on `pairs` as given (winner
/// preferred), producing the model that encodes the original policy.
pub fn align_reference(pairs: &[PreferencePair], vocab_size: usize, cfg: &ReferenceConfig) -> Result<ModelParams> {
    let layout = ParamLayout::new(vocab_size, cfg.embed_dim, cfg.hidden_dim)?;
    let mut params = ModelParams::init_uniform(layout, cfg.init_seed);
    if pairs.is_empty() || cfg.steps == 0 {
        return Ok(params);
    }
    let base = snapshot_reference(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for step in 0..cfg.steps {
        let mut grad = GradientVector::zeros(layout);
        let batch = index::sample(&mut rng, pairs.len(), cfg.batch_size.min(pairs.len()));
        for i in batch.iter() {
            let p = &pairs[i];
            let lvg = preference_loss(&params, &base, &p.prompt.tokens, &p.winner.tokens, &p.loser.tokens, cfg.beta)?;
            grad.add_scaled(&lvg.grad, 1.0)?;
        }
        params.add_scaled(&grad, -cfg.eta).map_err(|_| Error::numerical(alloc::format!("reference step {step}")))?;
    }
    Ok(params)
}

/// Output of the triage, gold-batch and weighting stages.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub triaged: TriagedDataset,
    pub gold: GoldBatch,
    pub g_j: Option<GradientVector>,
    pub weights: ImpactWeights,
    pub corrections: Option<Corrections>,
}

/// Computes `y_c` for every Punish pair and verifies each is compliant.
pub fn build_corrections(triaged: &TriagedDataset, pi_new: &PolicySpec, oracle: &CorrectionOracle, seed: u64) -> Result<Corrections> {
    let mut out = Corrections::new();
    for pair in &triaged.punish {
        let yc = oracle.corrective_response(pi_new, pair, seed)?;
        if !judge(pi_new, &pair.prompt.tags, &yc.tags)?.is_compliant() {
            return Err(Error::NoCorrectionAvailable { axis: pair.axis.clone() });
        }
        out.insert(pair.id, yc);
    }
    Ok(out)
}

/// Triage, gold batch, `g_J` and impact weights.
pub fn prepare(
    train: &[PreferencePair],
    pi_new: &PolicySpec,
    reference: &ModelParams,
    config: &RunConfig,
    mode: Mode,
    oracle: Option<&CorrectionOracle>,
) -> Result<Prepared> {
    config.validate()?;
    let triaged = triage_dataset(pi_new, train)?;
    let corrections = match (mode, oracle) {
        (Mode::TraceWithOracle, Some(o)) => Some(build_corrections(&triaged, pi_new, o, config.correction_seed)?),
        (Mode::TraceWithOracle, None) => {
            return Err(Error::InvalidConfig("mode trace_with_oracle needs a correction oracle".into()))
        }
        _ => None,
    };
    let gold = build_gold_batch(&triaged, config.hyper.gold_batch_size, config.gold_seed)?;
    let samples = weighted_samples(&triaged.invert, &triaged.punish, &config.impact);
    if samples.is_empty() {
        let weights = ImpactWeights {
            entries: Default::default(),
            gamma: config.hyper.gamma,
            normalization: 0.0,
            degenerate: false,
        };
        return Ok(Prepared {
            triaged,
            gold,
            g_j: None,
            weights,
            corrections,
        });
    }
    let g_j = gold_objective_grad(reference, &gold, config.hyper.beta)?;
    let weights = compute_impact_weights(&g_j, &samples, reference, &config.hyper, &config.impact, corrections.as_ref())?;
    Ok(Prepared {
        triaged,
        gold,
        g_j: Some(g_j),
        weights,
        corrections,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: Mode,
    pub steps: usize,
    pub final_grad_norm: f64,
    pub converged: bool,
    pub triage_counts: TriageCounts,
    pub gold_counts: [usize; 3],
    pub weight_stats: WeightStats,
    pub notice: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub params: ModelParams,
    pub report: RunReport,
    pub loss_trace: Vec<LossRecord>,
    pub prepared: Prepared,
}

/// Full pipeline from θ = θ_ref: triage → gold batch → `g_J` → weights → descent.
pub fn run_trace(
    train: &[PreferencePair],
    pi_new: &PolicySpec,
    reference: &FrozenParams,
    config: &RunConfig,
    mode: Mode,
    oracle: Option<&CorrectionOracle>,
) -> Result<RunOutput> {
    let prepared = prepare(train, pi_new, reference, config, mode, oracle)?;
    let gold_counts = [
        prepared.gold.count(crate::triage::TriageLabel::Retain),
        prepared.gold.count(crate::triage::TriageLabel::Invert),
        prepared.gold.count(crate::triage::TriageLabel::Punish),
    ];
    let mut state = TrainState::new(reference.thaw());
    let report = |state: &TrainState, prepared: &Prepared, converged, notice| RunReport {
        mode,
        steps: state.t,
        final_grad_norm: state.last_grad_norm,
        converged,
        triage_counts: prepared.triaged.counts(),
        gold_counts,
        weight_stats: prepared.weights.stats(),
        notice,
    };

    let trains_something = match mode {
        Mode::PunishOnlyBaseline => !prepared.triaged.punish.is_empty(),
        _ => prepared.triaged.has_conflicts(),
    };
    if !trains_something {
        log::info!("no conflict samples; returning the reference unchanged");
        state.last_grad_norm = 0.0;
        let report = report(&state, &prepared, true, Some(String::from("NoConflicts")));
        return Ok(RunOutput {
            params: state.params,
            report,
            loss_trace: state.loss_trace,
            prepared,
        });
    }

    let objective = Objective {
        reference,
        triaged: &prepared.triaged,
        weights: &prepared.weights,
        corrections: prepared.corrections.as_ref(),
        hyper: &config.hyper,
        mode,
        weight_invert: config.impact.weight_invert,
    };
    let full = objective.full_batch();
    let full_norm = |p: &ModelParams| -> Result<f64> { Ok(objective.evaluate(p, &full)?.1.norm()) };
    let mut converged = false;
    while state.t < config.hyper.t_max {
        if state.t % config.grad_check_every == 0 {
            state.last_grad_norm = full_norm(&state.params)?;
            if state.last_grad_norm <= config.hyper.epsilon {
                converged = true;
                break;
            }
        }
        trace_step(&mut state, &objective, &config.plan)?;
    }
    if !converged {
        state.last_grad_norm = full_norm(&state.params)?;
        converged = state.last_grad_norm <= config.hyper.epsilon;
    }
    log::info!(
        "{}: {} steps, final |grad| = {:.3e}",
        mode.as_str(),
        state.t,
        state.last_grad_norm
    );
    let report = report(&state, &prepared, converged, None);
    Ok(RunOutput {
        params: state.params,
        report,
        loss_trace: state.loss_trace,
        prepared,
    })
}
