//! Tiny autoregressive categorical policy model with closed-form gradients.
//!
//! Each response position `t` is predicted from the token immediately before
//! it: the last prompt token for `t = 0`, otherwise `response[t - 1]`.
//!
//! ```text
//! e_t    = embedding[prev]                  (d)
//! u_t    = tanh(e_t · hidden_weights + b_h) (h)
//! z_t    = u_t · output_weights + b_o       (V)
//! log p  = Σ_t log_softmax(z_t)[response_t]
//! ```
//!
//! Parameters live in one flat `f64` buffer laid out as
//! `embedding (V×d) | hidden_weights (d×h) | hidden_bias (h) | output_weights (h×V) | output_bias (V)`,
//! all matrices row-major. [`ParamLayout`] maps slices of that buffer back to
//! the named blocks, and gradients share the layout.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest vocabulary the model accepts.
pub const MAX_VOCAB: usize = 64;

/// A vocabulary index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(pub u16);

impl Token {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// An ordered run of tokens: a prompt or a response.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Sequence(pub Vec<Token>);

impl Sequence {
    pub fn from_ids(ids: &[u16]) -> Self {
        Sequence(ids.iter().copied().map(Token).collect())
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Shape of a model: vocabulary size `V`, embedding width `d`, hidden width `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamLayout {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl ParamLayout {
    pub const DEFAULT_EMBED_DIM: usize = 8;
    pub const DEFAULT_HIDDEN_DIM: usize = 16;

    pub fn new(vocab_size: usize, embed_dim: usize, hidden_dim: usize) -> Result<Self> {
        if vocab_size == 0 || vocab_size > MAX_VOCAB {
            return Err(Error::InvalidConfig(alloc::format!(
                "vocabulary size {vocab_size} outside 1..={MAX_VOCAB}"
            )));
        }
        if embed_dim == 0 || hidden_dim == 0 {
            return Err(Error::InvalidConfig("model widths must be positive".into()));
        }
        Ok(ParamLayout {
            vocab_size,
            embed_dim,
            hidden_dim,
        })
    }

    /// Default widths (`d = 8`, `h = 16`) for the given vocabulary.
    pub fn with_vocab(vocab_size: usize) -> Result<Self> {
        Self::new(vocab_size, Self::DEFAULT_EMBED_DIM, Self::DEFAULT_HIDDEN_DIM)
    }

    /// Total parameter count `P = V·d + d·h + h + h·V + V`.
    pub fn dim(&self) -> usize {
        let (v, d, h) = (self.vocab_size, self.embed_dim, self.hidden_dim);
        v * d + d * h + h + h * v + v
    }

    pub fn embedding(&self) -> Range<usize> {
        0..self.vocab_size * self.embed_dim
    }

    pub fn hidden_weights(&self) -> Range<usize> {
        let start = self.embedding().end;
        start..start + self.embed_dim * self.hidden_dim
    }

    pub fn hidden_bias(&self) -> Range<usize> {
        let start = self.hidden_weights().end;
        start..start + self.hidden_dim
    }

    pub fn output_weights(&self) -> Range<usize> {
        let start = self.hidden_bias().end;
        start..start + self.hidden_dim * self.vocab_size
    }

    pub fn output_bias(&self) -> Range<usize> {
        let start = self.output_weights().end;
        start..start + self.vocab_size
    }
}

/// Trainable parameters θ (or a reference copy θ_ref).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    layout: ParamLayout,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(layout: ParamLayout) -> Self {
        ModelParams {
            layout,
            values: vec![0.0; layout.dim()],
        }
    }

    /// Uniform initialisation in `[-0.1, 0.1]` from a seeded ChaCha stream.
    pub fn init_uniform(layout: ParamLayout, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..layout.dim()).map(|_| rng.gen_range(-0.1..=0.1)).collect();
        ModelParams { layout, values }
    }

    /// Builds params from a flat buffer in layout order.
    pub fn from_flat(layout: ParamLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.dim() {
            return Err(Error::DimensionMismatch {
                expected: layout.dim(),
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("model parameters"));
        }
        Ok(ModelParams { layout, values })
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn embedding(&self) -> &[f64] {
        &self.values[self.layout.embedding()]
    }

    pub fn hidden_weights(&self) -> &[f64] {
        &self.values[self.layout.hidden_weights()]
    }

    pub fn hidden_bias(&self) -> &[f64] {
        &self.values[self.layout.hidden_bias()]
    }

    pub fn output_weights(&self) -> &[f64] {
        &self.values[self.layout.output_weights()]
    }

    pub fn output_bias(&self) -> &[f64] {
        &self.values[self.layout.output_bias()]
    }

    /// In-place `θ ← θ + scale · grad`.
    pub fn add_scaled(&mut self, grad: &GradientVector, scale: f64) -> Result<()> {
        check_dim(self.layout.dim(), grad.values.len())?;
        for (p, g) in self.values.iter_mut().zip(&grad.values) {
            *p += scale * g;
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numerical("parameter update"));
        }
        Ok(())
    }

    pub fn check_token(&self, token: Token) -> Result<()> {
        if token.index() >= self.layout.vocab_size {
            Err(Error::InvalidToken {
                token: u32::from(token.0),
                vocab_size: self.layout.vocab_size,
            })
        } else {
            Ok(())
        }
    }

    /// Forward pass for one position: hidden activations and log-softmax over the vocabulary.
    fn step(&self, prev: usize) -> (Vec<f64>, Vec<f64>) {
        let ParamLayout {
            vocab_size: v,
            embed_dim: d,
            hidden_dim: h,
        } = self.layout;
        let emb = &self.embedding()[prev * d..(prev + 1) * d];
        let wh = self.hidden_weights();
        let mut hidden = self.hidden_bias().to_vec();
        for (k, e) in emb.iter().enumerate() {
            let row = &wh[k * h..(k + 1) * h];
            for (acc, w) in hidden.iter_mut().zip(row) {
                *acc += e * w;
            }
        }
        for x in hidden.iter_mut() {
            *x = libm::tanh(*x);
        }
        let wo = self.output_weights();
        let mut logits = self.output_bias().to_vec();
        for (i, u) in hidden.iter().enumerate() {
            let row = &wo[i * v..(i + 1) * v];
            for (acc, w) in logits.iter_mut().zip(row) {
                *acc += u * w;
            }
        }
        log_softmax_in_place(&mut logits);
        (hidden, logits)
    }

    /// Accumulates `scale · ∂/∂θ Σ_t ⟨dlogits_t, z_t⟩` into `grad`.
    fn backprop_step(&self, prev: usize, hidden: &[f64], dlogits: &[f64], scale: f64, grad: &mut [f64]) {
        let ParamLayout {
            vocab_size: v,
            embed_dim: d,
            hidden_dim: h,
        } = self.layout;
        let lay = self.layout;

        let ob = lay.output_bias();
        for (g, dz) in grad[ob].iter_mut().zip(dlogits) {
            *g += scale * dz;
        }

        let wo = self.output_weights();
        let wo_range = lay.output_weights();
        let mut dpre = vec![0.0; h];
        for i in 0..h {
            let row = &wo[i * v..(i + 1) * v];
            let grow = &mut grad[wo_range.start + i * v..wo_range.start + (i + 1) * v];
            let mut du = 0.0;
            for ((g, w), dz) in grow.iter_mut().zip(row).zip(dlogits) {
                *g += scale * hidden[i] * dz;
                du += w * dz;
            }
            dpre[i] = du * (1.0 - hidden[i] * hidden[i]);
        }

        let hb = lay.hidden_bias();
        for (g, dp) in grad[hb].iter_mut().zip(&dpre) {
            *g += scale * dp;
        }

        let emb = &self.embedding()[prev * d..(prev + 1) * d];
        let wh = self.hidden_weights();
        let wh_range = lay.hidden_weights();
        let emb_start = lay.embedding().start + prev * d;
        for k in 0..d {
            let row = &wh[k * h..(k + 1) * h];
            let grow = &mut grad[wh_range.start + k * h..wh_range.start + (k + 1) * h];
            let mut de = 0.0;
            for ((g, w), dp) in grow.iter_mut().zip(row).zip(&dpre) {
                *g += scale * emb[k] * dp;
                de += w * dp;
            }
            grad[emb_start + k] += scale * de;
        }
    }

    fn validate(&self, prompt: &Sequence, response: &Sequence) -> Result<()> {
        if prompt.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        if response.is_empty() {
            return Err(Error::EmptyResponse);
        }
        for &t in prompt.tokens().iter().chain(response.tokens()) {
            self.check_token(t)?;
        }
        Ok(())
    }

    /// Runs the forward pass along `response` (teacher forcing).
    pub fn trace(&self, prompt: &Sequence, response: &Sequence) -> Result<ForwardTrace> {
        self.validate(prompt, response)?;
        let mut prev = prompt.tokens()[prompt.len() - 1].index();
        let mut positions = Vec::with_capacity(response.len());
        for &tok in response.tokens() {
            let (hidden, log_probs) = self.step(prev);
            positions.push(PositionState {
                prev,
                target: tok.index(),
                hidden,
                log_probs,
            });
            prev = tok.index();
        }
        Ok(ForwardTrace { positions })
    }

    /// Accumulates `scale · Σ_t J_tᵀ dlogits[t]` for a trace produced by these params.
    pub fn backprop(
        &self,
        trace: &ForwardTrace,
        dlogits: &[Vec<f64>],
        scale: f64,
        grad: &mut GradientVector,
    ) -> Result<()> {
        check_dim(self.layout.dim(), grad.values.len())?;
        for (pos, dz) in trace.positions.iter().zip(dlogits) {
            self.backprop_step(pos.prev, &pos.hidden, dz, scale, &mut grad.values);
        }
        Ok(())
    }
}

/// Cached activations of one response position.
#[derive(Debug, Clone)]
pub struct PositionState {
    pub prev: usize,
    pub target: usize,
    pub hidden: Vec<f64>,
    pub log_probs: Vec<f64>,
}

/// Activations for a whole response under teacher forcing.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub positions: Vec<PositionState>,
}

impl ForwardTrace {
    pub fn log_prob(&self) -> f64 {
        self.positions.iter().map(|p| p.log_probs[p.target]).sum()
    }

    /// `∂ log p / ∂ z_t = onehot(y_t) − softmax(z_t)` at each position.
    pub fn log_prob_logit_grads(&self) -> Vec<Vec<f64>> {
        self.positions
            .iter()
            .map(|p| {
                let mut g: Vec<f64> = p.log_probs.iter().map(|lp| -libm::exp(*lp)).collect();
                g[p.target] += 1.0;
                g
            })
            .collect()
    }
}

/// Flat gradient sharing the parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientVector {
    pub values: Vec<f64>,
    pub layout: ParamLayout,
}

impl GradientVector {
    pub fn zeros(layout: ParamLayout) -> Self {
        GradientVector {
            values: vec![0.0; layout.dim()],
            layout,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn dot(&self, other: &GradientVector) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.values.iter().map(|v| v * v).sum())
    }

    /// `self ← self + scale · other`.
    pub fn add_scaled(&mut self, other: &GradientVector, scale: f64) -> Result<()> {
        check_dim(self.dim(), other.dim())?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.values.iter_mut() {
            *v *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

pub(crate) fn log_softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| libm::exp(z - max)).sum();
    let lse = max + libm::log(sum);
    for z in logits.iter_mut() {
        *z -= lse;
    }
}

/// `log p_θ(response | prompt)`.
pub fn log_prob(params: &ModelParams, prompt: &Sequence, response: &Sequence) -> Result<f64> {
    Ok(params.trace(prompt, response)?.log_prob())
}

/// `∇_θ log p_θ(response | prompt)`.
pub fn log_prob_grad(params: &ModelParams, prompt: &Sequence, response: &Sequence) -> Result<GradientVector> {
    Ok(log_prob_with_grad(params, prompt, response)?.1)
}

pub fn log_prob_with_grad(
    params: &ModelParams,
    prompt: &Sequence,
    response: &Sequence,
) -> Result<(f64, GradientVector)> {
    let trace = params.trace(prompt, response)?;
    let mut grad = GradientVector::zeros(params.layout());
    params.backprop(&trace, &trace.log_prob_logit_grads(), 1.0, &mut grad)?;
    Ok((trace.log_prob(), grad))
}

/// Frozen copy of a parameter set. No mutable access is exposed.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenParams(ModelParams);

impl FrozenParams {
    pub fn params(&self) -> &ModelParams {
        &self.0
    }

    /// A fresh trainable copy θ ← θ_ref.
    pub fn thaw(&self) -> ModelParams {
        self.0.clone()
    }
}

impl core::ops::Deref for FrozenParams {
    type Target = ModelParams;
    fn deref(&self) -> &ModelParams {
        &self.0
    }
}

/// Deep-copies `params` into an immutable reference model.
pub fn snapshot_reference(params: &ModelParams) -> FrozenParams {
    FrozenParams(params.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn seq(ids: &[u16]) -> Sequence {
        Sequence::from_ids(ids)
    }

    /// Straightforward re-implementation of the forward pass with explicit
    /// indexing into the named blocks; shares nothing with `step`.
    fn naive_log_prob(p: &ModelParams, prompt: &[u16], response: &[u16]) -> f64 {
        let lay = p.layout();
        let (v, d, h) = (lay.vocab_size, lay.embed_dim, lay.hidden_dim);
        let mut context: Vec<u16> = prompt.to_vec();
        let mut total = 0.0;
        for &y in response {
            let prev = *context.last().unwrap() as usize;
            let mut u = [0.0f64; 64];
            for i in 0..h {
                let mut s = p.hidden_bias()[i];
                for k in 0..d {
                    s += p.embedding()[prev * d + k] * p.hidden_weights()[k * h + i];
                }
                u[i] = s.tanh();
            }
            let mut z = [0.0f64; 64];
            for j in 0..v {
                let mut s = p.output_bias()[j];
                for i in 0..h {
                    s += u[i] * p.output_weights()[i * v + j];
                }
                z[j] = s;
            }
            let norm: f64 = z[..v].iter().map(|x| x.exp()).sum();
            total += (z[y as usize].exp() / norm).ln();
            context.push(y);
        }
        total
    }

    #[test]
    fn zero_params_give_uniform_likelihood() {
        let p = ModelParams::zeros(ParamLayout::new(2, 8, 16).unwrap());
        let lp = log_prob(&p, &seq(&[1]), &seq(&[0, 1, 1])).unwrap();
        assert!((lp - 3.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((lp + 2.0794).abs() < 1e-4);
    }

    #[test]
    fn output_bias_gradient_at_zero_params() {
        let p = ModelParams::zeros(ParamLayout::new(2, 8, 16).unwrap());
        let response = [0u16, 1, 1];
        let g = log_prob_grad(&p, &seq(&[0]), &seq(&response)).unwrap();
        let mut expected = [0.0; 2];
        for &t in &response {
            expected[t as usize] += 1.0;
            expected[0] -= 0.5;
            expected[1] -= 0.5;
        }
        let ob = &g.values[p.layout().output_bias()];
        assert_eq!(ob, &expected[..]);
    }

    #[test]
    fn matches_naive_forward_pass() {
        let p = ModelParams::init_uniform(ParamLayout::with_vocab(8).unwrap(), 42);
        let prompt = [3u16, 1, 4];
        let response = [1u16, 5, 0, 7, 2];
        let lp = log_prob(&p, &seq(&prompt), &seq(&response)).unwrap();
        let oracle = naive_log_prob(&p, &prompt, &response);
        assert!((lp - oracle).abs() < 1e-12, "{lp} vs {oracle}");
        assert!(lp <= 0.0);
    }

    #[test]
    fn autoregressive_factorisation_is_normalised() {
        for vocab in 2..=4u16 {
            for len in 1..=3usize {
                let p = ModelParams::init_uniform(ParamLayout::new(vocab as usize, 3, 5).unwrap(), 100 + vocab as u64);
                let mut total = 0.0;
                let count = (vocab as usize).pow(len as u32);
                for code in 0..count {
                    let mut c = code;
                    let resp: Vec<u16> = (0..len)
                        .map(|_| {
                            let t = (c % vocab as usize) as u16;
                            c /= vocab as usize;
                            t
                        })
                        .collect();
                    total += libm::exp(log_prob(&p, &seq(&[0]), &seq(&resp)).unwrap());
                }
                assert!((total - 1.0).abs() < 1e-12, "V={vocab} L={len}: {total}");
            }
        }
    }

    #[test]
    fn gradient_dimension_is_parameter_count() {
        for (v, d, h) in [(2, 1, 1), (8, 8, 16), (64, 4, 3)] {
            let lay = ParamLayout::new(v, d, h).unwrap();
            let p = ModelParams::init_uniform(lay, 1);
            let g = log_prob_grad(&p, &seq(&[0]), &seq(&[1])).unwrap();
            assert_eq!(g.dim(), v * d + d * h + h + h * v + v);
            assert_eq!(g.dim(), p.as_slice().len());
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = ModelParams::zeros(ParamLayout::with_vocab(4).unwrap());
        assert_eq!(log_prob(&p, &seq(&[0]), &seq(&[])), Err(Error::EmptyResponse));
        assert_eq!(log_prob(&p, &seq(&[]), &seq(&[1])), Err(Error::EmptyPrompt));
        assert!(matches!(
            log_prob(&p, &seq(&[0]), &seq(&[4])),
            Err(Error::InvalidToken { token: 4, vocab_size: 4 })
        ));
        assert!(matches!(
            log_prob_grad(&p, &seq(&[9]), &seq(&[1])),
            Err(Error::InvalidToken { .. })
        ));
        assert!(ParamLayout::with_vocab(65).is_err());
    }

    #[test]
    fn snapshot_is_isolated_from_updates() {
        let mut p = ModelParams::init_uniform(ParamLayout::with_vocab(8).unwrap(), 3);
        let frozen = snapshot_reference(&p);
        assert_eq!(frozen.params(), &p);
        let (prompt, response) = (seq(&[2]), seq(&[4, 5]));
        let before = log_prob(&frozen, &prompt, &response).unwrap();
        assert_eq!(log_prob(&p, &prompt, &response).unwrap() - before, 0.0);
        let g = log_prob_grad(&p, &prompt, &response).unwrap();
        p.add_scaled(&g, 0.5).unwrap();
        let after = log_prob(&frozen, &prompt, &response).unwrap();
        assert_eq!(before.to_bits(), after.to_bits());
        assert_ne!(frozen.params(), &p);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let lay = ParamLayout::with_vocab(8).unwrap();
        let a = ModelParams::init_uniform(lay, 9);
        let b = ModelParams::init_uniform(lay, 9);
        assert_eq!(a, b);
        assert!(a.as_slice().iter().all(|v| (-0.1..=0.1).contains(v)));
        assert_ne!(a, ModelParams::init_uniform(lay, 10));
    }
}
