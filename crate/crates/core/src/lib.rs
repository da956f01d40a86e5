//! Re-aligning a preference-trained policy model to a new policy without new
//! annotations.
//!
//! The pipeline triages an existing preference dataset against the new
//! policy into Invert / Punish / Retain sets, weights conflict samples by the
//! dot product of their update gradient with a gold-batch objective gradient,
//! and trains a small autoregressive model with a hybrid invert / punish /
//! KL-retain objective.
//!
//! The crate is `no_std` (it needs `alloc`). File formats and the command
//! line live in the `realign` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod bench;
pub mod error;
pub mod eval;
pub mod gold;
pub mod impact;
pub mod losses;
pub mod model;
pub mod policy;
pub mod trainer;
pub mod triage;

pub use error::{Error, Result};
pub use model::{log_prob, log_prob_grad, snapshot_reference, FrozenParams, GradientVector, ModelParams, ParamLayout, Sequence, Token};
pub use policy::{judge, judge_pair, ComplianceJudgment, CorrectionOracle, PolicySpec, ResponseTags, Verdict};
pub use trainer::{run_trace, Mode, RunConfig};
pub use triage::{triage_dataset, triage_pair, PreferencePair, Tagged, TriageLabel, TriagedDataset};
