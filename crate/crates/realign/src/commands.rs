//! The five pipeline stages. Each reads the config plus the input files it
//! names, writes its artifacts into the output directory and finishes with a
//! manifest hashing every input and output.

use std::fs;
use std::path::{Path, PathBuf};

use realign_core::bench::{default_policies, default_vocabulary, generate_with, Vocabulary};
use realign_core::eval::{compare_runs, evaluate, EvalReport};
use realign_core::trainer::{align_reference, prepare, run_trace, LossRecord, RunReport};
use realign_core::triage::triage_dataset;
use realign_core::{snapshot_reference, Mode, ModelParams, PolicySpec, PreferencePair};
use serde::Serialize;

use crate::checkpoint;
use crate::config::{Inputs, PipelineConfig};
use crate::error::{CliError, Result};
use crate::io::{read_json, read_jsonl, write_json, write_jsonl};
use crate::manifest::Manifest;

/// Options shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Common {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

/// Collects outputs as they are written so the manifest can hash them.
struct Stage {
    out: PathBuf,
    manifest: Manifest,
}

impl Stage {
    fn begin(name: &str, common: &Common, cfg: &PipelineConfig) -> Result<Self> {
        fs::create_dir_all(&common.out).map_err(|e| CliError::io(&common.out, e))?;
        let mut config = serde_json::to_value(cfg).expect("config serializes");
        // Inputs are recorded by hash below; their paths are machine-specific.
        config.as_object_mut().expect("config is an object").remove("inputs");
        let mut manifest = Manifest::new(name, common.seed, config);
        if let Some(path) = &common.config {
            manifest.add_input("config", path)?;
        }
        Ok(Stage {
            out: common.out.clone(),
            manifest,
        })
    }

    fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.manifest.add_input(role, path)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        write_json(&path, value)?;
        self.manifest.add_output(&path)
    }

    fn jsonl<'a, T: Serialize + 'a>(&mut self, name: &str, items: impl IntoIterator<Item = &'a T>) -> Result<()> {
        let path = self.path(name);
        write_jsonl(&path, items)?;
        self.manifest.add_output(&path)
    }

    fn checkpoint(&mut self, name: &str, params: &ModelParams) -> Result<()> {
        let path = self.path(name);
        checkpoint::save(&path, params)?;
        self.manifest.add_output(&path)
    }

    fn finish(self) -> Result<()> {
        self.manifest.write(&self.out)
    }
}

fn load_policy(stage: &mut Stage, field: &Option<PathBuf>, role: &'static str) -> Result<PolicySpec> {
    let path = Inputs::require(field, role)?;
    stage.input(role, path)?;
    let policy: PolicySpec = read_json(path)?;
    policy.validate()?;
    Ok(policy)
}

fn load_pairs(stage: &mut Stage, field: &Option<PathBuf>, role: &'static str) -> Result<Vec<PreferencePair>> {
    let path = Inputs::require(field, role)?;
    stage.input(role, path)?;
    read_jsonl(path)
}

fn load_vocab(stage: &mut Stage, cfg: &PipelineConfig) -> Result<Vocabulary> {
    match &cfg.inputs.vocab {
        Some(path) => {
            stage.input("vocab", path)?;
            read_json(path)
        }
        None => Ok(default_vocabulary()),
    }
}

/// Loads the reference checkpoint, or aligns one on the training pairs and
/// writes it as `reference.bin`.
fn obtain_reference(stage: &mut Stage, cfg: &PipelineConfig, train: &[PreferencePair], vocab_size: usize) -> Result<ModelParams> {
    match &cfg.inputs.reference {
        Some(path) => {
            stage.input("reference", path)?;
            checkpoint::load(path)
        }
        None => {
            let params = align_reference(train, vocab_size, &cfg.reference)?;
            stage.checkpoint("reference.bin", &params)?;
            Ok(params)
        }
    }
}

pub fn bench_gen(common: &Common) -> Result<()> {
    let mut cfg = PipelineConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.bench.seed = seed;
    }
    let mut stage = Stage::begin("bench-gen", common, &cfg)?;
    let (default_old, default_new) = default_policies();
    let pi_old = match cfg.inputs.policy_old {
        Some(_) => load_policy(&mut stage, &cfg.inputs.policy_old, "policy_old")?,
        None => default_old,
    };
    let pi_new = match cfg.inputs.policy_new {
        Some(_) => load_policy(&mut stage, &cfg.inputs.policy_new, "policy_new")?,
        None => default_new,
    };
    let vocab = load_vocab(&mut stage, &cfg)?;
    let bench = generate_with(&vocab, &cfg.bench, &pi_old, &pi_new)?;
    log::info!("generated {} train / {} test pairs", bench.train.len(), bench.test.len());

    stage.jsonl("train.jsonl", &bench.train)?;
    stage.jsonl("test.jsonl", &bench.test)?;
    stage.json("benchmark.json", &bench.manifest)?;
    stage.json("policy_old.json", &pi_old)?;
    stage.json("policy_new.json", &pi_new)?;
    stage.json("vocab.json", &vocab)?;
    stage.finish()
}

pub fn triage(common: &Common) -> Result<()> {
    let cfg = PipelineConfig::load(common.config.as_deref())?;
    let mut stage = Stage::begin("triage", common, &cfg)?;
    let train = load_pairs(&mut stage, &cfg.inputs.train, "train")?;
    let pi_new = load_policy(&mut stage, &cfg.inputs.policy_new, "policy_new")?;
    let triaged = triage_dataset(&pi_new, &train)?;

    stage.jsonl("invert.jsonl", &triaged.invert)?;
    stage.jsonl("punish.jsonl", &triaged.punish)?;
    stage.jsonl("retain.jsonl", &triaged.retain)?;
    stage.json("summary.json", &triaged.counts())?;
    stage.finish()
}

pub fn weigh(common: &Common) -> Result<()> {
    let mut cfg = PipelineConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.run.gold_seed = seed;
    }
    let mut stage = Stage::begin("weigh", common, &cfg)?;
    let train = load_pairs(&mut stage, &cfg.inputs.train, "train")?;
    let pi_new = load_policy(&mut stage, &cfg.inputs.policy_new, "policy_new")?;
    let vocab = load_vocab(&mut stage, &cfg)?;
    let reference = obtain_reference(&mut stage, &cfg, &train, vocab.size())?;
    let oracle = vocab.correction_oracle();
    let prepared = prepare(&train, &pi_new, &reference, &cfg.run, cfg.mode, Some(&oracle))?;

    stage.jsonl("gold.jsonl", &prepared.gold.pairs)?;
    let entries: Vec<_> = prepared.weights.entries.values().collect();
    stage.json("weights.json", &entries)?;
    stage.json("weight_stats.json", &prepared.weights.stats())?;
    stage.finish()
}

#[derive(Serialize)]
struct TrainReport<'a> {
    #[serde(flatten)]
    run: &'a RunReport,
    checkpoint_path: &'static str,
    loss_trace_path: &'static str,
}

pub fn train(common: &Common, mode: Option<Mode>) -> Result<()> {
    let mut cfg = PipelineConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.run.plan.seed = seed;
    }
    if let Some(mode) = mode {
        cfg.mode = mode;
    }
    let mut stage = Stage::begin("train", common, &cfg)?;
    let train = load_pairs(&mut stage, &cfg.inputs.train, "train")?;
    let pi_new = load_policy(&mut stage, &cfg.inputs.policy_new, "policy_new")?;
    let vocab = load_vocab(&mut stage, &cfg)?;
    let reference = snapshot_reference(&obtain_reference(&mut stage, &cfg, &train, vocab.size())?);
    let oracle = vocab.correction_oracle();
    let output = run_trace(&train, &pi_new, &reference, &cfg.run, cfg.mode, Some(&oracle))?;

    stage.checkpoint("checkpoint.bin", &output.params)?;
    stage.jsonl::<LossRecord>("loss_trace.jsonl", &output.loss_trace)?;
    let report = TrainReport {
        run: &output.report,
        checkpoint_path: "checkpoint.bin",
        loss_trace_path: "loss_trace.jsonl",
    };
    stage.json("report.json", &report)?;
    stage.finish()
}

/// Returns the metric lines, or the comparison lines when a second report was given.
pub fn eval(common: &Common) -> Result<Vec<String>> {
    let cfg = PipelineConfig::load(common.config.as_deref())?;
    let mut stage = Stage::begin("eval", common, &cfg)?;
    let test = load_pairs(&mut stage, &cfg.inputs.test, "test")?;
    let pi_new = load_policy(&mut stage, &cfg.inputs.policy_new, "policy_new")?;
    let ck_path = Inputs::require(&cfg.inputs.checkpoint, "checkpoint")?;
    stage.input("checkpoint", ck_path)?;
    let params = checkpoint::load(ck_path)?;
    let ref_path = Inputs::require(&cfg.inputs.reference, "reference")?;
    stage.input("reference", ref_path)?;
    let reference = checkpoint::load(ref_path)?;

    let report = evaluate(&params, &reference, &test, &pi_new)?;
    stage.json("eval.json", &report)?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
    let mut lines = vec![
        format!("{:<15} {:.4}", "agreement", report.agreement),
        format!("{:<15} {}", "inversion_rate", fmt(report.inversion_rate)),
        format!("{:<15} {}", "suppression", fmt(report.suppression)),
        format!("{:<15} {}", "retain_drift", fmt(report.retain_drift)),
    ];
    if let Some(path) = &cfg.inputs.compare_report {
        stage.input("compare_report", path)?;
        let other: EvalReport = read_json(path)?;
        let comparison = compare_runs(&report, &other)?;
        lines = comparison.summary_lines();
        stage.json("comparison.json", &comparison)?;
    }
    stage.finish()?;
    Ok(lines)
}
