//! Run configuration: optional JSON file, overridden by flags, echoed and
//! hashed into every artifact.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use pgexplain::eval::EvalConfig;
use pgexplain::explainer::UpdateMode;
use pgexplain::rng::derive_seed;
use pgexplain::{ExplainTrainConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub jobs: usize,
    pub out: PathBuf,
    /// Module seeds inside `gnn` and `explainer` are ignored; they are
    /// derived from `seed`.
    pub gnn: TrainConfig,
    pub explainer: ExplainTrainConfig,
    pub runs: usize,
    pub mask_epochs: usize,
    pub mask_lr: f64,
    pub max_instances: Option<usize>,
    pub topk: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let eval = EvalConfig::default();
        Self {
            command: String::new(),
            seed: 0,
            jobs: 1,
            out: PathBuf::from("out"),
            gnn: TrainConfig::default(),
            explainer: ExplainTrainConfig::default(),
            runs: eval.runs,
            mask_epochs: eval.mask_epochs,
            mask_lr: eval.mask_lr,
            max_instances: None,
            topk: 6,
        }
    }
}

/// Hyperparameter flags shared by all subcommands.
#[derive(Args, Debug, Default)]
pub struct Overrides {
    #[arg(long, global = true)]
    gnn_epochs: Option<usize>,
    #[arg(long, global = true)]
    gnn_lr: Option<f64>,
    /// Explainer epochs.
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Explainer learning rate.
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    samples: Option<usize>,
    #[arg(long, global = true)]
    lambda_size: Option<f64>,
    #[arg(long, global = true)]
    lambda_entropy: Option<f64>,
    #[arg(long, global = true)]
    lambda_connect: Option<f64>,
    /// Size budget B; enables the budget penalty.
    #[arg(long, global = true)]
    budget: Option<f64>,
    #[arg(long, global = true)]
    initial_logit: Option<f64>,
    #[arg(long, global = true)]
    tau0: Option<f64>,
    #[arg(long, global = true)]
    tau_final: Option<f64>,
    /// `per-epoch` or `per-instance`.
    #[arg(long, global = true, value_parser = parse_update)]
    update: Option<UpdateMode>,
    #[arg(long, global = true)]
    runs: Option<usize>,
    #[arg(long, global = true)]
    mask_epochs: Option<usize>,
    #[arg(long, global = true)]
    max_instances: Option<usize>,
    /// Default top-k for DOT exports.
    #[arg(long = "default-topk", global = true)]
    topk: Option<usize>,
}

fn parse_update(s: &str) -> Result<UpdateMode, String> {
    serde_json::from_value(Value::String(s.into())).map_err(|_| format!("unknown update mode {s:?}"))
}

fn set<T: Copy>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn apply(&mut self, command: &str, seed: Option<u64>, out: Option<PathBuf>, jobs: Option<usize>, o: &Overrides) {
        self.command = command.to_string();
        set(&mut self.seed, seed);
        set(&mut self.jobs, jobs);
        if let Some(out) = out {
            self.out = out;
        }
        set(&mut self.gnn.epochs, o.gnn_epochs);
        set(&mut self.gnn.lr, o.gnn_lr);
        let e = &mut self.explainer;
        set(&mut e.epochs, o.epochs);
        set(&mut e.lr, o.lr);
        set(&mut e.samples, o.samples);
        set(&mut e.lambda_size, o.lambda_size);
        set(&mut e.lambda_entropy, o.lambda_entropy);
        set(&mut e.lambda_connect, o.lambda_connect);
        if o.initial_logit.is_some() {
            e.initial_logit = o.initial_logit;
        }
        set(&mut e.tau0, o.tau0);
        set(&mut e.tau_final, o.tau_final);
        set(&mut e.update, o.update);
        if o.budget.is_some() {
            e.budget = o.budget;
        }
        set(&mut self.runs, o.runs);
        set(&mut self.mask_epochs, o.mask_epochs);
        set(&mut self.topk, o.topk);
        if o.max_instances.is_some() {
            self.max_instances = o.max_instances;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.explainer.validate()?;
        anyhow::ensure!(self.jobs >= 1, "--jobs must be at least 1");
        anyhow::ensure!(self.runs >= 1, "--runs must be at least 1");
        Ok(())
    }

    pub fn module_seed(&self, label: &str) -> u64 {
        derive_seed(self.seed, label)
    }

    pub fn gnn_config(&self) -> TrainConfig {
        TrainConfig { seed: self.module_seed("gnn"), ..self.gnn }
    }

    pub fn explainer_config(&self) -> ExplainTrainConfig {
        ExplainTrainConfig { seed: self.module_seed("explainer"), ..self.explainer.clone() }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            runs: self.runs,
            jobs: self.jobs,
            seed: self.module_seed("eval"),
            explainer: self.explainer_config(),
            mask_epochs: self.mask_epochs,
            mask_lr: self.mask_lr,
            max_instances: self.max_instances,
        }
    }

    /// SHA-256 of the canonical JSON form. The output directory is left
    /// out so a replay elsewhere carries the same hash.
    pub fn hash(&self) -> String {
        let canonical = RunConfig { out: PathBuf::new(), ..self.clone() };
        let text = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn provenance(&self) -> Provenance {
        Provenance { command: self.command.clone(), seed: self.seed, config_hash: self.hash() }
    }
}

/// Stamp written into every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    /// Objects gain a `provenance` key; other values are wrapped as
    /// `{"provenance": .., "data": ..}`.
    fn stamp(&self, v: Value) -> Value {
        let p = serde_json::to_value(self).expect("provenance serializes");
        match v {
            Value::Object(mut m) => {
                m.insert("provenance".into(), p);
                Value::Object(m)
            }
            other => serde_json::json!({ "provenance": p, "data": other }),
        }
    }

    pub fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<()> {
        let v = self.stamp(serde_json::to_value(value)?);
        fs::write(path, serde_json::to_string_pretty(&v)? + "\n").with_context(|| format!("writing {}", path.display()))
    }

    pub fn write_json_str(&self, path: &Path, json: &str) -> Result<()> {
        let v: Value = serde_json::from_str(json)?;
        self.write_json(path, &v)
    }

    /// Re-writes a compact JSON file with the stamp added.
    pub fn stamp_file(&self, path: &Path) -> Result<()> {
        let v: Value = serde_json::from_str(&fs::read_to_string(path)?)?;
        fs::write(path, serde_json::to_string(&self.stamp(v))?).with_context(|| format!("writing {}", path.display()))
    }

    pub fn dot_header(&self) -> String {
        format!("// {} seed={} config_hash={}\n", self.command, self.seed, self.config_hash)
    }

    pub fn text_header(&self) -> String {
        format!("# {} seed={} config_hash={}\n", self.command, self.seed, self.config_hash)
    }
}
