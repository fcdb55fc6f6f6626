use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::RawConfig;

#[derive(Debug, Parser)]
#[command(name = "sxnet", version, about = "Neural Shuffle-Exchange networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on an algorithmic task.
    Train(TrainArgs),
    /// Evaluate a checkpoint at several lengths.
    Eval(EvalArgs),
    /// Time the network across sequence lengths.
    Bench(BenchArgs),
    /// Compare analytic gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Compute and verify Benes switch settings for permutations.
    Route(RouteArgs),
}

/// Flags every subcommand accepts.
#[derive(Debug, Args)]
pub struct Common {
    /// `key = value` config file; flags override it.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<String>,
    #[arg(long)]
    pub maps: Option<String>,
    #[arg(long)]
    pub blocks: Option<String>,
    /// baseline, no_swap, swap_gate, two_fc or two_fc_gate
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub no_residual: bool,
    /// Left shuffles throughout instead of left then right.
    #[arg(long)]
    pub no_benes: bool,
    /// consecutive, minimal or none
    #[arg(long)]
    pub sharing: Option<String>,
    /// f32 or f64
    #[arg(long)]
    pub dtype: Option<String>,
    #[arg(long)]
    pub threads: Option<String>,
    /// Any config key, e.g. `--set lr=0.002`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub task: Option<String>,
    /// Longest raw training length.
    #[arg(long)]
    pub train_len: Option<String>,
    #[arg(long)]
    pub min_len: Option<String>,
    #[arg(long)]
    pub steps: Option<String>,
    #[arg(long)]
    pub batch: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long, value_name = "N,N,..")]
    pub eval_lengths: Option<String>,
    #[arg(long)]
    pub eval_interval: Option<String>,
    #[arg(long)]
    pub eval_samples: Option<String>,
    #[arg(long)]
    pub stop_accuracy: Option<String>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Defaults to `checkpoint.sxnc` in the output directory.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<String>,
    #[arg(long)]
    pub task: Option<String>,
    /// Defaults to the trained length and 2, 4 and 8 times it.
    #[arg(long, value_name = "N,N,..")]
    pub lengths: Option<String>,
    #[arg(long = "samples")]
    pub eval_samples: Option<String>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "N,N,..")]
    pub lengths: Option<String>,
    #[arg(long)]
    pub warmup: Option<String>,
    #[arg(long)]
    pub reps: Option<String>,
    /// Time forward and backward.
    #[arg(long)]
    pub backward: bool,
    /// Also time the dense all-pairs attention stub.
    #[arg(long)]
    pub attention: bool,
    #[arg(long, value_name = "N,N,..")]
    pub attention_lengths: Option<String>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// Central-difference step; defaults depend on dtype and component.
    #[arg(long)]
    pub h: Option<String>,
    /// Perturb the analytic gradients of a component (negative control).
    #[arg(long, value_name = "COMPONENT")]
    pub corrupt: Vec<String>,
    /// Print the component names and exit.
    #[arg(long)]
    pub list: bool,
}

#[derive(Debug, Args)]
pub struct RouteArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated permutation: input i goes to output p[i].
    #[arg(long, value_name = "P0,P1,..", conflicts_with = "random")]
    pub perm: Option<String>,
    /// Route N random permutations on 2^K wires.
    #[arg(long, num_args = 2, value_names = ["K", "N"])]
    pub random: Option<Vec<String>>,
}

fn put(raw: &mut RawConfig, key: &str, value: &Option<String>) {
    if let Some(v) = value {
        raw.insert(key.to_string(), v.clone());
    }
}

fn flag(raw: &mut RawConfig, key: &str, set: bool, value: &str) {
    if set {
        raw.insert(key.to_string(), value.to_string());
    }
}

impl Common {
    /// Applies these flags over `raw`. `--set` entries are applied first so
    /// that named flags win.
    pub fn apply(&self, raw: &mut RawConfig) -> Result<(), String> {
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
            raw.insert(k.trim().to_string(), v.trim().to_string());
        }
        put(raw, "seed", &self.seed);
        put(raw, "out", &self.out);
        put(raw, "maps", &self.maps);
        put(raw, "blocks", &self.blocks);
        put(raw, "variant", &self.variant);
        put(raw, "sharing", &self.sharing);
        put(raw, "dtype", &self.dtype);
        put(raw, "threads", &self.threads);
        flag(raw, "residual", self.no_residual, "false");
        flag(raw, "benes", self.no_benes, "false");
        Ok(())
    }
}

impl TrainArgs {
    pub fn apply(&self, raw: &mut RawConfig) {
        put(raw, "task", &self.task);
        put(raw, "train_len", &self.train_len);
        put(raw, "min_len", &self.min_len);
        put(raw, "steps", &self.steps);
        put(raw, "batch", &self.batch);
        put(raw, "lr", &self.lr);
        put(raw, "eval_lengths", &self.eval_lengths);
        put(raw, "eval_interval", &self.eval_interval);
        put(raw, "eval_samples", &self.eval_samples);
        put(raw, "stop_accuracy", &self.stop_accuracy);
        flag(raw, "resume", self.resume, "true");
    }
}

impl EvalArgs {
    pub fn apply(&self, raw: &mut RawConfig) {
        put(raw, "checkpoint", &self.checkpoint);
        put(raw, "task", &self.task);
        put(raw, "lengths", &self.lengths);
        put(raw, "eval_samples", &self.eval_samples);
    }
}

impl BenchArgs {
    pub fn apply(&self, raw: &mut RawConfig) {
        put(raw, "lengths", &self.lengths);
        put(raw, "warmup", &self.warmup);
        put(raw, "reps", &self.reps);
        put(raw, "attention_lengths", &self.attention_lengths);
        flag(raw, "backward", self.backward, "true");
        flag(raw, "attention", self.attention, "true");
    }
}

impl GradcheckArgs {
    pub fn apply(&self, raw: &mut RawConfig) {
        put(raw, "h", &self.h);
        if !self.corrupt.is_empty() {
            raw.insert("corrupt".into(), self.corrupt.join(","));
        }
    }
}
