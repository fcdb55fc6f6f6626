//! Run configuration: a `key = value` file merged with command-line
//! overrides, resolved into typed settings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sxnet_core::model::{ModelConfig, Sharing, SwitchVariant};
use sxnet_core::optim::AdamConfig;
use sxnet_core::tasks::TaskKind;
use sxnet_core::trainer::TrainConfig;
use sxnet_core::{DType, Error, Result};

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("task", "dup, copy, rev, sort, add, mul or select"),
    ("maps", "feature maps per cell (even)"),
    ("blocks", "stacked Benes blocks"),
    ("variant", "baseline, no_swap, swap_gate, two_fc or two_fc_gate"),
    ("sharing", "consecutive, minimal or none"),
    ("residual", "residual connections between blocks (true/false)"),
    ("benes", "left then right shuffles in each block (true/false)"),
    ("dtype", "f32 or f64"),
    ("seed", "run seed"),
    ("out", "output directory"),
    ("threads", "worker threads, 0 for all cores"),
    ("min_len", "shortest raw training length"),
    ("train_len", "longest raw training length"),
    ("curriculum", "widen the length range gradually (true/false)"),
    ("mixed_lengths", "per-example lengths within a batch (true/false)"),
    ("steps", "optimizer steps"),
    ("batch", "examples per step"),
    ("lr", "Adam learning rate"),
    ("beta1", "Adam first-moment decay"),
    ("beta2", "Adam second-moment decay"),
    ("eps", "Adam epsilon"),
    ("clip", "gradient-norm bound, or off"),
    ("mask_padding", "leave padding out of the loss (true/false)"),
    ("chunks", "fixed pieces each batch is split into"),
    ("eval_lengths", "comma-separated evaluation lengths"),
    ("eval_interval", "steps between evaluations"),
    ("eval_samples", "held-out samples per evaluation length"),
    ("stop_accuracy", "stop once trained lengths reach this accuracy, or off"),
    ("halt_after", "leave training after this step as if interrupted, or off"),
    (
        "resume",
        "continue from the checkpoint in the output directory (true/false)",
    ),
    ("checkpoint", "checkpoint file to evaluate"),
    ("lengths", "comma-separated lengths (eval, bench)"),
    ("warmup", "untimed bench repetitions"),
    ("reps", "timed bench repetitions"),
    ("backward", "bench forward and backward (true/false)"),
    ("memory_budget_mb", "bench lengths estimated above this report oom"),
    ("attention", "also bench the dense attention stub (true/false)"),
    ("attention_lengths", "lengths for the attention stub"),
    ("h", "central-difference step for gradcheck"),
    ("corrupt", "comma-separated gradcheck components to corrupt"),
];

/// Raw settings before typing, in key order.
pub type RawConfig = BTreeMap<String, String>;

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<RawConfig> {
    let mut map = RawConfig::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::config(
                "config",
                format!("line {}: expected `key = value`, got `{line}`", i + 1),
            )
        })?;
        let key = key.trim().to_string();
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(Error::config(key, format!("set twice (line {})", i + 1)));
        }
    }
    Ok(map)
}

pub fn read_config_file(path: &Path) -> Result<RawConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
    parse_config_text(&text)
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got `{value}`"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_optional(key: &str, value: &str) -> Result<Option<f64>> {
    if value == "off" || value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Option<TaskKind>,
    pub model: ModelConfig,
    pub dtype: DType,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: usize,
    pub min_len: Option<usize>,
    pub train_len: usize,
    pub curriculum: bool,
    pub mixed_lengths: bool,
    pub steps: u64,
    pub batch: usize,
    pub adam: AdamConfig,
    pub clip: Option<f64>,
    pub mask_padding: bool,
    pub chunks: usize,
    /// `None` evaluates at the trained length and 2, 4 and 8 times it.
    pub eval_lengths: Option<Vec<usize>>,
    pub eval_interval: u64,
    pub eval_samples: usize,
    pub stop_accuracy: Option<f64>,
    pub halt_after: Option<u64>,
    pub resume: bool,
    pub checkpoint: Option<PathBuf>,
    pub lengths: Option<Vec<usize>>,
    pub warmup: usize,
    pub reps: usize,
    pub backward: bool,
    pub memory_budget_mb: usize,
    pub attention: bool,
    pub attention_lengths: Option<Vec<usize>>,
    pub h: Option<f64>,
    pub corrupt: Vec<String>,
    /// Keys that were set explicitly rather than defaulted.
    pub explicit: BTreeSet<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::new(TaskKind::Dup, ModelConfig::default());
        RunConfig {
            task: None,
            model: ModelConfig::default(),
            dtype: DType::F32,
            seed: 1,
            out: PathBuf::from("out"),
            threads: 0,
            min_len: None,
            train_len: train.max_len,
            curriculum: train.curriculum,
            mixed_lengths: train.mixed_lengths,
            steps: train.steps,
            batch: train.batch,
            adam: AdamConfig::default(),
            clip: train.clip,
            mask_padding: train.mask_padding,
            chunks: train.chunks,
            eval_lengths: None,
            eval_interval: train.eval_interval,
            eval_samples: train.eval_samples,
            stop_accuracy: None,
            halt_after: None,
            resume: false,
            checkpoint: None,
            lengths: None,
            warmup: 2,
            reps: 5,
            backward: false,
            memory_budget_mb: 4096,
            attention: false,
            attention_lengths: None,
            h: None,
            corrupt: Vec::new(),
            explicit: BTreeSet::new(),
        }
    }
}

impl RunConfig {
    /// Types every entry of `raw` over the defaults. Unknown keys are an
    /// error.
    pub fn resolve(raw: &RawConfig) -> Result<Self> {
        let mut c = RunConfig::default();
        for (key, value) in raw {
            let v = value.as_str();
            let k = key.as_str();
            match k {
                "task" => c.task = Some(v.parse()?),
                "maps" => c.model.maps = parse(k, v)?,
                "blocks" => c.model.blocks = parse(k, v)?,
                "variant" => c.model.variant = v.parse::<SwitchVariant>()?,
                "sharing" => c.model.sharing = v.parse::<Sharing>()?,
                "residual" => c.model.residual = parse_bool(k, v)?,
                "benes" => c.model.benes = parse_bool(k, v)?,
                "dtype" => c.dtype = v.parse().map_err(|e: String| Error::config("dtype", e))?,
                "seed" => c.seed = parse(k, v)?,
                "out" => c.out = PathBuf::from(v),
                "threads" => c.threads = parse(k, v)?,
                "min_len" => c.min_len = Some(parse(k, v)?),
                "train_len" => c.train_len = parse(k, v)?,
                "curriculum" => c.curriculum = parse_bool(k, v)?,
                "mixed_lengths" => c.mixed_lengths = parse_bool(k, v)?,
                "steps" => c.steps = parse(k, v)?,
                "batch" => c.batch = parse(k, v)?,
                "lr" => c.adam.lr = parse(k, v)?,
                "beta1" => c.adam.beta1 = parse(k, v)?,
                "beta2" => c.adam.beta2 = parse(k, v)?,
                "eps" => c.adam.eps = parse(k, v)?,
                "clip" => c.clip = parse_optional(k, v)?,
                "mask_padding" => c.mask_padding = parse_bool(k, v)?,
                "chunks" => c.chunks = parse(k, v)?,
                "eval_lengths" => c.eval_lengths = Some(parse_list(k, v)?),
                "eval_interval" => c.eval_interval = parse(k, v)?,
                "eval_samples" => c.eval_samples = parse(k, v)?,
                "stop_accuracy" => c.stop_accuracy = parse_optional(k, v)?,
                "halt_after" => c.halt_after = if v == "off" { None } else { Some(parse(k, v)?) },
                "resume" => c.resume = parse_bool(k, v)?,
                "checkpoint" => c.checkpoint = Some(PathBuf::from(v)),
                "lengths" => c.lengths = Some(parse_list(k, v)?),
                "warmup" => c.warmup = parse(k, v)?,
                "reps" => c.reps = parse(k, v)?,
                "backward" => c.backward = parse_bool(k, v)?,
                "memory_budget_mb" => c.memory_budget_mb = parse(k, v)?,
                "attention" => c.attention = parse_bool(k, v)?,
                "attention_lengths" => c.attention_lengths = Some(parse_list(k, v)?),
                "h" => c.h = parse_optional(k, v)?,
                "corrupt" => {
                    c.corrupt = v
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(String::from)
                        .collect()
                }
                _ => {
                    return Err(Error::config(
                        k,
                        format!("unknown key; accepted keys: {}", key_names().join(", ")),
                    ))
                }
            }
            c.explicit.insert(key.clone());
        }
        c.model.validate()?;
        c.adam.validate()?;
        Ok(c)
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn task(&self) -> Result<TaskKind> {
        self.task
            .ok_or_else(|| Error::config("task", "no task given (use --task or `task =` in the config file)"))
    }

    /// Trainer settings for this run, with checkpoint and metrics files in
    /// the output directory.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let task = self.task()?;
        let mut t = TrainConfig::new(task, self.model.clone());
        if let Some(m) = self.min_len {
            t.min_len = m;
        }
        t.max_len = self.train_len;
        t.curriculum = self.curriculum;
        t.mixed_lengths = self.mixed_lengths;
        t.steps = self.steps;
        t.batch = self.batch;
        t.seed = self.seed;
        t.adam = self.adam;
        t.clip = self.clip;
        t.mask_padding = self.mask_padding;
        t.chunks = self.chunks;
        t.eval_interval = self.eval_interval;
        t.eval_samples = self.eval_samples;
        t.stop_accuracy = self.stop_accuracy;
        t.halt_after = self.halt_after;
        t.eval_lengths = match &self.eval_lengths {
            Some(l) => l.clone(),
            None => {
                let n = t.max_train_length();
                vec![n, 2 * n, 4 * n, 8 * n]
            }
        };
        t.checkpoint = Some(self.checkpoint_path());
        t.metrics = Some(self.out.join("metrics.txt"));
        t.validate()?;
        Ok(t)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join("checkpoint.sxnc"))
    }

    /// `(key, value)` for every key, explicit or defaulted.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<f64>| v.map_or("off".to_string(), |x| format!("{x:?}"));
        let list = |v: &Option<Vec<usize>>| v.as_deref().map_or("auto".to_string(), join);
        let e = |k: &'static str, v: String| (k, v);
        vec![
            e("task", self.task.map_or("none".into(), |t| t.to_string())),
            e("maps", self.model.maps.to_string()),
            e("blocks", self.model.blocks.to_string()),
            e("variant", self.model.variant.to_string()),
            e("sharing", self.model.sharing.to_string()),
            e("residual", self.model.residual.to_string()),
            e("benes", self.model.benes.to_string()),
            e("dtype", self.dtype.to_string()),
            e("seed", self.seed.to_string()),
            e("out", self.out.display().to_string()),
            e("threads", self.threads.to_string()),
            e("min_len", self.min_len.map_or("auto".into(), |m| m.to_string())),
            e("train_len", self.train_len.to_string()),
            e("curriculum", self.curriculum.to_string()),
            e("mixed_lengths", self.mixed_lengths.to_string()),
            e("steps", self.steps.to_string()),
            e("batch", self.batch.to_string()),
            e("lr", format!("{:?}", self.adam.lr)),
            e("beta1", format!("{:?}", self.adam.beta1)),
            e("beta2", format!("{:?}", self.adam.beta2)),
            e("eps", format!("{:?}", self.adam.eps)),
            e("clip", opt(self.clip)),
            e("mask_padding", self.mask_padding.to_string()),
            e("chunks", self.chunks.to_string()),
            e("eval_lengths", list(&self.eval_lengths)),
            e("eval_interval", self.eval_interval.to_string()),
            e("eval_samples", self.eval_samples.to_string()),
            e("stop_accuracy", opt(self.stop_accuracy)),
            e("halt_after", self.halt_after.map_or("off".into(), |h| h.to_string())),
            e("resume", self.resume.to_string()),
            e(
                "checkpoint",
                self.checkpoint
                    .as_ref()
                    .map_or("auto".into(), |p| p.display().to_string()),
            ),
            e("lengths", list(&self.lengths)),
            e("warmup", self.warmup.to_string()),
            e("reps", self.reps.to_string()),
            e("backward", self.backward.to_string()),
            e("memory_budget_mb", self.memory_budget_mb.to_string()),
            e("attention", self.attention.to_string()),
            e("attention_lengths", list(&self.attention_lengths)),
            e("h", opt(self.h)),
            e("corrupt", self.corrupt.join(",")),
        ]
    }
}

/// The resolved configuration as a config file that reproduces the run.
impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.entries() {
            if v == "auto" || (k == "task" && v == "none") || (k == "corrupt" && v.is_empty()) {
                writeln!(f, "# {k} = {}", if v.is_empty() { "none" } else { &v })?;
            } else {
                writeln!(f, "{k} = {v}")?;
            }
        }
        Ok(())
    }
}

pub fn key_names() -> Vec<&'static str> {
    KEYS.iter().map(|(k, _)| *k).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_rejected() {
        let raw = parse_config_text("maps = 8\nwidth = 3\n").unwrap();
        let err = RunConfig::resolve(&raw).unwrap_err();
        assert!(err.to_string().contains("width"));
    }

    #[test]
    fn comments_and_blank_lines() {
        let raw = parse_config_text("# run\n\ntask = rev  # trailing\nsteps=10\n").unwrap();
        let c = RunConfig::resolve(&raw).unwrap();
        assert_eq!(c.task, Some(TaskKind::Rev));
        assert_eq!(c.steps, 10);
        assert!(c.is_explicit("steps"));
        assert!(!c.is_explicit("maps"));
    }

    #[test]
    fn duplicate_key_rejected() {
        assert!(parse_config_text("seed = 1\nseed = 2\n").is_err());
    }

    #[test]
    fn missing_equals_rejected() {
        assert!(parse_config_text("seed 1\n").is_err());
    }

    #[test]
    fn odd_maps_rejected() {
        let raw = parse_config_text("maps = 7").unwrap();
        assert!(RunConfig::resolve(&raw).is_err());
    }

    #[test]
    fn every_key_is_documented_and_resolvable() {
        let c = RunConfig::default();
        let listed: Vec<&str> = c.entries().iter().map(|(k, _)| *k).collect();
        assert_eq!(listed, key_names());
    }

    #[test]
    fn resolved_output_round_trips() {
        let raw =
            parse_config_text("task = add\nmaps = 12\nclip = off\neval_lengths = 8,32\nlr = 0.002\nvariant = two_fc\n")
                .unwrap();
        let c = RunConfig::resolve(&raw).unwrap();
        let again = RunConfig::resolve(&parse_config_text(&c.to_string()).unwrap()).unwrap();
        assert_eq!(
            RunConfig {
                explicit: BTreeSet::new(),
                ..again
            },
            RunConfig {
                explicit: BTreeSet::new(),
                ..c
            }
        );
    }

    #[test]
    fn default_eval_lengths_are_multiples_of_training_length() {
        let raw = parse_config_text("task = dup\ntrain_len = 16").unwrap();
        let t = RunConfig::resolve(&raw).unwrap().train_config().unwrap();
        assert_eq!(t.eval_lengths, vec![16, 32, 64, 128]);
    }
}
