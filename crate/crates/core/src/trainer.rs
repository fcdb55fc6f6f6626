//! Curriculum training loop, evaluation and run bookkeeping.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::ParamStore;
use crate::checkpoint::{Checkpoint, RngState};
use crate::error::{Error, Result};
use crate::heads::PadMode;
use crate::model::{log2_exact, LayerPlan, ModelConfig, Sharing};
use crate::network::{BatchStats, Network};
use crate::optim::{clip_grad_norm, AdamConfig, AdamState};
use crate::scalar::Scalar;
use crate::tasks::{encode, Curriculum, TaskKind, TaskSample};

const INIT_STREAM: u64 = 0;
const DATA_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub task: TaskKind,
    pub model: ModelConfig,
    /// Shortest raw training length.
    pub min_len: usize,
    /// Longest raw training length.
    pub max_len: usize,
    /// Widen the length range gradually; otherwise sample the full range
    /// from the first step.
    pub curriculum: bool,
    /// Draw a length for every example and run each on the smallest
    /// instance it fits; otherwise one length per step.
    pub mixed_lengths: bool,
    pub steps: u64,
    pub batch: usize,
    pub seed: u64,
    pub eval_lengths: Vec<usize>,
    pub eval_interval: u64,
    pub eval_samples: usize,
    pub adam: AdamConfig,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip: Option<f64>,
    /// Leave padding positions out of the symbol loss.
    pub mask_padding: bool,
    /// Fixed number of pieces each batch is split into for gradient
    /// evaluation. Results depend on this, not on the thread count.
    pub chunks: usize,
    /// Stop once every evaluated length up to the training length reaches
    /// this accuracy.
    pub stop_accuracy: Option<f64>,
    /// Leave the loop after this step, at an evaluation boundary, exactly as
    /// an interrupted run would. Not stored in checkpoints.
    pub halt_after: Option<u64>,
    pub checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

impl TrainConfig {
    pub fn new(task: TaskKind, model: ModelConfig) -> Self {
        TrainConfig {
            task,
            model,
            min_len: task.min_len(),
            max_len: 16,
            curriculum: true,
            mixed_lengths: false,
            steps: 2000,
            batch: 32,
            seed: 1,
            eval_lengths: vec![16],
            eval_interval: 200,
            eval_samples: 256,
            adam: AdamConfig::default(),
            clip: Some(5.0),
            mask_padding: false,
            chunks: 1,
            stop_accuracy: None,
            halt_after: None,
            checkpoint: None,
            metrics: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.adam.validate()?;
        if self.min_len < self.task.min_len() {
            return Err(Error::config(
                "min_len",
                format!("{} needs raw length at least {}", self.task, self.task.min_len()),
            ));
        }
        if self.max_len < self.min_len {
            return Err(Error::config(
                "max_len",
                format!("{} is below min_len {}", self.max_len, self.min_len),
            ));
        }
        if self.batch == 0 {
            return Err(Error::config("batch", "must be positive"));
        }
        if self.chunks == 0 {
            return Err(Error::config("chunks", "must be positive"));
        }
        if self.eval_interval == 0 {
            return Err(Error::config("eval_interval", "must be positive"));
        }
        if self.eval_samples == 0 && !self.eval_lengths.is_empty() {
            return Err(Error::config("eval_samples", "must be positive"));
        }
        for &len in &self.eval_lengths {
            if log2_exact(len).is_none_or(|k| k == 0) {
                return Err(Error::config(
                    "eval_lengths",
                    format!("{len} is not a power of two of at least 2"),
                ));
            }
            if self.task.is_selection() && len < self.min_len {
                return Err(Error::config(
                    "eval_lengths",
                    format!("{len} is shorter than min_len {}", self.min_len),
                ));
            }
        }
        if let Some(c) = self.clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::config("clip", format!("must be positive, got {c}")));
            }
        }
        if let Some(h) = self.halt_after {
            if h % self.eval_interval != 0 {
                return Err(Error::config(
                    "halt_after",
                    format!("{h} is not a multiple of eval_interval {}", self.eval_interval),
                ));
            }
        }
        if let Some(a) = self.stop_accuracy {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::config("stop_accuracy", format!("{a} is not in [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn curriculum_schedule(&self) -> Curriculum {
        let mut c = Curriculum::new(self.task, self.min_len, self.max_len, self.steps);
        if !self.curriculum {
            c.window = 0;
        }
        c
    }

    /// Every instance length the curriculum can select.
    pub fn train_lengths(&self) -> Vec<usize> {
        let c = self.curriculum_schedule();
        let set: BTreeSet<usize> = (self.min_len..=self.max_len).map(|r| c.instance_len(r)).collect();
        set.into_iter().collect()
    }

    pub fn max_train_length(&self) -> usize {
        *self.train_lengths().last().unwrap()
    }

    /// Training settings stored in checkpoints and logged with every run.
    pub fn settings(&self) -> BTreeMap<String, String> {
        let join = |v: &[usize]| v.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",");
        let mut s = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            s.insert(k.to_string(), v);
        };
        put("min_len", self.min_len.to_string());
        put("max_len", self.max_len.to_string());
        put("curriculum", self.curriculum.to_string());
        put("mixed_lengths", self.mixed_lengths.to_string());
        put("steps", self.steps.to_string());
        put("batch", self.batch.to_string());
        put("seed", self.seed.to_string());
        put("eval_lengths", join(&self.eval_lengths));
        put("eval_interval", self.eval_interval.to_string());
        put("eval_samples", self.eval_samples.to_string());
        put("clip", self.clip.map_or("off".into(), |c| format!("{c:?}")));
        put("mask_padding", self.mask_padding.to_string());
        put("chunks", self.chunks.to_string());
        put(
            "stop_accuracy",
            self.stop_accuracy.map_or("off".into(), |a| format!("{a:?}")),
        );
        s
    }
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub task: TaskKind,
    /// Instance length of the most recent training batch.
    pub train_length: usize,
    /// Mean training loss over the steps since the previous record.
    pub loss: f64,
    /// Per-symbol training accuracy over the same steps.
    pub accuracy: f64,
    /// Per-symbol accuracy at each evaluation length.
    pub eval: Vec<(usize, f64)>,
    /// Whole-sequence accuracy at each evaluation length.
    pub eval_sequence: Vec<(usize, f64)>,
    pub wall_ms: u64,
}

impl MetricsRecord {
    /// Same record with the timing field cleared, for comparing runs.
    pub fn without_timing(&self) -> Self {
        MetricsRecord {
            wall_ms: 0,
            ..self.clone()
        }
    }

    pub fn eval_at(&self, length: usize) -> Option<f64> {
        self.eval.iter().find(|(l, _)| *l == length).map(|(_, a)| *a)
    }
}

fn format_map(map: &[(usize, f64)]) -> String {
    map.iter()
        .map(|(l, a)| format!("{l}:{a:.6}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_map(s: &str) -> Option<Vec<(usize, f64)>> {
    if s.is_empty() {
        return Some(Vec::new());
    }
    s.split(',')
        .map(|kv| {
            let (l, a) = kv.split_once(':')?;
            Some((l.parse().ok()?, a.parse().ok()?))
        })
        .collect()
}

impl fmt::Display for MetricsRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step={} task={} train_length={} loss={:.6} accuracy={:.6} eval={} eval_sequence={} wall_ms={}",
            self.step,
            self.task,
            self.train_length,
            self.loss,
            self.accuracy,
            format_map(&self.eval),
            format_map(&self.eval_sequence),
            self.wall_ms
        )
    }
}

impl FromStr for MetricsRecord {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let bad = || Error::config("metrics", format!("malformed record `{line}`"));
        let fields: BTreeMap<&str, &str> = line
            .split_whitespace()
            .map(|kv| kv.split_once('=').ok_or_else(bad))
            .collect::<Result<_>>()?;
        let get = |k: &str| fields.get(k).copied().ok_or_else(bad);
        Ok(MetricsRecord {
            step: get("step")?.parse().map_err(|_| bad())?,
            task: get("task")?.parse()?,
            train_length: get("train_length")?.parse().map_err(|_| bad())?,
            loss: get("loss")?.parse().map_err(|_| bad())?,
            accuracy: get("accuracy")?.parse().map_err(|_| bad())?,
            eval: parse_map(get("eval")?).ok_or_else(bad)?,
            eval_sequence: parse_map(get("eval_sequence")?).ok_or_else(bad)?,
            wall_ms: get("wall_ms")?.parse().map_err(|_| bad())?,
        })
    }
}

/// Layer plans for several lengths over one parameter set.
pub fn instantiate_shared(network: &Network, lengths: &[usize]) -> Result<BTreeMap<usize, LayerPlan>> {
    let distinct: BTreeSet<usize> = lengths.iter().copied().collect();
    if network.config().sharing == Sharing::None && distinct.len() > 1 {
        return Err(Error::config(
            "sharing",
            format!(
                "unshared weights cannot serve several lengths ({:?}); use consecutive or minimal sharing",
                distinct
            ),
        ));
    }
    distinct.into_iter().map(|n| Ok((n, network.plan(n)?))).collect()
}

/// Held-out samples for one evaluation length, drawn from their own seeded
/// stream so they never overlap the training stream.
pub fn eval_samples(task: TaskKind, length: usize, count: usize, min_len: usize, seed: u64) -> Vec<TaskSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(EVAL_STREAM + length as u64);
    (0..count)
        .map(|_| {
            let raw_len = match task.pad_mode() {
                PadMode::FixedStart => length,
                PadMode::RandomPosition => rand::Rng::gen_range(&mut rng, min_len.min(length)..=length),
            };
            let raw = task.generate(raw_len, &mut rng);
            encode(&raw, length, task.pad_mode(), &mut rng).expect("generator respects its length budget")
        })
        .collect()
}

/// Per-symbol and whole-sequence accuracy of `network` on `samples`.
pub fn evaluate<T: Scalar>(
    network: &Network,
    store: &ParamStore<T>,
    samples: &[TaskSample],
    chunks: usize,
) -> Result<BatchStats> {
    let Some(first) = samples.first() else {
        return Ok(BatchStats::default());
    };
    let plan = network.plan(first.padded_len())?;
    Ok(network.score(store, &plan, samples, chunks))
}

/// Rebuilds the network a checkpoint was saved from.
pub fn load_network<T: Scalar>(ckpt: &Checkpoint<T>) -> Result<(Network, ParamStore<T>)> {
    let k = log2_exact(ckpt.instance_length)
        .filter(|&k| k > 0)
        .ok_or_else(|| Error::Checkpoint(format!("bad instance length {}", ckpt.instance_length)))?;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let network = Network::new(ckpt.task, &ckpt.model, k, &mut store, &mut rng)?;
    ckpt.restore_params(&mut store)?;
    Ok((network, store))
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar> {
    pub network: Network,
    pub store: ParamStore<T>,
    pub checkpoint: Checkpoint<T>,
    pub records: Vec<MetricsRecord>,
    pub stopped_early: bool,
}

impl<T: Scalar> TrainOutcome<T> {
    pub fn final_record(&self) -> Option<&MetricsRecord> {
        self.records.last()
    }
}

pub fn train<T: Scalar>(config: &TrainConfig) -> Result<TrainOutcome<T>> {
    train_with(config, None, &mut |_| {})
}

/// Runs training from scratch or from `resume`, calling `observe` with each
/// metrics record as it is produced.
pub fn train_with<T: Scalar>(
    config: &TrainConfig,
    resume: Option<Checkpoint<T>>,
    observe: &mut dyn FnMut(&MetricsRecord),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let started = Instant::now();
    let task = config.task;
    let max_train = config.max_train_length();
    let k = log2_exact(max_train).expect("instance lengths are powers of two");

    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_rng.set_stream(INIT_STREAM);
    let mut store = ParamStore::<T>::new();
    let network = Network::new(task, &config.model, k, &mut store, &mut init_rng)?;
    let mut lengths = config.train_lengths();
    lengths.extend(&config.eval_lengths);
    let plans = instantiate_shared(&network, &lengths)?;

    let mut adam = AdamState::new(&store, config.adam);
    let mut data_rng = ChaCha8Rng::seed_from_u64(config.seed);
    data_rng.set_stream(DATA_STREAM);
    let mut step = 0u64;
    if let Some(ckpt) = &resume {
        if ckpt.task != task || ckpt.model != config.model {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained on {} with {:?}, not {} with {:?}",
                ckpt.task, ckpt.model, task, config.model
            )));
        }
        ckpt.restore_params(&mut store)?;
        adam = ckpt.adam_for(&store)?;
        adam.config = config.adam;
        data_rng = ckpt.rng.restore();
        step = ckpt.step;
    }

    let eval_sets: Vec<(usize, Vec<TaskSample>)> = config
        .eval_lengths
        .iter()
        .map(|&len| {
            (
                len,
                eval_samples(task, len, config.eval_samples, config.min_len, config.seed),
            )
        })
        .collect();

    let snapshot = |store: &ParamStore<T>, adam: &AdamState<T>, rng: &ChaCha8Rng, step: u64| Checkpoint {
        task,
        model: config.model.clone(),
        instance_length: max_train,
        step,
        params: store.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect(),
        adam: adam.clone(),
        rng: RngState::capture(rng),
        settings: config.settings(),
    };

    let mut metrics_file = match &config.metrics {
        Some(path) => Some(
            OpenOptions::new()
                .create(true)
                .append(resume.is_some())
                .write(true)
                .truncate(resume.is_none())
                .open(path)?,
        ),
        None => None,
    };

    let curriculum = config.curriculum_schedule();
    let mut records = Vec::new();
    let mut interval = BatchStats::default();
    let mut interval_steps = 0u64;
    let mut stopped_early = false;

    if step >= config.steps {
        let ckpt = snapshot(&store, &adam, &data_rng, step);
        if let Some(path) = &config.checkpoint {
            ckpt.save(path)?;
        }
        return Ok(TrainOutcome {
            network,
            store,
            checkpoint: ckpt,
            records,
            stopped_early,
        });
    }

    while step < config.steps {
        let mut groups: BTreeMap<usize, Vec<TaskSample>> = BTreeMap::new();
        let mut step_len = None;
        for _ in 0..config.batch {
            let (raw, n) = match step_len {
                Some(fixed) => fixed,
                None => curriculum.next(step, &mut data_rng),
            };
            if !config.mixed_lengths {
                step_len = Some((raw, n));
            }
            let sample = task.generate(raw, &mut data_rng);
            let encoded =
                encode(&sample, n, task.pad_mode(), &mut data_rng).expect("generator respects its length budget");
            groups.entry(n).or_default().push(encoded);
        }
        let n = *groups.keys().last().unwrap();
        let batches: Vec<(&LayerPlan, &[TaskSample])> =
            groups.iter().map(|(len, s)| (&plans[len], s.as_slice())).collect();
        let (stats, grads) = network.mixed_gradients(&store, &batches, config.chunks, config.mask_padding);
        if !stats.loss.is_finite() {
            return Err(Error::Diverged { step, loss: stats.loss });
        }
        store.zero_grads();
        store.accumulate(&grads);
        if let Some(max_norm) = config.clip {
            clip_grad_norm(&mut store, max_norm);
        }
        adam.step(&mut store)?;
        step += 1;
        interval_steps += 1;
        interval.loss += stats.loss;
        interval.correct += stats.correct;
        interval.total += stats.total;

        let at_boundary = step.is_multiple_of(config.eval_interval) || step == config.steps;
        if !at_boundary {
            continue;
        }
        let mut eval = Vec::new();
        let mut eval_sequence = Vec::new();
        for (len, samples) in &eval_sets {
            let s = network.score(&store, &plans[len], samples, config.chunks);
            eval.push((*len, s.accuracy()));
            eval_sequence.push((*len, s.sequence_accuracy()));
        }
        let record = MetricsRecord {
            step,
            task,
            train_length: n,
            loss: interval.loss / interval_steps as f64,
            accuracy: interval.accuracy(),
            eval,
            eval_sequence,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        interval = BatchStats::default();
        interval_steps = 0;
        if let Some(file) = metrics_file.as_mut() {
            writeln!(file, "{record}")?;
            file.flush()?;
        }
        observe(&record);
        if let Some(path) = &config.checkpoint {
            snapshot(&store, &adam, &data_rng, step).save(path)?;
        }
        if let Some(target) = config.stop_accuracy {
            let in_range: Vec<f64> = record
                .eval
                .iter()
                .filter(|(l, _)| *l <= max_train)
                .map(|(_, a)| *a)
                .collect();
            let considered = if in_range.is_empty() {
                record.eval.iter().map(|(_, a)| *a).collect()
            } else {
                in_range
            };
            if !considered.is_empty() && considered.iter().all(|&a| a >= target) {
                stopped_early = step < config.steps;
                records.push(record);
                break;
            }
        }
        records.push(record);
        if config.halt_after == Some(step) {
            break;
        }
    }

    let checkpoint = snapshot(&store, &adam, &data_rng, step);
    Ok(TrainOutcome {
        network,
        store,
        checkpoint,
        records,
        stopped_early,
    })
}
