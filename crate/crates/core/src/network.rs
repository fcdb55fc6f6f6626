//! A complete task model: embedding, Shuffle-Exchange body and output head.

use rand::Rng;

use crate::autodiff::kernels::argmax_rows;
use crate::autodiff::{Eager, Exec, GradBuffer, ParamId, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::heads::{position_loss, Embedding, PositionHead, SymbolHead, PAD};
use crate::model::{LayerPlan, ModelConfig, ShuffleExchange};
use crate::parallel::{chunk_size, map_chunks};
use crate::scalar::Scalar;
use crate::tasks::{TaskKind, TaskSample};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub enum Head {
    Symbol(SymbolHead),
    Position(PositionHead),
}

#[derive(Debug, Clone)]
pub struct Network {
    pub task: TaskKind,
    pub embedding: Embedding,
    pub body: ShuffleExchange,
    pub head: Head,
}

/// Loss and accuracy counts over a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BatchStats {
    pub loss: f64,
    /// Correct output symbols (or answer positions for selection).
    pub correct: usize,
    pub total: usize,
    pub sequences_correct: usize,
    pub sequences: usize,
}

impl BatchStats {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    pub fn sequence_accuracy(&self) -> f64 {
        if self.sequences == 0 {
            0.0
        } else {
            self.sequences_correct as f64 / self.sequences as f64
        }
    }

    fn absorb(&mut self, other: &BatchStats, weight: f64) {
        self.loss += weight * other.loss;
        self.correct += other.correct;
        self.total += other.total;
        self.sequences_correct += other.sequences_correct;
        self.sequences += other.sequences;
    }
}

fn check_batch(samples: &[TaskSample], n: usize) {
    assert!(!samples.is_empty(), "empty batch");
    for s in samples {
        assert_eq!(
            s.input.len(),
            n,
            "sample of length {} in a batch for length {n}",
            s.input.len()
        );
    }
}

impl Network {
    /// Allocates embedding, body and head parameters in that order.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        task: TaskKind,
        config: &ModelConfig,
        k: u32,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let embedding = Embedding::new(store, task.vocab_size(), config.maps, rng);
        let body = ShuffleExchange::new(config, k, store, rng)?;
        let head = if task.is_selection() {
            Head::Position(PositionHead::new(store, config.maps, rng))
        } else {
            Head::Symbol(SymbolHead::new(store, config.maps, task.vocab_size(), rng))
        };
        Ok(Network {
            task,
            embedding,
            body,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        self.body.config()
    }

    pub fn plan(&self, length: usize) -> Result<LayerPlan> {
        let k = crate::model::log2_exact(length)
            .ok_or_else(|| Error::config("length", format!("{length} is not a power of two")))?;
        self.body.plan(k)
    }

    /// Parameters owned by the embedding and head (the body's are in
    /// [`ShuffleExchange::param_ids`]).
    pub fn io_param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.embedding.table];
        match self.head {
            Head::Symbol(h) => ids.extend([h.dense.weight, h.dense.bias]),
            Head::Position(h) => ids.push(h.weight),
        }
        ids
    }

    /// `[batch, n, classes]` symbol logits or `[batch, n]` position logits.
    pub fn logits<T: Scalar, E: Exec<T>>(
        &self,
        exec: &mut E,
        store: &ParamStore<T>,
        plan: &LayerPlan,
        samples: &[TaskSample],
    ) -> E::Var {
        let n = plan.length();
        check_batch(samples, n);
        let tokens: Vec<usize> = samples.iter().flat_map(|s| s.input.iter().copied()).collect();
        let x = self.embedding.embed(exec, store, &tokens, samples.len());
        let y = self.body.forward(exec, store, plan, &x);
        match &self.head {
            Head::Symbol(h) => h.logits(exec, store, &y),
            Head::Position(h) => h.logits(exec, store, &y),
        }
    }

    /// Loss terms the batch contributes: scored positions, or one per
    /// sample for selection.
    fn loss_rows(&self, samples: &[TaskSample], mask_padding: bool) -> usize {
        match self.head {
            Head::Position(_) => samples.len(),
            Head::Symbol(_) if mask_padding => samples
                .iter()
                .flat_map(|s| s.target_tokens().unwrap().iter())
                .filter(|&&t| t != PAD)
                .count(),
            Head::Symbol(_) => samples.iter().map(|s| s.input.len()).sum(),
        }
    }

    pub fn loss<T: Scalar, E: Exec<T>>(
        &self,
        exec: &mut E,
        store: &ParamStore<T>,
        plan: &LayerPlan,
        samples: &[TaskSample],
        mask_padding: bool,
    ) -> (E::Var, E::Var) {
        let logits = self.logits(exec, store, plan, samples);
        let loss = match self.head {
            Head::Symbol(_) => {
                let targets = symbol_targets(samples);
                let mask: Option<Vec<bool>> = mask_padding.then(|| targets.iter().map(|&t| t != PAD).collect());
                exec.softmax_xent_masked(&logits, &targets, mask.as_deref())
            }
            Head::Position(_) => position_loss(exec, &logits, &position_targets(samples)),
        };
        (loss, logits)
    }

    /// Mean loss over the whole batch and its gradient, evaluated in
    /// `chunks` fixed pieces. Chunk results are reduced in order, so the
    /// outcome does not depend on how many threads ran them.
    pub fn gradients<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        plan: &LayerPlan,
        samples: &[TaskSample],
        chunks: usize,
        mask_padding: bool,
    ) -> (BatchStats, GradBuffer<T>) {
        self.mixed_gradients(store, &[(plan, samples)], chunks, mask_padding)
    }

    /// Like [`Network::gradients`] for a batch whose samples run on
    /// instances of different lengths. The loss is the mean over every
    /// scored row of every group.
    pub fn mixed_gradients<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        groups: &[(&LayerPlan, &[TaskSample])],
        chunks: usize,
        mask_padding: bool,
    ) -> (BatchStats, GradBuffer<T>) {
        let total_rows = groups
            .iter()
            .map(|(_, s)| self.loss_rows(s, mask_padding))
            .sum::<usize>()
            .max(1) as f64;
        let mut stats = BatchStats::default();
        let mut grads = GradBuffer::for_store(store);
        for (plan, samples) in groups {
            if samples.is_empty() {
                continue;
            }
            let per_chunk = map_chunks(samples, chunk_size(samples.len(), chunks), |part| {
                let weight = self.loss_rows(part, mask_padding) as f64 / total_rows;
                let mut tape = Tape::new();
                let (loss, logits) = self.loss(&mut tape, store, plan, part, mask_padding);
                let mut grads = GradBuffer::for_store(store);
                if weight > 0.0 {
                    tape.backward_scaled(loss, T::from_f64(weight), &mut grads);
                }
                let mut stats = self.score_logits(tape.value(&logits), part);
                stats.loss = tape.value(&loss).data()[0].as_f64();
                (stats, weight, grads)
            });
            for (s, weight, g) in per_chunk {
                stats.absorb(&s, weight);
                grads.merge(g);
            }
        }
        (stats, grads)
    }

    /// Forward-only loss and accuracy.
    pub fn score<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        plan: &LayerPlan,
        samples: &[TaskSample],
        chunks: usize,
    ) -> BatchStats {
        let total_rows = self.loss_rows(samples, false).max(1) as f64;
        let per_chunk = map_chunks(samples, chunk_size(samples.len(), chunks), |part| {
            let mut exec = Eager;
            let (loss, logits) = self.loss(&mut exec, store, plan, part, false);
            let mut stats = self.score_logits(&logits, part);
            stats.loss = loss.data()[0].as_f64();
            (stats, self.loss_rows(part, false) as f64 / total_rows)
        });
        let mut stats = BatchStats::default();
        for (s, w) in per_chunk {
            stats.absorb(&s, w);
        }
        stats
    }

    /// Accuracy counts for computed logits.
    pub fn score_logits<T: Scalar>(&self, logits: &Tensor<T>, samples: &[TaskSample]) -> BatchStats {
        let predicted = argmax_rows(logits);
        let mut stats = BatchStats {
            sequences: samples.len(),
            ..Default::default()
        };
        match self.head {
            Head::Symbol(_) => {
                let n = logits.shape()[1];
                for (sample, pred) in samples.iter().zip(predicted.chunks_exact(n)) {
                    let target = sample.target_tokens().expect("token target");
                    let hits = pred.iter().zip(target).filter(|(p, t)| p == t).count();
                    stats.correct += hits;
                    stats.total += n;
                    stats.sequences_correct += usize::from(hits == n);
                }
            }
            Head::Position(_) => {
                for (sample, &pred) in samples.iter().zip(&predicted) {
                    let hit = Some(pred) == sample.target_position();
                    stats.correct += usize::from(hit);
                    stats.total += 1;
                    stats.sequences_correct += usize::from(hit);
                }
            }
        }
        stats
    }
}

pub fn symbol_targets(samples: &[TaskSample]) -> Vec<usize> {
    samples
        .iter()
        .flat_map(|s| s.target_tokens().expect("token target").iter().copied())
        .collect()
}

pub fn position_targets(samples: &[TaskSample]) -> Vec<usize> {
    samples
        .iter()
        .map(|s| s.target_position().expect("position target"))
        .collect()
}
