//! Forward-pass timing across sequence lengths and log-log slope fitting.

use std::fmt;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Eager, Exec, GradBuffer, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::model::{build_model, log2_exact, ModelConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub model: ModelConfig,
    pub lengths: Vec<usize>,
    pub batch: usize,
    pub warmup: usize,
    pub reps: usize,
    /// Time forward and backward instead of forward only.
    pub backward: bool,
    /// Lengths whose estimated working set exceeds this are reported as
    /// out of memory instead of run.
    pub memory_budget: usize,
    pub seed: u64,
}

impl BenchConfig {
    pub fn new(model: ModelConfig, lengths: Vec<usize>) -> Self {
        BenchConfig {
            model,
            lengths,
            batch: 1,
            warmup: 2,
            reps: 5,
            backward: false,
            memory_budget: 4 << 30,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.lengths.is_empty() {
            return Err(Error::config("lengths", "at least one length is required"));
        }
        for &n in &self.lengths {
            if log2_exact(n).is_none_or(|k| k == 0) {
                return Err(Error::config(
                    "lengths",
                    format!("{n} is not a power of two of at least 2"),
                ));
            }
        }
        if self.batch == 0 || self.reps == 0 {
            return Err(Error::config("reps", "batch and repetitions must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    /// Mean and median of the timed repetitions; `None` when the length
    /// did not fit the memory budget.
    pub timing: Option<Timing>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub mean_ms: f64,
    pub median_ms: f64,
}

impl BenchRow {
    /// Median time divided by `n log2 n`.
    pub fn ms_per_n_log_n(&self) -> Option<f64> {
        let t = self.timing?;
        let n = self.n as f64;
        Some(t.median_ms / (n * n.log2()))
    }
}

impl fmt::Display for BenchRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.timing {
            Some(t) => write!(
                f,
                "{:>8} {:>12.3} {:>12.3} {:>16.3e}",
                self.n,
                t.mean_ms,
                t.median_ms,
                self.ms_per_n_log_n().unwrap()
            ),
            None => write!(f, "{:>8} {:>12} {:>12} {:>16}", self.n, "oom", "oom", "oom"),
        }
    }
}

pub fn table_header() -> String {
    format!(
        "{:>8} {:>12} {:>12} {:>16}",
        "n", "mean_ms", "median_ms", "ms_per_n_log_n"
    )
}

fn timing(samples: &mut [f64]) -> Timing {
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    samples.sort_by(f64::total_cmp);
    let mid = samples.len() / 2;
    let median = if samples.len() % 2 == 1 {
        samples[mid]
    } else {
        0.5 * (samples[mid - 1] + samples[mid])
    };
    Timing {
        mean_ms: mean,
        median_ms: median,
    }
}

/// Runs `f` `warmup` times untimed, then `reps` times timed.
pub fn time_runs(warmup: usize, reps: usize, mut f: impl FnMut()) -> Timing {
    for _ in 0..warmup {
        f();
    }
    let mut samples: Vec<f64> = (0..reps)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    timing(&mut samples)
}

/// Rough peak bytes of one pass at length `n`.
pub fn estimate_bytes<T: Scalar>(config: &ModelConfig, n: usize, batch: usize, backward: bool) -> usize {
    let k = log2_exact(n).unwrap_or(1) as usize;
    let cell = batch * n * config.maps * T::DTYPE.size_of();
    if backward {
        // Every layer keeps roughly a dozen cell-sized activations.
        cell * 12 * (config.blocks * (2 * k - 1))
    } else {
        cell * 16
    }
}

/// Times the Shuffle-Exchange body on random `[batch, n, m]` input.
pub fn bench_network<T: Scalar>(config: &BenchConfig, mut on_row: impl FnMut(&BenchRow)) -> Result<Vec<BenchRow>> {
    config.validate()?;
    let mut rows = Vec::new();
    for &n in &config.lengths {
        let row = if estimate_bytes::<T>(&config.model, n, config.batch, config.backward) > config.memory_budget {
            BenchRow { n, timing: None }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let k = log2_exact(n).unwrap();
            let mut store = ParamStore::<T>::new();
            let (model, plan) = build_model(&config.model, k, &mut store, &mut rng)?;
            let input = Tensor::<T>::uniform(&[config.batch, n, config.model.maps], -1.0, 1.0, &mut rng);
            let t = if config.backward {
                time_runs(config.warmup, config.reps, || {
                    let mut tape = Tape::new();
                    let x = tape.input(input.clone());
                    let y = model.forward(&mut tape, &store, &plan, &x);
                    let loss = tape.sum_all(&y);
                    let mut grads = GradBuffer::for_store(&store);
                    tape.backward(loss, &mut grads);
                })
            } else {
                time_runs(config.warmup, config.reps, || {
                    let mut exec = Eager;
                    let x = Exec::<T>::input(&mut exec, input.clone());
                    let y = model.forward(&mut exec, &store, &plan, &x);
                    std::hint::black_box(&y);
                })
            };
            BenchRow { n, timing: Some(t) }
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// Dense all-pairs attention on `[n, m]` queries, keys and values,
/// processed in row blocks so memory stays linear in `n`.
pub fn attention_stub(q: &Tensor<f32>, k: &Tensor<f32>, v: &Tensor<f32>) -> Tensor<f32> {
    let (n, m) = (q.rows(), q.cols());
    let block = 256.min(n);
    let mut out = vec![0f32; n * m];
    let mut scores = vec![0f32; block * n];
    let scale = 1.0 / (m as f32).sqrt();
    for start in (0..n).step_by(block) {
        let rows = block.min(n - start);
        unsafe {
            // scores = q_block * k^T
            matrixmultiply::sgemm(
                rows,
                m,
                n,
                scale,
                q.data()[start * m..].as_ptr(),
                m as isize,
                1,
                k.data().as_ptr(),
                1,
                m as isize,
                0.0,
                scores.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        for row in scores[..rows * n].chunks_exact_mut(n) {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0;
            for s in row.iter_mut() {
                *s = (*s - max).exp();
                sum += *s;
            }
            row.iter_mut().for_each(|s| *s /= sum);
        }
        unsafe {
            matrixmultiply::sgemm(
                rows,
                n,
                m,
                1.0,
                scores.as_ptr(),
                n as isize,
                1,
                v.data().as_ptr(),
                m as isize,
                1,
                0.0,
                out[start * m..].as_mut_ptr(),
                m as isize,
                1,
            );
        }
    }
    Tensor::from_vec(&[n, m], out)
}

/// Times [`attention_stub`] with the same harness.
pub fn bench_attention(
    maps: usize,
    lengths: &[usize],
    warmup: usize,
    reps: usize,
    seed: u64,
    mut on_row: impl FnMut(&BenchRow),
) -> Vec<BenchRow> {
    let mut rows = Vec::new();
    for &n in lengths {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = Tensor::<f32>::uniform(&[n, maps], -1.0, 1.0, &mut rng);
        let k = Tensor::<f32>::uniform(&[n, maps], -1.0, 1.0, &mut rng);
        let v = Tensor::<f32>::uniform(&[n, maps], -1.0, 1.0, &mut rng);
        let t = time_runs(warmup, reps, || {
            std::hint::black_box(attention_stub(&q, &k, &v));
        });
        let row = BenchRow { n, timing: Some(t) };
        on_row(&row);
        rows.push(row);
    }
    rows
}

/// Least-squares slope of `ln t` against `ln n` over `points`.
pub fn loglog_slope(points: &[(usize, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, t)| t.ln()).collect();
    let len = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / len;
    let my = ys.iter().sum::<f64>() / len;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Slope over the longer half of the measured rows (at least two).
pub fn fit_top_half(rows: &[BenchRow]) -> Option<f64> {
    let mut measured: Vec<(usize, f64)> = rows
        .iter()
        .filter_map(|r| r.timing.map(|t| (r.n, t.median_ms)))
        .collect();
    measured.sort_by_key(|(n, _)| *n);
    if measured.len() < 2 {
        return None;
    }
    let keep = (measured.len() / 2).max(2).min(measured.len());
    loglog_slope(&measured[measured.len() - keep..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(usize, f64)> = (4..10)
            .map(|k| (1usize << k, 3.0 * ((1usize << k) as f64).powf(1.5)))
            .collect();
        approx::assert_relative_eq!(loglog_slope(&pts).unwrap(), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn single_row_has_no_slope() {
        let rows = [BenchRow {
            n: 8,
            timing: Some(Timing {
                mean_ms: 1.0,
                median_ms: 1.0,
            }),
        }];
        assert_eq!(fit_top_half(&rows), None);
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(timing(&mut [3.0, 1.0, 2.0]).median_ms, 2.0);
        assert_eq!(timing(&mut [4.0, 1.0, 2.0, 3.0]).median_ms, 2.5);
    }

    #[test]
    fn attention_rows_are_convex_combinations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = Tensor::<f32>::uniform(&[300, 4], -1.0, 1.0, &mut rng);
        let k = q.clone();
        let v = Tensor::<f32>::full(&[300, 4], 2.0);
        let out = attention_stub(&q, &k, &v);
        assert!(out.data().iter().all(|&x| (x - 2.0).abs() < 1e-4));
    }

    #[test]
    fn oversized_lengths_marked_oom() {
        let mut cfg = BenchConfig::new(
            ModelConfig {
                maps: 4,
                ..Default::default()
            },
            vec![4, 8],
        );
        cfg.memory_budget = estimate_bytes::<f32>(&cfg.model, 4, 1, false);
        cfg.reps = 1;
        cfg.warmup = 0;
        let rows = bench_network::<f32>(&cfg, |_| {}).unwrap();
        assert!(rows[0].timing.is_some());
        assert!(rows[1].timing.is_none());
    }
}
