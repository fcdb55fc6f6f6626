//! Subcommand bodies. Each returns the process exit code.

use std::fs;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sxnet_core::bench::{bench_attention, bench_network, fit_top_half, table_header, BenchConfig, BenchRow};
use sxnet_core::checkpoint::{peek_dtype, Checkpoint};
use sxnet_core::gradcheck::{self, run_suite, SuiteOptions};
use sxnet_core::parallel;
use sxnet_core::router::{route_permutation, simulate_routing};
use sxnet_core::trainer::{eval_samples, evaluate, load_network, train_with, MetricsRecord};
use sxnet_core::{DType, Error, Scalar};

use crate::config::RunConfig;
use crate::{CliError, CliResult};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

/// Prints the resolved configuration, one `config key = value` line each.
pub fn log_config(config: &RunConfig) {
    for line in config.to_string().lines() {
        eprintln!("config {line}");
    }
}

pub fn train(config: &RunConfig) -> CliResult<i32> {
    let train = config.train_config()?;
    fs::create_dir_all(&config.out).map_err(Error::from)?;
    fs::write(config.out.join("config.txt"), config.to_string()).map_err(Error::from)?;
    parallel::set_threads(config.threads);
    match config.dtype {
        DType::F32 => train_typed::<f32>(config, &train),
        DType::F64 => train_typed::<f64>(config, &train),
    }
}

fn train_typed<T: Scalar>(config: &RunConfig, train: &sxnet_core::trainer::TrainConfig) -> CliResult<i32> {
    let resume = if config.resume {
        let path = config.checkpoint_path();
        let dtype = peek_dtype(&path).map_err(|e| CliError::Invalid(format!("cannot resume: {e}")))?;
        if dtype != T::DTYPE {
            return Err(CliError::Invalid(format!(
                "checkpoint {} holds {dtype} tensors, run is configured for {}",
                path.display(),
                T::DTYPE
            )));
        }
        Some(Checkpoint::<T>::load(&path)?)
    } else {
        None
    };
    let mut print = |r: &MetricsRecord| println!("{r}");
    let outcome = train_with::<T>(train, resume, &mut print)?;
    eprintln!(
        "trained {} steps{}; checkpoint {}",
        outcome.checkpoint.step,
        if outcome.stopped_early { " (stopped early)" } else { "" },
        config.checkpoint_path().display()
    );
    Ok(EXIT_OK)
}

pub fn eval(config: &RunConfig) -> CliResult<i32> {
    let path = config.checkpoint_path();
    if !path.exists() {
        return Err(CliError::Invalid(format!(
            "checkpoint {} does not exist",
            path.display()
        )));
    }
    let dtype = peek_dtype(&path).map_err(|e| CliError::Invalid(e.to_string()))?;
    if config.is_explicit("dtype") && dtype != config.dtype {
        return Err(CliError::Invalid(format!(
            "checkpoint holds {dtype} tensors but dtype = {} was requested",
            config.dtype
        )));
    }
    parallel::set_threads(config.threads);
    match dtype {
        DType::F32 => eval_typed::<f32>(config),
        DType::F64 => eval_typed::<f64>(config),
    }
}

/// Errors if an explicitly configured model or task setting disagrees with
/// the checkpoint.
fn check_matches<T: Scalar>(config: &RunConfig, ckpt: &Checkpoint<T>) -> CliResult<()> {
    let mut mismatches = Vec::new();
    let mut check = |key: &str, wanted: String, found: String| {
        if config.is_explicit(key) && wanted != found {
            mismatches.push(format!("{key}: configured {wanted}, checkpoint has {found}"));
        }
    };
    let (m, c) = (&config.model, &ckpt.model);
    check(
        "task",
        config.task.map_or(String::new(), |t| t.to_string()),
        ckpt.task.to_string(),
    );
    check("maps", m.maps.to_string(), c.maps.to_string());
    check("blocks", m.blocks.to_string(), c.blocks.to_string());
    check("variant", m.variant.to_string(), c.variant.to_string());
    check("sharing", m.sharing.to_string(), c.sharing.to_string());
    check("residual", m.residual.to_string(), c.residual.to_string());
    check("benes", m.benes.to_string(), c.benes.to_string());
    if mismatches.is_empty() {
        Ok(())
    } else {
        Err(CliError::Invalid(format!(
            "checkpoint mismatch: {}",
            mismatches.join("; ")
        )))
    }
}

fn eval_typed<T: Scalar>(config: &RunConfig) -> CliResult<i32> {
    let ckpt = Checkpoint::<T>::load(&config.checkpoint_path())?;
    check_matches(config, &ckpt)?;
    let (network, store) = load_network(&ckpt)?;
    let trained = ckpt.instance_length;
    let lengths = config
        .lengths
        .clone()
        .unwrap_or_else(|| vec![trained, 2 * trained, 4 * trained, 8 * trained]);
    let min_len = ckpt
        .settings
        .get("min_len")
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| ckpt.task.min_len());
    if config.eval_samples == 0 {
        return Err(CliError::Invalid("eval_samples must be positive".into()));
    }

    let mut rows = Vec::new();
    for &len in &lengths {
        if sxnet_core::model::log2_exact(len).is_none_or(|k| k == 0) {
            return Err(CliError::Invalid(format!(
                "length {len} is not a power of two of at least 2"
            )));
        }
        if ckpt.task.is_selection() && len < min_len {
            return Err(CliError::Invalid(format!(
                "length {len} is shorter than min_len {min_len}"
            )));
        }
        let samples = eval_samples(ckpt.task, len, config.eval_samples, min_len, config.seed);
        let stats = evaluate(&network, &store, &samples, config.chunks)?;
        rows.push((len, stats));
    }

    println!(
        "{:>8} {:>8} {:>10} {:>12} {:>8}",
        "length", "x_train", "accuracy", "sequence_acc", "samples"
    );
    for (len, s) in &rows {
        println!(
            "{:>8} {:>8} {:>10.6} {:>12.6} {:>8}",
            len,
            format_ratio(*len, trained),
            s.accuracy(),
            s.sequence_accuracy(),
            s.sequences
        );
    }
    for (len, s) in &rows {
        println!(
            "eval task={} trained_length={} length={} accuracy={:.6} sequence_accuracy={:.6} samples={}",
            ckpt.task,
            trained,
            len,
            s.accuracy(),
            s.sequence_accuracy(),
            s.sequences
        );
    }
    Ok(EXIT_OK)
}

fn format_ratio(len: usize, trained: usize) -> String {
    if len.is_multiple_of(trained) {
        (len / trained).to_string()
    } else {
        format!("{:.3}", len as f64 / trained as f64)
    }
}

pub fn bench(config: &RunConfig) -> CliResult<i32> {
    // Single-threaded unless asked otherwise, for stable scaling numbers.
    parallel::set_threads(if config.is_explicit("threads") {
        config.threads
    } else {
        1
    });
    let lengths = config
        .lengths
        .clone()
        .unwrap_or_else(|| (10..=16).map(|k| 1usize << k).collect());
    let mut bench = BenchConfig::new(config.model.clone(), lengths.clone());
    bench.warmup = config.warmup;
    bench.reps = config.reps;
    bench.backward = config.backward;
    bench.memory_budget = config.memory_budget_mb << 20;
    bench.seed = config.seed;
    bench.batch = 1;

    println!(
        "# shuffle-exchange maps={} blocks={} variant={} dtype={} pass={}",
        config.model.maps,
        config.model.blocks,
        config.model.variant,
        config.dtype,
        if config.backward { "forward+backward" } else { "forward" }
    );
    println!("{}", table_header());
    let print_row = |r: &BenchRow| {
        println!("{r}");
        let _ = std::io::stdout().flush();
    };
    let rows = match config.dtype {
        DType::F32 => bench_network::<f32>(&bench, print_row)?,
        DType::F64 => bench_network::<f64>(&bench, print_row)?,
    };
    print_slope("shuffle_exchange", fit_top_half(&rows));

    if config.attention {
        let lengths = config.attention_lengths.clone().unwrap_or(lengths);
        println!("# attention maps={}", config.model.maps);
        println!("{}", table_header());
        let rows = bench_attention(
            config.model.maps,
            &lengths,
            config.warmup,
            config.reps,
            config.seed,
            print_row,
        );
        print_slope("attention", fit_top_half(&rows));
    }
    Ok(EXIT_OK)
}

fn print_slope(name: &str, slope: Option<f64>) {
    match slope {
        Some(s) => println!("slope {name}={s:.4}"),
        None => println!("slope {name}=none"),
    }
}

pub fn gradcheck(config: &RunConfig, list: bool) -> CliResult<i32> {
    if list {
        for name in gradcheck::component_names() {
            println!("{name}");
        }
        return Ok(EXIT_OK);
    }
    let options = SuiteOptions {
        h: config.h,
        tolerance: None,
        seed: config.seed,
        corrupt: config.corrupt.clone(),
    };
    let tolerance = gradcheck::tolerance_for(config.dtype);
    if config.dtype == DType::F32 {
        eprintln!(
            "warning: f32 gradient checks use a relaxed tolerance of {tolerance:e}; use --dtype f64 for the strict check"
        );
    }
    println!("{}", gradcheck::table_header());
    let print = |r: &gradcheck::ComponentResult| println!("{r}");
    let results = match config.dtype {
        DType::F32 => run_suite::<f32>(&options, print),
        DType::F64 => run_suite::<f64>(&options, print),
    }
    .map_err(|e| match e {
        Error::Config { .. } => CliError::Invalid(e.to_string()),
        other => CliError::Failed(other.to_string()),
    })?;
    let failed: Vec<_> = results.iter().filter(|r| !r.passed()).collect();
    if failed.is_empty() {
        println!("gradcheck passed: {} components below {tolerance:e}", results.len());
        return Ok(EXIT_OK);
    }
    for r in &failed {
        let (name, index) = r.report.worst.clone().unwrap_or_default();
        eprintln!(
            "gradcheck FAILED {}: parameter {name}[{index}] relative error {:e}",
            r.component, r.report.max_rel_error
        );
    }
    Ok(EXIT_FAILED)
}

fn parse_perm(text: &str) -> CliResult<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::Invalid(format!("not a permutation: `{s}` is not an index")))
        })
        .collect()
}

pub fn route(config: &RunConfig, perm: Option<&str>, random: Option<&[String]>) -> CliResult<i32> {
    match (perm, random) {
        (Some(text), _) => {
            let p = parse_perm(text)?;
            let setting = route_permutation(&p)?;
            println!("{setting}");
            let out = simulate_routing(&setting)?;
            if out == p {
                println!("verified: {} wires, {} stages", p.len(), setting.stage_count());
                Ok(EXIT_OK)
            } else {
                eprintln!("verification FAILED: settings realise {out:?}");
                Ok(EXIT_FAILED)
            }
        }
        (None, Some([k, n])) => {
            let k: u32 = k
                .parse()
                .ok()
                .filter(|k| (1..=20).contains(k))
                .ok_or_else(|| CliError::Invalid(format!("--random K must be in 1..=20, got `{k}`")))?;
            let n: usize = n
                .parse()
                .map_err(|_| CliError::Invalid(format!("--random N must be a count, got `{n}`")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let mut verified = 0;
            for _ in 0..n {
                let mut p: Vec<usize> = (0..1usize << k).collect();
                p.shuffle(&mut rng);
                let setting = route_permutation(&p)?;
                if simulate_routing(&setting)? == p {
                    verified += 1;
                }
            }
            println!("verified {verified}/{n} random permutations on {} wires", 1usize << k);
            Ok(if verified == n { EXIT_OK } else { EXIT_FAILED })
        }
        _ => Err(CliError::Invalid("route needs --perm P or --random K N".into())),
    }
}
