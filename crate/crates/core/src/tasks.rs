//! Seeded generators for the algorithmic tasks and the synthetic
//! position-selection task, plus the length curriculum.
//!
//! Token encodings: `0` is padding everywhere. Symbol tasks use `1..=12`.
//! Binary arithmetic writes numbers least-significant digit first with
//! `1 = '0'`, `2 = '1'`, `3 = '+'` and `4 = '×'`. The selection task appends
//! a separator `13` and the query symbol to the context.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::heads::{pad_to_pow2, PadMode, PAD};

pub const SYMBOLS: usize = 12;
pub const DIGIT_ZERO: usize = 1;
pub const DIGIT_ONE: usize = 2;
pub const PLUS: usize = 3;
pub const TIMES: usize = 4;
pub const SELECT_SEP: usize = SYMBOLS + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    /// Output the input twice.
    Dup,
    /// Output the input unchanged.
    Copy,
    Rev,
    Sort,
    Add,
    Mul,
    Select,
}

impl TaskKind {
    pub const ALL: [TaskKind; 7] = [
        TaskKind::Dup,
        TaskKind::Copy,
        TaskKind::Rev,
        TaskKind::Sort,
        TaskKind::Add,
        TaskKind::Mul,
        TaskKind::Select,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Dup => "dup",
            TaskKind::Copy => "copy",
            TaskKind::Rev => "rev",
            TaskKind::Sort => "sort",
            TaskKind::Add => "add",
            TaskKind::Mul => "mul",
            TaskKind::Select => "select",
        }
    }

    /// Input vocabulary, padding included.
    pub fn vocab_size(self) -> usize {
        match self {
            TaskKind::Dup | TaskKind::Copy | TaskKind::Rev | TaskKind::Sort => SYMBOLS + 1,
            TaskKind::Add => PLUS + 1,
            TaskKind::Mul => TIMES + 1,
            TaskKind::Select => SELECT_SEP + 1,
        }
    }

    pub fn is_selection(self) -> bool {
        self == TaskKind::Select
    }

    /// Shortest raw length the generator accepts.
    pub fn min_len(self) -> usize {
        match self {
            TaskKind::Dup => 2,
            TaskKind::Copy | TaskKind::Rev | TaskKind::Sort => 1,
            TaskKind::Add | TaskKind::Mul | TaskKind::Select => 3,
        }
    }

    pub fn pad_mode(self) -> PadMode {
        if self.is_selection() {
            PadMode::RandomPosition
        } else {
            PadMode::FixedStart
        }
    }

    /// Draws a sample whose encoded length is at most `len`.
    pub fn generate<R: Rng + ?Sized>(self, len: usize, rng: &mut R) -> RawSample {
        let len = len.max(self.min_len());
        match self {
            TaskKind::Dup => gen_duplication(len / 2, rng),
            TaskKind::Copy => gen_copy(len, rng),
            TaskKind::Rev => gen_reversal(len, rng),
            TaskKind::Sort => gen_sort(len, rng),
            TaskKind::Add => gen_binary_add(len, rng),
            TaskKind::Mul => gen_binary_mul(len, rng),
            TaskKind::Select => gen_selection(len, rng),
        }
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::config("task", format!("unknown task `{s}`")))
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Tokens(Vec<usize>),
    Position(usize),
}

/// Unpadded sample as produced by a generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSample {
    pub input: Vec<usize>,
    pub target: Target,
}

impl RawSample {
    /// Cells needed to hold both input and target.
    pub fn encoded_len(&self) -> usize {
        match &self.target {
            Target::Tokens(t) => self.input.len().max(t.len()),
            Target::Position(_) => self.input.len(),
        }
    }
}

/// A sample padded to a power-of-two length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSample {
    pub input: Vec<usize>,
    /// Same length as `input` for token targets; a cell index for selection.
    pub target: Target,
    pub raw_length: usize,
    pub offset: usize,
}

impl TaskSample {
    pub fn padded_len(&self) -> usize {
        self.input.len()
    }

    /// Per-position target tokens, or `None` for selection samples.
    pub fn target_tokens(&self) -> Option<&[usize]> {
        match &self.target {
            Target::Tokens(t) => Some(t),
            Target::Position(_) => None,
        }
    }

    pub fn target_position(&self) -> Option<usize> {
        match self.target {
            Target::Position(p) => Some(p),
            Target::Tokens(_) => None,
        }
    }
}

/// Pads `raw` to `padded_len`; token targets share the input's offset.
pub fn encode<R: Rng + ?Sized>(raw: &RawSample, padded_len: usize, mode: PadMode, rng: &mut R) -> Result<TaskSample> {
    let encoded = raw.encoded_len();
    if encoded > padded_len {
        return Err(Error::TooLong {
            len: encoded,
            target: padded_len,
        });
    }
    let (input, offset) = match mode {
        PadMode::FixedStart => pad_to_pow2(&raw.input, mode, padded_len, rng)?,
        PadMode::RandomPosition => {
            // Leave room for a longer token target at the same offset.
            let span = encoded;
            let offset = rng.gen_range(0..=padded_len - span);
            let mut out = vec![PAD; padded_len];
            out[offset..offset + raw.input.len()].copy_from_slice(&raw.input);
            (out, offset)
        }
    };
    let target = match &raw.target {
        Target::Tokens(t) => {
            let mut out = vec![PAD; padded_len];
            out[offset..offset + t.len()].copy_from_slice(t);
            Target::Tokens(out)
        }
        Target::Position(p) => Target::Position(p + offset),
    };
    Ok(TaskSample {
        input,
        target,
        raw_length: raw.input.len(),
        offset,
    })
}

fn random_symbols<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<usize> {
    (0..len).map(|_| rng.gen_range(1..=SYMBOLS)).collect()
}

/// The input written twice.
pub fn duplication_sample(symbols: &[usize]) -> RawSample {
    let mut target = symbols.to_vec();
    target.extend_from_slice(symbols);
    RawSample {
        input: symbols.to_vec(),
        target: Target::Tokens(target),
    }
}

pub fn gen_duplication<R: Rng + ?Sized>(half_len: usize, rng: &mut R) -> RawSample {
    duplication_sample(&random_symbols(half_len.max(1), rng))
}

pub fn gen_copy<R: Rng + ?Sized>(len: usize, rng: &mut R) -> RawSample {
    let input = random_symbols(len.max(1), rng);
    RawSample {
        target: Target::Tokens(input.clone()),
        input,
    }
}

pub fn reversal_sample(symbols: &[usize]) -> RawSample {
    RawSample {
        input: symbols.to_vec(),
        target: Target::Tokens(symbols.iter().rev().copied().collect()),
    }
}

pub fn gen_reversal<R: Rng + ?Sized>(len: usize, rng: &mut R) -> RawSample {
    reversal_sample(&random_symbols(len.max(1), rng))
}

pub fn sort_sample(symbols: &[usize]) -> RawSample {
    let mut sorted = symbols.to_vec();
    sorted.sort_unstable();
    RawSample {
        input: symbols.to_vec(),
        target: Target::Tokens(sorted),
    }
}

pub fn gen_sort<R: Rng + ?Sized>(len: usize, rng: &mut R) -> RawSample {
    sort_sample(&random_symbols(len.max(1), rng))
}

/// Little-endian binary digits, `0` or `1`.
pub type Bits = Vec<u8>;

/// Drops high-order zero digits, keeping at least one digit.
pub fn normalize(mut bits: Bits) -> Bits {
    while bits.len() > 1 && *bits.last().unwrap() == 0 {
        bits.pop();
    }
    if bits.is_empty() {
        bits.push(0);
    }
    bits
}

pub fn bits_of(mut value: u128) -> Bits {
    let mut bits = Vec::new();
    loop {
        bits.push((value & 1) as u8);
        value >>= 1;
        if value == 0 {
            return bits;
        }
    }
}

pub fn add_bits(a: &[u8], b: &[u8]) -> Bits {
    let mut out = Vec::with_capacity(a.len().max(b.len()) + 1);
    let mut carry = 0u8;
    for i in 0..a.len().max(b.len()) {
        let s = a.get(i).copied().unwrap_or(0) + b.get(i).copied().unwrap_or(0) + carry;
        out.push(s & 1);
        carry = s >> 1;
    }
    out.push(carry);
    normalize(out)
}

pub fn mul_bits(a: &[u8], b: &[u8]) -> Bits {
    let mut acc = vec![0u32; a.len() + b.len() + 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            acc[i + j] += y as u32;
        }
    }
    let mut out = Vec::with_capacity(acc.len());
    let mut carry = 0u32;
    for v in acc {
        let s = v + carry;
        out.push((s & 1) as u8);
        carry = s >> 1;
    }
    while carry > 0 {
        out.push((carry & 1) as u8);
        carry >>= 1;
    }
    normalize(out)
}

fn digit_tokens(bits: &[u8]) -> Vec<usize> {
    bits.iter()
        .map(|&b| if b == 0 { DIGIT_ZERO } else { DIGIT_ONE })
        .collect()
}

fn arithmetic_sample(a: &[u8], b: &[u8], op: usize, result: &[u8]) -> RawSample {
    let mut input = digit_tokens(a);
    input.push(op);
    input.extend(digit_tokens(b));
    RawSample {
        input,
        target: Target::Tokens(digit_tokens(result)),
    }
}

pub fn addition_sample(a: &[u8], b: &[u8]) -> RawSample {
    arithmetic_sample(a, b, PLUS, &add_bits(a, b))
}

pub fn multiplication_sample(a: &[u8], b: &[u8]) -> RawSample {
    arithmetic_sample(a, b, TIMES, &mul_bits(a, b))
}

/// A number of exactly `digits` binary digits (no leading zeros unless it
/// is the single digit `0`).
fn random_operand<R: Rng + ?Sized>(digits: usize, rng: &mut R) -> Bits {
    let mut bits: Bits = (0..digits).map(|_| rng.gen_range(0..=1)).collect();
    if digits > 1 {
        *bits.last_mut().unwrap() = 1;
    }
    bits
}

fn operand_pair<R: Rng + ?Sized>(total_len: usize, rng: &mut R) -> (Bits, Bits) {
    let max_digits = ((total_len.max(3)) - 1) / 2;
    let la = rng.gen_range(1..=max_digits);
    let lb = rng.gen_range(1..=max_digits);
    (random_operand(la, rng), random_operand(lb, rng))
}

pub fn gen_binary_add<R: Rng + ?Sized>(total_len: usize, rng: &mut R) -> RawSample {
    let (a, b) = operand_pair(total_len, rng);
    addition_sample(&a, &b)
}

pub fn gen_binary_mul<R: Rng + ?Sized>(total_len: usize, rng: &mut R) -> RawSample {
    let (a, b) = operand_pair(total_len, rng);
    multiplication_sample(&a, &b)
}

/// Context followed by the separator and `query`; the target is the
/// query's single occurrence in the context.
pub fn selection_sample(context: &[usize], query: usize) -> Result<RawSample> {
    let hits: Vec<usize> = context
        .iter()
        .enumerate()
        .filter(|(_, &s)| s == query)
        .map(|(i, _)| i)
        .collect();
    if hits.len() != 1 {
        return Err(Error::config(
            "query",
            format!("symbol {query} occurs {} times in the context", hits.len()),
        ));
    }
    let mut input = context.to_vec();
    input.push(SELECT_SEP);
    input.push(query);
    Ok(RawSample {
        input,
        target: Target::Position(hits[0]),
    })
}

pub fn gen_selection<R: Rng + ?Sized>(len: usize, rng: &mut R) -> RawSample {
    let context_len = len.max(3) - 2;
    let query = rng.gen_range(1..=SYMBOLS);
    let at = rng.gen_range(0..context_len);
    let others: Vec<usize> = (1..=SYMBOLS).filter(|&s| s != query).collect();
    let context: Vec<usize> = (0..context_len)
        .map(|i| if i == at { query } else { *others.choose(rng).unwrap() })
        .collect();
    selection_sample(&context, query).expect("query placed exactly once")
}

/// Smallest power of two `>= n`, and at least 2.
pub fn padded_length(n: usize) -> usize {
    n.max(2).next_power_of_two()
}

/// Widens the sampled raw length from `min_len` to `max_len` linearly over
/// the first `window` steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Curriculum {
    pub task: TaskKind,
    pub min_len: usize,
    pub max_len: usize,
    pub window: u64,
}

impl Curriculum {
    /// Window of `ceil(total_steps / 3)` steps.
    pub fn new(task: TaskKind, min_len: usize, max_len: usize, total_steps: u64) -> Self {
        Curriculum {
            task,
            min_len,
            max_len,
            window: total_steps.div_ceil(3).max(1),
        }
    }

    /// Upper end of the raw-length range at `step`. A zero window samples
    /// the full range from the start.
    pub fn current_max(&self, step: u64) -> usize {
        if self.window == 0 {
            return self.max_len;
        }
        let span = (self.max_len - self.min_len) as u128;
        let progress = (step.min(self.window)) as u128;
        self.min_len + (span * progress / self.window as u128) as usize
    }

    /// Raw length budget and the instance length it is trained on.
    pub fn next<R: Rng + ?Sized>(&self, step: u64, rng: &mut R) -> (usize, usize) {
        let raw = rng.gen_range(self.min_len..=self.current_max(step));
        (raw, self.instance_len(raw))
    }

    /// Instance length for a raw budget: the smallest power of two the
    /// encoded sample fits, or the full length for randomly placed tasks.
    pub fn instance_len(&self, raw: usize) -> usize {
        if self.task.pad_mode() == PadMode::RandomPosition {
            padded_length(self.max_len)
        } else {
            padded_length(encoded_budget(self.task, raw))
        }
    }
}

/// Longest encoding a generator may produce for raw budget `len`.
pub fn encoded_budget(task: TaskKind, len: usize) -> usize {
    let len = len.max(task.min_len());
    match task {
        TaskKind::Dup => 2 * (len / 2),
        _ => len,
    }
}

/// One line per sample: `input=<ids> target=<ids>` or
/// `input=<ids> target_position=<index>`.
pub fn dump_sample(sample: &TaskSample) -> String {
    let join = |v: &[usize]| v.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ");
    match &sample.target {
        Target::Tokens(t) => format!("input={} target={}", join(&sample.input), join(t)),
        Target::Position(p) => format!("input={} target_position={p}", join(&sample.input)),
    }
}

/// Parses a line written by [`dump_sample`].
pub fn parse_sample_line(line: &str) -> Result<(Vec<usize>, Target)> {
    let bad = |why: &str| Error::config("sample", format!("{why}: `{line}`"));
    let (input_part, target_part) = line.split_once(" target").ok_or_else(|| bad("missing target field"))?;
    let ids = |s: &str| -> Result<Vec<usize>> {
        s.split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| bad("bad token id")))
            .collect()
    };
    let input = ids(input_part.strip_prefix("input=").ok_or_else(|| bad("missing input"))?)?;
    let target = if let Some(rest) = target_part.strip_prefix("_position=") {
        Target::Position(rest.trim().parse().map_err(|_| bad("bad position"))?)
    } else if let Some(rest) = target_part.strip_prefix('=') {
        Target::Tokens(ids(rest)?)
    } else {
        return Err(bad("unknown target field"));
    };
    Ok((input, target))
}
