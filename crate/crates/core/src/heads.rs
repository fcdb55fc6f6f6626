//! Input embedding, padding to a power of two, and the two output heads:
//! per-symbol classification and position selection.

use rand::Rng;

use crate::autodiff::kernels::argmax_rows;
use crate::autodiff::{Exec, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::model::Dense;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Token id reserved for padding.
pub const PAD: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    /// Sequence starts at offset 0.
    FixedStart,
    /// Offset drawn uniformly from every position the sequence fits at.
    RandomPosition,
}

/// Places `tokens` inside a zero sequence of length `target_len` and
/// returns the padded tokens with the chosen offset.
pub fn pad_to_pow2<R: Rng + ?Sized>(
    tokens: &[usize],
    mode: PadMode,
    target_len: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, usize)> {
    if !target_len.is_power_of_two() {
        return Err(Error::config(
            "length",
            format!("padded length {target_len} is not a power of two"),
        ));
    }
    if tokens.len() > target_len {
        return Err(Error::TooLong {
            len: tokens.len(),
            target: target_len,
        });
    }
    let offset = match mode {
        PadMode::FixedStart => 0,
        PadMode::RandomPosition => rng.gen_range(0..=target_len - tokens.len()),
    };
    let mut out = vec![PAD; target_len];
    out[offset..offset + tokens.len()].copy_from_slice(tokens);
    Ok((out, offset))
}

/// Learned `[vocab, m]` lookup table.
#[derive(Debug, Clone, Copy)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub maps: usize,
}

impl Embedding {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, vocab: usize, maps: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (vocab + maps) as f64).sqrt();
        let table = store.add("embedding", Tensor::uniform(&[vocab, maps], -limit, limit, rng));
        Embedding { table, vocab, maps }
    }

    /// Embeds `batch` sequences of `len` tokens each into `[batch, len, m]`.
    pub fn embed<T: Scalar, E: Exec<T>>(
        &self,
        exec: &mut E,
        store: &ParamStore<T>,
        tokens: &[usize],
        batch: usize,
    ) -> E::Var {
        assert!(
            batch > 0 && tokens.len().is_multiple_of(batch),
            "{} tokens cannot form {batch} equal sequences",
            tokens.len()
        );
        let table = exec.param(store, self.table);
        let rows = exec.embed(&table, tokens);
        exec.reshape(&rows, &[batch, tokens.len() / batch, self.maps])
    }
}

/// Position-shared linear map from cell state to class logits.
#[derive(Debug, Clone, Copy)]
pub struct SymbolHead {
    pub dense: Dense,
    pub classes: usize,
}

impl SymbolHead {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        maps: usize,
        classes: usize,
        rng: &mut R,
    ) -> Self {
        SymbolHead {
            dense: Dense::init(store, "head/symbol", maps, classes, rng),
            classes,
        }
    }

    /// `[batch, n, m] -> [batch, n, classes]`.
    pub fn logits<T: Scalar, E: Exec<T>>(&self, exec: &mut E, store: &ParamStore<T>, state: &E::Var) -> E::Var {
        self.dense.apply(exec, store, state)
    }
}

/// Mean softmax cross-entropy over every position (padding included).
pub fn symbol_loss<T: Scalar, E: Exec<T>>(exec: &mut E, logits: &E::Var, targets: &[usize]) -> E::Var {
    exec.softmax_xent(logits, targets)
}

/// Number of positions whose arg-max class equals the target.
pub fn count_correct<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> usize {
    argmax_rows(logits)
        .into_iter()
        .zip(targets)
        .filter(|(p, t)| p == *t)
        .count()
}

/// Fraction of positions predicted correctly.
pub fn symbol_accuracy<T: Scalar>(logits: &Tensor<T>, targets: &[usize]) -> f64 {
    if targets.is_empty() {
        return 0.0;
    }
    count_correct(logits, targets) as f64 / targets.len() as f64
}

/// Maps each cell to one scalar; a softmax over positions selects the answer.
#[derive(Debug, Clone, Copy)]
pub struct PositionHead {
    pub weight: ParamId,
}

impl PositionHead {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, maps: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (maps + 1) as f64).sqrt();
        PositionHead {
            weight: store.add("head/position.w", Tensor::uniform(&[maps, 1], -limit, limit, rng)),
        }
    }

    /// `[batch, n, m] -> [batch, n]`.
    pub fn logits<T: Scalar, E: Exec<T>>(&self, exec: &mut E, store: &ParamStore<T>, state: &E::Var) -> E::Var {
        let shape = exec.value(state).shape().to_vec();
        let w = exec.param(store, self.weight);
        let zero = exec.input(Tensor::zeros(&[1]));
        let scores = exec.affine(state, &w, &zero);
        exec.reshape(&scores, &shape[..2])
    }
}

/// `-log softmax(logits[b])[target[b]]`, averaged over the batch.
pub fn position_loss<T: Scalar, E: Exec<T>>(exec: &mut E, logits: &E::Var, targets: &[usize]) -> E::Var {
    let n = exec.value(logits).cols();
    for &t in targets {
        assert!(t < n, "target position {t} out of range for {n} positions");
    }
    exec.softmax_xent(logits, targets)
}
