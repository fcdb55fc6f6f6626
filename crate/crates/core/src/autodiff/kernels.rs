//! Forward and backward kernels shared by the recording tape and the eager
//! executor. All shape checks live here and panic with both shapes named.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check_matrix<T: Scalar>(w: &Tensor<T>, what: &str) -> (usize, usize) {
    assert_eq!(w.shape().len(), 2, "{what} must be a matrix, got shape {:?}", w.shape());
    (w.shape()[0], w.shape()[1])
}

/// `out[.., j] = sum_i x[.., i] * w[i, j] + b[j]`.
pub fn affine<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (inner, out_cols) = check_matrix(w, "affine weight");
    assert_eq!(
        x.cols(),
        inner,
        "affine shape mismatch: input {:?} vs weight {:?}",
        x.shape(),
        w.shape()
    );
    assert_eq!(
        b.shape(),
        [out_cols],
        "affine bias shape {:?} does not match weight {:?}",
        b.shape(),
        w.shape()
    );
    let rows = x.rows();
    let mut data = Vec::with_capacity(rows * out_cols);
    for _ in 0..rows {
        data.extend_from_slice(b.data());
    }
    if rows > 0 && inner > 0 && out_cols > 0 {
        unsafe {
            T::gemm(
                rows,
                inner,
                out_cols,
                T::one(),
                x.data().as_ptr(),
                inner as isize,
                1,
                w.data().as_ptr(),
                out_cols as isize,
                1,
                T::one(),
                data.as_mut_ptr(),
                out_cols as isize,
                1,
            );
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = out_cols;
    Tensor::from_vec(&shape, data)
}

/// Accumulates the gradients of [`affine`] given the upstream gradient.
pub fn affine_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dout: &Tensor<T>,
    dx: Option<&mut Tensor<T>>,
    dw: Option<&mut Tensor<T>>,
    db: Option<&mut Tensor<T>>,
) {
    let (inner, out_cols) = (w.shape()[0], w.shape()[1]);
    let rows = x.rows();
    if rows == 0 || inner == 0 || out_cols == 0 {
        return;
    }
    if let Some(dx) = dx {
        // dx += dout * w^T
        unsafe {
            T::gemm(
                rows,
                out_cols,
                inner,
                T::one(),
                dout.data().as_ptr(),
                out_cols as isize,
                1,
                w.data().as_ptr(),
                1,
                out_cols as isize,
                T::one(),
                dx.data_mut().as_mut_ptr(),
                inner as isize,
                1,
            );
        }
    }
    if let Some(dw) = dw {
        // dw += x^T * dout
        unsafe {
            T::gemm(
                inner,
                rows,
                out_cols,
                T::one(),
                x.data().as_ptr(),
                1,
                inner as isize,
                dout.data().as_ptr(),
                out_cols as isize,
                1,
                T::one(),
                dw.data_mut().as_mut_ptr(),
                out_cols as isize,
                1,
            );
        }
    }
    if let Some(db) = db {
        let db = db.data_mut();
        for row in dout.data().chunks_exact(out_cols) {
            for (acc, &g) in db.iter_mut().zip(row) {
                *acc = *acc + g;
            }
        }
    }
}

pub fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

pub fn relu<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

/// Checks that `map` is a permutation of `0..map.len()`.
pub fn is_permutation(map: &[usize]) -> bool {
    let mut seen = vec![false; map.len()];
    for &i in map {
        if i >= map.len() || seen[i] {
            return false;
        }
        seen[i] = true;
    }
    true
}

pub fn invert_permutation(map: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; map.len()];
    for (i, &j) in map.iter().enumerate() {
        inv[j] = i;
    }
    inv
}

fn cell_dims<T: Scalar>(x: &Tensor<T>) -> (usize, usize, usize) {
    assert_eq!(
        x.shape().len(),
        3,
        "cell gather expects [batch, cells, features], got {:?}",
        x.shape()
    );
    (x.shape()[0], x.shape()[1], x.shape()[2])
}

/// `out[b, i, :] = x[b, map[i], :]`.
pub fn gather_cells<T: Scalar>(x: &Tensor<T>, map: &[usize]) -> Tensor<T> {
    let (batch, n, m) = cell_dims(x);
    assert_eq!(map.len(), n, "index map of length {} applied to {n} cells", map.len());
    let src = x.data();
    let mut out = Vec::with_capacity(x.len());
    for b in 0..batch {
        let base = b * n * m;
        for &j in map {
            out.extend_from_slice(&src[base + j * m..base + (j + 1) * m]);
        }
    }
    Tensor::from_vec(x.shape(), out)
}

/// Adjoint of [`gather_cells`]: `dx[b, map[i], :] += dout[b, i, :]`.
pub fn scatter_cells_add<T: Scalar>(dout: &Tensor<T>, map: &[usize], dx: &mut Tensor<T>) {
    let (batch, n, m) = cell_dims(dout);
    let src = dout.data();
    let dst = dx.data_mut();
    for b in 0..batch {
        let base = b * n * m;
        for (i, &j) in map.iter().enumerate() {
            let from = &src[base + i * m..base + (i + 1) * m];
            let to = &mut dst[base + j * m..base + (j + 1) * m];
            for (t, &f) in to.iter_mut().zip(from) {
                *t = *t + f;
            }
        }
    }
}

pub fn concat_features<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    assert_eq!(
        a.rows(),
        b.rows(),
        "concat batch mismatch: {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
    assert_eq!(
        a.shape()[..a.shape().len() - 1],
        b.shape()[..b.shape().len() - 1],
        "concat leading-axis mismatch: {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
    let (p, q) = (a.cols(), b.cols());
    let mut out = Vec::with_capacity(a.len() + b.len());
    for r in 0..a.rows() {
        out.extend_from_slice(&a.data()[r * p..(r + 1) * p]);
        out.extend_from_slice(&b.data()[r * q..(r + 1) * q]);
    }
    let mut shape = a.shape().to_vec();
    *shape.last_mut().unwrap() = p + q;
    Tensor::from_vec(&shape, out)
}

/// Feature columns `start..start + width` of every row.
pub fn slice_features<T: Scalar>(x: &Tensor<T>, start: usize, width: usize) -> Tensor<T> {
    let cols = x.cols();
    assert!(
        start + width <= cols,
        "feature slice {start}..{} out of range for shape {:?}",
        start + width,
        x.shape()
    );
    let mut out = Vec::with_capacity(x.rows() * width);
    for row in x.data().chunks_exact(cols.max(1)) {
        out.extend_from_slice(&row[start..start + width]);
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = width;
    Tensor::from_vec(&shape, out)
}

pub fn embed<T: Scalar>(table: &Tensor<T>, tokens: &[usize]) -> Tensor<T> {
    let (vocab, m) = check_matrix(table, "embedding table");
    let mut out = Vec::with_capacity(tokens.len() * m);
    for &t in tokens {
        assert!(t < vocab, "token id {t} out of range for vocabulary of {vocab}");
        out.extend_from_slice(&table.data()[t * m..(t + 1) * m]);
    }
    Tensor::from_vec(&[tokens.len(), m], out)
}

/// Row-wise softmax cross-entropy, averaged over the rows selected by `mask`
/// (all rows when `None`). Returns the mean loss and the softmax
/// probabilities (kept for the backward pass).
pub fn softmax_xent<T: Scalar>(logits: &Tensor<T>, targets: &[usize], mask: Option<&[bool]>) -> (T, Tensor<T>) {
    let classes = logits.cols();
    let rows = logits.rows();
    assert_eq!(
        targets.len(),
        rows,
        "{} targets for logits of shape {:?}",
        targets.len(),
        logits.shape()
    );
    if let Some(mask) = mask {
        assert_eq!(mask.len(), rows, "mask of {} rows for {rows} logit rows", mask.len());
    }
    let mut probs = Vec::with_capacity(logits.len());
    let mut total = 0.0f64;
    let mut counted = 0usize;
    for (r, (row, &t)) in logits.data().chunks_exact(classes).zip(targets).enumerate() {
        assert!(t < classes, "target {t} out of range for {classes} classes");
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for &v in row {
            let e = (v - max).exp();
            probs.push(e);
            denom = denom + e;
        }
        let start = probs.len() - classes;
        for p in &mut probs[start..] {
            *p = *p / denom;
        }
        if mask.is_none_or(|m| m[r]) {
            total += (max + denom.ln() - row[t]).as_f64();
            counted += 1;
        }
    }
    let mean = if counted == 0 { 0.0 } else { total / counted as f64 };
    (T::from_f64(mean), Tensor::from_vec(logits.shape(), probs))
}

/// Index of the largest entry of each row (first on ties).
pub fn argmax_rows<T: Scalar>(x: &Tensor<T>) -> Vec<usize> {
    let cols = x.cols();
    x.data()
        .chunks_exact(cols)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
