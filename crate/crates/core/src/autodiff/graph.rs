use std::rc::Rc;
use std::sync::Arc;

use super::kernels::{self, sigmoid};
use super::param::{GradBuffer, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// The primitive operations every model is written in.
///
/// Implemented by [`Tape`], which records each op for reverse-mode
/// differentiation, and by [`Eager`], which computes values only and frees
/// intermediates as soon as they go out of scope.
pub trait Exec<T: Scalar> {
    type Var: Clone;

    fn input(&mut self, t: Tensor<T>) -> Self::Var;
    fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Self::Var;
    fn value<'a>(&'a self, v: &'a Self::Var) -> &'a Tensor<T>;

    fn affine(&mut self, x: &Self::Var, w: &Self::Var, b: &Self::Var) -> Self::Var;
    fn sigmoid(&mut self, x: &Self::Var) -> Self::Var;
    fn tanh(&mut self, x: &Self::Var) -> Self::Var;
    fn relu(&mut self, x: &Self::Var) -> Self::Var;
    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var;
    fn sub(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var;
    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var;
    /// `scale * x + shift`, elementwise with constants.
    fn scale_shift(&mut self, x: &Self::Var, scale: T, shift: T) -> Self::Var;
    /// Multiplies every element of `x` by the single value held in `s`.
    fn scale_by(&mut self, x: &Self::Var, s: &Self::Var) -> Self::Var;
    fn concat_features(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var;
    fn slice_features(&mut self, x: &Self::Var, start: usize, width: usize) -> Self::Var;
    /// Permutes cells of a `[batch, cells, features]` tensor.
    fn gather_cells(&mut self, x: &Self::Var, map: &Arc<[usize]>) -> Self::Var;
    fn reshape(&mut self, x: &Self::Var, shape: &[usize]) -> Self::Var;
    /// Row lookup into a `[vocab, m]` table.
    fn embed(&mut self, table: &Self::Var, tokens: &[usize]) -> Self::Var;
    fn sum_all(&mut self, x: &Self::Var) -> Self::Var;
    /// Mean row-wise softmax cross-entropy over the rows selected by `mask`;
    /// a one-element result.
    fn softmax_xent_masked(&mut self, logits: &Self::Var, targets: &[usize], mask: Option<&[bool]>) -> Self::Var;

    fn softmax_xent(&mut self, logits: &Self::Var, targets: &[usize]) -> Self::Var {
        self.softmax_xent_masked(logits, targets, None)
    }

    fn split_features(&mut self, x: &Self::Var, at: usize) -> (Self::Var, Self::Var) {
        let cols = self.value(x).cols();
        assert!(at <= cols, "split point {at} beyond {cols} features");
        let a = self.slice_features(x, 0, at);
        let b = self.slice_features(x, at, cols - at);
        (a, b)
    }

    /// `1 - x`.
    fn one_minus(&mut self, x: &Self::Var) -> Self::Var {
        self.scale_shift(x, -T::one(), T::one())
    }
}

fn check_same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, op: &str) {
    assert_eq!(
        a.shape(),
        b.shape(),
        "{op}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
}

fn check_permutation(map: &[usize]) {
    assert!(kernels::is_permutation(map), "index map {map:?} is not a permutation");
}

fn scalar_of<T: Scalar>(s: &Tensor<T>) -> T {
    assert_eq!(s.len(), 1, "scale_by expects a single value, got {:?}", s.shape());
    s.data()[0]
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Input,
    Param(ParamId),
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleShift {
        x: Var,
        scale: T,
    },
    ScaleBy {
        x: Var,
        s: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Slice {
        x: Var,
        start: usize,
    },
    Gather {
        x: Var,
        map: Arc<[usize]>,
    },
    Reshape(Var),
    Embed {
        table: Var,
        tokens: Vec<usize>,
    },
    SumAll(Var),
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
        mask: Option<Vec<bool>>,
        probs: Tensor<T>,
    },
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
}

/// Records a forward pass so it can be replayed in reverse.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Back-propagates from the one-element `loss` and adds every parameter
    /// gradient into `grads`.
    pub fn backward(&self, loss: Var, grads: &mut GradBuffer<T>) {
        self.backward_scaled(loss, T::one(), grads)
    }

    /// Like [`Tape::backward`] with the seed gradient `d loss = seed`.
    pub fn backward_scaled(&self, loss: Var, seed: T, grads: &mut GradBuffer<T>) {
        assert_eq!(
            self.val(loss).len(),
            1,
            "backward needs a scalar loss, got shape {:?}",
            self.val(loss).shape()
        );
        let mut adj: Vec<Option<Tensor<T>>> = Vec::new();
        adj.resize_with(loss.0 + 1, || None);
        adj[loss.0] = Some(Tensor::full(self.val(loss).shape(), seed));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => grads.add(*id, &g),
                Op::Affine { x, w, b } => {
                    let xv = self.val(*x);
                    let wv = self.val(*w);
                    let (dx, rest) = split_three(&mut adj, *x, *w, *b, |v| self.val(v).shape());
                    let (dw, db) = rest;
                    kernels::affine_backward(xv, wv, &g, dx, dw, db);
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let d = acc(&mut adj, *x, y.shape());
                    for ((d, &gy), &yv) in d.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *d = *d + gy * yv * (T::one() - yv);
                    }
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    let d = acc(&mut adj, *x, y.shape());
                    for ((d, &gy), &yv) in d.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        *d = *d + gy * (T::one() - yv * yv);
                    }
                }
                Op::Relu(x) => {
                    let y = &node.value;
                    let d = acc(&mut adj, *x, y.shape());
                    for ((d, &gy), &yv) in d.data_mut().iter_mut().zip(g.data()).zip(y.data()) {
                        if yv > T::zero() {
                            *d = *d + gy;
                        }
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *a, g.shape()).add_assign(&g);
                    acc(&mut adj, *b, g.shape()).add_assign(&g);
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *a, g.shape()).add_assign(&g);
                    let db = acc(&mut adj, *b, g.shape());
                    for (d, &gy) in db.data_mut().iter_mut().zip(g.data()) {
                        *d = *d - gy;
                    }
                }
                Op::Mul(a, b) => {
                    let av = self.val(*a);
                    let bv = self.val(*b);
                    {
                        let da = acc(&mut adj, *a, g.shape());
                        for ((d, &gy), &bb) in da.data_mut().iter_mut().zip(g.data()).zip(bv.data()) {
                            *d = *d + gy * bb;
                        }
                    }
                    let db = acc(&mut adj, *b, g.shape());
                    for ((d, &gy), &aa) in db.data_mut().iter_mut().zip(g.data()).zip(av.data()) {
                        *d = *d + gy * aa;
                    }
                }
                Op::ScaleShift { x, scale } => {
                    let d = acc(&mut adj, *x, g.shape());
                    for (d, &gy) in d.data_mut().iter_mut().zip(g.data()) {
                        *d = *d + gy * *scale;
                    }
                }
                Op::ScaleBy { x, s } => {
                    let xv = self.val(*x);
                    let sv = scalar_of(self.val(*s));
                    let ds: T = g.data().iter().zip(xv.data()).map(|(&gy, &xx)| gy * xx).sum();
                    {
                        let dx = acc(&mut adj, *x, g.shape());
                        for (d, &gy) in dx.data_mut().iter_mut().zip(g.data()) {
                            *d = *d + gy * sv;
                        }
                    }
                    let s_shape = self.val(*s).shape().to_vec();
                    let dsv = acc(&mut adj, *s, &s_shape);
                    dsv.data_mut()[0] = dsv.data()[0] + ds;
                }
                Op::Concat { a, b } => {
                    let p = self.val(*a).cols();
                    let q = self.val(*b).cols();
                    let a_shape = self.val(*a).shape().to_vec();
                    let b_shape = self.val(*b).shape().to_vec();
                    {
                        let da = acc(&mut adj, *a, &a_shape);
                        for (d, row) in da
                            .data_mut()
                            .chunks_exact_mut(p.max(1))
                            .zip(g.data().chunks_exact(p + q))
                        {
                            for (t, &v) in d.iter_mut().zip(&row[..p]) {
                                *t = *t + v;
                            }
                        }
                    }
                    if q > 0 {
                        let db = acc(&mut adj, *b, &b_shape);
                        for (d, row) in db.data_mut().chunks_exact_mut(q).zip(g.data().chunks_exact(p + q)) {
                            for (t, &v) in d.iter_mut().zip(&row[p..]) {
                                *t = *t + v;
                            }
                        }
                    }
                }
                Op::Slice { x, start } => {
                    let x_shape = self.val(*x).shape().to_vec();
                    let cols = self.val(*x).cols();
                    let width = g.cols();
                    if width > 0 {
                        let dx = acc(&mut adj, *x, &x_shape);
                        for (d, row) in dx.data_mut().chunks_exact_mut(cols).zip(g.data().chunks_exact(width)) {
                            for (t, &v) in d[*start..*start + width].iter_mut().zip(row) {
                                *t = *t + v;
                            }
                        }
                    }
                }
                Op::Gather { x, map } => {
                    let dx = acc(&mut adj, *x, g.shape());
                    kernels::scatter_cells_add(&g, map, dx);
                }
                Op::Reshape(x) => {
                    let x_shape = self.val(*x).shape().to_vec();
                    let dx = acc(&mut adj, *x, &x_shape);
                    for (d, &v) in dx.data_mut().iter_mut().zip(g.data()) {
                        *d = *d + v;
                    }
                }
                Op::Embed { table, tokens } => {
                    let t_shape = self.val(*table).shape().to_vec();
                    let m = t_shape[1];
                    let dt = acc(&mut adj, *table, &t_shape);
                    for (&tok, row) in tokens.iter().zip(g.data().chunks_exact(m.max(1))) {
                        for (t, &v) in dt.data_mut()[tok * m..(tok + 1) * m].iter_mut().zip(row) {
                            *t = *t + v;
                        }
                    }
                }
                Op::SumAll(x) => {
                    let x_shape = self.val(*x).shape().to_vec();
                    let gy = g.data()[0];
                    let dx = acc(&mut adj, *x, &x_shape);
                    dx.data_mut().iter_mut().for_each(|d| *d = *d + gy);
                }
                Op::SoftmaxXent {
                    logits,
                    targets,
                    mask,
                    probs,
                } => {
                    let classes = probs.cols();
                    let counted = match mask {
                        Some(m) => m.iter().filter(|&&b| b).count(),
                        None => probs.rows(),
                    };
                    let scale = g.data()[0] / T::from_f64(counted.max(1) as f64);
                    let dl = acc(&mut adj, *logits, probs.shape());
                    for (r, ((d, p), &t)) in dl
                        .data_mut()
                        .chunks_exact_mut(classes)
                        .zip(probs.data().chunks_exact(classes))
                        .zip(targets)
                        .enumerate()
                    {
                        if mask.as_ref().is_some_and(|m| !m[r]) {
                            continue;
                        }
                        for (j, (dd, &pp)) in d.iter_mut().zip(p).enumerate() {
                            let onehot = if j == t { T::one() } else { T::zero() };
                            *dd = *dd + scale * (pp - onehot);
                        }
                    }
                }
            }
        }
    }
}

fn acc<'a, T: Scalar>(adj: &'a mut [Option<Tensor<T>>], v: Var, shape: &[usize]) -> &'a mut Tensor<T> {
    adj[v.0].get_or_insert_with(|| Tensor::zeros(shape))
}

type Slot<'a, T> = Option<&'a mut Tensor<T>>;

/// Mutable adjoint slots for the three inputs of an affine op. Inputs that
/// alias each other are not expected (a weight is never its own input).
fn split_three<'a, 'b, T: Scalar>(
    adj: &'a mut [Option<Tensor<T>>],
    x: Var,
    w: Var,
    b: Var,
    shape_of: impl Fn(Var) -> &'b [usize],
) -> (Slot<'a, T>, (Slot<'a, T>, Slot<'a, T>)) {
    assert!(x != w && x != b && w != b, "affine operands must be distinct");
    for v in [x, w, b] {
        if adj[v.0].is_none() {
            adj[v.0] = Some(Tensor::zeros(shape_of(v)));
        }
    }
    let mut order = [(x.0, 0usize), (w.0, 1), (b.0, 2)];
    order.sort();
    let mut out: [Slot<'a, T>; 3] = [None, None, None];
    let mut rest: &'a mut [Option<Tensor<T>>] = adj;
    let mut offset = 0;
    for (idx, which) in order {
        let (_, tail) = rest.split_at_mut(idx - offset);
        let (head, tail) = tail.split_at_mut(1);
        out[which] = head[0].as_mut();
        rest = tail;
        offset = idx + 1;
    }
    let [dx, dw, db] = out;
    (dx, (dw, db))
}

impl<T: Scalar> Exec<T> for Tape<T> {
    type Var = Var;

    fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Input, t)
    }

    fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(Op::Param(id), store.value(id).clone())
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor<T> {
        self.val(*v)
    }

    fn affine(&mut self, x: &Var, w: &Var, b: &Var) -> Var {
        let y = kernels::affine(self.val(*x), self.val(*w), self.val(*b));
        self.push(Op::Affine { x: *x, w: *w, b: *b }, y)
    }

    fn sigmoid(&mut self, x: &Var) -> Var {
        let y = self.val(*x).map(sigmoid);
        self.push(Op::Sigmoid(*x), y)
    }

    fn tanh(&mut self, x: &Var) -> Var {
        let y = self.val(*x).map(|v| v.tanh());
        self.push(Op::Tanh(*x), y)
    }

    fn relu(&mut self, x: &Var) -> Var {
        let y = self.val(*x).map(kernels::relu);
        self.push(Op::Relu(*x), y)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Var {
        check_same_shape(self.val(*a), self.val(*b), "add");
        let y = self.val(*a).zip_map(self.val(*b), |p, q| p + q);
        self.push(Op::Add(*a, *b), y)
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Var {
        check_same_shape(self.val(*a), self.val(*b), "sub");
        let y = self.val(*a).zip_map(self.val(*b), |p, q| p - q);
        self.push(Op::Sub(*a, *b), y)
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Var {
        check_same_shape(self.val(*a), self.val(*b), "mul");
        let y = self.val(*a).zip_map(self.val(*b), |p, q| p * q);
        self.push(Op::Mul(*a, *b), y)
    }

    fn scale_shift(&mut self, x: &Var, scale: T, shift: T) -> Var {
        let y = self.val(*x).map(|v| scale * v + shift);
        self.push(Op::ScaleShift { x: *x, scale }, y)
    }

    fn scale_by(&mut self, x: &Var, s: &Var) -> Var {
        let sv = scalar_of(self.val(*s));
        let y = self.val(*x).map(|v| v * sv);
        self.push(Op::ScaleBy { x: *x, s: *s }, y)
    }

    fn concat_features(&mut self, a: &Var, b: &Var) -> Var {
        let y = kernels::concat_features(self.val(*a), self.val(*b));
        self.push(Op::Concat { a: *a, b: *b }, y)
    }

    fn slice_features(&mut self, x: &Var, start: usize, width: usize) -> Var {
        let y = kernels::slice_features(self.val(*x), start, width);
        self.push(Op::Slice { x: *x, start }, y)
    }

    fn gather_cells(&mut self, x: &Var, map: &Arc<[usize]>) -> Var {
        check_permutation(map);
        let y = kernels::gather_cells(self.val(*x), map);
        self.push(
            Op::Gather {
                x: *x,
                map: map.clone(),
            },
            y,
        )
    }

    fn reshape(&mut self, x: &Var, shape: &[usize]) -> Var {
        let y = self.val(*x).clone().reshape(shape);
        self.push(Op::Reshape(*x), y)
    }

    fn embed(&mut self, table: &Var, tokens: &[usize]) -> Var {
        let y = kernels::embed(self.val(*table), tokens);
        self.push(
            Op::Embed {
                table: *table,
                tokens: tokens.to_vec(),
            },
            y,
        )
    }

    fn sum_all(&mut self, x: &Var) -> Var {
        let y = Tensor::scalar(self.val(*x).sum());
        self.push(Op::SumAll(*x), y)
    }

    fn softmax_xent_masked(&mut self, logits: &Var, targets: &[usize], mask: Option<&[bool]>) -> Var {
        let (loss, probs) = kernels::softmax_xent(self.val(*logits), targets, mask);
        self.push(
            Op::SoftmaxXent {
                logits: *logits,
                targets: targets.to_vec(),
                mask: mask.map(|m| m.to_vec()),
                probs,
            },
            Tensor::scalar(loss),
        )
    }
}

/// Value-only executor; intermediates are dropped as soon as unreferenced.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl<T: Scalar> Exec<T> for Eager {
    type Var = Rc<Tensor<T>>;

    fn input(&mut self, t: Tensor<T>) -> Self::Var {
        Rc::new(t)
    }

    fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Self::Var {
        Rc::new(store.value(id).clone())
    }

    fn value<'a>(&'a self, v: &'a Self::Var) -> &'a Tensor<T> {
        v
    }

    fn affine(&mut self, x: &Self::Var, w: &Self::Var, b: &Self::Var) -> Self::Var {
        Rc::new(kernels::affine(x, w, b))
    }

    fn sigmoid(&mut self, x: &Self::Var) -> Self::Var {
        Rc::new(x.map(sigmoid))
    }

    fn tanh(&mut self, x: &Self::Var) -> Self::Var {
        Rc::new(x.map(|v| v.tanh()))
    }

    fn relu(&mut self, x: &Self::Var) -> Self::Var {
        Rc::new(x.map(kernels::relu))
    }

    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var {
        check_same_shape(a, b, "add");
        Rc::new(a.zip_map(b, |p, q| p + q))
    }

    fn sub(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var {
        check_same_shape(a, b, "sub");
        Rc::new(a.zip_map(b, |p, q| p - q))
    }

    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var {
        check_same_shape(a, b, "mul");
        Rc::new(a.zip_map(b, |p, q| p * q))
    }

    fn scale_shift(&mut self, x: &Self::Var, scale: T, shift: T) -> Self::Var {
        Rc::new(x.map(|v| scale * v + shift))
    }

    fn scale_by(&mut self, x: &Self::Var, s: &Self::Var) -> Self::Var {
        let sv = scalar_of(s);
        Rc::new(x.map(|v| v * sv))
    }

    fn concat_features(&mut self, a: &Self::Var, b: &Self::Var) -> Self::Var {
        Rc::new(kernels::concat_features(a, b))
    }

    fn slice_features(&mut self, x: &Self::Var, start: usize, width: usize) -> Self::Var {
        Rc::new(kernels::slice_features(x, start, width))
    }

    fn gather_cells(&mut self, x: &Self::Var, map: &Arc<[usize]>) -> Self::Var {
        check_permutation(map);
        Rc::new(kernels::gather_cells(x, map))
    }

    fn reshape(&mut self, x: &Self::Var, shape: &[usize]) -> Self::Var {
        Rc::new(Tensor::clone(x).reshape(shape))
    }

    fn embed(&mut self, table: &Self::Var, tokens: &[usize]) -> Self::Var {
        Rc::new(kernels::embed(table, tokens))
    }

    fn sum_all(&mut self, x: &Self::Var) -> Self::Var {
        Rc::new(Tensor::scalar(x.sum()))
    }

    fn softmax_xent_masked(&mut self, logits: &Self::Var, targets: &[usize], mask: Option<&[bool]>) -> Self::Var {
        Rc::new(Tensor::scalar(kernels::softmax_xent(logits, targets, mask).0))
    }
}
