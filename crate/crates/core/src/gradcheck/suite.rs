//! Gradient checks for every differentiable op and for complete small
//! models.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad_check_tampered, GradCheckReport};
use crate::autodiff::{Exec, GradBuffer, ParamId, ParamStore, Tape, Var};
use crate::error::Result;
use crate::heads::{position_loss, symbol_loss, PositionHead, SymbolHead};
use crate::model::{
    shuffle_layer, swap_half, switch_layer, switch_unit, Direction, ModelConfig, SwitchUnitParams, SwitchVariant,
};
use crate::network::Network;
use crate::scalar::{DType, Scalar};
use crate::tasks::{encode, TaskKind, TaskSample};
use crate::tensor::Tensor;

pub const F64_TOLERANCE: f64 = 1e-4;
/// Single precision cannot resolve central differences to the f64
/// threshold.
pub const F32_TOLERANCE: f64 = 1e-2;

pub fn tolerance_for(dtype: DType) -> f64 {
    match dtype {
        DType::F64 => F64_TOLERANCE,
        DType::F32 => F32_TOLERANCE,
    }
}

/// Central-difference step for smooth components in the given precision.
pub fn default_step(dtype: DType) -> f64 {
    match dtype {
        DType::F64 => 1.5e-4,
        DType::F32 => 1e-2,
    }
}

/// Smaller step for components with ReLU kinks, so perturbations rarely
/// cross one.
pub fn kinked_step(dtype: DType) -> f64 {
    default_step(dtype) / 100.0
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    /// Overrides the per-component step.
    pub h: Option<f64>,
    pub tolerance: Option<f64>,
    pub seed: u64,
    /// Components whose analytic gradients are deliberately perturbed.
    pub corrupt: Vec<String>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            h: None,
            tolerance: None,
            seed: 7,
            corrupt: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ComponentResult {
    pub component: String,
    pub report: GradCheckReport,
    pub tolerance: f64,
}

impl ComponentResult {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < self.tolerance
    }
}

impl fmt::Display for ComponentResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let worst = match &self.report.worst {
            Some((name, i)) => format!("{name}[{i}]"),
            None => "-".into(),
        };
        write!(
            f,
            "{:<24} {:>6} {:>12.3e}  {:<4} {}",
            self.component,
            self.report.scalars_checked,
            self.report.max_rel_error,
            if self.passed() { "ok" } else { "FAIL" },
            worst
        )
    }
}

pub fn table_header() -> String {
    format!(
        "{:<24} {:>6} {:>12}  {:<4} {}",
        "component", "scalars", "max_rel_err", "", "worst"
    )
}

type LossFn<T> = Box<dyn Fn(&mut Tape<T>, &ParamStore<T>) -> Var>;

struct Case<T: Scalar> {
    name: String,
    kinked: bool,
    store: ParamStore<T>,
    loss: LossFn<T>,
}

/// Names of every component [`run_suite`] checks, in order.
pub fn component_names() -> Vec<String> {
    build_cases::<f64, _>(&mut ChaCha8Rng::seed_from_u64(0))
        .into_iter()
        .map(|c| c.name)
        .collect()
}

/// Checks every component and returns one result per component. Unknown
/// names in `options.corrupt` are an error.
pub fn run_suite<T: Scalar>(
    options: &SuiteOptions,
    mut on_result: impl FnMut(&ComponentResult),
) -> Result<Vec<ComponentResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let cases = build_cases::<T, _>(&mut rng);
    for name in &options.corrupt {
        if !cases.iter().any(|c| &c.name == name) {
            return Err(crate::error::Error::config(
                "corrupt",
                format!("no gradient-check component named `{name}`"),
            ));
        }
    }
    let tolerance = options.tolerance.unwrap_or_else(|| tolerance_for(T::DTYPE));
    let mut results = Vec::with_capacity(cases.len());
    for mut case in cases {
        let params: Vec<ParamId> = case.store.iter().map(|(id, _)| id).collect();
        let corrupt = options.corrupt.contains(&case.name);
        let first = params[0];
        let h = options.h.unwrap_or_else(|| {
            if case.kinked {
                kinked_step(T::DTYPE)
            } else {
                default_step(T::DTYPE)
            }
        });
        let report = grad_check_tampered(&mut case.store, &params, h, &case.loss, |g: &mut GradBuffer<T>| {
            if corrupt {
                corrupt_gradient(g, first);
            }
        })?;
        let result = ComponentResult {
            component: case.name,
            report,
            tolerance,
        };
        on_result(&result);
        results.push(result);
    }
    Ok(results)
}

/// Scales the gradient of `id` by 1.5 and shifts it by 0.01.
pub fn corrupt_gradient<T: Scalar>(grads: &mut GradBuffer<T>, id: ParamId) {
    if let Some(g) = grads.get(id) {
        let delta = g.map(|v| T::from_f64(0.5 * v.as_f64() + 0.01));
        grads.add(id, &delta);
    }
}

fn away_from_zero<R: Rng + ?Sized, T: Scalar>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let v = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::from_f64(shape, &data)
}

/// `sum(out * proj)` for a fixed random projection, so every output
/// element gets a distinct upstream gradient.
fn project<T: Scalar>(tape: &mut Tape<T>, out: &Var, proj: &Tensor<T>) -> Var {
    let p = tape.input(proj.clone());
    let weighted = tape.mul(out, &p);
    tape.sum_all(&weighted)
}

fn case<T: Scalar>(
    name: &str,
    store: ParamStore<T>,
    loss: impl Fn(&mut Tape<T>, &ParamStore<T>) -> Var + 'static,
) -> Case<T> {
    Case {
        name: name.into(),
        kinked: false,
        store,
        loss: Box::new(loss),
    }
}

fn kinked<T: Scalar>(mut c: Case<T>) -> Case<T> {
    c.kinked = true;
    c
}

/// One-input elementwise or reshaping op on `x: shape`, followed by a
/// random projection of its `out_shape` result.
fn unary<T: Scalar, R: Rng + ?Sized>(
    name: &str,
    shape: &[usize],
    out_shape: &[usize],
    rng: &mut R,
    op: impl Fn(&mut Tape<T>, &Var) -> Var + 'static,
) -> Case<T> {
    let mut store = ParamStore::new();
    let x = store.add("x", away_from_zero(shape, rng));
    let proj = Tensor::uniform(out_shape, -1.0, 1.0, rng);
    case(name, store, move |tape, store| {
        let xv = tape.param(store, x);
        let y = op(tape, &xv);
        project(tape, &y, &proj)
    })
}

fn binary<T: Scalar, R: Rng + ?Sized>(
    name: &str,
    a_shape: &[usize],
    b_shape: &[usize],
    out_shape: &[usize],
    rng: &mut R,
    op: impl Fn(&mut Tape<T>, &Var, &Var) -> Var + 'static,
) -> Case<T> {
    let mut store = ParamStore::new();
    let a = store.add("a", away_from_zero(a_shape, rng));
    let b = store.add("b", away_from_zero(b_shape, rng));
    let proj = Tensor::uniform(out_shape, -1.0, 1.0, rng);
    case(name, store, move |tape, store| {
        let av = tape.param(store, a);
        let bv = tape.param(store, b);
        let y = op(tape, &av, &bv);
        project(tape, &y, &proj)
    })
}

fn op_cases<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> Vec<Case<T>> {
    let mut cases = Vec::new();

    let mut store = ParamStore::new();
    let x = store.add("x", away_from_zero(&[2, 3, 4], rng));
    let w = store.add("w", Tensor::uniform(&[4, 5], -1.0, 1.0, rng));
    let b = store.add("b", Tensor::uniform(&[5], -1.0, 1.0, rng));
    let proj = Tensor::uniform(&[2, 3, 5], -1.0, 1.0, rng);
    cases.push(case("affine", store, move |tape, store| {
        let (xv, wv, bv) = (tape.param(store, x), tape.param(store, w), tape.param(store, b));
        let y = tape.affine(&xv, &wv, &bv);
        project(tape, &y, &proj)
    }));

    cases.push(unary("sigmoid", &[3, 4], &[3, 4], rng, |t, x| t.sigmoid(x)));
    cases.push(unary("tanh", &[3, 4], &[3, 4], rng, |t, x| t.tanh(x)));
    cases.push(kinked(unary("relu", &[3, 4], &[3, 4], rng, |t, x| t.relu(x))));
    cases.push(unary("one_minus", &[3, 4], &[3, 4], rng, |t, x| t.one_minus(x)));
    cases.push(unary("scale_shift", &[3, 4], &[3, 4], rng, |t, x| {
        t.scale_shift(x, T::from_f64(0.7), T::from_f64(-0.3))
    }));
    cases.push(binary("add", &[3, 4], &[3, 4], &[3, 4], rng, |t, a, b| t.add(a, b)));
    cases.push(binary("sub", &[3, 4], &[3, 4], &[3, 4], rng, |t, a, b| t.sub(a, b)));
    cases.push(binary("mul", &[3, 4], &[3, 4], &[3, 4], rng, |t, a, b| t.mul(a, b)));
    cases.push(binary("scale_by", &[2, 3, 4], &[1], &[2, 3, 4], rng, |t, a, s| {
        t.scale_by(a, s)
    }));
    cases.push(binary(
        "concat_features",
        &[2, 3, 2],
        &[2, 3, 3],
        &[2, 3, 5],
        rng,
        |t, a, b| t.concat_features(a, b),
    ));
    cases.push(unary("slice_features", &[3, 6], &[3, 2], rng, |t, x| {
        t.slice_features(x, 3, 2)
    }));
    cases.push(unary("split_features", &[3, 6], &[3, 4], rng, |t, x| {
        let (a, b) = t.split_features(x, 2);
        let b = t.slice_features(&b, 0, 2);
        t.concat_features(&b, &a)
    }));
    let map: Arc<[usize]> = Arc::from([2usize, 0, 3, 1].as_slice());
    cases.push(unary("gather_cells", &[2, 4, 3], &[2, 4, 3], rng, move |t, x| {
        t.gather_cells(x, &map)
    }));
    cases.push(unary("reshape", &[2, 3, 4], &[6, 4], rng, |t, x| t.reshape(x, &[6, 4])));
    cases.push(unary("sum_all", &[3, 4], &[1], rng, |t, x| t.sum_all(x)));

    // Token 1 appears twice, token 4 never.
    let tokens = [1usize, 3, 1, 0, 2];
    cases.push(unary("embed", &[5, 3], &[5, 3], rng, move |t, table| {
        t.embed(table, &tokens)
    }));

    let targets = [0usize, 4, 2, 2];
    let mut store = ParamStore::new();
    let logits = store.add("logits", Tensor::uniform(&[4, 5], -2.0, 2.0, rng));
    cases.push(case("softmax_xent", store.clone(), move |tape, store| {
        let l = tape.param(store, logits);
        tape.softmax_xent(&l, &targets)
    }));
    let mask = [true, false, true, true];
    cases.push(case("softmax_xent_masked", store, move |tape, store| {
        let l = tape.param(store, logits);
        tape.softmax_xent_masked(&l, &targets, Some(&mask))
    }));

    cases.push(unary("swap_half", &[3, 4], &[3, 8], rng, |t, x| {
        let y = t.scale_shift(x, T::from_f64(-1.0), T::from_f64(0.0));
        let (a, b) = swap_half(t, x, &y);
        t.concat_features(&a, &b)
    }));
    for dir in [Direction::Left, Direction::Right] {
        let name = match dir {
            Direction::Left => "shuffle_left",
            Direction::Right => "shuffle_right",
        };
        cases.push(unary(name, &[2, 8, 2], &[2, 8, 2], rng, move |t, x| {
            shuffle_layer(t, x, dir)
        }));
    }
    cases
}

fn unit_cases<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> Vec<Case<T>> {
    let m = 4;
    SwitchVariant::ALL
        .into_iter()
        .map(|variant| {
            let mut store = ParamStore::new();
            let x = store.add("pairs", away_from_zero(&[3, 2 * m], rng));
            let unit = SwitchUnitParams::init(&mut store, "unit", m, variant, rng);
            let proj = Tensor::uniform(&[3, 2 * m], -1.0, 1.0, rng);
            let c = case(&format!("switch_unit/{}", variant.name()), store, move |tape, store| {
                let s = tape.param(store, x);
                let y = switch_unit(tape, store, &s, &unit, variant);
                project(tape, &y, &proj)
            });
            match variant {
                SwitchVariant::TwoFc | SwitchVariant::TwoFcGate => kinked(c),
                _ => c,
            }
        })
        .collect()
}

fn layer_and_head_cases<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> Vec<Case<T>> {
    let m = 4;
    let mut cases = Vec::new();

    let mut store = ParamStore::new();
    let x = store.add("state", away_from_zero(&[2, 4, m], rng));
    let unit = SwitchUnitParams::init(&mut store, "unit", m, SwitchVariant::Baseline, rng);
    let proj = Tensor::uniform(&[2, 4, m], -1.0, 1.0, rng);
    cases.push(case("switch_layer", store, move |tape, store| {
        let s = tape.param(store, x);
        let y = switch_layer(tape, store, &s, &unit, SwitchVariant::Baseline);
        project(tape, &y, &proj)
    }));

    let mut store = ParamStore::new();
    let x = store.add("state", away_from_zero(&[2, 4, m], rng));
    let head = SymbolHead::new(&mut store, m, 5, rng);
    let targets: Vec<usize> = (0..8).map(|_| rng.gen_range(0..5)).collect();
    cases.push(case("symbol_head", store, move |tape, store| {
        let s = tape.param(store, x);
        let logits = head.logits(tape, store, &s);
        symbol_loss(tape, &logits, &targets)
    }));

    let mut store = ParamStore::new();
    let x = store.add("state", away_from_zero(&[3, 8, m], rng));
    let head = PositionHead::new(&mut store, m, rng);
    let targets = [5usize, 0, 7];
    cases.push(case("position_head", store, move |tape, store| {
        let s = tape.param(store, x);
        let logits = head.logits(tape, store, &s);
        position_loss(tape, &logits, &targets)
    }));
    cases
}

fn model_case<T: Scalar, R: Rng + ?Sized>(
    name: &str,
    task: TaskKind,
    config: ModelConfig,
    k: u32,
    rng: &mut R,
) -> Case<T> {
    let n = 1usize << k;
    let mut store = ParamStore::new();
    let network = Network::new(task, &config, k, &mut store, rng).expect("valid gradient-check model");
    // Constant initial biases put every gate at the same operating point;
    // check at a generic one instead.
    for p in store.iter_mut() {
        if p.value.shape().len() == 1 {
            p.value = Tensor::uniform(p.value.shape(), -0.5, 0.5, rng);
        }
    }
    let plan = network.plan(n).expect("power-of-two length");
    let raw = task.generate(task.min_len().max(n / 2), rng);
    let sample: TaskSample = encode(&raw, n, task.pad_mode(), rng).expect("sample fits");
    case(name, store, move |tape, store| {
        network.loss(tape, store, &plan, std::slice::from_ref(&sample), false).0
    })
}

fn model_cases<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> Vec<Case<T>> {
    let small = ModelConfig {
        maps: 4,
        blocks: 1,
        ..ModelConfig::default()
    };
    vec![
        model_case("model/k3_m4_b1", TaskKind::Rev, small.clone(), 3, rng),
        model_case(
            "model/k3_m4_b2",
            TaskKind::Rev,
            ModelConfig {
                blocks: 2,
                ..small.clone()
            },
            3,
            rng,
        ),
        model_case("model/selection", TaskKind::Select, small, 3, rng),
    ]
}

fn build_cases<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> Vec<Case<T>> {
    let mut cases = op_cases(rng);
    cases.extend(unit_cases(rng));
    cases.extend(layer_and_head_cases(rng));
    cases.extend(model_cases(rng));
    cases
}
