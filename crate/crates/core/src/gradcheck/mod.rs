//! Central-difference verification of tape gradients.

use crate::autodiff::{Exec, GradBuffer, ParamId, ParamStore, Tape, Var};
use crate::error::Error;
use crate::scalar::Scalar;

/// Worst-case agreement between analytic and numeric gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst scalar.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric gradient at the worst scalar.
    pub worst_values: Option<(f64, f64)>,
    /// Worst relative error per parameter, in the order checked.
    pub per_param: Vec<(String, f64)>,
    pub scalars_checked: usize,
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval_loss<T, F>(store: &ParamStore<T>, loss_fn: &F) -> f64
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &ParamStore<T>) -> Var,
{
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store);
    tape.value(&loss).data()[0].as_f64()
}

/// Analytic gradients of `loss_fn` for every parameter, via one backward
/// pass. The store's own accumulated gradients are left untouched.
pub fn analytic_gradients<T, F>(store: &ParamStore<T>, loss_fn: &F) -> (f64, GradBuffer<T>)
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &ParamStore<T>) -> Var,
{
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, store);
    let mut grads = GradBuffer::for_store(store);
    tape.backward(loss, &mut grads);
    (tape.value(&loss).data()[0].as_f64(), grads)
}

/// Compares the tape gradient of every scalar in `params` against
/// `(L(theta + h) - L(theta - h)) / 2h`.
pub fn grad_check<T, F>(
    store: &mut ParamStore<T>,
    params: &[ParamId],
    h: f64,
    loss_fn: F,
) -> Result<GradCheckReport, Error>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &ParamStore<T>) -> Var,
{
    grad_check_tampered(store, params, h, loss_fn, |_| {})
}

/// [`grad_check`] with a hook that may rewrite the analytic gradients
/// before comparison. A broken hook must show up as a failed check.
pub fn grad_check_tampered<T, F>(
    store: &mut ParamStore<T>,
    params: &[ParamId],
    h: f64,
    loss_fn: F,
    tamper: impl FnOnce(&mut GradBuffer<T>),
) -> Result<GradCheckReport, Error>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &ParamStore<T>) -> Var,
{
    let (loss, mut grads) = analytic_gradients(store, &loss_fn);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            param: "<unperturbed>".into(),
            index: 0,
        });
    }
    tamper(&mut grads);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: None,
        per_param: Vec::with_capacity(params.len()),
        scalars_checked: 0,
    };
    for &id in params {
        let name = store.get(id).name.clone();
        let n = store.value(id).len();
        let mut worst_here = 0.0f64;
        for i in 0..n {
            let original = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = T::from_f64(original.as_f64() + h);
            let plus = eval_loss(store, &loss_fn);
            store.get_mut(id).value.data_mut()[i] = T::from_f64(original.as_f64() - h);
            let minus = eval_loss(store, &loss_fn);
            store.get_mut(id).value.data_mut()[i] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFiniteLoss { param: name, index: i });
            }
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[i].as_f64());
            let err = relative_error(analytic, numeric);
            report.scalars_checked += 1;
            if err > worst_here {
                worst_here = err;
            }
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i));
                report.worst_values = Some((analytic, numeric));
            }
        }
        report.per_param.push((name, worst_here));
    }
    Ok(report)
}

mod suite;

pub use suite::{
    component_names, corrupt_gradient, default_step, kinked_step, run_suite, table_header, tolerance_for,
    ComponentResult, SuiteOptions, F32_TOLERANCE, F64_TOLERANCE,
};
