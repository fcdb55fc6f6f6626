//! Switch Units and the switch/shuffle layers built from them.

use std::sync::Arc;

use rand::Rng;

use super::config::SwitchVariant;
use crate::autodiff::{Exec, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Initial update-gate bias. A positive value starts every unit close to
/// passing its (possibly swapped) input straight through.
pub const UPDATE_BIAS_INIT: f64 = 2.0;

/// An affine map `x W + b` with `W: [in, out]`, `b: [out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = store.add(
            format!("{name}.w"),
            Tensor::uniform(&[fan_in, fan_out], -limit, limit, rng),
        );
        let bias = store.add(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        Dense { weight, bias }
    }

    pub fn apply<T: Scalar, E: Exec<T>>(&self, exec: &mut E, store: &ParamStore<T>, x: &E::Var) -> E::Var {
        let w = exec.param(store, self.weight);
        let b = exec.param(store, self.bias);
        exec.affine(x, &w, &b)
    }
}

/// Parameters of one Switch Unit operating on a `2m`-wide cell pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SwitchUnitParams {
    /// Reset-gated unit used by the baseline, `no_swap` and `swap_gate`.
    Gated {
        reset: [Dense; 2],
        candidate: [Dense; 2],
        update: Dense,
        swap_gate: Option<Dense>,
    },
    /// Fully connected unit used by `two_fc` (no update gate) and
    /// `two_fc_gate`.
    Fc {
        hidden: Dense,
        output: Dense,
        update: Option<Dense>,
    },
}

impl SwitchUnitParams {
    pub fn init<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        m: usize,
        variant: SwitchVariant,
        rng: &mut R,
    ) -> Self {
        let w = 2 * m;
        match variant {
            SwitchVariant::Baseline | SwitchVariant::NoSwap | SwitchVariant::SwapGate => {
                let reset = [
                    Dense::init(store, &format!("{prefix}/reset1"), w, w, rng),
                    Dense::init(store, &format!("{prefix}/reset2"), w, w, rng),
                ];
                let candidate = [
                    Dense::init(store, &format!("{prefix}/cand1"), w, m, rng),
                    Dense::init(store, &format!("{prefix}/cand2"), w, m, rng),
                ];
                let update = Dense::init(store, &format!("{prefix}/update"), w, w, rng);
                store.get_mut(update.bias).value.fill(T::from_f64(UPDATE_BIAS_INIT));
                let swap_gate = (variant == SwitchVariant::SwapGate)
                    .then(|| Dense::init(store, &format!("{prefix}/swap_gate"), w, w, rng));
                SwitchUnitParams::Gated {
                    reset,
                    candidate,
                    update,
                    swap_gate,
                }
            }
            SwitchVariant::TwoFc | SwitchVariant::TwoFcGate => {
                let hidden = Dense::init(store, &format!("{prefix}/fc1"), w, 2 * w, rng);
                let output = Dense::init(store, &format!("{prefix}/fc2"), 2 * w, w, rng);
                let update = (variant == SwitchVariant::TwoFcGate).then(|| {
                    let update = Dense::init(store, &format!("{prefix}/update"), w, w, rng);
                    store.get_mut(update.bias).value.fill(T::from_f64(UPDATE_BIAS_INIT));
                    update
                });
                SwitchUnitParams::Fc { hidden, output, update }
            }
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        let mut push = |d: &Dense| {
            out.push(d.weight);
            out.push(d.bias);
        };
        match self {
            SwitchUnitParams::Gated {
                reset,
                candidate,
                update,
                swap_gate,
            } => {
                reset.iter().for_each(&mut push);
                candidate.iter().for_each(&mut push);
                push(update);
                if let Some(g) = swap_gate {
                    push(g);
                }
            }
            SwitchUnitParams::Fc { hidden, output, update } => {
                push(hidden);
                push(output);
                if let Some(u) = update {
                    push(u);
                }
            }
        }
        out
    }
}

fn swap_half_map() -> Arc<[usize]> {
    Arc::from([0usize, 3, 2, 1].as_slice())
}

/// swapHalf on concatenated pairs `[s1, s2]` of shape `[rows, 2m]`:
/// `([a; b], [c; d]) -> ([a; d], [c; b])`.
pub fn swap_half_pairs<T: Scalar, E: Exec<T>>(exec: &mut E, s: &E::Var) -> E::Var {
    let shape = exec.value(s).shape().to_vec();
    let width = *shape.last().unwrap();
    assert!(
        width % 4 == 0,
        "swapHalf needs an even number of maps per cell, pair width is {width}"
    );
    let rows = exec.value(s).rows();
    let quarters = exec.reshape(s, &[rows, 4, width / 4]);
    let swapped = exec.gather_cells(&quarters, &swap_half_map());
    exec.reshape(&swapped, &shape)
}

/// swapHalf on two separate `[.., m]` cells.
pub fn swap_half<T: Scalar, E: Exec<T>>(exec: &mut E, s1: &E::Var, s2: &E::Var) -> (E::Var, E::Var) {
    let m = exec.value(s1).cols();
    assert!(m % 2 == 0, "swapHalf needs an even number of maps, got {m}");
    let pair = exec.concat_features(s1, s2);
    let swapped = swap_half_pairs(exec, &pair);
    exec.split_features(&swapped, m)
}

/// `gate * a + (1 - gate) * b`, computed as `b + gate * (a - b)` so that
/// equal inputs pass through exactly.
fn blend<T: Scalar, E: Exec<T>>(exec: &mut E, gate: &E::Var, a: &E::Var, b: &E::Var) -> E::Var {
    let diff = exec.sub(a, b);
    let step = exec.mul(gate, &diff);
    exec.add(b, &step)
}

/// Applies one Switch Unit to cell pairs `s` of shape `[rows, 2m]`.
pub fn switch_unit<T: Scalar, E: Exec<T>>(
    exec: &mut E,
    store: &ParamStore<T>,
    s: &E::Var,
    unit: &SwitchUnitParams,
    variant: SwitchVariant,
) -> E::Var {
    let width = exec.value(s).cols();
    let straight_or_swapped = |exec: &mut E| match (variant, unit) {
        (SwitchVariant::NoSwap, _) => s.clone(),
        (
            SwitchVariant::SwapGate,
            SwitchUnitParams::Gated {
                swap_gate: Some(gate), ..
            },
        ) => {
            let pre = gate.apply(exec, store, s);
            let g = exec.sigmoid(&pre);
            let swapped = swap_half_pairs(exec, s);
            blend(exec, &g, &swapped, s)
        }
        _ => swap_half_pairs(exec, s),
    };
    match unit {
        SwitchUnitParams::Gated {
            reset,
            candidate,
            update,
            ..
        } => {
            let in_width = store.value(update.weight).shape()[0];
            assert_eq!(
                width, in_width,
                "switch unit expects pair width {in_width}, got {width}"
            );
            let mut cands = Vec::with_capacity(2);
            for (r, c) in reset.iter().zip(candidate) {
                let pre = r.apply(exec, store, s);
                let gate = exec.sigmoid(&pre);
                let gated = exec.mul(&gate, s);
                let pre_c = c.apply(exec, store, &gated);
                cands.push(exec.tanh(&pre_c));
            }
            let c = exec.concat_features(&cands[0], &cands[1]);
            let pre_u = update.apply(exec, store, s);
            let u = exec.sigmoid(&pre_u);
            let st = straight_or_swapped(exec);
            blend(exec, &u, &st, &c)
        }
        SwitchUnitParams::Fc { hidden, output, update } => {
            let in_width = store.value(hidden.weight).shape()[0];
            assert_eq!(
                width, in_width,
                "switch unit expects pair width {in_width}, got {width}"
            );
            let pre = hidden.apply(exec, store, s);
            let h = exec.relu(&pre);
            let f = output.apply(exec, store, &h);
            match update {
                None => f,
                Some(update) => {
                    let pre_u = update.apply(exec, store, s);
                    let u = exec.sigmoid(&pre_u);
                    let st = straight_or_swapped(exec);
                    blend(exec, &u, &st, &f)
                }
            }
        }
    }
}

/// Applies `unit` to every adjacent cell pair of `state: [batch, n, m]`.
pub fn switch_layer<T: Scalar, E: Exec<T>>(
    exec: &mut E,
    store: &ParamStore<T>,
    state: &E::Var,
    unit: &SwitchUnitParams,
    variant: SwitchVariant,
) -> E::Var {
    let shape = exec.value(state).shape().to_vec();
    assert_eq!(
        shape.len(),
        3,
        "switch layer expects [batch, cells, maps], got {shape:?}"
    );
    let (batch, n, m) = (shape[0], shape[1], shape[2]);
    assert!(n % 2 == 0, "switch layer needs an even number of cells, got {n}");
    let pairs = exec.reshape(state, &[batch * n / 2, 2 * m]);
    let out = switch_unit(exec, store, &pairs, unit, variant);
    exec.reshape(&out, &shape)
}

/// Permutes cells of `state: [batch, 2^k, m]` so that output cell `x` holds
/// input cell `rotate_index(x, k, dir)`.
pub fn shuffle_layer<T: Scalar, E: Exec<T>>(exec: &mut E, state: &E::Var, dir: super::Direction) -> E::Var {
    let n = exec.value(state).shape()[1];
    let k = super::log2_exact(n).unwrap_or_else(|| panic!("shuffle layer needs a power-of-two cell count, got {n}"));
    let map: Arc<[usize]> = super::shuffle_map(k, dir).into();
    exec.gather_cells(state, &map)
}
