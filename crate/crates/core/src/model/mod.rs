//! The Shuffle-Exchange network: Beneš-patterned switch and shuffle layers
//! with shared Switch Unit weights and scaled skip connections between
//! blocks.

mod config;
mod switch;
mod topology;

use rand::Rng;

pub use config::{ModelConfig, Sharing, SwitchVariant};
pub use switch::{
    shuffle_layer, swap_half, swap_half_pairs, switch_layer, switch_unit, Dense, SwitchUnitParams, UPDATE_BIAS_INIT,
};
pub use topology::{
    layers_in_block, log2_exact, plan_layers, residual_units, rotate_index, shuffle_map, unit_count, Direction,
    LayerPlan, LayerSlot,
};

use crate::autodiff::{Exec, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Initial value of every residual scale.
pub const RESIDUAL_INIT: f64 = 0.1;

/// Parameter handles of a Shuffle-Exchange network. The values live in a
/// [`ParamStore`]; one network can be run at every length it has a
/// [`LayerPlan`] for.
#[derive(Debug, Clone)]
pub struct ShuffleExchange {
    config: ModelConfig,
    units: Vec<SwitchUnitParams>,
    /// Residual scale per unit index, where the unit sits at a receiving layer.
    residual: Vec<Option<ParamId>>,
    /// Length exponent the parameters are tied to (only without sharing).
    fixed_k: Option<u32>,
}

impl ShuffleExchange {
    /// Allocates parameters for `config` into `store`. `k` only matters for
    /// [`Sharing::None`], where every layer of the length-`2^k` network gets
    /// its own unit.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        config: &ModelConfig,
        k: u32,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if k == 0 {
            return Err(Error::config("length", "sequence length must be at least 2"));
        }
        let n_units = unit_count(config, k);
        let units = (0..n_units)
            .map(|u| SwitchUnitParams::init(store, &format!("sx/unit{u}"), config.maps, config.variant, rng))
            .collect();
        let mut residual = vec![None; n_units];
        for u in residual_units(config, k) {
            residual[u] = Some(store.add(format!("sx/residual{u}"), Tensor::scalar(T::from_f64(RESIDUAL_INIT))));
        }
        Ok(ShuffleExchange {
            config: config.clone(),
            units,
            residual,
            fixed_k: (config.sharing == Sharing::None).then_some(k),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn units(&self) -> &[SwitchUnitParams] {
        &self.units
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.units.iter().flat_map(|u| u.param_ids()).collect();
        ids.extend(self.residual.iter().flatten());
        ids.sort();
        ids
    }

    pub fn residual_scale(&self, unit: usize) -> Option<ParamId> {
        self.residual.get(unit).copied().flatten()
    }

    /// Layer plan for sequences of length `2^k`, aliasing this network's
    /// parameters.
    pub fn plan(&self, k: u32) -> Result<LayerPlan> {
        if k == 0 {
            return Err(Error::config("length", "sequence length must be at least 2"));
        }
        if let Some(fixed) = self.fixed_k {
            if fixed != k {
                return Err(Error::config(
                    "sharing",
                    format!(
                        "unshared weights were built for length {} and cannot run at length {}",
                        1usize << fixed,
                        1usize << k
                    ),
                ));
            }
        }
        Ok(plan_layers(&self.config, k))
    }

    /// Runs the layer plan on `state: [batch, 2^k, m]`.
    pub fn forward<T: Scalar, E: Exec<T>>(
        &self,
        exec: &mut E,
        store: &ParamStore<T>,
        plan: &LayerPlan,
        state: &E::Var,
    ) -> E::Var {
        let shape = exec.value(state).shape().to_vec();
        assert!(
            shape.len() == 3 && shape[1] == plan.length() && shape[2] == self.config.maps,
            "network built for [batch, {}, {}] got input {shape:?}",
            plan.length(),
            self.config.maps
        );
        let per_block = 2 * plan.k as usize - 1;
        let mut saved: Vec<Option<E::Var>> = vec![None; per_block];
        let mut next_saved: Vec<Option<E::Var>> = vec![None; per_block];
        let mut x = state.clone();
        let mut current_block = 0;
        for slot in &plan.slots {
            if slot.block != current_block {
                current_block = slot.block;
                std::mem::swap(&mut saved, &mut next_saved);
                next_saved.iter_mut().for_each(|s| *s = None);
            }
            if let Some(unit) = slot.residual_from_previous {
                let source = saved[slot.position]
                    .as_ref()
                    .expect("residual source saved by previous block");
                let scale_id = self.residual[unit].expect("residual scale allocated");
                let scale = exec.param(store, scale_id);
                let scaled = exec.scale_by(source, &scale);
                x = exec.add(&x, &scaled);
            }
            if slot.saves_residual {
                next_saved[slot.position] = Some(x.clone());
            }
            x = switch_layer(exec, store, &x, &self.units[slot.unit], self.config.variant);
            if let Some(dir) = slot.shuffle_after {
                x = exec.gather_cells(&x, plan.shuffle_map(dir));
            }
        }
        x
    }
}

/// Allocates a network for length `2^k` and returns it with its plan.
pub fn build_model<T: Scalar, R: Rng + ?Sized>(
    config: &ModelConfig,
    k: u32,
    store: &mut ParamStore<T>,
    rng: &mut R,
) -> Result<(ShuffleExchange, LayerPlan)> {
    let net = ShuffleExchange::new(config, k, store, rng)?;
    let plan = net.plan(k)?;
    Ok((net, plan))
}

/// Learnable scalars of the switch units and residual scales of a network
/// built by [`build_model`] for length `2^k`.
pub fn count_parameters(config: &ModelConfig, k: u32) -> usize {
    unit_count(config, k) * config.variant.unit_parameters(config.maps) + residual_units(config, k).len()
}
