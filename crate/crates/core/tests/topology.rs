use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sxnet_core::autodiff::ParamStore;
use sxnet_core::model::{
    build_model, count_parameters, plan_layers, rotate_index, shuffle_map, Direction, ModelConfig, Sharing,
    SwitchVariant,
};

fn config(blocks: usize, sharing: Sharing) -> ModelConfig {
    ModelConfig {
        blocks,
        sharing,
        maps: 4,
        ..ModelConfig::default()
    }
}

/// Rotation through the binary string, independent of the bit arithmetic.
fn rotate_by_string(x: usize, k: u32, dir: Direction) -> usize {
    let s = format!("{:0width$b}", x, width = k as usize);
    let r = match dir {
        Direction::Left => format!("{}{}", &s[1..], &s[..1]),
        Direction::Right => format!("{}{}", &s[s.len() - 1..], &s[..s.len() - 1]),
    };
    usize::from_str_radix(&r, 2).unwrap()
}

#[test]
fn layer_counts_follow_stacking_rule() {
    for sharing in [Sharing::Consecutive, Sharing::Minimal, Sharing::None] {
        for k in 2..=10u32 {
            for b in 1..=4usize {
                let plan = plan_layers(&config(b, sharing), k);
                let k = k as usize;
                assert_eq!(
                    plan.switch_layers(),
                    b * (2 * k - 1) - (b - 1),
                    "switch layers k={k} B={b}"
                );
                assert_eq!(plan.shuffle_layers(), b * (2 * k - 2), "shuffle layers k={k} B={b}");
            }
        }
    }
}

#[test]
fn single_block_has_benes_shape() {
    let k = 5u32;
    let plan = plan_layers(&config(1, Sharing::Consecutive), k);
    let dirs: Vec<_> = plan.slots.iter().map(|s| s.shuffle_after).collect();
    let half = (k - 1) as usize;
    assert!(dirs[..half].iter().all(|d| *d == Some(Direction::Left)));
    assert!(dirs[half..2 * half].iter().all(|d| *d == Some(Direction::Right)));
    assert_eq!(dirs[2 * half], None);

    let plain = plan_layers(
        &ModelConfig {
            benes: false,
            ..config(1, Sharing::Consecutive)
        },
        k,
    );
    assert!(plain.slots[..2 * half]
        .iter()
        .all(|s| s.shuffle_after == Some(Direction::Left)));
}

#[test]
fn consecutive_sharing_is_length_independent() {
    for b in 1..=3 {
        let cfg = config(b, Sharing::Consecutive);
        let counts: Vec<_> = (2..=9).map(|k| count_parameters(&cfg, k)).collect();
        assert!(counts.windows(2).all(|w| w[0] == w[1]), "{counts:?}");
        for k in 2..=9 {
            assert_eq!(plan_layers(&cfg, k).units_used(), (0..2 * b + 1).collect::<Vec<_>>());
        }
    }
    let none = config(1, Sharing::None);
    assert!(count_parameters(&none, 5) > count_parameters(&none, 4));
}

#[test]
fn allocated_scalars_match_parameter_count() {
    for variant in [
        SwitchVariant::Baseline,
        SwitchVariant::NoSwap,
        SwitchVariant::SwapGate,
        SwitchVariant::TwoFc,
        SwitchVariant::TwoFcGate,
    ] {
        for (b, sharing) in [(1, Sharing::Consecutive), (2, Sharing::Minimal), (2, Sharing::None)] {
            let cfg = ModelConfig {
                variant,
                ..config(b, sharing)
            };
            let mut store = ParamStore::<f64>::new();
            build_model(&cfg, 4, &mut store, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            let total = store.num_scalars();
            assert_eq!(total, count_parameters(&cfg, 4), "{variant} {sharing} B={b}");
        }
    }
}

#[test]
fn residuals_connect_blocks() {
    let plan = plan_layers(&config(3, Sharing::Consecutive), 4);
    let receivers = plan.slots.iter().filter(|s| s.residual_from_previous.is_some()).count();
    // Every layer of blocks 2 and 3 except the final one receives a skip input.
    assert_eq!(receivers, 2 * 6);
    let none = plan_layers(
        &ModelConfig {
            residual: false,
            ..config(3, Sharing::Consecutive)
        },
        4,
    );
    assert!(none.slots.iter().all(|s| s.residual_from_previous.is_none()));
}

proptest! {
    #[test]
    fn rotation_matches_bit_string(k in 1u32..16, seed in any::<u64>(), left in any::<bool>()) {
        let x = (seed as usize) & ((1 << k) - 1);
        let dir = if left { Direction::Left } else { Direction::Right };
        prop_assert_eq!(rotate_index(x, k, dir), rotate_by_string(x, k, dir));
    }

    #[test]
    fn shuffles_are_inverse_permutations(k in 1u32..12) {
        let left = shuffle_map(k, Direction::Left);
        let right = shuffle_map(k, Direction::Right);
        let mut seen = vec![false; left.len()];
        for &i in &left {
            prop_assert!(!seen[i]);
            seen[i] = true;
        }
        for x in 0..left.len() {
            prop_assert_eq!(right[left[x]], x);
        }
    }

    #[test]
    fn k_rotations_are_identity(k in 1u32..12, x_seed in any::<usize>()) {
        let x = x_seed & ((1 << k) - 1);
        let mut y = x;
        for _ in 0..k {
            y = rotate_index(y, k, Direction::Left);
        }
        prop_assert_eq!(y, x);
    }
}
