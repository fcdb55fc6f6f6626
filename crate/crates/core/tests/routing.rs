use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sxnet_core::model::{shuffle_map, Direction};
use sxnet_core::router::{route_permutation, simulate_routing, SwitchSetting};
use sxnet_core::Error;

/// Replays `setting` with the network's gather-style shuffle maps, checking
/// after every stage that each wire holds exactly one message. Returns the
/// output wire of every input.
fn replay(setting: &SwitchSetting) -> Vec<usize> {
    let k = setting.k;
    let n = 1usize << k;
    let left = shuffle_map(k, Direction::Left);
    let right = shuffle_map(k, Direction::Right);
    let mut wires: Vec<usize> = (0..n).collect();
    for (stage, switches) in setting.stages.iter().enumerate() {
        for (j, &crossed) in switches.iter().enumerate() {
            if crossed {
                wires.swap(2 * j, 2 * j + 1);
            }
        }
        let map = if stage + 1 == setting.stages.len() {
            None
        } else if stage < k as usize - 1 {
            Some(&left)
        } else {
            Some(&right)
        };
        if let Some(map) = map {
            wires = map.iter().map(|&src| wires[src]).collect();
        }
        let mut seen = vec![false; n];
        for &m in &wires {
            assert!(!seen[m], "collision after stage {stage}");
            seen[m] = true;
        }
    }
    let mut out = vec![0; n];
    for (pos, &m) in wires.iter().enumerate() {
        out[m] = pos;
    }
    out
}

fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in all_permutations(n - 1) {
        for i in 0..n {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn check(p: &[usize]) {
    let setting = route_permutation(p).unwrap();
    assert_eq!(setting.stage_count(), 2 * p.len().trailing_zeros() as usize - 1);
    assert_eq!(replay(&setting), p, "replay of {p:?}");
    assert_eq!(simulate_routing(&setting).unwrap(), p);
}

#[test]
fn every_permutation_of_four_wires_routes() {
    let perms = all_permutations(4);
    assert_eq!(perms.len(), 24);
    for p in &perms {
        check(p);
    }
}

#[test]
fn every_permutation_of_eight_wires_routes() {
    let perms = all_permutations(8);
    assert_eq!(perms.len(), 40320);
    for p in &perms {
        check(p);
    }
}

#[test]
fn thousand_random_permutations_per_width() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for k in 3..=8u32 {
        for _ in 0..1000 {
            let mut p: Vec<usize> = (0..1 << k).collect();
            p.shuffle(&mut rng);
            check(&p);
        }
    }
}

#[test]
fn large_network_routes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut p: Vec<usize> = (0..1 << 14).collect();
    p.shuffle(&mut rng);
    check(&p);
}

#[test]
fn invalid_inputs_rejected() {
    assert!(matches!(
        route_permutation(&[0, 0, 1, 2]),
        Err(Error::NotPermutation(_))
    ));
    assert!(matches!(route_permutation(&[0, 1, 2]), Err(Error::NotPermutation(_))));
    assert!(matches!(route_permutation(&[0]), Err(Error::NotPermutation(_))));
    assert!(matches!(
        route_permutation(&[0, 1, 2, 4]),
        Err(Error::NotPermutation(_))
    ));
}

proptest! {
    #[test]
    fn random_settings_realise_a_permutation(k in 1u32..7, seed in any::<u64>()) {
        // Any switch setting is a valid routing; the router must reproduce
        // whatever permutation it realises.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut setting = SwitchSetting::straight(k);
        for stage in &mut setting.stages {
            for s in stage.iter_mut() {
                *s = rand::Rng::gen(&mut rng);
            }
        }
        let p = replay(&setting);
        prop_assert_eq!(simulate_routing(&setting).unwrap(), p.clone());
        let routed = route_permutation(&p).unwrap();
        prop_assert_eq!(replay(&routed), p);
    }
}
