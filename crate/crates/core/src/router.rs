//! Classical Beneš routing on the shuffle-exchange layout.
//!
//! The network on `2^k` wires has `2k - 1` exchange stages. Each stage is a
//! column of `2^(k-1)` two-by-two switches on wire pairs `(2j, 2j + 1)`;
//! every stage but the last is followed by a shuffle, left rotations for
//! the first `k - 1` and right rotations after that, with the same wiring
//! as [`shuffle_layer`](crate::model::shuffle_layer).
//!
//! Routing uses the looping algorithm level by level: the switch choices at
//! stages `r` and `2k - 2 - r` split the messages between two independent
//! sub-networks, decided by 2-colouring the constraint cycles.

use std::fmt;

use crate::autodiff::kernels::is_permutation;
use crate::error::{Error, Result};
use crate::model::{rotate_index, Direction};

/// Switch states per exchange stage; `true` means crossed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchSetting {
    pub k: u32,
    pub stages: Vec<Vec<bool>>,
}

impl SwitchSetting {
    pub fn straight(k: u32) -> Self {
        assert!(k >= 1, "routing needs at least two wires");
        SwitchSetting {
            k,
            stages: vec![vec![false; 1 << (k - 1)]; 2 * k as usize - 1],
        }
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }
}

impl fmt::Display for SwitchSetting {
    /// One line of `0`/`1` switch bits per stage.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, stage) in self.stages.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            for &crossed in stage {
                f.write_str(if crossed { "1" } else { "0" })?;
            }
        }
        Ok(())
    }
}

/// Direction of the shuffle that follows exchange stage `stage`, if any.
pub fn shuffle_after(k: u32, stage: usize) -> Option<Direction> {
    let k = k as usize;
    if stage + 1 >= 2 * k - 1 {
        None
    } else if stage < k - 1 {
        Some(Direction::Left)
    } else {
        Some(Direction::Right)
    }
}

/// Wire a message on wire `pos` moves to through a shuffle: output wire
/// `x` reads input wire `rotate_index(x, k, dir)`.
fn shuffle_move(pos: usize, k: u32, dir: Direction) -> usize {
    rotate_index(pos, k, dir.inverse())
}

fn check_permutation(p: &[usize]) -> Result<u32> {
    let n = p.len();
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::NotPermutation(format!(
            "length {n} is not a power of two of at least 2"
        )));
    }
    if !is_permutation(p) {
        return Err(Error::NotPermutation(format!("{p:?} is not a permutation of 0..{n}")));
    }
    Ok(n.trailing_zeros())
}

/// Switch settings that send input wire `i` to output wire `p[i]`.
pub fn route_permutation(p: &[usize]) -> Result<SwitchSetting> {
    let k = check_permutation(p)?;
    let n = p.len();
    let last = 2 * k as usize - 2;
    let mut setting = SwitchSetting::straight(k);
    // Message i sits on wire `at[i]` entering stage `lo` and must leave
    // stage `hi` on wire `goal[i]`.
    let mut at: Vec<usize> = (0..n).collect();
    let mut goal: Vec<usize> = p.to_vec();
    let mut by_at = vec![0usize; n];
    let mut by_goal = vec![0usize; n];
    for level in 0..k as usize - 1 {
        let (lo, hi) = (level, last - level);
        for (m, (&a, &g)) in at.iter().zip(&goal).enumerate() {
            by_at[a] = m;
            by_goal[g] = m;
        }
        // Sub-network bit of every message: the low wire bit it leaves
        // stage `lo` with.
        let mut side: Vec<Option<bool>> = vec![None; n];
        for start in (0..n).step_by(2) {
            let first = by_at[start];
            if side[first].is_some() {
                continue;
            }
            // Lowest unassigned switch, set straight.
            let mut stack = vec![(first, false)];
            while let Some((m, s)) = stack.pop() {
                match side[m] {
                    Some(prev) => {
                        debug_assert_eq!(prev, s, "constraint cycle of odd length");
                        continue;
                    }
                    None => side[m] = Some(s),
                }
                stack.push((by_at[at[m] ^ 1], !s));
                stack.push((by_goal[goal[m] ^ 1], !s));
            }
        }
        let lo_dir = shuffle_after(k, lo).expect("outer stage is followed by a shuffle");
        let hi_dir = shuffle_after(k, hi - 1).expect("inner stage is followed by a shuffle");
        for m in 0..n {
            let bit = side[m].unwrap() as usize;
            if at[m] & 1 == 0 {
                setting.stages[lo][at[m] >> 1] = bit == 1;
            }
            if goal[m] & 1 == 0 {
                // Arrives at stage `hi` on the wire with the same high bits
                // as its goal and the sub-network bit as low bit.
                setting.stages[hi][goal[m] >> 1] = bit == 1;
            }
            let leave = (at[m] & !1) | bit;
            let arrive = (goal[m] & !1) | bit;
            at[m] = shuffle_move(leave, k, lo_dir);
            goal[m] = rotate_index(arrive, k, hi_dir);
        }
    }
    let middle = k as usize - 1;
    for m in 0..n {
        debug_assert_eq!(at[m] >> 1, goal[m] >> 1, "middle stage cannot connect");
        if at[m] & 1 == 0 {
            setting.stages[middle][at[m] >> 1] = goal[m] & 1 == 1;
        }
    }
    Ok(setting)
}

/// Pushes message `i` in on wire `i` and returns where every message comes
/// out. Fails if the settings are malformed or two messages ever share a
/// wire.
pub fn simulate_routing(setting: &SwitchSetting) -> Result<Vec<usize>> {
    let k = setting.k;
    if k == 0 || k >= usize::BITS {
        return Err(Error::Settings(format!("unsupported bit width {k}")));
    }
    let n = 1usize << k;
    if setting.stages.len() != 2 * k as usize - 1 {
        return Err(Error::Settings(format!(
            "{} stages given, a network on {n} wires has {}",
            setting.stages.len(),
            2 * k - 1
        )));
    }
    if let Some((i, s)) = setting.stages.iter().enumerate().find(|(_, s)| s.len() != n / 2) {
        return Err(Error::Settings(format!(
            "stage {i} has {} switches, expected {}",
            s.len(),
            n / 2
        )));
    }
    let mut wires: Vec<Option<usize>> = (0..n).map(Some).collect();
    for (stage, switches) in setting.stages.iter().enumerate() {
        for (j, &crossed) in switches.iter().enumerate() {
            if crossed {
                wires.swap(2 * j, 2 * j + 1);
            }
        }
        if let Some(dir) = shuffle_after(k, stage) {
            let mut next = vec![None; n];
            for (pos, msg) in wires.iter().enumerate() {
                let to = shuffle_move(pos, k, dir);
                if next[to].is_some() {
                    return Err(Error::NotPermutation(format!(
                        "two messages collide on wire {to} after stage {stage}"
                    )));
                }
                next[to] = *msg;
            }
            wires = next;
        }
        let mut seen = vec![false; n];
        for msg in wires.iter() {
            match msg {
                Some(m) if !seen[*m] => seen[*m] = true,
                _ => {
                    return Err(Error::NotPermutation(format!(
                        "wire occupancy broken after stage {stage}"
                    )))
                }
            }
        }
    }
    let mut out = vec![0; n];
    for (pos, msg) in wires.iter().enumerate() {
        out[msg.unwrap()] = pos;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_settings_are_identity() {
        for k in 1..=6 {
            let out = simulate_routing(&SwitchSetting::straight(k)).unwrap();
            assert_eq!(out, (0..1usize << k).collect::<Vec<_>>());
        }
    }

    #[test]
    fn identity_routes() {
        let s = route_permutation(&[0, 1, 2, 3]).unwrap();
        assert_eq!(s.stage_count(), 3);
        assert_eq!(simulate_routing(&s).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn reversal_routes() {
        let p: Vec<usize> = (0..8).rev().collect();
        let s = route_permutation(&p).unwrap();
        assert_eq!(simulate_routing(&s).unwrap(), p);
    }

    #[test]
    fn single_switch() {
        let s = route_permutation(&[1, 0]).unwrap();
        assert_eq!(s.stages, vec![vec![true]]);
    }

    #[test]
    fn flipping_one_switch_moves_two_messages() {
        let base = SwitchSetting::straight(3);
        for stage in 0..5 {
            for j in 0..4 {
                let mut s = base.clone();
                s.stages[stage][j] = true;
                let out = simulate_routing(&s).unwrap();
                let moved = out.iter().enumerate().filter(|(i, &o)| *i != o).count();
                assert_eq!(moved, 2);
            }
        }
    }

    #[test]
    fn rejects_non_permutations() {
        assert!(matches!(
            route_permutation(&[0, 0, 1, 2]),
            Err(Error::NotPermutation(_))
        ));
        assert!(route_permutation(&[0, 1, 2]).is_err());
        assert!(route_permutation(&[0]).is_err());
    }

    #[test]
    fn malformed_settings_rejected() {
        let mut s = SwitchSetting::straight(3);
        s.stages.pop();
        assert!(matches!(simulate_routing(&s), Err(Error::Settings(_))));
        let mut s = SwitchSetting::straight(3);
        s.stages[1].push(false);
        assert!(matches!(simulate_routing(&s), Err(Error::Settings(_))));
    }

    #[test]
    fn display_one_line_per_stage() {
        let s = route_permutation(&[1, 0, 2, 3]).unwrap();
        let text = s.to_string();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().all(|l| l.len() == 2));
    }
}
