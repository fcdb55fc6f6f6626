//! Index rotation, shuffle permutations and the switch/shuffle layer plan of
//! stacked Beneš blocks.

use std::sync::Arc;

use super::config::{ModelConfig, Sharing};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Left,
    Right,
}

impl Direction {
    pub fn inverse(self) -> Self {
        match self {
            Direction::Left => Direction::Right,
            Direction::Right => Direction::Left,
        }
    }
}

/// Cyclic one-bit rotation of the `k`-bit representation of `x`.
pub fn rotate_index(x: usize, k: u32, dir: Direction) -> usize {
    assert!(k < usize::BITS, "bit width {k} too large");
    let n = 1usize << k;
    assert!(x < n, "cell index {x} out of range for {k}-bit rotation");
    if k == 0 {
        return x;
    }
    match dir {
        Direction::Left => ((x << 1) & (n - 1)) | (x >> (k - 1)),
        Direction::Right => (x >> 1) | ((x & 1) << (k - 1)),
    }
}

/// Gather map of a shuffle layer on `2^k` cells: output cell `x` reads input
/// cell `rotate_index(x, k, dir)`.
pub fn shuffle_map(k: u32, dir: Direction) -> Vec<usize> {
    (0..1usize << k).map(|x| rotate_index(x, k, dir)).collect()
}

/// `log2(n)` for a power of two `n >= 1`.
pub fn log2_exact(n: usize) -> Option<u32> {
    (n.is_power_of_two()).then(|| n.trailing_zeros())
}

/// One switch layer of an instantiated network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSlot {
    pub block: usize,
    /// Position of the layer within its block.
    pub position: usize,
    /// Index of the switch unit whose parameters this layer uses.
    pub unit: usize,
    /// Whether this layer's input is saved for the next block.
    pub saves_residual: bool,
    /// Residual scale (keyed by unit) applied to the saved input of the
    /// same position in the previous block.
    pub residual_from_previous: Option<usize>,
    pub shuffle_after: Option<Direction>,
}

/// Layer-by-layer wiring of a network built for sequences of length `2^k`.
#[derive(Debug, Clone)]
pub struct LayerPlan {
    pub k: u32,
    pub blocks: usize,
    pub slots: Vec<LayerSlot>,
    pub(crate) left: Arc<[usize]>,
    pub(crate) right: Arc<[usize]>,
}

impl LayerPlan {
    pub fn length(&self) -> usize {
        1 << self.k
    }

    pub fn switch_layers(&self) -> usize {
        self.slots.len()
    }

    pub fn shuffle_layers(&self) -> usize {
        self.slots.iter().filter(|s| s.shuffle_after.is_some()).count()
    }

    /// Distinct units referenced by this plan.
    pub fn units_used(&self) -> Vec<usize> {
        let mut units: Vec<usize> = self.slots.iter().map(|s| s.unit).collect();
        units.sort_unstable();
        units.dedup();
        units
    }

    pub fn shuffle_map(&self, dir: Direction) -> &Arc<[usize]> {
        match dir {
            Direction::Left => &self.left,
            Direction::Right => &self.right,
        }
    }
}

/// Switch layers in block `block` (0-based) of `blocks`: the last layer of
/// every non-final block is omitted.
pub fn layers_in_block(k: u32, block: usize, blocks: usize) -> usize {
    let full = 2 * k as usize - 1;
    if block + 1 == blocks {
        full
    } else {
        full - 1
    }
}

/// Number of switch-unit parameter sets allocated for `config` at length
/// `2^k`. Only the `None` scheme depends on `k`.
pub fn unit_count(config: &ModelConfig, k: u32) -> usize {
    let b = config.blocks;
    match config.sharing {
        Sharing::Consecutive => 2 * b + 1,
        Sharing::Minimal => 6 * b + 1,
        Sharing::None => (0..b).map(|blk| layers_in_block(k, blk, b)).sum(),
    }
}

/// Units that carry a residual scale: those that can sit at a receiving
/// layer (blocks after the first, excluding the final layer).
pub fn residual_units(config: &ModelConfig, k: u32) -> Vec<usize> {
    if !config.residual || config.blocks < 2 {
        return Vec::new();
    }
    let b = config.blocks;
    match config.sharing {
        Sharing::Consecutive => (2..2 * b).collect(),
        Sharing::Minimal => (6..6 * b).collect(),
        Sharing::None => {
            let first = layers_in_block(k, 0, b);
            let mut units = Vec::new();
            let mut start = first;
            for blk in 1..b {
                let n = layers_in_block(k, blk, b);
                let receivers = 2 * k as usize - 2;
                units.extend(start..start + receivers.min(n));
                start += n;
            }
            units
        }
    }
}

fn shared_unit(config: &ModelConfig, k: u32, block: usize, position: usize) -> usize {
    let b = config.blocks;
    let half_len = k as usize - 1;
    if block + 1 == b && position == 2 * half_len {
        return match config.sharing {
            Sharing::Consecutive => 2 * b,
            Sharing::Minimal => 6 * b,
            Sharing::None => unreachable!(),
        };
    }
    let half = position / half_len;
    match config.sharing {
        Sharing::Consecutive => 2 * block + half,
        Sharing::Minimal => {
            let p = position % half_len;
            let role = if p == 0 {
                0
            } else if p + 1 == half_len {
                2
            } else {
                1
            };
            6 * block + 3 * half + role
        }
        Sharing::None => unreachable!(),
    }
}

/// Lays out the switch and shuffle layers for length `2^k`.
pub fn plan_layers(config: &ModelConfig, k: u32) -> LayerPlan {
    assert!(k >= 1, "sequence length must be at least 2");
    let blocks = config.blocks;
    let half_len = k as usize - 1;
    let mut slots = Vec::new();
    let mut next_unit = 0;
    for block in 0..blocks {
        let n = layers_in_block(k, block, blocks);
        for position in 0..n {
            let unit = match config.sharing {
                Sharing::None => {
                    next_unit += 1;
                    next_unit - 1
                }
                _ => shared_unit(config, k, block, position),
            };
            let shuffle_after = (position < 2 * half_len).then_some({
                if !config.benes || position < half_len {
                    Direction::Left
                } else {
                    Direction::Right
                }
            });
            let residual = config.residual && blocks > 1;
            slots.push(LayerSlot {
                block,
                position,
                unit,
                saves_residual: residual && block + 1 < blocks,
                residual_from_previous: (residual && block > 0 && position < 2 * half_len).then_some(unit),
                shuffle_after,
            });
        }
    }
    LayerPlan {
        k,
        blocks,
        slots,
        left: shuffle_map(k, Direction::Left).into(),
        right: shuffle_map(k, Direction::Right).into(),
    }
}
