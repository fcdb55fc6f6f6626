use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Switch Unit flavour; the non-baseline tags are ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SwitchVariant {
    Baseline,
    /// Identity in place of swapHalf.
    NoSwap,
    /// A learned gate mixes straight and swapped inputs.
    SwapGate,
    /// Two affine layers with a ReLU between them replace the unit.
    TwoFc,
    /// Update gate and swapHalf kept; candidates come from two affine layers.
    TwoFcGate,
}

impl SwitchVariant {
    pub const ALL: [SwitchVariant; 5] = [
        SwitchVariant::Baseline,
        SwitchVariant::NoSwap,
        SwitchVariant::SwapGate,
        SwitchVariant::TwoFc,
        SwitchVariant::TwoFcGate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SwitchVariant::Baseline => "baseline",
            SwitchVariant::NoSwap => "no_swap",
            SwitchVariant::SwapGate => "swap_gate",
            SwitchVariant::TwoFc => "two_fc",
            SwitchVariant::TwoFcGate => "two_fc_gate",
        }
    }

    /// Learnable scalars in one unit with `m` feature maps per cell.
    pub fn unit_parameters(self, m: usize) -> usize {
        let gated = 16 * m * m + 8 * m;
        let gate = 4 * m * m + 2 * m;
        let fc = 16 * m * m + 6 * m;
        match self {
            SwitchVariant::Baseline | SwitchVariant::NoSwap => gated,
            SwitchVariant::SwapGate => gated + gate,
            SwitchVariant::TwoFc => fc,
            SwitchVariant::TwoFcGate => fc + gate,
        }
    }
}

impl FromStr for SwitchVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SwitchVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config("variant", format!("unknown variant `{s}`")))
    }
}

impl fmt::Display for SwitchVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// How switch layers map onto parameter sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sharing {
    /// One unit per half block (k-1 consecutive layers), plus the final layer.
    Consecutive,
    /// Per half block: distinct first and last layers, one shared unit for
    /// the layers between; plus the final layer.
    Minimal,
    /// Every switch layer has its own unit. Ties the model to one length.
    None,
}

impl Sharing {
    pub fn name(self) -> &'static str {
        match self {
            Sharing::Consecutive => "consecutive",
            Sharing::Minimal => "minimal",
            Sharing::None => "none",
        }
    }
}

impl FromStr for Sharing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "consecutive" => Ok(Sharing::Consecutive),
            "minimal" => Ok(Sharing::Minimal),
            "none" => Ok(Sharing::None),
            _ => Err(Error::config("sharing", format!("unknown sharing scheme `{s}`"))),
        }
    }
}

impl fmt::Display for Sharing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Feature maps per cell; must be even.
    pub maps: usize,
    /// Stacked Beneš blocks.
    pub blocks: usize,
    pub variant: SwitchVariant,
    pub sharing: Sharing,
    /// Scaled skip connections between consecutive blocks.
    pub residual: bool,
    /// Left shuffles in the first half of each block and right in the
    /// second; `false` uses left shuffles throughout.
    pub benes: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            maps: 48,
            blocks: 1,
            variant: SwitchVariant::Baseline,
            sharing: Sharing::Consecutive,
            residual: true,
            benes: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.maps == 0 || !self.maps.is_multiple_of(2) {
            return Err(Error::config(
                "maps",
                format!("feature maps must be a positive even number, got {}", self.maps),
            ));
        }
        if self.blocks == 0 {
            return Err(Error::config("blocks", "at least one block is required"));
        }
        Ok(())
    }
}
