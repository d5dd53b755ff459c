use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{DEFAULT_EPSILON, DEFAULT_MOMENTUM, KERNEL};

pub const PATCH_SIZE: usize = 5;

/// Declarative network topology.
///
/// Two convolution blocks (linear 2×2 conv, tanh 2×2 conv, batch norm,
/// dropout) shrink the 5×5 patch to 1×1, followed by a tanh hidden layer and
/// a single sigmoid output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub patch_size: usize,
    pub bands: usize,
    pub block_filters: (usize, usize),
    pub hidden_units: usize,
    pub dropout_rate: f64,
    /// Reflectance divisor used to bring inputs into `[0, 1]`.
    pub normalization_divisor: f64,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
    /// Where batch norm sits inside each block; informational.
    pub bn_placement: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::config(format!("unknown preset {other:?} (expected desk or paper)"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        })
    }
}

impl ArchitectureConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => Self::with_filters(32, 64, 128),
            Preset::Paper => Self::with_filters(128, 256, 512),
        }
    }

    pub fn desk() -> Self {
        Self::preset(Preset::Desk)
    }

    pub fn paper() -> Self {
        Self::preset(Preset::Paper)
    }

    pub fn with_filters(block_a: usize, block_b: usize, hidden: usize) -> Self {
        ArchitectureConfig {
            patch_size: PATCH_SIZE,
            bands: 4,
            block_filters: (block_a, block_b),
            hidden_units: hidden,
            dropout_rate: 0.1,
            normalization_divisor: 10_000.0,
            bn_epsilon: DEFAULT_EPSILON,
            bn_momentum: DEFAULT_MOMENTUM,
            bn_placement: "after_tanh_conv".to_string(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size != PATCH_SIZE {
            return Err(Error::config(format!("patch size must be {PATCH_SIZE}, got {}", self.patch_size)));
        }
        if self.bands == 0 || self.bands > u8::MAX as usize {
            return Err(Error::config(format!("band count {} outside 1..=255", self.bands)));
        }
        let (a, b) = self.block_filters;
        if a == 0 || b == 0 || self.hidden_units == 0 {
            return Err(Error::config("filter and hidden-unit counts must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        if !(self.normalization_divisor > 0.0 && self.normalization_divisor.is_finite()) {
            return Err(Error::config("normalization divisor must be positive"));
        }
        if self.bn_epsilon.is_nan()
            || self.bn_epsilon <= 0.0
            || !(0.0..1.0).contains(&self.bn_momentum)
            || self.bn_momentum == 0.0
        {
            return Err(Error::config("batch-norm epsilon must be > 0 and momentum in (0, 1)"));
        }
        Ok(())
    }

    /// Channel count after the last convolution (the flatten width).
    pub fn flatten_width(&self) -> usize {
        let spatial = self.patch_size - 4 * (KERNEL - 1);
        spatial * spatial * self.block_filters.1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub trainable: usize,
    pub non_trainable: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.trainable + self.non_trainable
    }
}

/// Closed-form parameter count.
pub fn count_params(arch: &ArchitectureConfig) -> Result<ParamCount> {
    arch.validate()?;
    let taps = KERNEL * KERNEL;
    let conv = |inp: usize, out: usize| (taps * inp + 1) * out;
    let dense = |inp: usize, out: usize| (inp + 1) * out;
    let (a, b) = arch.block_filters;
    let trainable = conv(arch.bands, a)
        + conv(a, a)
        + 2 * a
        + conv(a, b)
        + conv(b, b)
        + 2 * b
        + dense(arch.flatten_width(), arch.hidden_units)
        + dense(arch.hidden_units, 1);
    Ok(ParamCount { trainable, non_trainable: 2 * a + 2 * b })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_counts() {
        let desk = count_params(&ArchitectureConfig::desk()).unwrap();
        assert_eq!((desk.trainable, desk.non_trainable, desk.total()), (38_017, 192, 38_209));
        let paper = count_params(&ArchitectureConfig::paper()).unwrap();
        assert_eq!((paper.trainable, paper.non_trainable, paper.total()), (594_433, 768, 595_201));
    }

    #[test]
    fn flatten_widths() {
        assert_eq!(ArchitectureConfig::desk().flatten_width(), 64);
        assert_eq!(ArchitectureConfig::paper().flatten_width(), 256);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut a = ArchitectureConfig::desk();
        a.bands = 0;
        assert!(matches!(count_params(&a), Err(Error::Config(_))));
        let mut a = ArchitectureConfig::desk();
        a.patch_size = 10;
        assert!(a.validate().is_err());
        let mut a = ArchitectureConfig::desk();
        a.dropout_rate = 1.0;
        assert!(a.validate().is_err());
    }

    #[test]
    fn preset_parsing() {
        assert_eq!("desk".parse::<Preset>().unwrap(), Preset::Desk);
        assert_eq!("paper".parse::<Preset>().unwrap(), Preset::Paper);
        assert!("huge".parse::<Preset>().is_err());
    }
}
