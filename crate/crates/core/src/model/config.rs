use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Operator placed between consecutive pyramid levels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TcmVariant {
    #[serde(rename = "maxpool")]
    MaxPool,
    #[serde(rename = "avgpool")]
    AvgPool,
    Subsample,
    Conv,
    Attention,
}

impl TcmVariant {
    pub const ALL: [TcmVariant; 5] = [
        TcmVariant::Conv,
        TcmVariant::Subsample,
        TcmVariant::AvgPool,
        TcmVariant::Attention,
        TcmVariant::MaxPool,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TcmVariant::MaxPool => "maxpool",
            TcmVariant::AvgPool => "avgpool",
            TcmVariant::Subsample => "subsample",
            TcmVariant::Conv => "conv",
            TcmVariant::Attention => "attention",
        }
    }

    /// Whether the block carries learnable weights.
    pub fn is_parametric(self) -> bool {
        matches!(self, TcmVariant::Conv | TcmVariant::Attention)
    }

    /// Stable integer code used across the C interface.
    pub fn code(self) -> u32 {
        match self {
            TcmVariant::MaxPool => 0,
            TcmVariant::AvgPool => 1,
            TcmVariant::Subsample => 2,
            TcmVariant::Conv => 3,
            TcmVariant::Attention => 4,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Some(match code {
            0 => TcmVariant::MaxPool,
            1 => TcmVariant::AvgPool,
            2 => TcmVariant::Subsample,
            3 => TcmVariant::Conv,
            4 => TcmVariant::Attention,
            _ => return None,
        })
    }
}

impl fmt::Display for TcmVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TcmVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TcmVariant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            Error::invalid(format!(
                "unknown TCM variant {s:?} (expected maxpool, avgpool, subsample, conv or attention)"
            ))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Clip feature width `D_in`.
    pub input_dim: usize,
    /// Latent width `D`.
    pub embed_dim: usize,
    /// Pyramid depth `L` (including the projected level).
    pub num_levels: usize,
    pub tcm_variant: TcmVariant,
    pub tcm_kernel: usize,
    pub num_classes: usize,
    /// Kernel of every head convolution.
    pub head_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 16,
            embed_dim: 64,
            num_levels: 4,
            tcm_variant: TcmVariant::MaxPool,
            tcm_kernel: 3,
            num_classes: 3,
            head_kernel: 3,
        }
    }
}

/// Kernel of the two projection convolutions.
pub const PROJECTION_KERNEL: usize = 3;

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_levels < 2 {
            return Err(Error::Config(format!(
                "num_levels must be >= 2, got {}",
                self.num_levels
            )));
        }
        for (name, v) in [
            ("input_dim", self.input_dim),
            ("embed_dim", self.embed_dim),
            ("num_classes", self.num_classes),
            ("tcm_kernel", self.tcm_kernel),
            ("head_kernel", self.head_kernel),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }

    /// Temporal stride of level `l` (0-based) relative to the input.
    pub fn level_stride(&self, level: usize) -> usize {
        1 << level
    }

    /// Shortest input the pyramid accepts: `2^(L-1)`.
    pub fn min_length(&self) -> usize {
        1 << (self.num_levels - 1)
    }

    /// `ceil(T / 2^l)` for each level.
    pub fn level_lengths(&self, len: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.num_levels);
        let mut cur = len;
        for _ in 0..self.num_levels {
            out.push(cur);
            cur = cur.div_ceil(2);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in TcmVariant::ALL {
            assert_eq!(v.name().parse::<TcmVariant>().unwrap(), v);
            assert_eq!(TcmVariant::from_code(v.code()), Some(v));
        }
        assert!("pool".parse::<TcmVariant>().is_err());
    }

    #[test]
    fn rejects_single_level() {
        let cfg = ModelConfig {
            num_levels: 1,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }

    #[test]
    fn ceil_lengths() {
        let cfg = ModelConfig {
            num_levels: 4,
            ..ModelConfig::default()
        };
        assert_eq!(cfg.level_lengths(16), vec![16, 8, 4, 2]);
        assert_eq!(cfg.level_lengths(13), vec![13, 7, 4, 2]);
    }
}
