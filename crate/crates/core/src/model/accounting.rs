//! Analytic cost model: multiply-accumulates of one forward pass.
//!
//! Convolutions count `T' * Cout * Cin * k` (border truncation ignored),
//! attention counts its four projections plus the score and mixing
//! products, pooling and subsampling are free. Normalization and
//! activations are not counted.

use serde::Serialize;

use super::config::{ModelConfig, TcmVariant, PROJECTION_KERNEL};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MacBreakdown {
    pub projection: u64,
    pub tcm: u64,
    pub heads: u64,
}

impl MacBreakdown {
    pub fn total(&self) -> u64 {
        self.projection + self.tcm + self.heads
    }
}

fn conv_macs(out_len: usize, cin: usize, cout: usize, kernel: usize) -> u64 {
    (out_len * cout * cin * kernel) as u64
}

/// Cost of one TCM transition from `len_in` to `len_out` steps at width `d`.
pub fn tcm_macs(variant: TcmVariant, kernel: usize, d: usize, len_in: usize, len_out: usize) -> u64 {
    let (d, len_in, len_out) = (d as u64, len_in as u64, len_out as u64);
    match variant {
        TcmVariant::MaxPool | TcmVariant::AvgPool | TcmVariant::Subsample => 0,
        TcmVariant::Conv => len_out * d * d * kernel as u64,
        TcmVariant::Attention => {
            let projections = 2 * len_out * d * d + 2 * len_in * d * d;
            let scores_and_mix = 2 * len_out * len_in * d;
            projections + scores_and_mix
        }
    }
}

pub fn mac_breakdown(config: &ModelConfig, len: usize) -> Result<MacBreakdown> {
    config.validate()?;
    if len < config.min_length() {
        return Err(Error::invalid(format!(
            "sequence length {len} below the pyramid minimum {}",
            config.min_length()
        )));
    }
    let d = config.embed_dim;
    let hk = config.head_kernel;
    let lengths = config.level_lengths(len);
    let projection = conv_macs(len, config.input_dim, d, PROJECTION_KERNEL) + conv_macs(len, d, d, PROJECTION_KERNEL);
    let tcm = lengths
        .windows(2)
        .map(|w| tcm_macs(config.tcm_variant, config.tcm_kernel, d, w[0], w[1]))
        .sum();
    let heads = lengths
        .iter()
        .map(|&n| 4 * conv_macs(n, d, d, hk) + conv_macs(n, d, config.num_classes, hk) + conv_macs(n, d, 2, hk))
        .sum();
    Ok(MacBreakdown { projection, tcm, heads })
}

/// Total multiply-accumulates of one forward pass over `len` clips.
pub fn count_macs(config: &ModelConfig, len: usize) -> Result<u64> {
    mac_breakdown(config, len).map(|b| b.total())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(variant: TcmVariant) -> ModelConfig {
        ModelConfig {
            tcm_variant: variant,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn pooling_is_free() {
        let m = count_macs(&cfg(TcmVariant::MaxPool), 256).unwrap();
        assert_eq!(m, count_macs(&cfg(TcmVariant::Subsample), 256).unwrap());
        assert_eq!(m, count_macs(&cfg(TcmVariant::AvgPool), 256).unwrap());
        assert!(m < count_macs(&cfg(TcmVariant::Conv), 256).unwrap());
        assert!(m < count_macs(&cfg(TcmVariant::Attention), 256).unwrap());
    }

    #[test]
    fn hand_counted_small_model() {
        let c = ModelConfig {
            input_dim: 2,
            embed_dim: 4,
            num_levels: 2,
            tcm_variant: TcmVariant::Conv,
            tcm_kernel: 3,
            num_classes: 1,
            head_kernel: 3,
        };
        // projection: 8*4*2*3 + 8*4*4*3 = 192 + 384
        // tcm: 4*4*4*3 = 192
        // heads over 8 + 4 steps: 12 * (4*48 + 12 + 24) = 12 * 228
        let b = mac_breakdown(&c, 8).unwrap();
        assert_eq!(b.projection, 576);
        assert_eq!(b.tcm, 192);
        assert_eq!(b.heads, 12 * 228);
    }

    #[test]
    fn rejects_short_input() {
        assert!(count_macs(&ModelConfig::default(), 4).is_err());
    }
}
