use serde::{Deserialize, Serialize};

use crate::error::{QanaError, Result};

/// Ghost module: `round(ratio·C)` base channels from a pointwise conv, the
/// rest from a masked separable `k×k` branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GhostConfig {
    pub out_channels: usize,
    pub ratio: f64,
    pub ghost_kernel: usize,
}

impl GhostConfig {
    pub fn new(out_channels: usize, ratio: f64, ghost_kernel: usize) -> Result<Self> {
        let cfg = Self {
            out_channels,
            ratio,
            ghost_kernel,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn base_channels(&self) -> usize {
        (self.ratio * self.out_channels as f64).round() as usize
    }

    pub fn ghost_channels(&self) -> usize {
        self.out_channels.saturating_sub(self.base_channels())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(QanaError::Config(format!("ghost ratio {} outside (0,1)", self.ratio)));
        }
        let base = self.base_channels();
        if base == 0 || base >= self.out_channels {
            return Err(QanaError::Config(format!(
                "ghost ratio {} with C={} leaves {base} base and {} ghost channels; both must be >= 1",
                self.ratio,
                self.out_channels,
                self.ghost_channels()
            )));
        }
        if self.ghost_kernel.is_multiple_of(2) {
            return Err(QanaError::Config(format!(
                "ghost kernel {} must be odd",
                self.ghost_kernel
            )));
        }
        Ok(())
    }
}

pub const INPUT_SIDE: usize = 64;
pub const INPUT_CHANNELS: usize = 3;
pub const HEAD_SIDE: usize = 4;
pub const NUM_BLOCKS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QanaConfig {
    pub block_channels: [usize; NUM_BLOCKS],
    pub ghost_ratio: f64,
    pub ghost_kernel: usize,
    pub dropout: f64,
    pub eca_kernel: usize,
    /// Head channels divided by this gives the SE bottleneck width.
    pub se_reduction: usize,
    pub num_classes: usize,
    pub head_channels: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for QanaConfig {
    fn default() -> Self {
        Self {
            block_channels: [32, 64, 128, 256],
            ghost_ratio: 0.5,
            ghost_kernel: 3,
            dropout: 0.2,
            eca_kernel: 3,
            se_reduction: 16,
            num_classes: 7,
            head_channels: 256,
            bn_eps: 1e-3,
            bn_momentum: 0.1,
        }
    }
}

impl QanaConfig {
    /// Narrow variant used for desk-scale experiments and tests. Same graph,
    /// same 64×64×3 input and 4×4 head.
    pub fn compact() -> Self {
        Self {
            block_channels: [8, 16, 32, 64],
            head_channels: 64,
            se_reduction: 8,
            ..Self::default()
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [INPUT_SIDE, INPUT_SIDE, INPUT_CHANNELS]
    }

    pub fn ghost(&self, block: usize) -> GhostConfig {
        GhostConfig {
            out_channels: self.block_channels[block],
            ratio: self.ghost_ratio,
            ghost_kernel: self.ghost_kernel,
        }
    }

    pub fn block_in_channels(&self, block: usize) -> usize {
        if block == 0 {
            INPUT_CHANNELS
        } else {
            self.block_channels[block - 1]
        }
    }

    /// Spatial side length after each block: 32, 16, 8, 4.
    pub fn spatial_trajectory(&self) -> [usize; NUM_BLOCKS] {
        let mut out = [0; NUM_BLOCKS];
        let mut s = INPUT_SIDE;
        for o in &mut out {
            s /= 2;
            *o = s;
        }
        out
    }

    pub fn se_bottleneck(&self) -> usize {
        (self.head_channels / self.se_reduction.max(1)).max(1)
    }

    pub fn flatten_dim(&self) -> usize {
        HEAD_SIDE * HEAD_SIDE * self.head_channels
    }

    pub fn validate(&self) -> Result<()> {
        for b in 0..NUM_BLOCKS {
            self.ghost(b).validate()?;
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(QanaError::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        if self.eca_kernel.is_multiple_of(2) || self.eca_kernel == 0 {
            return Err(QanaError::Config(format!("eca kernel {} must be odd", self.eca_kernel)));
        }
        if self.num_classes < 2 || self.head_channels == 0 || self.se_reduction == 0 {
            return Err(QanaError::Config(
                "num_classes >= 2, head_channels >= 1 and se_reduction >= 1 required".into(),
            ));
        }
        if self.bn_eps <= 0.0 || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(QanaError::Config("bn_eps > 0 and bn_momentum in [0,1] required".into()));
        }
        if *self.spatial_trajectory().last().unwrap() != HEAD_SIDE {
            return Err(QanaError::Config("four 2× pools must end at 4×4".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_head_contract() {
        let c = QanaConfig::default();
        c.validate().unwrap();
        assert_eq!(c.spatial_trajectory(), [32, 16, 8, 4]);
        assert_eq!(c.flatten_dim(), 4096);
        assert_eq!(c.se_bottleneck(), 16);
        let g = c.ghost(1);
        assert_eq!((g.base_channels(), g.ghost_channels()), (32, 32));
    }

    #[test]
    fn ghost_channel_split_is_exhaustively_consistent() {
        for c in (8..=256).step_by(8) {
            for mu in [0.25, 0.5, 0.75] {
                let g = GhostConfig::new(c, mu, 3).unwrap();
                assert_eq!(g.base_channels() + g.ghost_channels(), c);
                assert!(g.base_channels() >= 1 && g.ghost_channels() >= 1);
            }
        }
    }

    #[test]
    fn degenerate_ratios_are_rejected() {
        assert!(GhostConfig::new(2, 0.1, 3).is_err());
        assert!(GhostConfig::new(2, 0.9, 3).is_err());
        assert!(GhostConfig::new(8, 0.5, 2).is_err());
        assert!(GhostConfig::new(8, 1.0, 3).is_err());
    }
}
