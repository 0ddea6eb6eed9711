use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// 3D kernels throughout: features mix across neighbouring frames.
    E3d,
    /// Every temporal kernel extent is 1, so frames are processed independently.
    E2d,
}

/// Architecture hyperparameters. Every field has a default and can be overridden from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub variant: Variant,
    /// Image channels: 1 for grayscale, 3 for RGB.
    pub input_channels: usize,
    /// Feature width, constant from the stem through the last block.
    pub stem_channels: usize,
    pub block_count: usize,
    /// 1-based indices of the blocks whose first convolution has spatial stride 2.
    /// `None` selects [`NetConfig::default_downsample_blocks`].
    pub downsample_blocks: Option<Vec<usize>>,
    pub reduction_ratio: usize,
    pub global_context: bool,
    pub clip_length: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            variant: Variant::E3d,
            input_channels: 1,
            stem_channels: 16,
            block_count: 8,
            downsample_blocks: None,
            reduction_ratio: 4,
            global_context: true,
            clip_length: 16,
        }
    }
}

impl NetConfig {
    /// Three downsampling blocks, alternating with plain ones from the front (`1, 3, 5`).
    /// Shorter stacks keep three downsamplers and drop the plain blocks between them.
    pub fn default_downsample_blocks(block_count: usize) -> Vec<usize> {
        match block_count {
            0 => vec![],
            1 => vec![1],
            2 => vec![1, 2],
            3 => vec![1, 2, 3],
            4 => vec![1, 3, 4],
            _ => vec![1, 3, 5],
        }
    }

    pub fn downsample_indices(&self) -> Vec<usize> {
        self.downsample_blocks
            .clone()
            .unwrap_or_else(|| Self::default_downsample_blocks(self.block_count))
    }

    /// Ratio between input and output spatial size: 2 for the stem times 2 per downsampler.
    pub fn spatial_factor(&self) -> usize {
        2usize << self.downsample_indices().len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.input_channels == 0 {
            return fail("input_channels must be >= 1".into());
        }
        if self.stem_channels == 0 {
            return fail("stem_channels must be >= 1".into());
        }
        if self.reduction_ratio == 0 || self.stem_channels % self.reduction_ratio != 0 {
            return fail(format!(
                "stem_channels ({}) must be divisible by reduction_ratio ({})",
                self.stem_channels, self.reduction_ratio
            ));
        }
        if self.clip_length == 0 {
            return fail("clip_length must be >= 1".into());
        }
        let ds = self.downsample_indices();
        if ds.len() > 3 {
            return fail(format!(
                "at most 3 downsample_blocks are allowed (1/16 output), got {ds:?}"
            ));
        }
        if self.block_count < ds.len() {
            return fail(format!(
                "block_count ({}) must be >= number of downsample_blocks ({})",
                self.block_count,
                ds.len()
            ));
        }
        if ds.windows(2).any(|w| w[0] >= w[1]) {
            return fail(format!("downsample_blocks must be strictly increasing, got {ds:?}"));
        }
        if ds.iter().any(|&i| i == 0 || i > self.block_count) {
            return fail(format!(
                "downsample_blocks {ds:?} must lie in 1..={}",
                self.block_count
            ));
        }
        // alternation is required whenever the stack is long enough to allow it
        if self.block_count + 1 >= 2 * ds.len() && ds.windows(2).any(|w| w[1] == w[0] + 1) {
            return fail(format!(
                "downsample_blocks {ds:?} must alternate with non-downsampling blocks"
            ));
        }
        Ok(())
    }

    pub(crate) fn kernel(&self, k: usize) -> [usize; 3] {
        match self.variant {
            Variant::E3d => [k, k, k],
            Variant::E2d => [1, k, k],
        }
    }

    pub(crate) fn same_padding(&self, k: usize) -> [usize; 3] {
        let p = (k - 1) / 2;
        match self.variant {
            Variant::E3d => [p, p, p],
            Variant::E2d => [0, p, p],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let cfg = NetConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.block_count, 8);
        assert_eq!(cfg.reduction_ratio, 4);
        assert_eq!(cfg.clip_length, 16);
        assert!(cfg.global_context);
        assert_eq!(cfg.downsample_indices(), vec![1, 3, 5]);
        assert_eq!(cfg.spatial_factor(), 16);
    }

    #[test]
    fn ablation_block_counts_all_reach_sixteen() {
        for blocks in [4, 6, 8, 10] {
            let cfg = NetConfig {
                block_count: blocks,
                ..NetConfig::default()
            };
            cfg.validate().unwrap();
            assert_eq!(cfg.spatial_factor(), 16, "blocks={blocks}");
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = [
            NetConfig {
                stem_channels: 10,
                ..NetConfig::default()
            },
            NetConfig {
                downsample_blocks: Some(vec![1, 2, 5]),
                ..NetConfig::default()
            },
            NetConfig {
                downsample_blocks: Some(vec![1, 3, 9]),
                ..NetConfig::default()
            },
            NetConfig {
                downsample_blocks: Some(vec![1, 3, 5, 7]),
                ..NetConfig::default()
            },
            NetConfig {
                clip_length: 0,
                ..NetConfig::default()
            },
        ];
        for cfg in bad {
            let err = cfg.validate().unwrap_err();
            assert!(matches!(err, Error::InvalidConfig(_)), "{err}");
        }
    }

    #[test]
    fn json_overrides_merge_with_defaults() {
        let cfg: NetConfig =
            serde_json::from_str(r#"{"variant":"e2d","block_count":6,"global_context":false}"#)
                .unwrap();
        assert_eq!(cfg.variant, Variant::E2d);
        assert_eq!(cfg.block_count, 6);
        assert!(!cfg.global_context);
        assert_eq!(cfg.stem_channels, 16);
        assert!(serde_json::from_str::<NetConfig>(r#"{"blocks":6}"#).is_err());
    }
}
