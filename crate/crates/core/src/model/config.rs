use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoder family of one branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchKind {
    Transformer,
    Cnn,
}

/// Pyramid scale divisors, coarse to fine.
pub const PYRAMID_DIVISORS: [usize; 5] = [16, 8, 4, 2, 1];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Window size in tensor axis order `(d0, d1, d2)`, i.e. `(z, y, x)` for
    /// volumes.
    pub input_dims: [usize; 3],
    pub in_channels: usize,
    pub num_classes: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    /// 1-based transformer layers whose outputs feed the pyramid. Empty
    /// means `depth/4, depth/2, 3·depth/4, depth`.
    pub tap_layers: Vec<usize>,
    /// Channels at scales /16, /8, /4, /2 and full resolution.
    pub decoder_channels: [usize; 5],
    pub lf_branch: BranchKind,
    pub hf_branch: BranchKind,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dims: [128, 128, 128],
            in_channels: 1,
            num_classes: 2,
            patch_size: 16,
            embed_dim: 768,
            depth: 12,
            num_heads: 12,
            mlp_ratio: 4,
            tap_layers: vec![3, 6, 9, 12],
            decoder_channels: [512, 512, 256, 128, 64],
            lf_branch: BranchKind::Transformer,
            hf_branch: BranchKind::Transformer,
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small configuration used for desk-scale runs and tests.
    pub fn tiny() -> Self {
        Self {
            input_dims: [32, 32, 32],
            embed_dim: 64,
            num_heads: 4,
            decoder_channels: [64, 64, 32, 16, 8],
            ..Self::default()
        }
    }

    pub fn default_taps(depth: usize) -> Vec<usize> {
        vec![depth / 4, depth / 2, 3 * depth / 4, depth]
    }

    /// Fill derived defaults (empty tap list).
    pub fn normalized(mut self) -> Self {
        if self.tap_layers.is_empty() {
            self.tap_layers = Self::default_taps(self.depth);
        }
        self
    }

    pub fn taps(&self) -> Vec<usize> {
        if self.tap_layers.is_empty() {
            Self::default_taps(self.depth)
        } else {
            self.tap_layers.clone()
        }
    }

    pub fn grid(&self) -> [usize; 3] {
        self.input_dims.map(|d| d / self.patch_size)
    }

    pub fn num_tokens(&self) -> usize {
        self.grid().iter().product()
    }

    pub fn token_len(&self) -> usize {
        self.patch_size.pow(3) * self.in_channels
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("model: {m}")));
        let p = self.patch_size;
        if p < 16 || !p.is_power_of_two() {
            return bad(format!("patch size {p} must be a power of two >= 16"));
        }
        if self.input_dims.iter().any(|&d| d == 0 || d % p != 0) {
            return bad(format!(
                "input dims {:?} must be positive multiples of the patch size {p}",
                self.input_dims
            ));
        }
        if self.in_channels == 0 {
            return bad("in_channels must be positive".into());
        }
        if self.num_classes != 2 {
            return bad(format!(
                "num_classes must be 2 (binary tumor task), got {}",
                self.num_classes
            ));
        }
        if self.depth == 0 || self.depth % 4 != 0 {
            return bad(format!("depth {} must be a positive multiple of 4", self.depth));
        }
        if self.num_heads == 0 || self.embed_dim == 0 || self.embed_dim % self.num_heads != 0 {
            return bad(format!(
                "embed dim {} must be divisible by {} heads",
                self.embed_dim, self.num_heads
            ));
        }
        if self.mlp_ratio == 0 {
            return bad("mlp_ratio must be positive".into());
        }
        let taps = self.taps();
        if taps.len() != 4
            || taps[0] == 0
            || taps.windows(2).any(|w| w[0] >= w[1])
            || *taps.last().unwrap() != self.depth
        {
            return bad(format!(
                "tap layers {taps:?} must be four strictly increasing layers ending at {}",
                self.depth
            ));
        }
        if self.decoder_channels.iter().any(|&c| c == 0) {
            return bad("decoder channels must be positive".into());
        }
        Ok(())
    }
}
