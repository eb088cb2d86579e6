use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Transformer,
    /// Transposed-convolution stack used by the first ablation variant.
    Cnn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// Dense layer over pooled channel statistics, trained.
    Learned,
    /// Constant weights `1/C`; with the `C` rescaling this is the identity.
    FrozenUniform,
    /// No channel attention module at all.
    Off,
}

/// Architecture hyperparameters shared by generator and discriminator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub schema_version: u32,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub bag_size: usize,
    pub instance_dim: usize,
    pub noise_dim: usize,
    pub n_classes: usize,
    pub disc_channels: Vec<usize>,
    pub kernel_size: usize,
    pub generator: GeneratorKind,
    pub use_mil: bool,
    pub positional_encoding: bool,
    pub channel_attention: AttentionMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            schema_version: 1,
            n_layers: 4,
            n_heads: 8,
            d_model: 64,
            d_ff: 256,
            bag_size: 10,
            instance_dim: 256,
            noise_dim: 32,
            n_classes: 3,
            disc_channels: vec![16, 32, 64, 128, 128],
            kernel_size: 3,
            generator: GeneratorKind::Transformer,
            use_mil: true,
            positional_encoding: true,
            channel_attention: AttentionMode::Learned,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(m));
        if self.n_heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.positional_encoding && !self.d_model.is_multiple_of(2) {
            return fail(format!("positional encoding needs an even d_model, got {}", self.d_model));
        }
        if self.n_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.bag_size == 0 || self.instance_dim == 0 || self.noise_dim == 0 || self.d_ff == 0 {
            return fail("bag_size, instance_dim, noise_dim and d_ff must be positive".into());
        }
        if self.disc_channels.is_empty() || self.disc_channels.contains(&0) || self.kernel_size == 0 {
            return fail("discriminator needs at least one conv layer with positive widths".into());
        }
        if self.generator == GeneratorKind::Cnn && self.use_mil {
            return fail("the CNN generator has no MIL heads; set use_mil = false".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Length of the 1-channel signal the discriminator consumes.
    pub fn disc_input_len(&self) -> usize {
        self.bag_size * self.instance_dim
    }

    /// Output length after each stride-2 conv layer.
    pub fn disc_lengths(&self) -> Vec<usize> {
        let pad = self.kernel_size / 2;
        let mut l = self.disc_input_len();
        self.disc_channels
            .iter()
            .map(|_| {
                l = (l + 2 * pad).saturating_sub(self.kernel_size) / 2 + 1;
                l
            })
            .collect()
    }
}
