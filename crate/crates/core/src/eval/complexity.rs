//! Analytic multiply-accumulate counts. One MAC is one multiply-add inside
//! a matrix product or convolution; activations, norms, softmax and
//! elementwise adds are not counted.

use serde::Serialize;

use crate::error::Result;
use crate::models::{cnn_generator_layout, AttentionMode, Discriminator, Generator, GeneratorKind, ModelConfig};
use crate::tensor::{Tape, Tensor};

/// Per-component MACs of one generator pass (noise to bag).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct GeneratorMacs {
    pub input: u64,
    /// Q, K, V and output projections over all layers.
    pub projections: u64,
    /// `QKᵀ` and `AV` over all layers and heads: `2 · N_layer · t² · d`.
    pub attention_scores: u64,
    pub feed_forward: u64,
    pub output: u64,
    pub mil: u64,
    /// Transposed convolutions of the CNN generator.
    pub deconv: u64,
}

impl GeneratorMacs {
    pub fn total(&self) -> u64 {
        self.input + self.projections + self.attention_scores + self.feed_forward + self.output + self.mil + self.deconv
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DiscriminatorMacs {
    pub conv: u64,
    pub attention: u64,
    pub heads: u64,
}

impl DiscriminatorMacs {
    pub fn total(&self) -> u64 {
        self.conv + self.attention + self.heads
    }
}

fn transformer_body(cfg: &ModelConfig) -> (u64, u64, u64) {
    let (n, t, d, ff) = (
        cfg.n_layers as u64,
        cfg.bag_size as u64,
        cfg.d_model as u64,
        cfg.d_ff as u64,
    );
    (n * 4 * t * d * d, n * 2 * t * t * d, n * 2 * t * d * ff)
}

fn mil_macs(cfg: &ModelConfig) -> u64 {
    if !cfg.use_mil {
        return 0;
    }
    let (t, d, k) = (cfg.bag_size as u64, cfg.d_model as u64, cfg.n_classes as u64);
    t * d + t * d * k + t * k
}

pub fn generator_macs(cfg: &ModelConfig) -> GeneratorMacs {
    match cfg.generator {
        GeneratorKind::Transformer => {
            let (t, d) = (cfg.bag_size as u64, cfg.d_model as u64);
            let (projections, attention_scores, feed_forward) = transformer_body(cfg);
            GeneratorMacs {
                input: cfg.noise_dim as u64 * t * d,
                projections,
                attention_scores,
                feed_forward,
                output: t * d * cfg.instance_dim as u64,
                mil: mil_macs(cfg),
                deconv: 0,
            }
        }
        GeneratorKind::Cnn => {
            let (widths, base_len) = cnn_generator_layout(cfg);
            let mut len = base_len as u64;
            let mut deconv = 0;
            for w in widths.windows(2) {
                deconv += (w[0] * w[1] * 4) as u64 * len;
                len *= 2;
            }
            GeneratorMacs {
                input: (cfg.noise_dim * widths[0] * base_len) as u64,
                deconv,
                ..Default::default()
            }
        }
    }
}

/// MACs of the MIL classifier on a real bag (input projection, encoder,
/// heads).
pub fn classifier_macs(cfg: &ModelConfig) -> u64 {
    let (t, d) = (cfg.bag_size as u64, cfg.d_model as u64);
    let (p, s, f) = transformer_body(cfg);
    t * cfg.instance_dim as u64 * d + p + s + f + mil_macs(cfg)
}

pub fn discriminator_macs(cfg: &ModelConfig) -> DiscriminatorMacs {
    let k = cfg.kernel_size as u64;
    let lengths = cfg.disc_lengths();
    let mut c_in = 1u64;
    let mut conv = 0;
    for (i, &c) in cfg.disc_channels.iter().enumerate() {
        conv += c as u64 * c_in * k * lengths[i] as u64;
        c_in = c as u64;
    }
    let attention = match cfg.channel_attention {
        AttentionMode::Learned => 2 * c_in * c_in,
        _ => 0,
    };
    DiscriminatorMacs {
        conv,
        attention,
        heads: c_in + c_in * cfg.n_classes as u64,
    }
}

pub fn mac_count_generator(cfg: &ModelConfig) -> u64 {
    generator_macs(cfg).total()
}

pub fn mac_count_discriminator(cfg: &ModelConfig) -> u64 {
    discriminator_macs(cfg).total()
}

/// MACs recorded by the tape for one generator pass.
pub fn instrumented_generator_macs(cfg: &ModelConfig) -> Result<u64> {
    let gen = Generator::new(cfg, 0)?;
    let mut tape = Tape::inference();
    gen.generate(&mut tape, &vec![0.0; cfg.noise_dim], 0)?;
    Ok(tape.macs())
}

pub fn instrumented_classifier_macs(cfg: &ModelConfig) -> Result<u64> {
    let gen = Generator::new(cfg, 0)?;
    let mut tape = Tape::inference();
    let x = tape.constant(Tensor::zeros(&[cfg.bag_size, cfg.instance_dim]));
    gen.classify(&mut tape, x)?;
    Ok(tape.macs())
}

pub fn instrumented_discriminator_macs(cfg: &ModelConfig) -> Result<u64> {
    let disc = Discriminator::new(cfg, 0)?;
    let mut tape = Tape::inference();
    let x = tape.constant(Tensor::zeros(&[cfg.bag_size, cfg.instance_dim]));
    disc.forward(&mut tape, x)?;
    Ok(tape.macs())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComplexityReport {
    pub generator_macs: u64,
    pub discriminator_macs: u64,
    pub total_macs: u64,
    pub generator: GeneratorMacs,
    pub discriminator: DiscriminatorMacs,
    /// `N_layer · t² · d`.
    pub attention_term: u64,
    /// `N_cnn · C · K · L` with `C` the widest conv layer and `L` the
    /// flattened bag length `t · instance_dim` (the `L · d` of the
    /// discriminator bound).
    pub conv_term: u64,
}

pub fn complexity_report(cfg: &ModelConfig) -> ComplexityReport {
    let generator = generator_macs(cfg);
    let discriminator = discriminator_macs(cfg);
    let attention_term = match cfg.generator {
        GeneratorKind::Transformer => (cfg.n_layers * cfg.bag_size * cfg.bag_size * cfg.d_model) as u64,
        GeneratorKind::Cnn => 0,
    };
    let widest = cfg.disc_channels.iter().copied().max().unwrap_or(0);
    ComplexityReport {
        generator_macs: generator.total(),
        discriminator_macs: discriminator.total(),
        total_macs: generator.total() + discriminator.total(),
        generator,
        discriminator,
        attention_term,
        conv_term: (cfg.disc_channels.len() * widest * cfg.kernel_size * cfg.disc_input_len()) as u64,
    }
}
