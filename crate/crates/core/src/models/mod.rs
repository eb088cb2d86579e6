//! Transformer-MIL generator, channel-attention CNN discriminator and their
//! building blocks.

mod checkpoint;
mod config;
mod discriminator;
mod generator;
mod layers;

pub use checkpoint::Checkpoint;
pub use config::{AttentionMode, GeneratorKind, ModelConfig};
pub use discriminator::{DiscPass, Discriminator, DISC_GROUP};
pub use generator::{cnn_generator_layout, CnnGenerator, GenPass, Generator, TransformerGenerator, GEN_GROUP};
pub use layers::{
    conjunctive_pool, mil_conjunctive_pool, mil_nll, positional_encoding, ChannelAttention, Dense, LayerNorm,
    MilHeads, MilOutput, MilVars, MultiHeadAttention,
};

use crate::error::Result;
use crate::tensor::{argmax, Tensor};

/// Per-instance contributions behind a MIL bag prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct Explanation {
    /// `[t, K]`, row `j` is `a_j · ŷ_j`.
    pub saliency: Tensor,
    pub attention: Vec<f64>,
    pub instance_probs: Tensor,
    pub bag_probs: Vec<f64>,
    pub predicted_class: usize,
    /// Instance with the largest saliency for the predicted class.
    pub top_instance: usize,
}

pub fn explain(bag: &Tensor, gen: &Generator) -> Result<Explanation> {
    let out = gen.predict(bag)?;
    let predicted_class = out.predicted_class();
    let (t, k) = out.saliency.dims2()?;
    let column: Vec<f64> = (0..t).map(|j| out.saliency.data()[j * k + predicted_class]).collect();
    Ok(Explanation {
        top_instance: argmax(&column),
        predicted_class,
        saliency: out.saliency,
        attention: out.attention,
        instance_probs: out.instance_probs,
        bag_probs: out.bag_probs,
    })
}
