use crate::error::{Error, Result};
use crate::rng::{rng_from, sub_seed, TAG_ATTENTION, TAG_INIT_DISC};
use crate::tensor::{ParamId, ParamSet, Tape, Tensor, Var};

use super::config::{AttentionMode, ModelConfig};
use super::layers::{ChannelAttention, Dense};

pub const DISC_GROUP: u16 = 1;

/// Tape handles of one discriminator pass.
#[derive(Clone, Copy, Debug)]
pub struct DiscPass {
    /// `[1, 1]` real/fake logit.
    pub source: Var,
    /// `[1, K]` class logits.
    pub class_logits: Var,
    /// `[C]` channel weights, when attention is on.
    pub channel_weights: Option<Var>,
}

/// Stride-2 convolution stack over the flattened bag, channel attention,
/// global average pooling and two linear heads.
#[derive(Clone, Debug)]
pub struct Discriminator {
    cfg: ModelConfig,
    params: ParamSet,
    convs: Vec<(ParamId, ParamId)>,
    attention: ChannelAttention,
    source_head: Dense,
    class_head: Dense,
}

impl Discriminator {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_from(sub_seed(seed, TAG_INIT_DISC));
        let mut set = ParamSet::new(DISC_GROUP);
        let k = cfg.kernel_size;
        let mut convs = Vec::with_capacity(cfg.disc_channels.len());
        let mut c_in = 1;
        for (i, &c_out) in cfg.disc_channels.iter().enumerate() {
            let w = set.add(
                format!("conv{i}.w"),
                Tensor::xavier_uniform(&[c_out, c_in, k], c_in * k, c_out * k, &mut rng),
            );
            let b = set.add(format!("conv{i}.b"), Tensor::zeros(&[c_out]));
            convs.push((w, b));
            c_in = c_out;
        }
        let source_head = Dense::new(&mut set, "source_head", c_in, 1, &mut rng);
        let class_head = Dense::new(&mut set, "class_head", c_in, cfg.n_classes, &mut rng);
        // separate stream: attention on/off leaves conv and head weights unchanged
        let mut attn_rng = rng_from(sub_seed(seed, TAG_ATTENTION));
        let attention = ChannelAttention::new(&mut set, "channel_attn", c_in, cfg.channel_attention, &mut attn_rng);
        Ok(Discriminator {
            cfg: cfg.clone(),
            params: set,
            convs,
            attention,
            source_head,
            class_head,
        })
    }

    pub fn param_count(cfg: &ModelConfig) -> usize {
        let k = cfg.kernel_size;
        let mut c_in = 1;
        let mut n = 0;
        for &c in &cfg.disc_channels {
            n += c * c_in * k + c;
            c_in = c;
        }
        n + Dense::param_count(c_in, 1)
            + Dense::param_count(c_in, cfg.n_classes)
            + ChannelAttention::param_count(c_in, cfg.channel_attention)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn attention_mode(&self) -> AttentionMode {
        self.attention.mode
    }

    /// Conv feature map `[C, L]` of the last layer, before attention.
    pub fn features(&self, tape: &mut Tape, bag: Var) -> Result<Var> {
        let len: usize = tape.shape(bag).iter().product();
        let mut h = tape.reshape(bag, &[1, len])?;
        let k = self.cfg.kernel_size;
        let pad = k / 2;
        for (i, &(w, b)) in self.convs.iter().enumerate() {
            let l_in = tape.shape(h)[1];
            if l_in + 2 * pad < k {
                return Err(Error::LayerShape {
                    layer: format!("conv{i}"),
                    detail: format!("input length {l_in} is shorter than kernel {k} after padding {pad}"),
                });
            }
            let wv = tape.param(&self.params, w);
            let bv = tape.param(&self.params, b);
            h = tape.conv1d(h, wv, bv, 2, pad)?;
            h = tape.relu(h);
        }
        Ok(h)
    }

    /// `bag` of any shape whose element count is `t · instance_dim`.
    pub fn forward(&self, tape: &mut Tape, bag: Var) -> Result<DiscPass> {
        let expected = self.cfg.disc_input_len();
        let len: usize = tape.shape(bag).iter().product();
        if len != expected {
            return Err(Error::LayerShape {
                layer: "input".into(),
                detail: format!("got {len} values, expected {expected}"),
            });
        }
        let f = self.features(tape, bag)?;
        let (channel_weights, f) = self.attention.forward(tape, &self.params, f)?;
        let pooled = tape.mean_axis(f, 1)?;
        let c = tape.shape(pooled)[0];
        let pooled = tape.reshape(pooled, &[1, c])?;
        let source = self.source_head.forward(tape, &self.params, pooled)?;
        let class_logits = self.class_head.forward(tape, &self.params, pooled)?;
        Ok(DiscPass {
            source,
            class_logits,
            channel_weights,
        })
    }

    /// `(source logit, class logits)` without gradient tracking.
    pub fn logits(&self, bag: &Tensor) -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::inference();
        let x = tape.constant(bag.clone());
        let pass = self.forward(&mut tape, x)?;
        Ok((
            tape.value(pass.source).item(),
            tape.value(pass.class_logits).data().to_vec(),
        ))
    }

    pub fn predict_class(&self, bag: &Tensor) -> Result<usize> {
        Ok(crate::tensor::argmax(&self.logits(bag)?.1))
    }
}
