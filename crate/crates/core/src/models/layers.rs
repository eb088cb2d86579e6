use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamSet, Tape, Tensor, Var};

use super::config::AttentionMode;

/// `y = x W + b` for `x: [n, fan_in]`.
#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(set: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let w = set.add(
            format!("{name}.w"),
            Tensor::xavier_uniform(&[fan_in, fan_out], fan_in, fan_out, rng),
        );
        let b = set.add(format!("{name}.b"), Tensor::zeros(&[fan_out]));
        Dense { w, b }
    }

    pub fn forward(&self, tape: &mut Tape, set: &ParamSet, x: Var) -> Result<Var> {
        let w = tape.param(set, self.w);
        let b = tape.param(set, self.b);
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }

    pub fn param_count(fan_in: usize, fan_out: usize) -> usize {
        fan_in * fan_out + fan_out
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(set: &mut ParamSet, name: &str, d: usize) -> Self {
        LayerNorm {
            gamma: set.add(format!("{name}.g"), Tensor::ones(&[d])),
            beta: set.add(format!("{name}.b"), Tensor::zeros(&[d])),
        }
    }

    pub fn forward(&self, tape: &mut Tape, set: &ParamSet, x: Var) -> Result<Var> {
        let g = tape.param(set, self.gamma);
        let b = tape.param(set, self.beta);
        tape.layer_norm(x, g, b, Self::EPS)
    }
}

/// Sinusoidal encoding, `PE[j, 2i] = sin(j / 10000^(2i/d))` and
/// `PE[j, 2i+1] = cos(j / 10000^(2i/d))`.
pub fn positional_encoding(t: usize, d: usize) -> Result<Tensor> {
    if t == 0 || d == 0 || !d.is_multiple_of(2) {
        return Err(Error::contract(format!(
            "positional encoding needs t >= 1 and even d, got t={t} d={d}"
        )));
    }
    let mut data = vec![0.0; t * d];
    for j in 0..t {
        for i in 0..d / 2 {
            let angle = j as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            data[j * d + 2 * i] = angle.sin();
            data[j * d + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(vec![t, d], data)
}

/// Scaled dot-product self-attention with `n_heads` heads.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Dense,
    pub k: Dense,
    pub v: Dense,
    pub o: Dense,
    pub n_heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(set: &mut ParamSet, name: &str, d: usize, n_heads: usize, rng: &mut R) -> Result<Self> {
        if n_heads == 0 || !d.is_multiple_of(n_heads) {
            return Err(Error::config(format!("d_model {d} is not divisible by {n_heads} heads")));
        }
        Ok(MultiHeadAttention {
            q: Dense::new(set, &format!("{name}.q"), d, d, rng),
            k: Dense::new(set, &format!("{name}.k"), d, d, rng),
            v: Dense::new(set, &format!("{name}.v"), d, d, rng),
            o: Dense::new(set, &format!("{name}.o"), d, d, rng),
            n_heads,
        })
    }

    /// `x: [t, d]` to `[t, d]`.
    pub fn forward(&self, tape: &mut Tape, set: &ParamSet, x: Var) -> Result<Var> {
        let d = tape.shape(x)[1];
        let dh = d / self.n_heads;
        let q = self.q.forward(tape, set, x)?;
        let k = self.k.forward(tape, set, x)?;
        let v = self.v.forward(tape, set, x)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = tape.narrow(q, 1, h * dh, dh)?;
            let kh = tape.narrow(k, 1, h * dh, dh)?;
            let vh = tape.narrow(v, 1, h * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax(scores, 1)?;
            heads.push(tape.matmul(attn, vh)?);
        }
        let merged = if heads.len() == 1 { heads[0] } else { tape.concat(&heads, 1)? };
        self.o.forward(tape, set, merged)
    }

    pub fn param_count(d: usize) -> usize {
        4 * Dense::param_count(d, d)
    }
}

/// The attention (`d → 1`, sigmoid) and classification (`d → K`, softmax)
/// heads of conjunctive MIL pooling.
#[derive(Clone, Copy, Debug)]
pub struct MilHeads {
    pub attn: Dense,
    pub clf: Dense,
}

/// Tape handles of one pooled bag.
#[derive(Clone, Copy, Debug)]
pub struct MilVars {
    /// `[t, 1]`, each in (0, 1).
    pub attention: Var,
    /// `[t, K]`, rows are probability vectors.
    pub instance_probs: Var,
    /// `[1, K]`, `(1/t) Σ_j a_j ŷ_j`.
    pub bag_probs: Var,
    /// `[t, K]`, `a_j ŷ_j`.
    pub saliency: Var,
}

/// Concrete values of [`MilVars`].
#[derive(Clone, Debug, PartialEq)]
pub struct MilOutput {
    pub attention: Vec<f64>,
    pub instance_probs: Tensor,
    pub bag_probs: Vec<f64>,
    pub saliency: Tensor,
}

impl MilVars {
    pub fn values(&self, tape: &Tape) -> MilOutput {
        MilOutput {
            attention: tape.value(self.attention).data().to_vec(),
            instance_probs: tape.value(self.instance_probs).clone(),
            bag_probs: tape.value(self.bag_probs).data().to_vec(),
            saliency: tape.value(self.saliency).clone(),
        }
    }
}

impl MilOutput {
    pub fn predicted_class(&self) -> usize {
        crate::tensor::argmax(&self.bag_probs)
    }
}

/// `(1/t) aᵀ ŷ` for `a: [t, 1]` and `ŷ: [t, K]`.
pub fn conjunctive_pool(tape: &mut Tape, attention: Var, instance_probs: Var) -> Result<Var> {
    let t = tape.shape(attention)[0];
    let at = tape.transpose(attention)?;
    let pooled = tape.matmul(at, instance_probs)?;
    Ok(tape.scale(pooled, 1.0 / t as f64))
}

impl MilHeads {
    pub fn new<R: Rng + ?Sized>(set: &mut ParamSet, name: &str, d: usize, k: usize, rng: &mut R) -> Self {
        MilHeads {
            attn: Dense::new(set, &format!("{name}.attn"), d, 1, rng),
            clf: Dense::new(set, &format!("{name}.clf"), d, k, rng),
        }
    }

    /// Conjunctive pooling of instance embeddings `z: [t, d]`.
    pub fn pool(&self, tape: &mut Tape, set: &ParamSet, z: Var) -> Result<MilVars> {
        let s = self.attn.forward(tape, set, z)?;
        let attention = tape.sigmoid(s);
        let logits = self.clf.forward(tape, set, z)?;
        let instance_probs = tape.softmax(logits, 1)?;
        let bag_probs = conjunctive_pool(tape, attention, instance_probs)?;
        let t = tape.shape(attention)[0];
        let a = tape.reshape(attention, &[t])?;
        let saliency = tape.scale_rows(instance_probs, a)?;
        Ok(MilVars {
            attention,
            instance_probs,
            bag_probs,
            saliency,
        })
    }

    pub fn param_count(d: usize, k: usize) -> usize {
        Dense::param_count(d, 1) + Dense::param_count(d, k)
    }
}

/// Attention-weighted bag prediction for instance embeddings `z: [t, d]`.
pub fn mil_conjunctive_pool(tape: &mut Tape, set: &ParamSet, z: Var, heads: &MilHeads) -> Result<MilVars> {
    heads.pool(tape, set, z)
}

/// Cross-entropy of the normalised bag prediction,
/// `ln Σ_k Ŷ_k - ln Ŷ_y`, with a tiny floor against underflow.
pub fn mil_nll(tape: &mut Tape, bag_probs: Var, label: usize) -> Result<Var> {
    const FLOOR: f64 = 1e-12;
    let k = tape.shape(bag_probs)[1];
    if label >= k {
        return Err(Error::Index {
            what: "class label",
            index: label,
            bound: k,
        });
    }
    let total = tape.sum(bag_probs);
    let floor = tape.constant(Tensor::scalar(FLOOR));
    let total = tape.add(total, floor)?;
    let picked = tape.narrow(bag_probs, 1, label, 1)?;
    let picked = tape.reshape(picked, &[1])?;
    let picked = tape.add(picked, floor)?;
    let ln_total = tape.ln(total)?;
    let ln_picked = tape.ln(picked)?;
    let neg = tape.scale(ln_picked, -1.0);
    tape.add(ln_total, neg)
}

/// Channel reweighting from pooled statistics: average and max pooling over
/// length, concatenated, a dense layer to `C` logits and a softmax. Features
/// are rescaled by `C · w_c` so uniform weights leave them unchanged.
#[derive(Clone, Copy, Debug)]
pub struct ChannelAttention {
    pub mode: AttentionMode,
    pub dense: Option<Dense>,
    pub channels: usize,
}

impl ChannelAttention {
    pub fn new<R: Rng + ?Sized>(set: &mut ParamSet, name: &str, channels: usize, mode: AttentionMode, rng: &mut R) -> Self {
        let dense = (mode == AttentionMode::Learned)
            .then(|| Dense::new(set, name, 2 * channels, channels, rng));
        ChannelAttention { mode, dense, channels }
    }

    /// `f: [C, L]` to `(weights [C], f' [C, L])`; `None` weights when off.
    pub fn forward(&self, tape: &mut Tape, set: &ParamSet, f: Var) -> Result<(Option<Var>, Var)> {
        let c = self.channels;
        let weights = match (self.mode, &self.dense) {
            (AttentionMode::Off, _) => return Ok((None, f)),
            (AttentionMode::FrozenUniform, _) => tape.constant(Tensor::full(&[c], 1.0 / c as f64)),
            (AttentionMode::Learned, Some(dense)) => {
                let avg = tape.mean_axis(f, 1)?;
                let max = tape.max_axis(f, 1)?;
                let stats = tape.concat(&[avg, max], 0)?;
                let stats = tape.reshape(stats, &[1, 2 * c])?;
                let logits = dense.forward(tape, set, stats)?;
                let w = tape.softmax(logits, 1)?;
                tape.reshape(w, &[c])?
            }
            (AttentionMode::Learned, None) => return Err(Error::contract("learned attention without weights")),
        };
        // C · w as w ÷ (1/C): uniform weights then give exactly 1.
        let scaled = tape.div_scalar(weights, 1.0 / c as f64);
        let out = tape.scale_rows(f, scaled)?;
        Ok((Some(weights), out))
    }

    pub fn param_count(channels: usize, mode: AttentionMode) -> usize {
        match mode {
            AttentionMode::Learned => Dense::param_count(2 * channels, channels),
            _ => 0,
        }
    }
}
