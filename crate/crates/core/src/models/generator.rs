use crate::error::{Error, Result};
use crate::rng::{rng_from, sub_seed, TAG_INIT_GEN, TAG_MIL_HEADS};
use crate::tensor::{ParamId, ParamSet, Tape, Tensor, Var};

use super::config::{GeneratorKind, ModelConfig};
use super::layers::{positional_encoding, Dense, LayerNorm, MilHeads, MilOutput, MilVars, MultiHeadAttention};

/// Parameter group of generator weights on a shared tape.
pub const GEN_GROUP: u16 = 0;

#[derive(Clone, Debug)]
struct Block {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    ff1: Dense,
    ff2: Dense,
}

impl Block {
    fn forward(&self, tape: &mut Tape, set: &ParamSet, x: Var) -> Result<Var> {
        let h = self.ln1.forward(tape, set, x)?;
        let h = self.attn.forward(tape, set, h)?;
        let x = tape.add(x, h)?;
        let h = self.ln2.forward(tape, set, x)?;
        let h = self.ff1.forward(tape, set, h)?;
        let h = tape.relu(h);
        let h = self.ff2.forward(tape, set, h)?;
        tape.add(x, h)
    }

    fn param_count(d: usize, d_ff: usize) -> usize {
        4 * d + MultiHeadAttention::param_count(d) + Dense::param_count(d, d_ff) + Dense::param_count(d_ff, d)
    }
}

/// Result of one generator pass.
#[derive(Clone, Copy, Debug)]
pub struct GenPass {
    /// `[t, instance_dim]` synthetic bag.
    pub bag: Var,
    pub mil: Option<MilVars>,
}

/// Transformer encoder with MIL heads. Noise is projected to all `t`
/// instances at once, the label embedding and positional encoding are added,
/// and `n_layers` pre-norm blocks follow. The same encoder also classifies
/// real bags through an input projection.
#[derive(Clone, Debug)]
pub struct TransformerGenerator {
    cfg: ModelConfig,
    params: ParamSet,
    noise_proj: Dense,
    label_emb: ParamId,
    input_proj: Dense,
    blocks: Vec<Block>,
    ln_f: LayerNorm,
    out_proj: Dense,
    mil: Option<MilHeads>,
    pe: Option<Tensor>,
}

impl TransformerGenerator {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (t, d, k) = (cfg.bag_size, cfg.d_model, cfg.n_classes);
        let mut rng = rng_from(sub_seed(seed, TAG_INIT_GEN));
        let mut set = ParamSet::new(GEN_GROUP);
        let noise_proj = Dense::new(&mut set, "noise_proj", cfg.noise_dim, t * d, &mut rng);
        let label_emb = set.add("label_emb", Tensor::xavier_uniform(&[k, d], k, d, &mut rng));
        let input_proj = Dense::new(&mut set, "input_proj", cfg.instance_dim, d, &mut rng);
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let name = format!("block{l}");
            blocks.push(Block {
                ln1: LayerNorm::new(&mut set, &format!("{name}.ln1"), d),
                attn: MultiHeadAttention::new(&mut set, &format!("{name}.attn"), d, cfg.n_heads, &mut rng)?,
                ln2: LayerNorm::new(&mut set, &format!("{name}.ln2"), d),
                ff1: Dense::new(&mut set, &format!("{name}.ff1"), d, cfg.d_ff, &mut rng),
                ff2: Dense::new(&mut set, &format!("{name}.ff2"), cfg.d_ff, d, &mut rng),
            });
        }
        let ln_f = LayerNorm::new(&mut set, "ln_f", d);
        let out_proj = Dense::new(&mut set, "out_proj", d, cfg.instance_dim, &mut rng);
        // own stream, so toggling MIL leaves every other weight unchanged
        let mil = cfg.use_mil.then(|| {
            let mut mil_rng = rng_from(sub_seed(seed, TAG_MIL_HEADS));
            MilHeads::new(&mut set, "mil", d, k, &mut mil_rng)
        });
        let pe = if cfg.positional_encoding {
            Some(positional_encoding(t, d)?)
        } else {
            None
        };
        Ok(TransformerGenerator {
            cfg: cfg.clone(),
            params: set,
            noise_proj,
            label_emb,
            input_proj,
            blocks,
            ln_f,
            out_proj,
            mil,
            pe,
        })
    }

    pub fn param_count(cfg: &ModelConfig) -> usize {
        let (t, d, k) = (cfg.bag_size, cfg.d_model, cfg.n_classes);
        let mil = if cfg.use_mil { MilHeads::param_count(d, k) } else { 0 };
        Dense::param_count(cfg.noise_dim, t * d)
            + k * d
            + Dense::param_count(cfg.instance_dim, d)
            + cfg.n_layers * Block::param_count(d, cfg.d_ff)
            + 2 * d
            + Dense::param_count(d, cfg.instance_dim)
            + mil
    }

    /// PE, blocks and final norm over instance embeddings `[t, d]`.
    pub fn encode(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        if let Some(pe) = &self.pe {
            let pe = tape.constant(pe.clone());
            h = tape.add(h, pe)?;
        }
        for b in &self.blocks {
            h = b.forward(tape, &self.params, h)?;
        }
        self.ln_f.forward(tape, &self.params, h)
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.cfg.n_classes {
            return Err(Error::Index {
                what: "class label",
                index: label,
                bound: self.cfg.n_classes,
            });
        }
        Ok(())
    }

    pub fn generate(&self, tape: &mut Tape, z: &[f64], label: usize) -> Result<GenPass> {
        self.check_label(label)?;
        let (t, d) = (self.cfg.bag_size, self.cfg.d_model);
        if z.len() != self.cfg.noise_dim {
            return Err(Error::Shape {
                op: "generator noise",
                lhs: vec![z.len()],
                rhs: vec![self.cfg.noise_dim],
            });
        }
        let zv = tape.constant(Tensor::new(vec![1, z.len()], z.to_vec())?);
        let h = self.noise_proj.forward(tape, &self.params, zv)?;
        let h = tape.reshape(h, &[t, d])?;
        let table = tape.param(&self.params, self.label_emb);
        let emb = tape.embedding(table, label)?;
        let h = tape.add_bias(h, emb)?;
        let h = self.encode(tape, h)?;
        let mil = match &self.mil {
            Some(heads) => Some(heads.pool(tape, &self.params, h)?),
            None => None,
        };
        let bag = self.out_proj.forward(tape, &self.params, h)?;
        Ok(GenPass { bag, mil })
    }

    /// MIL prediction for a real bag `[t, instance_dim]`.
    pub fn classify(&self, tape: &mut Tape, bag: Var) -> Result<MilVars> {
        let heads = self
            .mil
            .as_ref()
            .ok_or_else(|| Error::config("generator was built without MIL heads"))?;
        let h = self.input_proj.forward(tape, &self.params, bag)?;
        let h = self.encode(tape, h)?;
        heads.pool(tape, &self.params, h)
    }

    pub fn has_mil(&self) -> bool {
        self.mil.is_some()
    }
}

/// Transposed-convolution generator: a dense map from noise to `[C0, L0]`,
/// a class embedding of the same size, then kernel-4 stride-2 layers that
/// double the length until it reaches `t · instance_dim`.
#[derive(Clone, Debug)]
pub struct CnnGenerator {
    cfg: ModelConfig,
    params: ParamSet,
    noise_proj: Dense,
    label_emb: ParamId,
    layers: Vec<(ParamId, ParamId)>,
    widths: Vec<usize>,
    base_len: usize,
}

const CNN_KERNEL: usize = 4;
const CNN_TAPER: [usize; 4] = [64, 32, 16, 8];

/// `(widths, base length)` of the CNN generator for `cfg`. The first width
/// is chosen so the parameter count lands closest to the Transformer
/// generator with MIL heads.
pub fn cnn_generator_layout(cfg: &ModelConfig) -> (Vec<usize>, usize) {
    let total = cfg.disc_input_len();
    let ups: usize = (1..=5usize).rev().find(|&n| total.is_multiple_of(1 << n)).unwrap_or(0);
    let base_len = total >> ups;
    let tail: Vec<usize> = CNN_TAPER[..ups.saturating_sub(1)].to_vec();
    let target = TransformerGenerator::param_count(&ModelConfig {
        generator: GeneratorKind::Transformer,
        use_mil: true,
        ..cfg.clone()
    });
    let widths_for = |c0: usize| {
        let mut w = vec![c0];
        w.extend(&tail);
        if ups > 0 {
            w.push(1);
        }
        w
    };
    let best = (1..=128)
        .map(|m| m * 4)
        .min_by_key(|&c0| CnnGenerator::count_for(cfg, &widths_for(c0), base_len).abs_diff(target))
        .unwrap();
    (widths_for(best), base_len)
}

impl CnnGenerator {
    fn count_for(cfg: &ModelConfig, widths: &[usize], base_len: usize) -> usize {
        let n0 = widths[0] * base_len;
        let convs: usize = widths
            .windows(2)
            .map(|w| w[0] * w[1] * CNN_KERNEL + w[1])
            .sum();
        Dense::param_count(cfg.noise_dim, n0) + cfg.n_classes * n0 + convs
    }

    pub fn param_count(cfg: &ModelConfig) -> usize {
        let (widths, base_len) = cnn_generator_layout(cfg);
        Self::count_for(cfg, &widths, base_len)
    }

    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let (widths, base_len) = cnn_generator_layout(cfg);
        if widths.len() < 2 {
            return Err(Error::config(format!(
                "CNN generator needs an even output length, got {}",
                cfg.disc_input_len()
            )));
        }
        let n0 = widths[0] * base_len;
        let mut rng = rng_from(sub_seed(seed, TAG_INIT_GEN));
        let mut set = ParamSet::new(GEN_GROUP);
        let noise_proj = Dense::new(&mut set, "noise_proj", cfg.noise_dim, n0, &mut rng);
        let k = cfg.n_classes;
        let label_emb = set.add("label_emb", Tensor::xavier_uniform(&[k, n0], k, n0, &mut rng));
        let mut layers = Vec::new();
        for (i, w) in widths.windows(2).enumerate() {
            let (cin, cout) = (w[0], w[1]);
            let wt = set.add(
                format!("deconv{i}.w"),
                Tensor::xavier_uniform(&[cin, cout, CNN_KERNEL], cout * CNN_KERNEL, cin * CNN_KERNEL, &mut rng),
            );
            let b = set.add(format!("deconv{i}.b"), Tensor::zeros(&[cout]));
            layers.push((wt, b));
        }
        Ok(CnnGenerator {
            cfg: cfg.clone(),
            params: set,
            noise_proj,
            label_emb,
            layers,
            widths,
            base_len,
        })
    }

    pub fn generate(&self, tape: &mut Tape, z: &[f64], label: usize) -> Result<GenPass> {
        if label >= self.cfg.n_classes {
            return Err(Error::Index {
                what: "class label",
                index: label,
                bound: self.cfg.n_classes,
            });
        }
        let zv = tape.constant(Tensor::new(vec![1, z.len()], z.to_vec())?);
        let h = self.noise_proj.forward(tape, &self.params, zv)?;
        let table = tape.param(&self.params, self.label_emb);
        let emb = tape.embedding(table, label)?;
        let h = tape.add_bias(h, emb)?;
        let mut h = tape.reshape(h, &[self.widths[0], self.base_len])?;
        let last = self.layers.len().saturating_sub(1);
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let wv = tape.param(&self.params, w);
            let bv = tape.param(&self.params, b);
            h = tape.conv_transpose1d(h, wv, bv, 2, 1)?;
            if i != last {
                h = tape.relu(h);
            }
        }
        let bag = tape.reshape(h, &[self.cfg.bag_size, self.cfg.instance_dim])?;
        Ok(GenPass { bag, mil: None })
    }
}

/// Either generator architecture.
#[derive(Clone, Debug)]
pub enum Generator {
    Transformer(TransformerGenerator),
    Cnn(CnnGenerator),
}

impl Generator {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        Ok(match cfg.generator {
            GeneratorKind::Transformer => Generator::Transformer(TransformerGenerator::new(cfg, seed)?),
            GeneratorKind::Cnn => Generator::Cnn(CnnGenerator::new(cfg, seed)?),
        })
    }

    pub fn param_count(cfg: &ModelConfig) -> usize {
        match cfg.generator {
            GeneratorKind::Transformer => TransformerGenerator::param_count(cfg),
            GeneratorKind::Cnn => CnnGenerator::param_count(cfg),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        match self {
            Generator::Transformer(g) => &g.cfg,
            Generator::Cnn(g) => &g.cfg,
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            Generator::Transformer(g) => &g.params,
            Generator::Cnn(g) => &g.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            Generator::Transformer(g) => &mut g.params,
            Generator::Cnn(g) => &mut g.params,
        }
    }

    pub fn generate(&self, tape: &mut Tape, z: &[f64], label: usize) -> Result<GenPass> {
        match self {
            Generator::Transformer(g) => g.generate(tape, z, label),
            Generator::Cnn(g) => g.generate(tape, z, label),
        }
    }

    pub fn classify(&self, tape: &mut Tape, bag: Var) -> Result<MilVars> {
        match self {
            Generator::Transformer(g) => g.classify(tape, bag),
            Generator::Cnn(_) => Err(Error::config("the CNN generator has no MIL classifier")),
        }
    }

    pub fn has_mil(&self) -> bool {
        matches!(self, Generator::Transformer(g) if g.has_mil())
    }

    /// Synthetic bag values for `(z, label)` without gradient tracking.
    pub fn sample_bag(&self, z: &[f64], label: usize) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let pass = self.generate(&mut tape, z, label)?;
        Ok(tape.value(pass.bag).clone())
    }

    /// MIL prediction for a real bag, without gradient tracking.
    pub fn predict(&self, bag: &Tensor) -> Result<MilOutput> {
        let mut tape = Tape::inference();
        let x = tape.constant(bag.clone());
        let mil = self.classify(&mut tape, x)?;
        Ok(mil.values(&tape))
    }
}
