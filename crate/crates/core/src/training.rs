//! Conditional GAN training with auxiliary class heads, dataset augmentation
//! and a supervised path for the Transformer-MIL classifier.
//!
//! Every batch is split into per-sample tapes that run on the worker pool.
//! Per-sample losses are pre-scaled by the batch size, so the summed
//! gradients equal those of the batch-mean loss; sums are taken in sample
//! order and results do not depend on the number of workers.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::{JsonConfig, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::models::{mil_nll, Discriminator, Generator, ModelConfig, DISC_GROUP};
use crate::par;
use crate::preprocess::{BagSet, WindowedBag, SYNTHETIC_SOURCE};
use crate::rng::{rng_from, stream, sub_seed, TAG_AUGMENT, TAG_LABELS, TAG_NOISE, TAG_SHUFFLE};
use crate::tensor::{argmax, Adam, Gradients, ParamSet, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub schema_version: u32,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_d: f64,
    pub lr_g: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Weight of the class cross-entropy terms.
    pub lambda_cls: f64,
    /// Weight of the MIL consistency term on generated bags.
    pub lambda_mil: f64,
    /// Weight of the MIL cross-entropy on real bags in the generator step.
    pub lambda_mil_real: f64,
    /// Synthetic-to-real ratio used by [`augment_dataset`].
    pub rho: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schema_version: SCHEMA_VERSION,
            epochs: 30,
            batch_size: 64,
            lr_d: 0.01,
            lr_g: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            lambda_cls: 1.0,
            lambda_mil: 0.5,
            lambda_mil_real: 0.5,
            rho: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be ≥ 1"));
        }
        if !(self.lr_d > 0.0 && self.lr_g > 0.0) {
            return Err(Error::config("learning rates must be > 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::config("Adam needs 0 ≤ beta < 1 and eps > 0"));
        }
        let weights = [self.lambda_cls, self.lambda_mil, self.lambda_mil_real, self.rho];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config("loss weights and rho must be finite and ≥ 0"));
        }
        Ok(())
    }
}

impl JsonConfig for TrainConfig {
    fn schema_version(&self) -> u32 {
        self.schema_version
    }

    fn validate(&self) -> Result<()> {
        TrainConfig::validate(self)
    }
}

/// One row of the training history.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    /// Real/fake decisions of the discriminator that were right.
    pub d_src_acc: f64,
    /// Class-head accuracy on the real bags seen during the epoch.
    pub d_cls_acc: f64,
    /// Fraction of generated bags whose MIL prediction is the conditioning
    /// label; absent without MIL heads.
    pub g_mil_acc: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

pub const HISTORY_HEADER: &str = "epoch,d_loss,g_loss,d_src_acc,d_cls_acc,g_mil_acc,seconds";

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(HISTORY_HEADER.split(','))?;
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                r.d_loss.to_string(),
                r.g_loss.to_string(),
                r.d_src_acc.to_string(),
                r.d_cls_acc.to_string(),
                r.g_mil_acc.map(|v| v.to_string()).unwrap_or_default(),
                format!("{:.3}", r.seconds),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<history>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// What one discriminator sample contributed to the batch statistics.
#[derive(Clone, Copy, Debug, Default)]
struct DiscStats {
    src_correct: usize,
    cls_correct: usize,
}

fn check_batch(real: usize, labels: usize, fake: usize) -> Result<()> {
    if real == 0 || real != labels || real != fake {
        return Err(Error::contract(format!(
            "batch needs equal non-zero counts, got {real} real, {labels} labels, {fake} fake"
        )));
    }
    Ok(())
}

/// Share of sample `(real, label, fake)` in a batch of `n`.
fn disc_sample_loss(
    tape: &mut Tape,
    disc: &Discriminator,
    real: &Tensor,
    label: usize,
    fake: &Tensor,
    lambda_cls: f64,
    n: usize,
) -> Result<(Var, DiscStats)> {
    let r = tape.constant(real.clone());
    let f = tape.constant(fake.clone());
    let pr = disc.forward(tape, r)?;
    let pf = disc.forward(tape, f)?;
    let bce_r = tape.bce_with_logits(pr.source, &[1.0])?;
    let bce_f = tape.bce_with_logits(pf.source, &[0.0])?;
    let ce = tape.cross_entropy(pr.class_logits, &[label])?;
    let src = tape.add(bce_r, bce_f)?;
    let src = tape.scale(src, 0.5 / n as f64);
    let cls = tape.scale(ce, lambda_cls / n as f64);
    let loss = tape.add(src, cls)?;
    let stats = DiscStats {
        src_correct: usize::from(tape.value(pr.source).item() > 0.0)
            + usize::from(tape.value(pf.source).item() <= 0.0),
        cls_correct: usize::from(argmax(tape.value(pr.class_logits).data()) == label),
    };
    Ok((loss, stats))
}

/// Batch-mean BCE of the source head over real (target 1) and fake (target
/// 0) bags, plus `lambda_cls` times the class cross-entropy on the real bags.
pub fn discriminator_loss(
    tape: &mut Tape,
    disc: &Discriminator,
    real: &[Tensor],
    labels: &[usize],
    fake: &[Tensor],
    lambda_cls: f64,
) -> Result<Var> {
    check_batch(real.len(), labels.len(), fake.len())?;
    let n = real.len();
    let mut total: Option<Var> = None;
    for i in 0..n {
        let (l, _) = disc_sample_loss(tape, disc, &real[i], labels[i], &fake[i], lambda_cls, n)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    Ok(total.expect("non-empty batch"))
}

#[derive(Clone, Copy, Debug, Default)]
struct GenStats {
    mil_correct: usize,
}

#[allow(clippy::too_many_arguments)]
fn gen_sample_loss(
    tape: &mut Tape,
    gen: &Generator,
    disc: &Discriminator,
    z: &[f64],
    label: usize,
    lambda_cls: f64,
    lambda_mil: f64,
    n: usize,
) -> Result<(Var, GenStats)> {
    let pass = gen.generate(tape, z, label)?;
    let d = disc.forward(tape, pass.bag)?;
    let adv = tape.bce_with_logits(d.source, &[1.0])?;
    let ce = tape.cross_entropy(d.class_logits, &[label])?;
    let ce = tape.scale(ce, lambda_cls);
    let mut loss = tape.add(adv, ce)?;
    let mut stats = GenStats::default();
    if let Some(mil) = pass.mil {
        let nll = mil_nll(tape, mil.bag_probs, label)?;
        let nll = tape.scale(nll, lambda_mil);
        loss = tape.add(loss, nll)?;
        stats.mil_correct = usize::from(argmax(tape.value(mil.bag_probs).data()) == label);
    }
    Ok((tape.scale(loss, 1.0 / n as f64), stats))
}

/// Batch mean of the non-saturating adversarial term, `lambda_cls` times the
/// discriminator class cross-entropy against the conditioning labels and,
/// when the generator has MIL heads, `lambda_mil` times the MIL cross-entropy
/// of the generated bag. The tape should freeze [`DISC_GROUP`].
pub fn generator_loss(
    tape: &mut Tape,
    gen: &Generator,
    disc: &Discriminator,
    noise: &[Vec<f64>],
    labels: &[usize],
    lambda_cls: f64,
    lambda_mil: f64,
) -> Result<Var> {
    check_batch(noise.len(), labels.len(), noise.len())?;
    let n = noise.len();
    let mut total: Option<Var> = None;
    for i in 0..n {
        let (l, _) = gen_sample_loss(tape, gen, disc, &noise[i], labels[i], lambda_cls, lambda_mil, n)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    Ok(total.expect("non-empty batch"))
}

fn check_dataset(data: &BagSet, model: &ModelConfig, batch_size: usize) -> Result<()> {
    model.validate()?;
    if data.t != model.bag_size || data.d != model.instance_dim {
        return Err(Error::config(format!(
            "bags are {}×{} but the model expects {}×{}",
            data.t, data.d, model.bag_size, model.instance_dim
        )));
    }
    if data.class_count != model.n_classes {
        return Err(Error::config(format!(
            "dataset has {} classes but the model has {}",
            data.class_count, model.n_classes
        )));
    }
    if data.class_count < 2 {
        return Err(Error::config("training needs at least 2 classes"));
    }
    let hist = data.class_histogram();
    if let Some(k) = hist.iter().position(|&c| c == 0) {
        return Err(Error::config(format!(
            "class {} ({}) has no bags",
            k,
            data.label_set.class_name(k)
        )));
    }
    if data.len() < batch_size {
        return Err(Error::config(format!(
            "{} bags is fewer than the batch size {batch_size}",
            data.len()
        )));
    }
    Ok(())
}

fn gaussian(rng: &mut impl rand::Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(sub_seed(seed, TAG_SHUFFLE), epoch as u64));
    idx
}

/// Sums per-sample results in order; the first error wins.
fn reduce<S>(items: Vec<Result<(Gradients, f64, S)>>) -> Result<(Gradients, f64, Vec<S>)> {
    let mut grads = Gradients::new();
    let mut loss = 0.0;
    let mut stats = Vec::with_capacity(items.len());
    for item in items {
        let (g, l, s) = item?;
        grads.merge(g);
        loss += l;
        stats.push(s);
    }
    Ok((grads, loss, stats))
}

fn apply(set: &mut ParamSet, opt: &mut Adam, grads: &Gradients, ctx: &str) -> Result<()> {
    set.zero_grad();
    set.accumulate(grads);
    opt.step(set).map_err(|e| Error::Numerical(format!("{ctx}: {e}")))
}

fn finite(loss: f64, what: &str, epoch: usize, batch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{what} loss is {loss} at epoch {epoch}, batch {batch}")))
    }
}

/// Models and history of one GAN run.
#[derive(Clone, Debug)]
pub struct GanRun {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub history: TrainHistory,
}

/// Alternates one discriminator step and one generator step per batch.
pub fn train_cgan(data: &BagSet, model: &ModelConfig, train: &TrainConfig) -> Result<GanRun> {
    train.validate()?;
    check_dataset(data, model, train.batch_size)?;
    let seed = train.seed;
    let mut gen = Generator::new(model, seed)?;
    let mut disc = Discriminator::new(model, seed)?;
    let mut opt_g = Adam::new(gen.params(), train.lr_g, train.beta1, train.beta2, train.eps);
    let mut opt_d = Adam::new(disc.params(), train.lr_d, train.beta1, train.beta2, train.eps);
    let tensors: Vec<Tensor> = data.bags.iter().map(WindowedBag::to_tensor).collect();
    let labels = data.labels();
    let k = model.n_classes;
    let noise_seed = sub_seed(seed, TAG_NOISE);
    let label_seed = sub_seed(seed, TAG_LABELS);
    let n_batches = data.len().div_ceil(train.batch_size);
    let mut history = TrainHistory::default();

    for epoch in 0..train.epochs {
        let start = Instant::now();
        let order = epoch_order(data.len(), seed, epoch);
        let (mut d_sum, mut g_sum) = (0.0, 0.0);
        let (mut src_ok, mut cls_ok, mut mil_ok, mut seen) = (0, 0, 0, 0);
        for (b, batch) in order.chunks(train.batch_size).enumerate() {
            let n = batch.len();
            let step = (epoch * n_batches + b) as u64;
            let mut label_rng = stream(label_seed, step);
            let cond: Vec<usize> = (0..2 * n).map(|_| label_rng.random_range(0..k)).collect();
            let step_seed = sub_seed(noise_seed, step);

            let results = par::map_indexed(n, |i| {
                let z = gaussian(&mut stream(step_seed, i as u64), model.noise_dim);
                let fake = gen.sample_bag(&z, cond[i])?;
                let mut tape = Tape::new();
                let j = batch[i];
                let (loss, stats) =
                    disc_sample_loss(&mut tape, &disc, &tensors[j], labels[j], &fake, train.lambda_cls, n)?;
                Ok((tape.gradients(loss)?, tape.value(loss).item(), stats))
            });
            let (grads, d_loss, stats) = reduce(results)?;
            finite(d_loss, "discriminator", epoch, b)?;
            apply(disc.params_mut(), &mut opt_d, &grads, &format!("epoch {epoch}, batch {b}"))?;
            src_ok += stats.iter().map(|s| s.src_correct).sum::<usize>();
            cls_ok += stats.iter().map(|s| s.cls_correct).sum::<usize>();

            let results = par::map_indexed(n, |i| {
                let z = gaussian(&mut stream(step_seed, (n + i) as u64), model.noise_dim);
                let mut tape = Tape::new().freeze_group(DISC_GROUP);
                let c = cond[n + i];
                let (mut loss, stats) =
                    gen_sample_loss(&mut tape, &gen, &disc, &z, c, train.lambda_cls, train.lambda_mil, n)?;
                if gen.has_mil() && train.lambda_mil_real > 0.0 {
                    let j = batch[i];
                    let x = tape.constant(tensors[j].clone());
                    let mil = gen.classify(&mut tape, x)?;
                    let nll = mil_nll(&mut tape, mil.bag_probs, labels[j])?;
                    let nll = tape.scale(nll, train.lambda_mil_real / n as f64);
                    loss = tape.add(loss, nll)?;
                }
                Ok((tape.gradients(loss)?, tape.value(loss).item(), stats))
            });
            let (grads, g_loss, stats) = reduce(results)?;
            finite(g_loss, "generator", epoch, b)?;
            debug_assert!(!grads.touches_group(DISC_GROUP));
            apply(gen.params_mut(), &mut opt_g, &grads, &format!("epoch {epoch}, batch {b}"))?;
            mil_ok += stats.iter().map(|s| s.mil_correct).sum::<usize>();

            d_sum += d_loss;
            g_sum += g_loss;
            seen += n;
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            d_loss: d_sum / n_batches as f64,
            g_loss: g_sum / n_batches as f64,
            d_src_acc: src_ok as f64 / (2 * seen) as f64,
            d_cls_acc: cls_ok as f64 / seen as f64,
            g_mil_acc: gen.has_mil().then(|| mil_ok as f64 / seen as f64),
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {}: d_loss {:.4} g_loss {:.4} d_src_acc {:.3} d_cls_acc {:.3} ({:.1}s)",
            record.epoch,
            record.d_loss,
            record.g_loss,
            record.d_src_acc,
            record.d_cls_acc,
            record.seconds
        );
        history.records.push(record);
    }
    Ok(GanRun {
        generator: gen,
        discriminator: disc,
        history,
    })
}

/// Appends `round(rho · |real|)` generated bags. Labels cycle through the
/// real bags in order, so the synthetic class histogram follows the real one.
pub fn augment_dataset(real: &BagSet, gen: &Generator, rho: f64, seed: u64) -> Result<BagSet> {
    if !(rho.is_finite() && rho >= 0.0) {
        return Err(Error::config(format!("rho must be finite and ≥ 0, got {rho}")));
    }
    let cfg = gen.config();
    if real.t != cfg.bag_size || real.d != cfg.instance_dim {
        return Err(Error::config(format!(
            "bags are {}×{} but the generator makes {}×{}",
            real.t, real.d, cfg.bag_size, cfg.instance_dim
        )));
    }
    let extra = (rho * real.len() as f64).round() as usize;
    if extra > 0 && real.is_empty() {
        return Err(Error::contract("cannot match the class histogram of an empty dataset"));
    }
    let aug_seed = sub_seed(seed, TAG_AUGMENT);
    let generated = par::map_indexed(extra, |i| -> Result<WindowedBag> {
        let label = real.bags[i % real.len()].label;
        let z = gaussian(&mut stream(aug_seed, i as u64), cfg.noise_dim);
        let bag = gen.sample_bag(&z, label.index())?;
        Ok(WindowedBag {
            instances: bag.into_data(),
            t: real.t,
            d: real.d,
            label,
            source_id: SYNTHETIC_SOURCE,
        })
    });
    let mut bags = real.bags.clone();
    for b in generated {
        bags.push(b?);
    }
    Ok(real.with_bags(bags))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassifierRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub seconds: f64,
}

/// Encoder and MIL heads trained on their own.
#[derive(Clone, Debug)]
pub struct ClassifierRun {
    pub model: Generator,
    pub history: Vec<ClassifierRecord>,
}

/// Supervised training of the Transformer encoder and MIL heads with the MIL
/// cross-entropy on `Ŷ`, using `lr_g`.
pub fn train_classifier(data: &BagSet, model: &ModelConfig, train: &TrainConfig) -> Result<ClassifierRun> {
    train.validate()?;
    check_dataset(data, model, train.batch_size)?;
    let mut gen = Generator::new(model, train.seed)?;
    if !gen.has_mil() {
        return Err(Error::config("train_classifier needs the Transformer generator with MIL heads"));
    }
    let mut opt = Adam::new(gen.params(), train.lr_g, train.beta1, train.beta2, train.eps);
    let tensors: Vec<Tensor> = data.bags.iter().map(WindowedBag::to_tensor).collect();
    let labels = data.labels();
    let mut history = Vec::with_capacity(train.epochs);
    for epoch in 0..train.epochs {
        let start = Instant::now();
        let order = epoch_order(data.len(), train.seed, epoch);
        let (mut total, mut correct) = (0.0, 0);
        let n_batches = data.len().div_ceil(train.batch_size);
        for (b, batch) in order.chunks(train.batch_size).enumerate() {
            let n = batch.len();
            let results = par::map_indexed(n, |i| {
                let j = batch[i];
                let mut tape = Tape::new();
                let x = tape.constant(tensors[j].clone());
                let mil = gen.classify(&mut tape, x)?;
                let ok = usize::from(argmax(tape.value(mil.bag_probs).data()) == labels[j]);
                let nll = mil_nll(&mut tape, mil.bag_probs, labels[j])?;
                let loss = tape.scale(nll, 1.0 / n as f64);
                Ok((tape.gradients(loss)?, tape.value(loss).item(), ok))
            });
            let (grads, loss, oks) = reduce(results)?;
            finite(loss, "classifier", epoch, b)?;
            apply(gen.params_mut(), &mut opt, &grads, &format!("epoch {epoch}, batch {b}"))?;
            total += loss;
            correct += oks.iter().sum::<usize>();
        }
        history.push(ClassifierRecord {
            epoch: epoch + 1,
            loss: total / n_batches as f64,
            train_acc: correct as f64 / data.len() as f64,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(ClassifierRun { model: gen, history })
}

/// Keeps `round(fraction · n)` bags per class, chosen at random; at least
/// one per non-empty class.
pub fn subsample(data: &BagSet, fraction: f64, seed: u64) -> Result<BagSet> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(format!("fraction must be in (0, 1], got {fraction}")));
    }
    let mut rng = rng_from(sub_seed(seed, crate::rng::TAG_SUBSAMPLE));
    let mut keep = Vec::new();
    for k in 0..data.class_count {
        let mut idx: Vec<usize> = (0..data.len()).filter(|&i| data.bags[i].label.index() == k).collect();
        if idx.is_empty() {
            continue;
        }
        idx.shuffle(&mut rng);
        let m = ((fraction * idx.len() as f64).round() as usize).max(1);
        keep.extend_from_slice(&idx[..m]);
    }
    keep.sort_unstable();
    Ok(data.with_bags(keep.into_iter().map(|i| data.bags[i].clone()).collect()))
}

/// Splits by source signal, so bags cut from one recording never land on
/// both sides. About `test_fraction` of the sources of each class go to the
/// test set (at least one when a class has two or more sources).
pub fn holdout_split(data: &BagSet, test_fraction: f64, seed: u64) -> Result<(BagSet, BagSet)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::config(format!("test fraction must be in [0, 1), got {test_fraction}")));
    }
    let mut rng = rng_from(sub_seed(seed, crate::rng::TAG_SUBSAMPLE ^ 0xff));
    let mut test_sources = std::collections::BTreeSet::new();
    for k in 0..data.class_count {
        let mut sources: Vec<usize> = data
            .bags
            .iter()
            .filter(|b| b.label.index() == k)
            .map(|b| b.source_id)
            .collect();
        sources.sort_unstable();
        sources.dedup();
        sources.shuffle(&mut rng);
        let mut m = (test_fraction * sources.len() as f64).round() as usize;
        if test_fraction > 0.0 && m == 0 && sources.len() >= 2 {
            m = 1;
        }
        test_sources.extend(sources[..m].iter().copied());
    }
    let (test, train): (Vec<_>, Vec<_>) = data
        .bags
        .iter()
        .cloned()
        .partition(|b| test_sources.contains(&b.source_id));
    Ok((data.with_bags(train), data.with_bags(test)))
}
