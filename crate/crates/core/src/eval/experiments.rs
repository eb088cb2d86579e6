use std::fmt::Write as _;

use serde::Serialize;

use crate::error::Result;
use crate::models::{AttentionMode, GeneratorKind, ModelConfig};
use crate::par;
use crate::preprocess::{preprocess_signals, BagSet, PreprocessConfig};
use crate::rng::{sub_seed, TAG_DATASET};
use crate::signal::{make_dataset, DatasetSpec, LabelSet, SignalProfile};
use crate::training::{augment_dataset, subsample, train_cgan, train_classifier, TrainConfig};

use super::metrics::{evaluate_discriminator, evaluate_mil};

/// Synthetic three-state train/test split. Each signal is long enough for
/// `bags_per_signal` bags under the default preprocessing; test signals come
/// from an independent seed.
pub fn desk_split(
    seed: u64,
    train_signals_per_state: usize,
    test_signals_per_state: usize,
    bags_per_signal: usize,
) -> Result<(BagSet, BagSet)> {
    let cfg = PreprocessConfig::default();
    let profile = SignalProfile::drone_detect(LabelSet::Synth3);
    let n = cfg.samples_for_bags(bags_per_signal);
    let snr = (5.0, 20.0);
    let build = |count: usize, s: u64| -> Result<BagSet> {
        let signals = make_dataset(&DatasetSpec::uniform(LabelSet::Synth3, count), &profile, snr, n, s)?;
        Ok(preprocess_signals(&signals, &cfg, LabelSet::Synth3)?.0)
    };
    let train = build(train_signals_per_state, seed)?;
    let test = build(test_signals_per_state, sub_seed(seed, TAG_DATASET))?;
    Ok((train, test))
}

/// The five ablation configurations, from the CNN baseline to the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Variant {
    CnnBaseline,
    NoMil,
    NoMilWithAttention,
    MilNoAttention,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::CnnBaseline,
        Variant::NoMil,
        Variant::NoMilWithAttention,
        Variant::MilNoAttention,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::CnnBaseline => "model1",
            Variant::NoMil => "model2",
            Variant::NoMilWithAttention => "model3",
            Variant::MilNoAttention => "model4",
            Variant::Full => "full",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Variant::CnnBaseline => "CNN generator, CNN discriminator without attention",
            Variant::NoMil => "Transformer generator without MIL, no channel attention",
            Variant::NoMilWithAttention => "Transformer generator without MIL, channel attention",
            Variant::MilNoAttention => "Transformer-MIL generator, no channel attention",
            Variant::Full => "Transformer-MIL generator, channel attention",
        }
    }

    pub fn config(self, base: &ModelConfig) -> ModelConfig {
        let (generator, use_mil, channel_attention) = match self {
            Variant::CnnBaseline => (GeneratorKind::Cnn, false, AttentionMode::Off),
            Variant::NoMil => (GeneratorKind::Transformer, false, AttentionMode::Off),
            Variant::NoMilWithAttention => (GeneratorKind::Transformer, false, AttentionMode::Learned),
            Variant::MilNoAttention => (GeneratorKind::Transformer, true, AttentionMode::Off),
            Variant::Full => (GeneratorKind::Transformer, true, AttentionMode::Learned),
        };
        ModelConfig {
            generator,
            use_mil,
            channel_attention,
            ..base.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub name: String,
    pub description: String,
    /// Held-out accuracy of the discriminator class head, one per seed.
    pub accuracy: Vec<f64>,
    pub macro_f1: Vec<f64>,
    /// Held-out accuracy of the MIL head, for variants that have one.
    pub mil_accuracy: Option<Vec<f64>>,
    pub mean_accuracy: f64,
    pub mean_macro_f1: f64,
    pub mean_mil_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Trains every variant with every seed and scores it on `test`.
pub fn ablation_run(
    train: &BagSet,
    test: &BagSet,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<AblationTable> {
    let jobs: Vec<(Variant, u64)> = Variant::ALL
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let results = par::map(&jobs, |&(variant, seed)| -> Result<(f64, f64, Option<f64>)> {
        let cfg = variant.config(base);
        let tc = TrainConfig {
            seed,
            ..train_cfg.clone()
        };
        let run = train_cgan(train, &cfg, &tc)?;
        let disc = evaluate_discriminator(&run.discriminator, test)?;
        let mil = if run.generator.has_mil() {
            Some(evaluate_mil(&run.generator, test)?.accuracy)
        } else {
            None
        };
        log::info!("{} seed {seed}: disc {:.4} mil {:?}", variant.name(), disc.accuracy, mil);
        Ok((disc.accuracy, disc.macro_f1, mil))
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let rows = Variant::ALL
        .iter()
        .enumerate()
        .map(|(i, &variant)| {
            let chunk = &results[i * seeds.len()..(i + 1) * seeds.len()];
            let accuracy: Vec<f64> = chunk.iter().map(|r| r.0).collect();
            let macro_f1: Vec<f64> = chunk.iter().map(|r| r.1).collect();
            let mil_accuracy: Option<Vec<f64>> = chunk.iter().map(|r| r.2).collect();
            AblationRow {
                variant,
                name: variant.name().into(),
                description: variant.description().into(),
                mean_accuracy: mean(&accuracy),
                mean_macro_f1: mean(&macro_f1),
                mean_mil_accuracy: mil_accuracy.as_deref().map(mean),
                accuracy,
                macro_f1,
                mil_accuracy,
            }
        })
        .collect();
    Ok(AblationTable {
        seeds: seeds.to_vec(),
        rows,
    })
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> &AblationRow {
        self.rows.iter().find(|r| r.variant == v).expect("all variants present")
    }

    /// One row per variant, one accuracy column per seed, then the mean.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variant");
        for seed in &self.seeds {
            let _ = write!(s, ",seed_{seed}");
        }
        s.push_str(",mean_accuracy,mean_macro_f1,mean_mil_accuracy\n");
        for r in &self.rows {
            s.push_str(&r.name);
            for a in &r.accuracy {
                let _ = write!(s, ",{a}");
            }
            let mil = r.mean_mil_accuracy.map(|m| m.to_string()).unwrap_or_default();
            let _ = writeln!(s, ",{},{},{mil}", r.mean_accuracy, r.mean_macro_f1);
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serialises")
    }

    /// Seeds where the full model lost to a variant or model 4 lost to
    /// model 2.
    pub fn seed_violations(&self) -> Vec<String> {
        let full = self.row(Variant::Full);
        let mut out = Vec::new();
        for (i, seed) in self.seeds.iter().enumerate() {
            for r in &self.rows {
                if r.accuracy[i] > full.accuracy[i] {
                    out.push(format!("seed {seed}: {} {} > full {}", r.name, r.accuracy[i], full.accuracy[i]));
                }
            }
            let (m2, m4) = (self.row(Variant::NoMil), self.row(Variant::MilNoAttention));
            if m2.accuracy[i] > m4.accuracy[i] {
                out.push(format!("seed {seed}: model2 {} > model4 {}", m2.accuracy[i], m4.accuracy[i]));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AugmentationTrial {
    pub seed: u64,
    pub train_bags: usize,
    pub augmented_bags: usize,
    pub real_only: f64,
    pub augmented: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AugmentationReport {
    pub fraction: f64,
    pub rho: f64,
    pub trials: Vec<AugmentationTrial>,
    pub mean_real_only: f64,
    pub mean_augmented: f64,
}

/// Paired comparison of the MIL classifier trained on a subsample with and
/// without generated bags. For each seed the same subsample, initial weights
/// and batch order feed both classifiers; the generator is trained on the
/// subsample alone.
pub fn augmentation_experiment(
    train: &BagSet,
    test: &BagSet,
    model: &ModelConfig,
    train_cfg: &TrainConfig,
    fraction: f64,
    seeds: &[u64],
) -> Result<AugmentationReport> {
    let trials = par::map(seeds, |&seed| -> Result<AugmentationTrial> {
        let tc = TrainConfig {
            seed,
            ..train_cfg.clone()
        };
        let sub = subsample(train, fraction, seed)?;
        let gan = train_cgan(&sub, model, &tc)?;
        let aug = augment_dataset(&sub, &gan.generator, tc.rho, seed)?;
        let real = train_classifier(&sub, model, &tc)?;
        let with_aug = train_classifier(&aug, model, &tc)?;
        let trial = AugmentationTrial {
            seed,
            train_bags: sub.len(),
            augmented_bags: aug.len(),
            real_only: evaluate_mil(&real.model, test)?.accuracy,
            augmented: evaluate_mil(&with_aug.model, test)?.accuracy,
        };
        log::info!("augmentation seed {seed}: real {:.4} augmented {:.4}", trial.real_only, trial.augmented);
        Ok(trial)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let real: Vec<f64> = trials.iter().map(|t| t.real_only).collect();
    let aug: Vec<f64> = trials.iter().map(|t| t.augmented).collect();
    Ok(AugmentationReport {
        fraction,
        rho: train_cfg.rho,
        mean_real_only: mean(&real),
        mean_augmented: mean(&aug),
        trials,
    })
}

impl AugmentationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}
