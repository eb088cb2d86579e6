use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rfsf_core::config::JsonConfig;
use rfsf_core::eval::{
    ablation_run, complexity_report, evaluate_discriminator, evaluate_mil, AblationTable, MetricsReport,
};
use rfsf_core::ingest::{export_dataset, load_manifest};
use rfsf_core::models::{explain, Checkpoint, Generator, ModelConfig};
use rfsf_core::par;
use rfsf_core::preprocess::{preprocess_signals, BagSet, PreprocessConfig};
use rfsf_core::signal::{make_dataset, DatasetSpec, LabelSet, SignalProfile};
use rfsf_core::training::{holdout_split, train_cgan, TrainConfig};
use rfsf_core::{Error, Result};

use crate::run_manifest::RunManifest;
use crate::{AblateArgs, ComplexityArgs, EvalArgs, ExplainArgs, Head, PreprocessArgs, SynthArgs, TrainArgs};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn load_or_default<T: JsonConfig + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => T::load(p),
        None => Ok(T::default()),
    }
}

/// Without a config file the default architecture is sized to the bags.
fn model_config(path: Option<&Path>, bags: &BagSet) -> Result<ModelConfig> {
    if let Some(p) = path {
        return ModelConfig::load(p);
    }
    let cfg = ModelConfig {
        bag_size: bags.t,
        instance_dim: bags.d,
        n_classes: bags.class_count,
        ..Default::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn parse_snr(text: &str) -> Result<(f64, f64)> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::config(format!("bad SNR value {s:?}")))
    };
    match text.split_once(':') {
        Some((lo, hi)) => Ok((num(lo)?, num(hi)?)),
        None => {
            let v = num(text)?;
            Ok((v, v))
        }
    }
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let mut run = RunManifest::start("synth");
    run.seed = Some(a.seed);
    let set = LabelSet::parse(&a.states)?;
    let profile = SignalProfile::by_name(&a.profile, set)?;
    let snr = parse_snr(&a.snr)?;
    let samples = a
        .samples
        .unwrap_or_else(|| PreprocessConfig::default().samples_for_bags(5));
    if samples == 0 {
        return Err(Error::config("--samples must be ≥ 1"));
    }
    let spec = DatasetSpec::uniform(set, a.count_per_state);
    let signals = make_dataset(&spec, &profile, snr, samples, a.seed)?;
    let entries = export_dataset(&signals, &a.out)?;
    println!(
        "wrote {} signals of {samples} samples ({} per state, {set}) to {}",
        entries.len(),
        a.count_per_state,
        a.out.display()
    );
    run.outputs(entries.iter().map(|e| a.out.join(&e.path)))?;
    run.output(&a.out.join("manifest.csv"))?;
    run.finish(&a.out)
}

pub fn preprocess(a: &PreprocessArgs) -> Result<()> {
    let mut run = RunManifest::start("preprocess");
    let cfg: PreprocessConfig = load_or_default(a.config.as_deref())?;
    cfg.validate()?;
    run.config("preprocess", a.config.as_deref(), &cfg.to_json());
    let manifest = load_manifest(&a.manifest)?;
    run.input(&a.manifest)?;
    let signals = par::map_indexed(manifest.entries.len(), |i| manifest.read_signal(i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let (bags, reports) = preprocess_signals(&signals, &cfg, manifest.label_set)?;
    let windows: usize = reports.iter().map(|r| r.windows).sum();
    let skipped: Vec<_> = reports.iter().filter(|r| r.error.is_some()).collect();
    for r in &skipped {
        eprintln!(
            "skipped {}: {} windows, need {} for one bag ({})",
            manifest.entries[r.source_id].path.display(),
            r.windows,
            cfg.bag_size,
            r.error.as_deref().unwrap_or("")
        );
    }
    println!(
        "signals {} windows {windows} bags {} skipped {}",
        signals.len(),
        bags.len(),
        skipped.len()
    );
    let names = bags.label_set.class_names();
    for (k, n) in bags.class_histogram().iter().enumerate() {
        if *n > 0 {
            println!("  {}: {n} bags", names[k]);
        }
    }
    if bags.is_empty() {
        return Err(Error::contract("no signal was long enough for a single bag"));
    }
    create_dir(&a.out)?;
    let path = a.out.join("bags.rfsf");
    bags.save(&path)?;
    run.output(&path)?;
    run.finish(&a.out)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut run = RunManifest::start("train");
    let bags = BagSet::load(&a.bags)?;
    run.input(&a.bags)?;
    let model = model_config(a.model_config.as_deref(), &bags)?;
    let mut tc: TrainConfig = load_or_default(a.train_config.as_deref())?;
    if let Some(s) = a.seed {
        tc.seed = s;
    }
    if let Some(e) = a.epochs {
        tc.epochs = e;
    }
    tc.validate()?;
    run.seed = Some(tc.seed);
    run.config("model", a.model_config.as_deref(), &model.to_json());
    run.config("train", a.train_config.as_deref(), &tc.to_json());

    let result = train_cgan(&bags, &model, &tc)?;
    create_dir(&a.out)?;
    let ckpt = a.out.join("checkpoint.rfsf");
    Checkpoint::from_models(&result.generator, &result.discriminator).save(&ckpt)?;
    let history = a.out.join("history.csv");
    result.history.save_csv(&history)?;
    let model_json = a.out.join("model_config.json");
    model.save(&model_json)?;
    let train_json = a.out.join("train_config.json");
    tc.save(&train_json)?;
    if let Some(r) = result.history.records.last() {
        println!(
            "epoch {} d_loss {:.4} g_loss {:.4} d_cls_acc {:.4}{}",
            r.epoch,
            r.d_loss,
            r.g_loss,
            r.d_cls_acc,
            r.g_mil_acc.map(|m| format!(" g_mil_acc {m:.4}")).unwrap_or_default()
        );
    } else {
        println!("epochs 0: saved initial weights");
    }
    run.outputs([ckpt, history, model_json, train_json])?;
    run.finish(&a.out)
}

fn report_files(dir: &Path, stem: &str) -> Vec<PathBuf> {
    ["json", "csv"]
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .chain(["csv", "dat"].iter().map(|ext| dir.join(format!("{stem}_confusion.{ext}"))))
        .collect()
}

fn print_report(r: &MetricsReport) {
    println!("{}: accuracy {:.4} macro_f1 {:.4}", r.head, r.accuracy, r.macro_f1);
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let mut run = RunManifest::start("eval");
    let (gen, disc) = Checkpoint::load(&a.checkpoint)?.restore()?;
    run.input(&a.checkpoint)?;
    let bags = BagSet::load(&a.bags)?;
    run.input(&a.bags)?;
    let mut reports = Vec::new();
    if matches!(a.head, Head::Disc | Head::Both) {
        reports.push(evaluate_discriminator(&disc, &bags)?);
    }
    if matches!(a.head, Head::Mil | Head::Both) {
        if !gen.has_mil() {
            return Err(Error::config("checkpoint has no MIL head"));
        }
        reports.push(evaluate_mil(&gen, &bags)?);
    }
    create_dir(&a.report)?;
    for r in &reports {
        print_report(r);
        r.save(&a.report, &r.head)?;
        run.outputs(report_files(&a.report, &r.head))?;
    }
    run.finish(&a.report)
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let mut run = RunManifest::start("ablate");
    let bags = BagSet::load(&a.bags)?;
    run.input(&a.bags)?;
    let (train, test) = match &a.test_bags {
        Some(p) => {
            run.input(p)?;
            (bags.clone(), BagSet::load(p)?)
        }
        None => holdout_split(&bags, a.test_fraction, a.split_seed)?,
    };
    if test.is_empty() {
        return Err(Error::config("held-out split is empty; raise --test-fraction or pass --test-bags"));
    }
    let model = model_config(a.model_config.as_deref(), &train)?;
    let tc: TrainConfig = load_or_default(a.train_config.as_deref())?;
    tc.validate()?;
    run.config("model", a.model_config.as_deref(), &model.to_json());
    run.config("train", a.train_config.as_deref(), &tc.to_json());
    log::info!("ablation on {} train / {} test bags, seeds {:?}", train.len(), test.len(), a.seeds);
    let table: AblationTable = ablation_run(&train, &test, &model, &tc, &a.seeds)?;
    print!("{}", table.to_csv());
    for v in table.seed_violations() {
        log::warn!("ordering violated at {v}");
    }
    create_dir(&a.out)?;
    let csv = a.out.join("ablation.csv");
    write(&csv, &table.to_csv())?;
    let json = a.out.join("ablation.json");
    write(&json, &(table.to_json() + "\n"))?;
    run.outputs([csv, json])?;
    run.finish(&a.out)
}

/// `instance,a_j,yhat_<class>...,sal_<class>...` with one row per instance.
pub fn saliency_csv(gen: &Generator, bag: &rfsf_core::tensor::Tensor, names: &[String]) -> Result<(String, String)> {
    let e = explain(bag, gen)?;
    let k = e.bag_probs.len();
    let mut s = String::from("instance,a_j");
    for prefix in ["yhat", "sal"] {
        for n in names.iter().take(k) {
            let _ = write!(s, ",{prefix}_{n}");
        }
    }
    s.push('\n');
    for (j, a) in e.attention.iter().enumerate() {
        let _ = write!(s, "{j},{a}");
        for src in [&e.instance_probs, &e.saliency] {
            for c in 0..k {
                let _ = write!(s, ",{}", src.data()[j * k + c]);
            }
        }
        s.push('\n');
    }
    let summary = serde_json::json!({
        "predicted_class": e.predicted_class,
        "predicted_name": names.get(e.predicted_class),
        "bag_probs": e.bag_probs,
        "top_instance": e.top_instance,
    });
    Ok((s, serde_json::to_string_pretty(&summary)? + "\n"))
}

pub fn explain_cmd(a: &ExplainArgs) -> Result<()> {
    let mut run = RunManifest::start("explain");
    let (gen, _) = Checkpoint::load(&a.checkpoint)?.restore()?;
    run.input(&a.checkpoint)?;
    if !gen.has_mil() {
        return Err(Error::config("checkpoint has no MIL head"));
    }
    let bags = BagSet::load(&a.bags)?;
    run.input(&a.bags)?;
    let bag = bags.bags.get(a.bag_index).ok_or(Error::Index {
        what: "bag",
        index: a.bag_index,
        bound: bags.len(),
    })?;
    let names = bags.label_set.class_names();
    let (csv, summary) = saliency_csv(&gen, &bag.to_tensor(), &names)?;
    create_dir(&a.out)?;
    let csv_path = a.out.join("saliency.csv");
    write(&csv_path, &csv)?;
    let json_path = a.out.join("explanation.json");
    write(&json_path, &summary)?;
    print!("{summary}");
    run.outputs([csv_path, json_path])?;
    run.finish(&a.out)
}

pub fn complexity(a: &ComplexityArgs) -> Result<()> {
    let mut run = RunManifest::start("complexity");
    let cfg: ModelConfig = load_or_default(a.model_config.as_deref())?;
    cfg.validate()?;
    run.config("model", a.model_config.as_deref(), &cfg.to_json());
    let body = serde_json::to_string_pretty(&complexity_report(&cfg))? + "\n";
    print!("{body}");
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        let path = dir.join("complexity.json");
        write(&path, &body)?;
        run.output(&path)?;
        run.finish(dir)?;
    }
    Ok(())
}
