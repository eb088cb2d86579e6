//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line
//! each and exits non-zero if any failed. `RFSF_ACCEPTANCE=1,4,6` restricts
//! the run to the listed criteria.

use std::f64::consts::PI;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rfsf_core::eval::{
    ablation_run, augmentation_experiment, classifier_macs, complexity_report, desk_split, evaluate_discriminator, evaluate_mil,
    instrumented_classifier_macs, instrumented_discriminator_macs, instrumented_generator_macs, mac_count_discriminator,
    mac_count_generator, Variant,
};
use rfsf_core::models::{
    mil_conjunctive_pool, mil_nll, AttentionMode, Checkpoint, Discriminator, Generator, MilHeads, ModelConfig,
};
use rfsf_core::preprocess::{
    apply_doppler, compensate_doppler, fft_magnitude, instance_vectors, window_count, PreprocessConfig, SpectrumAnalyzer,
};
use rfsf_core::signal::{doppler_shift_hz, FlightState, IQSignal, KinematicParams, LabelSet, SPEED_OF_LIGHT};
use rfsf_core::tensor::{grad_check, grad_check_params, ParamSet, Tape, Tensor, Var};
use rfsf_core::training::{train_cgan, TrainConfig};
use rfsf_core::Result;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

fn small_model() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 8,
        d_ff: 16,
        bag_size: 4,
        instance_dim: 8,
        noise_dim: 4,
        n_classes: 3,
        disc_channels: vec![4, 4, 8],
        ..Default::default()
    }
}

type Loss<'a> = Box<dyn Fn(&mut Tape, Var) -> Result<Var> + 'a>;

/// Each primitive feeds a fixed random weighting so every output coordinate
/// reaches the loss with a distinct coefficient.
fn primitive_cases(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Tensor, Loss<'static>)> {
    let x = randn(rng, &[3, 4]);
    let xc = randn(rng, &[2, 9]);
    let w = randn(rng, &[4, 3]);
    let w2 = randn(rng, &[3, 4]);
    let bias = randn(rng, &[4]);
    let cw = randn(rng, &[3, 2, 3]);
    let ctw = randn(rng, &[2, 3, 4]);
    let cb = randn(rng, &[3]);
    let wsum = randn(rng, &[64]);
    let weighted = move |t: &mut Tape, y: Var| -> Result<Var> {
        let shape = t.shape(y).to_vec();
        let n: usize = shape.iter().product();
        let c = t.constant(Tensor::new(shape, wsum.data()[..n].to_vec())?);
        let p = t.mul(y, c)?;
        Ok(t.sum(p))
    };
    let positive = x.map(|v| v.abs() + 0.5);
    let labels: Vec<f64> = (0..12).map(|i| [1.0, 0.0, 0.5][i % 3]).collect();
    vec![
        ("matmul", x.clone(), Box::new({ let (w, f) = (w.clone(), weighted.clone()); move |t, v| { let c = t.constant(w.clone()); let y = t.matmul(v, c)?; f(t, y) } })),
        ("matmul_rhs", x.clone(), Box::new({ let (w, f) = (w.clone(), weighted.clone()); move |t, v| { let c = t.constant(w.clone()); let y = t.matmul(c, v)?; f(t, y) } })),
        ("add", x.clone(), Box::new({ let (w2, f) = (w2.clone(), weighted.clone()); move |t, v| { let c = t.constant(w2.clone()); let y = t.add(v, c)?; let y = t.mul(y, y)?; f(t, y) } })),
        ("add_bias", x.clone(), Box::new({ let (b, f) = (bias.clone(), weighted.clone()); move |t, v| { let b = t.constant(b.clone()); let y = t.add_bias(v, b)?; let y = t.mul(y, y)?; f(t, y) } })),
        ("mul", x.clone(), Box::new({ let f = weighted.clone(); move |t, v| { let y = t.mul(v, v)?; f(t, y) } })),
        ("scale_rows", x.clone(), Box::new({ let f = weighted.clone(); move |t, v| { let s = t.narrow(v, 1, 0, 1)?; let s = t.reshape(s, &[3])?; let y = t.scale_rows(v, s)?; f(t, y) } })),
        ("scale", x.clone(), Box::new({ let f = weighted.clone(); move |t, v| { let y = t.scale(v, -2.5); let y = t.mul(y, v)?; f(t, y) } })),
        ("div_scalar", x.clone(), Box::new({ let f = weighted.clone(); move |t, v| { let y = t.div_scalar(v, 0.3); let y = t.mul(y, v)?; f(t, y) } })),
        ("relu", x.clone(), Box::new({ let f = weighted.clone(); move |t, v| { let y = t.relu(v); f(t, y) } })),
        ("sigmoid", x.clone(), Box::new({ let f = weighted.clone(); move |t, v| { let y = t.sigmoid(v); f(t, y) } })),
        ("tanh", x.clone(), Box::new({ let f = weighted.clone(); move |t, v| { let y = t.tanh(v); f(t, y) } })),
        ("ln", positive, Box::new({ let f = weighted.clone(); move |t, v| { let y = t.ln(v)?; f(t, y) } })),
        ("softmax_rows", x.clone(), Box::new({ let f = weighted.clone(); move |t, v| { let y = t.softmax(v, 1)?; f(t, y) } })),
        ("softmax_cols", x.clone(), Box::new({ let f = weighted.clone(); move |t, v| { let y = t.softmax(v, 0)?; f(t, y) } })),
        ("layer_norm", x.clone(), Box::new({ let (b, f) = (bias.clone(), weighted.clone()); move |t, v| { let g = t.constant(b.clone()); let be = t.constant(b.map(|q| q * 0.3)); let y = t.layer_norm(v, g, be, 1e-5)?; f(t, y) } })),
        ("conv1d", xc.clone(), Box::new({ let (cw, cb, f) = (cw.clone(), cb.clone(), weighted.clone()); move |t, v| { let a = t.constant(cw.clone()); let b = t.constant(cb.clone()); let y = t.conv1d(v, a, b, 2, 1)?; f(t, y) } })),
        ("conv_transpose1d", xc.clone(), Box::new({ let (ctw, cb, f) = (ctw.clone(), cb.clone(), weighted.clone()); move |t, v| { let a = t.constant(ctw.clone()); let b = t.constant(cb.clone()); let y = t.conv_transpose1d(v, a, b, 2, 1)?; f(t, y) } })),
        ("mean_rows", x.clone(), Box::new({ let f = weighted.clone(); move |t, v| { let y = t.mean_axis(v, 0)?; let y = t.mul(y, y)?; f(t, y) } })),
        ("mean_cols", x.clone(), Box::new({ let f = weighted.clone(); move |t, v| { let y = t.mean_axis(v, 1)?; let y = t.mul(y, y)?; f(t, y) } })),
        ("max_axis", x.clone(), Box::new({ let f = weighted.clone(); move |t, v| { let y = t.max_axis(v, 1)?; f(t, y) } })),
        ("sum", x.clone(), Box::new(|t, v| { let y = t.mul(v, v)?; Ok(t.sum(y)) })),
        ("concat", x.clone(), Box::new({ let (w2, f) = (w2.clone(), weighted.clone()); move |t, v| { let c = t.constant(w2.clone()); let y = t.concat(&[v, c, v], 1)?; let y = t.mul(y, y)?; f(t, y) } })),
        ("narrow", x.clone(), Box::new({ let f = weighted.clone(); move |t, v| { let y = t.narrow(v, 1, 1, 2)?; let y = t.mul(y, y)?; f(t, y) } })),
        ("reshape", x.clone(), Box::new({ let f = weighted.clone(); move |t, v| { let y = t.reshape(v, &[2, 6])?; let y = t.mul(y, y)?; f(t, y) } })),
        ("transpose", x.clone(), Box::new({ let (w2, f) = (w2.clone(), weighted.clone()); move |t, v| { let y = t.transpose(v)?; let c = t.constant(w2.clone()); let y = t.matmul(c, y)?; f(t, y) } })),
        ("embedding", x.clone(), Box::new({ let f = weighted.clone(); move |t, v| { let y = t.embedding(v, 2)?; let y = t.mul(y, y)?; f(t, y) } })),
        ("cross_entropy", x.clone(), Box::new(|t, v| t.cross_entropy(v, &[1, 0, 3]))),
        ("bce_with_logits", x.clone(), Box::new(move |t, v| t.bce_with_logits(v, &labels))),
        ("mil_nll", positive_probs(&x), Box::new(|t, v| { let r = t.narrow(v, 0, 0, 1)?; mil_nll(t, r, 2) })),
    ]
}

fn positive_probs(x: &Tensor) -> Tensor {
    x.map(|v| 0.1 + v.abs())
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: Vec<(&str, f64)> = Vec::new();
    for _ in 0..20 {
        for (name, input, f) in primitive_cases(&mut rng) {
            let err = grad_check(|t, v| f(t, v), &input, 1e-5).unwrap();
            match worst.iter_mut().find(|(n, _)| *n == name) {
                Some(e) => e.1 = e.1.max(err),
                None => worst.push((name, err)),
            }
        }
    }
    let (bad_name, bad) = worst.iter().copied().fold(("", 0.0), |a, b| if b.1 > a.1 { b } else { a });

    let cfg = small_model();
    let mut gen = Generator::new(&cfg, 11).unwrap();
    let mut disc = Discriminator::new(&cfg, 12).unwrap();
    // Zero-initialised biases put units with an all-zero receptive field
    // exactly on the ReLU kink, where a central difference straddles it.
    for p in gen.params_mut().params_mut().iter_mut().chain(disc.params_mut().params_mut()) {
        for v in p.value.data_mut() {
            *v += rng.random_range(-0.05..0.05);
        }
    }
    let real = randn(&mut rng, &[4, 8]);
    let fake = randn(&mut rng, &[4, 8]);
    let z = vec![0.3, -0.7, 1.1, 0.2];
    let mix = randn(&mut rng, &[4, 8]);
    let gen_loss = |tape: &mut Tape, set: &ParamSet| -> Result<Var> {
        let mut g = gen.clone();
        *g.params_mut() = set.clone();
        let pass = g.generate(tape, &z, 1)?;
        let m = tape.constant(mix.clone());
        let p = tape.mul(pass.bag, m)?;
        let s = tape.sum(p);
        let fake_nll = mil_nll(tape, pass.mil.unwrap().bag_probs, 1)?;
        let x = tape.constant(real.clone());
        let mil = g.classify(tape, x)?;
        let real_nll = mil_nll(tape, mil.bag_probs, 2)?;
        let l = tape.add(s, fake_nll)?;
        tape.add(l, real_nll)
    };
    let gen_err = grad_check_params(gen_loss, gen.params(), 1e-5, 6).unwrap();
    let disc_loss = |tape: &mut Tape, set: &ParamSet| -> Result<Var> {
        let mut d = disc.clone();
        *d.params_mut() = set.clone();
        let x = tape.constant(real.clone());
        let pr = d.forward(tape, x)?;
        let y = tape.constant(fake.clone());
        let pf = d.forward(tape, y)?;
        let ce = tape.cross_entropy(pr.class_logits, &[2])?;
        let br = tape.bce_with_logits(pr.source, &[1.0])?;
        let bf = tape.bce_with_logits(pf.source, &[0.0])?;
        let l = tape.add(ce, br)?;
        tape.add(l, bf)
    };
    let disc_err = grad_check_params(disc_loss, disc.params(), 1e-5, 6).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        bad <= 1e-6 && gen_err <= 1e-4 && disc_err <= 1e-4 && secs <= 60.0,
        format!(
            "{} primitives x 20 inputs, worst {bad:.2e} ({bad_name}); generator {gen_err:.2e}, discriminator {disc_err:.2e}; {secs:.1} s",
            worst.len()
        ),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let t = rng.random_range(1..=64);
        let k = rng.random_range(1..=8);
        let d = rng.random_range(1..=16);
        let mut set = ParamSet::new(0);
        let heads = MilHeads::new(&mut set, "mil", d, k, &mut rng);
        let mut tape = Tape::inference();
        let z = tape.constant(randn(&mut rng, &[t, d]).map(|v| 2.0 * v));
        let vars = mil_conjunctive_pool(&mut tape, &set, z, &heads).unwrap();
        let out = vars.values(&tape);
        let probs = out.instance_probs.data();
        for c in 0..k {
            let mut brute = 0.0;
            for j in 0..t {
                brute += out.attention[j] * probs[j * k + c];
            }
            brute /= t as f64;
            worst = worst.max((brute - out.bag_probs[c]).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(worst <= 1e-12 && secs <= 5.0, format!("1000 cases, max |diff| {worst:.2e}; {secs:.2} s"))
}

fn criterion_3() -> Outcome {
    let fc = 2.4375e9;
    let at_rest = doppler_shift_hz(0.0, fc, 0.3);
    let broadside = doppler_shift_hz(26.0, fc, PI / 2.0);
    let fd = doppler_shift_hz(26.0, fc, 0.0);
    let oracle = 26.0 * 2_437_500_000.0 / 299_792_458.0;
    let pass = at_rest == 0.0
        && broadside.abs() <= 1e-12
        && (fd - 211.40).abs() <= 0.01
        && (fd - oracle).abs() <= 1e-9
        && SPEED_OF_LIGHT == 299_792_458.0;
    outcome(
        pass,
        format!("f_d(v=0) {at_rest}, f_d(pi/2) {broadside:.1e}, f_d(26 m/s) {fd:.4} Hz (oracle {oracle:.4})"),
    )
}

fn test_signal(rng: &mut ChaCha8Rng, n: usize, fd: f64) -> IQSignal {
    let fs = 1e6;
    let tone = rng.random_range(-2e5..2e5);
    let samples = (0..n)
        .map(|i| {
            let ph = 2.0 * PI * tone * i as f64 / fs;
            Complex64::from_polar(1.0, ph) + Complex64::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3))
        })
        .collect();
    let kin = KinematicParams {
        speed_mps: fd * SPEED_OF_LIGHT / 2.4375e9,
        angle_rad: 0.0,
        distance_m: 100.0,
    };
    IQSignal::new(samples, fs, 2.4375e9, FlightState::new(LabelSet::Synth3, 0).unwrap(), kin, 10.0).unwrap()
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut doppler_err = 0.0f64;
    let mut parseval_err = 0.0f64;
    for _ in 0..20 {
        let n = rng.random_range(256..4096);
        let fd = rng.random_range(-4e5..4e5);
        let s = test_signal(&mut rng, n, fd);
        let back = compensate_doppler(&apply_doppler(&s, fd).unwrap(), fd).unwrap();
        let num: f64 = back.samples.iter().zip(&s.samples).map(|(a, b)| (a - b).norm_sqr()).sum();
        let den: f64 = s.samples.iter().map(|a| a.norm_sqr()).sum();
        doppler_err = doppler_err.max((num / den).sqrt());

        let w = &s.samples[..rng.random_range(16..n.min(1024))];
        let spec = fft_magnitude(w, s.sample_rate_hz, s.center_freq_hz).unwrap();
        let time: f64 = w.iter().map(|a| a.norm_sqr()).sum();
        let freq: f64 = spec.magnitudes.iter().map(|m| m * m).sum::<f64>() / w.len() as f64;
        parseval_err = parseval_err.max((time - freq).abs() / time);
    }

    let cfg = PreprocessConfig::default();
    let analyzer = SpectrumAnalyzer::new(cfg.fft_len());
    let (mut mean_err, mut std_err) = (0.0f64, 0.0f64);
    for _ in 0..10 {
        let s = test_signal(&mut rng, cfg.samples_for_bags(1), 1500.0);
        for inst in instance_vectors(&s, &cfg, &analyzer).unwrap() {
            let size = inst.len() / cfg.n_bands;
            for b in 0..cfg.n_bands {
                let band = if b + 1 == cfg.n_bands { &inst[b * size..] } else { &inst[b * size..(b + 1) * size] };
                let m = band.iter().sum::<f64>() / band.len() as f64;
                let sd = (band.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / band.len() as f64).sqrt();
                mean_err = mean_err.max(m.abs());
                std_err = std_err.max((sd - 1.0).abs());
            }
        }
    }

    let mut window_mismatch = 0u64;
    let mut triples = 0u64;
    for l in 1..=512usize {
        for n in 1..=l {
            for stride in 1..=n {
                let mut count = 0;
                let mut s = 0;
                while s + n <= l {
                    count += 1;
                    s += stride;
                }
                triples += 1;
                if count != window_count(l, n, stride) {
                    window_mismatch += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        doppler_err <= 1e-9 && parseval_err <= 1e-9 && mean_err <= 1e-9 && std_err <= 1e-6 && window_mismatch == 0 && secs <= 120.0,
        format!(
            "doppler round trip {doppler_err:.1e}, parseval {parseval_err:.1e}, band |mean| {mean_err:.1e}, |std-1| {std_err:.1e}, \
             windows {window_mismatch}/{triples} mismatched; {secs:.1} s"
        ),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let cfg = ModelConfig::default();
    let disc = Discriminator::new(&cfg, 5).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let gain = rng.random_range(0.1..5.0);
        let x = randn(&mut rng, &[cfg.bag_size, cfg.instance_dim]).map(|v| v * gain);
        let mut tape = Tape::inference();
        let v = tape.constant(x);
        let pass = disc.forward(&mut tape, v).unwrap();
        let w = tape.value(pass.channel_weights.unwrap()).data().to_vec();
        worst = worst.max((w.iter().sum::<f64>() - 1.0).abs());
        if w.iter().any(|&p| p < 0.0) {
            worst = f64::INFINITY;
        }
    }

    let mut mismatches = 0;
    let widths: [Vec<usize>; 3] = [cfg.disc_channels.clone(), vec![8, 49], vec![16, 98, 103]];
    for channels in &widths {
        let base = ModelConfig {
            disc_channels: channels.clone(),
            ..cfg.clone()
        };
        let off = Discriminator::new(&ModelConfig { channel_attention: AttentionMode::Off, ..base.clone() }, 9).unwrap();
        let uni = Discriminator::new(&ModelConfig { channel_attention: AttentionMode::FrozenUniform, ..base }, 9).unwrap();
        for _ in 0..20 {
            let x = randn(&mut rng, &[cfg.bag_size, cfg.instance_dim]);
            let (s1, c1) = off.logits(&x).unwrap();
            let (s2, c2) = uni.logits(&x).unwrap();
            if s1.to_bits() != s2.to_bits() || c1.iter().zip(&c2).any(|(a, b)| a.to_bits() != b.to_bits()) {
                mismatches += 1;
            }
        }
    }
    outcome(
        worst <= 1e-12 && mismatches == 0,
        format!("1000 inputs, max |sum-1| {worst:.1e}; frozen-uniform vs off: {mismatches}/60 differ (C = 128, 49, 103)"),
    )
}

fn criterion_6() -> Outcome {
    let mut points = 0;
    let mut failures = Vec::new();
    for layers in [1, 2, 4] {
        for t in [4, 10, 16] {
            for d in [16, 32, 64] {
                let cfg = ModelConfig {
                    n_layers: layers,
                    n_heads: 4,
                    d_model: d,
                    d_ff: 4 * d,
                    bag_size: t,
                    instance_dim: 32,
                    disc_channels: vec![8, 16, 16],
                    ..Default::default()
                };
                points += 1;
                let g = (mac_count_generator(&cfg), instrumented_generator_macs(&cfg).unwrap());
                let dm = (mac_count_discriminator(&cfg), instrumented_discriminator_macs(&cfg).unwrap());
                let c = (classifier_macs(&cfg), instrumented_classifier_macs(&cfg).unwrap());
                if g.0 != g.1 || dm.0 != dm.1 || c.0 != c.1 {
                    failures.push(format!("layers {layers} t {t} d {d}"));
                }
            }
        }
    }
    let defaults = [
        ModelConfig::default(),
        Variant::CnnBaseline.config(&ModelConfig::default()),
    ];
    for cfg in &defaults {
        if mac_count_generator(cfg) != instrumented_generator_macs(cfg).unwrap()
            || mac_count_discriminator(cfg) != instrumented_discriminator_macs(cfg).unwrap()
        {
            failures.push(format!("{:?}", cfg.generator));
        }
    }
    let ratios: Vec<f64> = [64usize, 128, 256]
        .iter()
        .map(|&t| {
            let at = |t: usize| complexity_report(&ModelConfig { bag_size: t, ..Default::default() }).attention_term;
            at(2 * t) as f64 / at(t) as f64
        })
        .collect();
    let exact = ratios.iter().all(|&r| r == 4.0);
    outcome(
        failures.is_empty() && exact,
        format!(
            "{points}-point sweep + defaults, {} mismatches; attention ratio L->2L {ratios:?}",
            failures.len()
        ),
    )
}

/// Everything criteria 7 to 9 produce, minus timing, for the determinism
/// comparison.
#[derive(Default, PartialEq)]
struct Artifacts {
    checkpoint: Vec<u8>,
    history: String,
    disc_report: String,
    mil_report: String,
    ablation: String,
    augmentation: String,
}

const DESK_SEED: u64 = 7;
const ABLATION_EPOCHS: usize = 15;
const ABLATION_SEEDS: [u64; 3] = [7, 8, 9];
const AUGMENT_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const AUGMENT_BATCH: usize = 16;

fn criterion_7(art: &mut Artifacts) -> Outcome {
    let start = Instant::now();
    let (train, test) = desk_split(DESK_SEED, 40, 10, 5).unwrap();
    let tc = TrainConfig {
        seed: DESK_SEED,
        ..Default::default()
    };
    let run = train_cgan(&train, &ModelConfig::default(), &tc).unwrap();
    let disc = evaluate_discriminator(&run.discriminator, &test).unwrap();
    let mil = evaluate_mil(&run.generator, &test).unwrap();
    let secs = start.elapsed().as_secs_f64();
    art.checkpoint = Checkpoint::from_models(&run.generator, &run.discriminator).to_bytes().unwrap();
    art.history = run
        .history
        .records
        .iter()
        .map(|r| format!("{} {} {} {} {} {:?}\n", r.epoch, r.d_loss, r.g_loss, r.d_src_acc, r.d_cls_acc, r.g_mil_acc))
        .collect();
    art.disc_report = disc.to_json();
    art.mil_report = mil.to_json();
    outcome(
        disc.accuracy >= 0.90 && mil.accuracy >= 0.85 && secs <= 600.0,
        format!(
            "{} train / {} test bags, {} epochs: disc {:.4}, MIL {:.4}; {secs:.0} s on {} worker(s)",
            train.len(),
            test.len(),
            tc.epochs,
            disc.accuracy,
            mil.accuracy,
            rfsf_core::par::worker_count()
        ),
    )
}

fn criterion_8(art: &mut Artifacts) -> Outcome {
    let start = Instant::now();
    let (train, test) = desk_split(DESK_SEED, 40, 10, 5).unwrap();
    let tc = TrainConfig {
        epochs: ABLATION_EPOCHS,
        ..Default::default()
    };
    let table = ablation_run(&train, &test, &ModelConfig::default(), &tc, &ABLATION_SEEDS).unwrap();
    let secs = start.elapsed().as_secs_f64();
    art.ablation = table.to_json();
    let full = table.row(Variant::Full).mean_accuracy;
    let beaten: Vec<&str> = table
        .rows
        .iter()
        .filter(|r| r.mean_accuracy > full)
        .map(|r| r.name.as_str())
        .collect();
    let (m2, m4) = (
        table.row(Variant::NoMil).mean_accuracy,
        table.row(Variant::MilNoAttention).mean_accuracy,
    );
    let means: Vec<String> = table.rows.iter().map(|r| format!("{} {:.4}", r.name, r.mean_accuracy)).collect();
    let violations = table.seed_violations();
    for v in &violations {
        println!("    seed-level ordering violation (logged, not failed): {v}");
    }
    outcome(
        beaten.is_empty() && m4 >= m2 && secs <= 1800.0,
        format!(
            "{ABLATION_EPOCHS} epochs, seeds {ABLATION_SEEDS:?}: {}; {} seed-level violations; {secs:.0} s",
            means.join(", "),
            violations.len()
        ),
    )
}

fn criterion_9(art: &mut Artifacts) -> Outcome {
    let start = Instant::now();
    let (train, test) = desk_split(DESK_SEED, 40, 10, 5).unwrap();
    let tc = TrainConfig {
        batch_size: AUGMENT_BATCH,
        ..Default::default()
    };
    let report = augmentation_experiment(&train, &test, &ModelConfig::default(), &tc, 0.1, &AUGMENT_SEEDS).unwrap();
    let secs = start.elapsed().as_secs_f64();
    art.augmentation = report.to_json();
    let delta = 100.0 * (report.mean_augmented - report.mean_real_only);
    outcome(
        delta >= -2.0,
        format!(
            "{} real bags per trial, seeds {AUGMENT_SEEDS:?}: augmented {:.4} vs real-only {:.4} ({delta:+.2} points; {}); {secs:.0} s",
            report.trials[0].train_bags,
            report.mean_augmented,
            report.mean_real_only,
            if delta >= 0.0 { "no regression" } else { "regression within the 2-point allowance" }
        ),
    )
}

fn criterion_10(first: &Artifacts) -> Outcome {
    let start = Instant::now();
    let mut second = Artifacts::default();
    let _ = criterion_7(&mut second);
    let _ = criterion_8(&mut second);
    let _ = criterion_9(&mut second);
    let parts = [
        ("checkpoint", first.checkpoint == second.checkpoint),
        ("history", first.history == second.history),
        ("disc report", first.disc_report == second.disc_report),
        ("MIL report", first.mil_report == second.mil_report),
        ("ablation", first.ablation == second.ablation),
        ("augmentation", first.augmentation == second.augmentation),
    ];
    let differing: Vec<&str> = parts.iter().filter(|p| !p.1).map(|p| p.0).collect();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        differing.is_empty() && !first.checkpoint.is_empty(),
        if differing.is_empty() {
            format!("checkpoint ({} bytes), history and all reports identical on rerun; {secs:.0} s", first.checkpoint.len())
        } else {
            format!("differs on rerun: {}", differing.join(", "))
        },
    )
}

const NAMES: [&str; 10] = [
    "gradient suite",
    "MIL pooling oracle",
    "Doppler shift",
    "DSP suite",
    "channel attention",
    "complexity accounting",
    "end-to-end desk run",
    "ablation ordering",
    "augmentation benefit",
    "determinism",
];

fn main() {
    let selected: Vec<usize> = match std::env::var("RFSF_ACCEPTANCE") {
        Ok(v) if !v.trim().is_empty() => v.split(',').filter_map(|s| s.trim().parse().ok()).collect(),
        _ => (1..=10).collect(),
    };
    let needs_artifacts = selected.contains(&10);
    let mut art = Artifacts::default();
    let mut failed = Vec::new();
    for n in 1..=10usize {
        let run_for_10 = needs_artifacts && (7..=9).contains(&n);
        if !selected.contains(&n) && !run_for_10 {
            continue;
        }
        let o = match n {
            1 => criterion_1(),
            2 => criterion_2(),
            3 => criterion_3(),
            4 => criterion_4(),
            5 => criterion_5(),
            6 => criterion_6(),
            7 => criterion_7(&mut art),
            8 => criterion_8(&mut art),
            9 => criterion_9(&mut art),
            _ => criterion_10(&art),
        };
        if !selected.contains(&n) {
            continue;
        }
        println!(
            "criterion {n} ({}): {} | {}",
            NAMES[n - 1],
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed.push(n);
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
