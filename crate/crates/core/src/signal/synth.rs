use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::profile::SignalProfile;
use super::state::{doppler_shift_hz, FlightState, KinematicClass, KinematicParams, LabelSet};
use crate::error::{Error, Result};
use crate::{par, rng};

/// Complex baseband recording with its label and provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct IQSignal {
    pub samples: Vec<Complex64>,
    pub sample_rate_hz: f64,
    pub center_freq_hz: f64,
    pub label: FlightState,
    pub kinematics: KinematicParams,
    /// `f64::INFINITY` when no noise was added.
    pub snr_db: f64,
}

impl IQSignal {
    pub fn new(
        samples: Vec<Complex64>,
        sample_rate_hz: f64,
        center_freq_hz: f64,
        label: FlightState,
        kinematics: KinematicParams,
        snr_db: f64,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::contract("signal must have at least one sample"));
        }
        if !(sample_rate_hz > 0.0) {
            return Err(Error::contract(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        Ok(IQSignal {
            samples,
            sample_rate_hz,
            center_freq_hz,
            label,
            kinematics,
            snr_db,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Doppler shift implied by the recorded kinematics.
    pub fn doppler_hz(&self) -> f64 {
        doppler_shift_hz(
            self.kinematics.speed_mps,
            self.center_freq_hz,
            self.kinematics.angle_rad,
        )
    }
}

pub fn mean_power(samples: &[Complex64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / samples.len() as f64
}

fn noise_of_power<R: Rng + ?Sized>(samples: &mut [Complex64], power: f64, rng: &mut R) {
    let sigma = (power / 2.0).sqrt();
    for s in samples {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *s += Complex64::new(sigma * re, sigma * im);
    }
}

/// Adds circular complex white Gaussian noise so that
/// `10 log10(P_signal / P_noise) = snr_db`, with `P_signal` measured on the
/// input.
pub fn add_noise<R: Rng + ?Sized>(signal: &IQSignal, snr_db: f64, rng: &mut R) -> Result<IQSignal> {
    let ps = mean_power(&signal.samples);
    if !(ps > 0.0) {
        return Err(Error::contract("cannot set SNR of a zero-power signal"));
    }
    let mut out = signal.clone();
    if snr_db.is_finite() {
        noise_of_power(&mut out.samples, ps / 10f64.powf(snr_db / 10.0), rng);
    }
    out.snr_db = snr_db;
    Ok(out)
}

/// Synthesises `n_samples` of the state's signature, Doppler shifted by the
/// kinematics, attenuated by `1 / max(distance, 1 m)` and with noise at
/// `snr_db` (`+inf` disables noise).
pub fn synth_signal<R: Rng + ?Sized>(
    state: FlightState,
    profile: &SignalProfile,
    kinematics: KinematicParams,
    snr_db: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<IQSignal> {
    if n_samples == 0 {
        return Err(Error::contract("n_samples must be at least 1"));
    }
    if state.label_set() != profile.label_set {
        return Err(Error::config(format!(
            "state from {} used with a {} profile",
            state.label_set(),
            profile.label_set
        )));
    }
    let sig = profile.signature(state.index())?;
    let fs = profile.sample_rate_hz;
    let fd = doppler_shift_hz(kinematics.speed_mps, profile.center_freq_hz, kinematics.angle_rad);
    let gain = 1.0 / kinematics.distance_m.max(1.0);

    let mut samples = vec![Complex64::new(0.0, 0.0); n_samples];
    let mut nominal_power = 0.0;
    for t in &sig.tones {
        let jitter = if profile.tone_jitter_hz > 0.0 {
            rng.random_range(-profile.tone_jitter_hz..=profile.tone_jitter_hz)
        } else {
            0.0
        };
        let amp_scale = if profile.amplitude_jitter > 0.0 {
            1.0 + rng.random_range(-profile.amplitude_jitter..=profile.amplitude_jitter)
        } else {
            1.0
        };
        let amp = t.amplitude * amp_scale * gain;
        nominal_power += amp * amp;
        let phase0: f64 = rng.random_range(0.0..2.0 * PI);
        let mod_phase: f64 = rng.random_range(0.0..2.0 * PI);
        let f = t.offset_hz + jitter + fd;
        // sinusoidal FM with peak deviation B/2: phase term -(B/2)/f_m cos(.)
        let beta = if t.mod_bandwidth_hz > 0.0 && t.mod_rate_hz > 0.0 {
            t.mod_bandwidth_hz / 2.0 / t.mod_rate_hz
        } else {
            0.0
        };
        for (n, s) in samples.iter_mut().enumerate() {
            let time = n as f64 / fs;
            let mut phase = phase0 + 2.0 * PI * f * time;
            if beta != 0.0 {
                phase -= beta * ((2.0 * PI * t.mod_rate_hz * time + mod_phase).cos() - mod_phase.cos());
            }
            *s += Complex64::from_polar(amp, phase);
        }
    }

    if sig.duty_cycle < 1.0 {
        let period = sig.burst_period;
        let on = ((sig.duty_cycle * period as f64).round() as usize).max(1);
        let offset = rng.random_range(0..period);
        for (n, s) in samples.iter_mut().enumerate() {
            if (n + offset) % period >= on {
                *s = Complex64::new(0.0, 0.0);
            }
        }
    }

    if snr_db.is_finite() {
        // gating can silence a short signal entirely; fall back to the
        // keyed-on power in that case
        let ps = match mean_power(&samples) {
            p if p > 0.0 => p,
            _ => nominal_power,
        };
        noise_of_power(&mut samples, ps / 10f64.powf(snr_db / 10.0), rng);
    }

    IQSignal::new(samples, fs, profile.center_freq_hz, state, kinematics, snr_db)
}

/// Requested number of signals per state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub counts: Vec<(FlightState, usize)>,
}

impl DatasetSpec {
    /// Same count for every class of the label set.
    pub fn uniform(set: LabelSet, count: usize) -> Self {
        DatasetSpec {
            counts: (0..set.cardinality())
                .map(|i| (FlightState::new(set, i).unwrap(), count))
                .collect(),
        }
    }

    /// Parses `ON:5,HO:5,FY:5` style specs against a label set.
    pub fn parse(set: LabelSet, text: &str) -> Result<Self> {
        let names = set.class_names();
        let mut counts = Vec::new();
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, n) = part
                .split_once(':')
                .ok_or_else(|| Error::config(format!("expected NAME:COUNT, got {part}")))?;
            let idx = names
                .iter()
                .position(|c| c.eq_ignore_ascii_case(name.trim()))
                .ok_or_else(|| Error::config(format!("unknown class {name} in {set}")))?;
            let n: usize = n
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("bad count in {part}")))?;
            counts.push((FlightState::new(set, idx)?, n));
        }
        Ok(DatasetSpec { counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().map(|(_, n)| n).sum()
    }
}

/// Draws kinematics for a state; classes without an emitter in motion are
/// synthesised at rest.
pub fn draw_kinematics<R: Rng + ?Sized>(state: FlightState, rng: &mut R) -> KinematicParams {
    state
        .kinematic_class()
        .unwrap_or(KinematicClass::Stationary)
        .sample(rng)
}

/// Builds a labelled, shuffled dataset. Signal `i` (in spec order) draws
/// everything from its own stream, so the result is independent of thread
/// count.
pub fn make_dataset(
    spec: &DatasetSpec,
    profile: &SignalProfile,
    snr_range_db: (f64, f64),
    n_samples: usize,
    seed: u64,
) -> Result<Vec<IQSignal>> {
    profile.validate()?;
    if let Some((s, _)) = spec.counts.iter().find(|(_, n)| *n == 0) {
        return Err(Error::config(format!("count must be ≥ 1 for {}", s.name())));
    }
    let (lo, hi) = snr_range_db;
    if lo > hi {
        return Err(Error::config(format!("empty SNR range [{lo}, {hi}]")));
    }
    let labels: Vec<FlightState> = spec
        .counts
        .iter()
        .flat_map(|(s, n)| std::iter::repeat_n(*s, *n))
        .collect();
    let base = rng::sub_seed(seed, rng::TAG_DATASET);
    let mut signals = par::map_indexed(labels.len(), |i| {
        let mut r = rng::stream(base, i as u64);
        let kin = draw_kinematics(labels[i], &mut r);
        let snr = if lo == hi { lo } else { r.random_range(lo..=hi) };
        synth_signal(labels[i], profile, kin, snr, n_samples, &mut r)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    signals.shuffle(&mut rng::rng_from(rng::sub_seed(seed, rng::TAG_SHUFFLE)));
    Ok(signals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use crate::signal::profile::{StateSignature, ToneSpec};

    fn tone_profile(fs: f64, f0: f64) -> SignalProfile {
        SignalProfile {
            name: "test".into(),
            label_set: LabelSet::Synth3,
            sample_rate_hz: fs,
            center_freq_hz: 2.4375e9,
            bandwidth_hz: fs,
            tone_jitter_hz: 0.0,
            amplitude_jitter: 0.0,
            signatures: vec![
                StateSignature {
                    tones: vec![ToneSpec {
                        offset_hz: f0,
                        amplitude: 1.0,
                        mod_bandwidth_hz: 0.0,
                        mod_rate_hz: 0.0,
                    }],
                    duty_cycle: 1.0,
                    burst_period: 1,
                };
                3
            ],
        }
    }

    fn on() -> FlightState {
        FlightState::new(LabelSet::Synth3, 0).unwrap()
    }

    #[test]
    fn snr_is_honoured() {
        let p = SignalProfile::drone_detect(LabelSet::Synth3);
        let hov = FlightState::new(LabelSet::Synth3, 1).unwrap();
        let kin = KinematicParams { speed_mps: 0.0, angle_rad: 0.0, distance_m: 0.0 };
        let mut r1 = rng_from(3);
        let clean = synth_signal(hov, &p, kin, f64::INFINITY, 100_000, &mut r1).unwrap();
        let mut r2 = rng_from(3);
        let noisy = synth_signal(hov, &p, kin, 10.0, 100_000, &mut r2).unwrap();
        let noise: Vec<Complex64> = noisy.samples.iter().zip(&clean.samples).map(|(a, b)| a - b).collect();
        let snr = 10.0 * (mean_power(&clean.samples) / mean_power(&noise)).log10();
        assert!((snr - 10.0).abs() <= 0.5, "{snr}");
    }

    #[test]
    fn add_noise_zero_db_and_limits() {
        let p = tone_profile(1e3, 100.0);
        let clean = synth_signal(on(), &p, KinematicParams::default(), f64::INFINITY, 100_000, &mut rng_from(1)).unwrap();
        let noisy = add_noise(&clean, 0.0, &mut rng_from(2)).unwrap();
        let noise: Vec<Complex64> = noisy.samples.iter().zip(&clean.samples).map(|(a, b)| a - b).collect();
        let ratio = mean_power(&noise) / mean_power(&clean.samples);
        assert!((ratio - 1.0).abs() <= 0.05, "{ratio}");

        let quiet = add_noise(&clean, 100.0, &mut rng_from(2)).unwrap();
        let diff: Vec<Complex64> = quiet.samples.iter().zip(&clean.samples).map(|(a, b)| a - b).collect();
        assert!((mean_power(&diff) / mean_power(&clean.samples)).sqrt() < 1e-3);

        let again = add_noise(&clean, 0.0, &mut rng_from(2)).unwrap();
        assert_eq!(again, noisy);

        let mut zero = clean.clone();
        zero.samples.fill(Complex64::new(0.0, 0.0));
        assert!(matches!(add_noise(&zero, 3.0, &mut rng_from(2)), Err(Error::Contract(_))));
    }

    #[test]
    fn same_seed_same_signal() {
        let p = SignalProfile::drone_rf(LabelSet::DroneRf10);
        let s = FlightState::new(LabelSet::DroneRf10, 3).unwrap();
        let k = draw_kinematics(s, &mut rng_from(5));
        let a = synth_signal(s, &p, k, 5.0, 4096, &mut rng_from(9)).unwrap();
        let b = synth_signal(s, &p, k, 5.0, 4096, &mut rng_from(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_signature_is_a_config_error() {
        let mut p = tone_profile(1e3, 10.0);
        p.signatures[0].tones.clear();
        let r = synth_signal(on(), &p, KinematicParams::default(), f64::INFINITY, 64, &mut rng_from(1));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn dataset_counts_and_determinism() {
        let p = SignalProfile::drone_detect(LabelSet::Synth3);
        let spec = DatasetSpec::parse(LabelSet::Synth3, "ON:5,HO:5,FY:5").unwrap();
        let a = make_dataset(&spec, &p, (0.0, 20.0), 512, 7).unwrap();
        assert_eq!(a.len(), 15);
        for c in 0..3 {
            assert_eq!(a.iter().filter(|s| s.label.index() == c).count(), 5);
        }
        let b = make_dataset(&spec, &p, (0.0, 20.0), 512, 7).unwrap();
        assert_eq!(a, b);
        let zero = DatasetSpec::parse(LabelSet::Synth3, "ON:0").unwrap();
        assert!(make_dataset(&zero, &p, (0.0, 20.0), 512, 7).is_err());
    }
}
