use serde::{Deserialize, Serialize};

use super::state::LabelSet;
use crate::error::{Error, Result};

/// One spectral component of a state signature. Frequencies are baseband
/// offsets from the carrier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToneSpec {
    pub offset_hz: f64,
    pub amplitude: f64,
    /// Peak-to-peak sinusoidal FM deviation; 0 gives a pure tone.
    pub mod_bandwidth_hz: f64,
    pub mod_rate_hz: f64,
}

/// Spectral fingerprint of one flight state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateSignature {
    pub tones: Vec<ToneSpec>,
    /// Fraction of each burst period during which the emitter is keyed on.
    pub duty_cycle: f64,
    /// Burst period in samples; ignored when `duty_cycle >= 1`.
    pub burst_period: usize,
}

/// Receiver and emitter description shared by every signal of a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalProfile {
    pub name: String,
    pub label_set: LabelSet,
    pub sample_rate_hz: f64,
    pub center_freq_hz: f64,
    pub bandwidth_hz: f64,
    /// Per-signal random offset applied to every tone, uniform in `±jitter`.
    pub tone_jitter_hz: f64,
    /// Per-signal amplitude factor uniform in `1 ± amplitude_jitter`.
    pub amplitude_jitter: f64,
    /// Indexed by class index within `label_set`.
    pub signatures: Vec<StateSignature>,
}

fn tone(half_bw: f64, at: f64, amplitude: f64, mod_frac: f64) -> ToneSpec {
    ToneSpec {
        offset_hz: at * half_bw,
        amplitude,
        mod_bandwidth_hz: mod_frac * half_bw,
        mod_rate_hz: 150e3,
    }
}

/// Mode-dependent signature around a control-link tone at `base` (in units
/// of half the bandwidth). Mode 0 is a narrow beacon, 1 a continuous pair of
/// mid-width tones, 2 three wide tones keyed at a faster burst rate.
fn mode_signature(half_bw: f64, base: f64, spread: f64, mode: usize) -> StateSignature {
    let clamp = |x: f64| x.clamp(-0.95, 0.95);
    match mode {
        0 => StateSignature {
            tones: vec![tone(half_bw, clamp(base), 1.0, 0.01)],
            duty_cycle: 0.3,
            burst_period: 1024,
        },
        1 => StateSignature {
            tones: vec![
                tone(half_bw, clamp(base), 0.6, 0.05),
                tone(half_bw, clamp(base + spread), 1.0, 0.08),
            ],
            duty_cycle: 1.0,
            burst_period: 1,
        },
        _ => StateSignature {
            tones: vec![
                tone(half_bw, clamp(base), 0.6, 0.05),
                tone(half_bw, clamp(base + spread), 0.8, 0.2),
                tone(half_bw, clamp(base + 2.0 * spread), 0.7, 0.2),
            ],
            duty_cycle: 0.6,
            burst_period: 384,
        },
    }
}

fn signatures_for(label_set: LabelSet, half_bw: f64) -> Vec<StateSignature> {
    match label_set {
        LabelSet::Synth3 => (0..3)
            .map(|m| mode_signature(half_bw, -0.45, 0.55, m))
            .collect(),
        LabelSet::DroneDetect21 => (0..21)
            .map(|i| {
                let drone = i / 3;
                let base = -0.85 + 0.2 * drone as f64;
                mode_signature(half_bw, base, 0.12, i % 3)
            })
            .collect(),
        LabelSet::DroneRf10 => {
            // background: weak wideband interference, no drone emitter
            let background = StateSignature {
                tones: vec![tone(half_bw, 0.0, 0.2, 1.6)],
                duty_cycle: 1.0,
                burst_period: 1,
            };
            let layout: [(f64, usize); 9] = [
                (-0.7, 0),
                (-0.7, 1),
                (-0.7, 2),
                (-0.6, 2),
                (0.1, 0),
                (0.1, 1),
                (0.1, 2),
                (0.2, 2),
                (0.6, 0),
            ];
            let mut sigs = vec![background];
            for (i, &(base, mode)) in layout.iter().enumerate() {
                let mut s = mode_signature(half_bw, base, 0.15, mode);
                // the video-streaming variants key at a denser burst rate
                if i == 3 || i == 7 {
                    s.duty_cycle = 0.85;
                    s.burst_period = 256;
                }
                sigs.push(s);
            }
            sigs
        }
    }
}

impl SignalProfile {
    /// DroneDetect-like receiver: 60 MS/s, 28 MHz band at 2.4375 GHz.
    pub fn drone_detect(label_set: LabelSet) -> Self {
        Self::with_front_end("dronedetect", label_set, 60e6, 2.4375e9, 28e6)
    }

    /// DroneRF-like receiver: 40 MS/s, 40 MHz band at 2.422 GHz.
    pub fn drone_rf(label_set: LabelSet) -> Self {
        Self::with_front_end("dronerf", label_set, 40e6, 2.422e9, 40e6)
    }

    fn with_front_end(
        name: &str,
        label_set: LabelSet,
        sample_rate_hz: f64,
        center_freq_hz: f64,
        bandwidth_hz: f64,
    ) -> Self {
        let half = bandwidth_hz / 2.0;
        SignalProfile {
            name: name.to_string(),
            label_set,
            sample_rate_hz,
            center_freq_hz,
            bandwidth_hz,
            tone_jitter_hz: 0.02 * half,
            amplitude_jitter: 0.2,
            signatures: signatures_for(label_set, half),
        }
    }

    /// Looks a built-in profile up by name (`dronedetect` or `dronerf`).
    pub fn by_name(name: &str, label_set: LabelSet) -> Result<Self> {
        let p = match name.to_ascii_lowercase().as_str() {
            "dronedetect" => Self::drone_detect(label_set),
            "dronerf" => Self::drone_rf(label_set),
            other => return Err(Error::config(format!("unknown profile {other}"))),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0) || !(self.bandwidth_hz > 0.0) {
            return Err(Error::config("sample rate and bandwidth must be positive"));
        }
        if self.bandwidth_hz > self.sample_rate_hz {
            return Err(Error::config(format!(
                "bandwidth {} Hz exceeds sample rate {} Hz",
                self.bandwidth_hz, self.sample_rate_hz
            )));
        }
        if self.signatures.len() != self.label_set.cardinality() {
            return Err(Error::config(format!(
                "{} signatures for {} classes",
                self.signatures.len(),
                self.label_set.cardinality()
            )));
        }
        let half = self.bandwidth_hz / 2.0;
        for (i, sig) in self.signatures.iter().enumerate() {
            if sig.tones.is_empty() {
                return Err(Error::config(format!("empty signature for class {i}")));
            }
            if !(0.0..=1.0).contains(&sig.duty_cycle) || sig.duty_cycle == 0.0 || sig.burst_period == 0 {
                return Err(Error::config(format!("bad burst gating for class {i}")));
            }
            if sig.tones.iter().any(|t| t.offset_hz.abs() > half) {
                return Err(Error::config(format!("tone outside the band for class {i}")));
            }
        }
        Ok(())
    }

    /// Signature of class `index`, rejecting empty signatures.
    pub fn signature(&self, index: usize) -> Result<&StateSignature> {
        let sig = self.signatures.get(index).ok_or(Error::Index {
            what: "signature",
            index,
            bound: self.signatures.len(),
        })?;
        if sig.tones.is_empty() {
            return Err(Error::config(format!("empty signature for class {index}")));
        }
        Ok(sig)
    }
}
