//! Doppler compensation, overlapping windows, magnitude spectra, per-band
//! z-scoring and grouping into multiple-instance bags.
//!
//! # Bag container
//!
//! All integers are little-endian.
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `RFSFBAGS` |
//! | 4 | version `u32` (= 1) |
//! | 4 | instances per bag `t` |
//! | 4 | instance dimension `d` |
//! | 4 | bag count `n` |
//! | 4 | class count `K` |
//! | 4 | label set code (0 SYNTH3, 1 DRONERF10, 2 DRONEDETECT21) |
//! | 4·n·t·d | instance values, `f32`, bag-major then instance then bin |
//! | 4·n | class index per bag, `u32` |
//! | 4·n | source signal id per bag, `u32` |

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::signal::{FlightState, IQSignal, LabelSet};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DopplerMode {
    /// Remove the shift computed from the signal's recorded kinematics.
    Oracle,
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub schema_version: u32,
    pub window_len: usize,
    pub stride: usize,
    pub n_bands: usize,
    pub zscore_eps: f64,
    pub doppler_mode: DopplerMode,
    pub bag_size: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            schema_version: 1,
            window_len: 256,
            stride: 128,
            n_bands: 8,
            zscore_eps: 1e-8,
            doppler_mode: DopplerMode::Oracle,
            bag_size: 10,
        }
    }
}

impl PreprocessConfig {
    /// The FFT always spans one window.
    pub fn fft_len(&self) -> usize {
        self.window_len
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.stride == 0 || self.stride > self.window_len {
            return Err(Error::config(format!(
                "need 1 <= stride <= window_len, got stride {} window {}",
                self.stride, self.window_len
            )));
        }
        if self.n_bands == 0 || self.n_bands > self.window_len {
            return Err(Error::config(format!(
                "band count {} must be in [1, {}]",
                self.n_bands, self.window_len
            )));
        }
        if !(self.zscore_eps > 0.0) {
            return Err(Error::config("zscore_eps must be positive"));
        }
        if self.bag_size == 0 {
            return Err(Error::config("bag_size must be at least 1"));
        }
        Ok(())
    }

    /// Signal length that yields exactly `bags` full bags.
    pub fn samples_for_bags(&self, bags: usize) -> usize {
        self.window_len + (bags * self.bag_size - 1) * self.stride
    }
}

fn rotate(signal: &IQSignal, hz: f64) -> IQSignal {
    let mut out = signal.clone();
    if hz != 0.0 {
        let w = 2.0 * PI * hz / signal.sample_rate_hz;
        for (n, s) in out.samples.iter_mut().enumerate() {
            *s *= Complex64::from_polar(1.0, w * n as f64);
        }
    }
    out
}

fn check_nyquist(signal: &IQSignal, fd: f64) -> Result<()> {
    if fd.abs() >= signal.sample_rate_hz / 2.0 {
        return Err(Error::contract(format!(
            "shift {fd} Hz is beyond Nyquist for {} Hz sampling",
            signal.sample_rate_hz
        )));
    }
    Ok(())
}

/// Multiplies sample `n` by `exp(i 2π f_d n / fs)`.
pub fn apply_doppler(signal: &IQSignal, fd: f64) -> Result<IQSignal> {
    check_nyquist(signal, fd)?;
    Ok(rotate(signal, fd))
}

/// Multiplies sample `n` by `exp(-i 2π f_d n / fs)`.
pub fn compensate_doppler(signal: &IQSignal, fd: f64) -> Result<IQSignal> {
    check_nyquist(signal, fd)?;
    Ok(rotate(signal, -fd))
}

/// `floor((L - N) / stride) + 1`, or 0 when the signal is shorter than a window.
pub fn window_count(len: usize, window_len: usize, stride: usize) -> usize {
    if len < window_len || stride == 0 {
        0
    } else {
        (len - window_len) / stride + 1
    }
}

pub fn segment_windows(samples: &[Complex64], window_len: usize, stride: usize) -> Result<Vec<&[Complex64]>> {
    if window_len == 0 || stride == 0 || stride > window_len {
        return Err(Error::contract(format!(
            "need 1 <= stride <= window, got stride {stride} window {window_len}"
        )));
    }
    if samples.len() < window_len {
        return Err(Error::contract(format!(
            "signal of {} samples is shorter than the {window_len}-sample window",
            samples.len()
        )));
    }
    Ok((0..window_count(samples.len(), window_len, stride))
        .map(|i| &samples[i * stride..i * stride + window_len])
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    /// Bins ordered from `-fs/2` upward.
    pub magnitudes: Vec<f64>,
    pub bin_width_hz: f64,
    pub center_freq_hz: f64,
}

impl Spectrum {
    /// Index of the bin holding baseband frequency `hz`.
    pub fn bin_of(&self, hz: f64) -> usize {
        let n = self.magnitudes.len();
        let k = (hz / self.bin_width_hz).round() as isize + (n / 2) as isize;
        k.rem_euclid(n as isize) as usize
    }

    pub fn peak_bin(&self) -> usize {
        crate::tensor::argmax(&self.magnitudes)
    }
}

/// Reusable FFT plan for one window length.
#[derive(Clone)]
pub struct SpectrumAnalyzer {
    fft: Arc<dyn Fft<f64>>,
    len: usize,
}

impl SpectrumAnalyzer {
    pub fn new(len: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(len);
        SpectrumAnalyzer { fft, len }
    }

    pub fn magnitude(&self, window: &[Complex64], sample_rate_hz: f64, center_freq_hz: f64) -> Result<Spectrum> {
        if window.len() != self.len {
            return Err(Error::Shape {
                op: "fft_magnitude",
                lhs: vec![window.len()],
                rhs: vec![self.len],
            });
        }
        let mut buf = window.to_vec();
        self.fft.process(&mut buf);
        let n = self.len;
        let half = n / 2;
        let magnitudes = (0..n).map(|k| buf[(k + n - half) % n].norm()).collect();
        Ok(Spectrum {
            magnitudes,
            bin_width_hz: sample_rate_hz / n as f64,
            center_freq_hz,
        })
    }
}

/// One-off magnitude spectrum; plans a fresh FFT of the window's length.
pub fn fft_magnitude(window: &[Complex64], sample_rate_hz: f64, center_freq_hz: f64) -> Result<Spectrum> {
    if window.is_empty() {
        return Err(Error::contract("empty window"));
    }
    SpectrumAnalyzer::new(window.len()).magnitude(window, sample_rate_hz, center_freq_hz)
}

/// Contiguous partition into `bands` near-equal bands; the last band takes
/// the remainder.
pub fn filter_bank_split(bins: &[f64], bands: usize) -> Result<Vec<&[f64]>> {
    if bands == 0 || bands > bins.len() {
        return Err(Error::contract(format!(
            "cannot split {} bins into {bands} bands",
            bins.len()
        )));
    }
    let size = bins.len() / bands;
    Ok((0..bands)
        .map(|b| {
            let end = if b + 1 == bands { bins.len() } else { (b + 1) * size };
            &bins[b * size..end]
        })
        .collect())
}

/// `(x - mean) / (std + eps)` per band with population std, concatenated.
pub fn zscore_per_band(bands: &[&[f64]], eps: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(bands.iter().map(|b| b.len()).sum());
    for band in bands {
        let n = band.len() as f64;
        let mean = band.iter().sum::<f64>() / n;
        let var = band.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let denom = var.sqrt() + eps;
        out.extend(band.iter().map(|v| (v - mean) / denom));
    }
    out
}

/// `t` consecutive normalised spectra from one signal.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowedBag {
    /// Row-major `t × d`.
    pub instances: Vec<f64>,
    pub t: usize,
    pub d: usize,
    pub label: FlightState,
    pub source_id: usize,
}

/// `source_id` of generated bags.
pub const SYNTHETIC_SOURCE: usize = u32::MAX as usize;

impl WindowedBag {
    pub fn is_synthetic(&self) -> bool {
        self.source_id == SYNTHETIC_SOURCE
    }

    pub fn instance(&self, j: usize) -> &[f64] {
        &self.instances[j * self.d..(j + 1) * self.d]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.t, self.d], self.instances.clone()).expect("bag shape")
    }
}

/// Normalised instance vectors for every window of the signal.
pub fn instance_vectors(signal: &IQSignal, cfg: &PreprocessConfig, analyzer: &SpectrumAnalyzer) -> Result<Vec<Vec<f64>>> {
    let compensated;
    let sig = match cfg.doppler_mode {
        DopplerMode::Oracle => {
            compensated = compensate_doppler(signal, signal.doppler_hz())?;
            &compensated
        }
        DopplerMode::Off => signal,
    };
    segment_windows(&sig.samples, cfg.window_len, cfg.stride)?
        .into_iter()
        .map(|w| {
            let spec = analyzer.magnitude(w, sig.sample_rate_hz, sig.center_freq_hz)?;
            let bands = filter_bank_split(&spec.magnitudes, cfg.n_bands)?;
            Ok(zscore_per_band(&bands, cfg.zscore_eps))
        })
        .collect()
}

/// Groups consecutive instances into bags of `cfg.bag_size`; a trailing
/// partial bag is dropped.
pub fn make_bags(signal: &IQSignal, cfg: &PreprocessConfig, source_id: usize) -> Result<Vec<WindowedBag>> {
    cfg.validate()?;
    let windows = window_count(signal.len(), cfg.window_len, cfg.stride);
    if windows < cfg.bag_size {
        return Err(Error::contract(format!(
            "signal {source_id} yields {windows} windows, fewer than the bag size {}",
            cfg.bag_size
        )));
    }
    let analyzer = SpectrumAnalyzer::new(cfg.fft_len());
    let inst = instance_vectors(signal, cfg, &analyzer)?;
    Ok(group_bags(&inst, cfg.bag_size, signal.label, source_id))
}

fn group_bags(inst: &[Vec<f64>], t: usize, label: FlightState, source_id: usize) -> Vec<WindowedBag> {
    let d = inst.first().map_or(0, Vec::len);
    inst.chunks_exact(t)
        .map(|group| WindowedBag {
            instances: group.concat(),
            t,
            d,
            label,
            source_id,
        })
        .collect()
}

/// A homogeneous collection of bags.
#[derive(Clone, Debug, PartialEq)]
pub struct BagSet {
    pub t: usize,
    pub d: usize,
    pub label_set: LabelSet,
    pub class_count: usize,
    pub bags: Vec<WindowedBag>,
}

/// Per-signal outcome of [`preprocess_signals`].
#[derive(Clone, Debug, PartialEq)]
pub struct SignalReport {
    pub source_id: usize,
    pub windows: usize,
    pub bags: usize,
    /// Set when the signal was skipped.
    pub error: Option<String>,
}

/// Runs the pipeline over many signals in parallel. Signals that are too
/// short are reported and skipped; other errors abort.
pub fn preprocess_signals(
    signals: &[IQSignal],
    cfg: &PreprocessConfig,
    label_set: LabelSet,
) -> Result<(BagSet, Vec<SignalReport>)> {
    cfg.validate()?;
    let results = par::map_indexed(signals.len(), |i| {
        let s = &signals[i];
        let windows = window_count(s.len(), cfg.window_len, cfg.stride);
        match make_bags(s, cfg, i) {
            Ok(bags) => Ok((
                bags,
                SignalReport {
                    source_id: i,
                    windows,
                    bags: windows / cfg.bag_size,
                    error: None,
                },
            )),
            Err(Error::Contract(msg)) => Ok((
                Vec::new(),
                SignalReport {
                    source_id: i,
                    windows,
                    bags: 0,
                    error: Some(msg),
                },
            )),
            Err(e) => Err(e),
        }
    });
    let mut bags = Vec::new();
    let mut reports = Vec::new();
    for r in results {
        let (b, rep) = r?;
        bags.extend(b);
        reports.push(rep);
    }
    Ok((
        BagSet {
            t: cfg.bag_size,
            d: cfg.window_len,
            label_set,
            class_count: label_set.cardinality(),
            bags,
        },
        reports,
    ))
}

const MAGIC: &[u8; 8] = b"RFSFBAGS";
const VERSION: u32 = 1;

fn label_set_code(s: LabelSet) -> u32 {
    match s {
        LabelSet::Synth3 => 0,
        LabelSet::DroneRf10 => 1,
        LabelSet::DroneDetect21 => 2,
    }
}

fn label_set_from_code(c: u32) -> Result<LabelSet> {
    match c {
        0 => Ok(LabelSet::Synth3),
        1 => Ok(LabelSet::DroneRf10),
        2 => Ok(LabelSet::DroneDetect21),
        _ => Err(Error::Format(format!("unknown label set code {c}"))),
    }
}

impl BagSet {
    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.bags.iter().map(|b| b.label.index()).collect()
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.class_count];
        for b in &self.bags {
            h[b.label.index()] += 1;
        }
        h
    }

    /// Same layout, different bags.
    pub fn with_bags(&self, bags: Vec<WindowedBag>) -> BagSet {
        BagSet {
            bags,
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> BagSet {
        BagSet {
            t: self.t,
            d: self.d,
            label_set: self.label_set,
            class_count: self.class_count,
            bags: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.bags.len();
        let mut out = Vec::with_capacity(32 + n * (self.t * self.d + 2) * 4);
        out.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            self.t as u32,
            self.d as u32,
            n as u32,
            self.class_count as u32,
            label_set_code(self.label_set),
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for b in &self.bags {
            for v in &b.instances {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        for b in &self.bags {
            out.extend_from_slice(&(b.label.index() as u32).to_le_bytes());
        }
        for b in &self.bags {
            out.extend_from_slice(&(b.source_id as u32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |msg: String| Error::Format(format!("bag container: {msg}"));
        if bytes.len() < 32 || &bytes[..8] != MAGIC {
            return Err(fail("bad magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
        let version = word(0);
        if version != VERSION {
            return Err(fail(format!("unsupported version {version}")));
        }
        let (t, d, n, k) = (word(1) as usize, word(2) as usize, word(3) as usize, word(4) as usize);
        let label_set = label_set_from_code(word(5))?;
        if t == 0 || d == 0 || k > label_set.cardinality() {
            return Err(fail(format!("bad header t={t} d={d} classes={k}")));
        }
        let expected = 32 + n * t * d * 4 + n * 8;
        if bytes.len() != expected {
            return Err(fail(format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let f32_at = |off: usize| f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64;
        let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        let data_off = 32;
        let label_off = data_off + n * t * d * 4;
        let src_off = label_off + n * 4;
        let mut bags = Vec::with_capacity(n);
        for i in 0..n {
            let base = data_off + i * t * d * 4;
            let instances = (0..t * d).map(|j| f32_at(base + 4 * j)).collect();
            let class = u32_at(label_off + 4 * i);
            if class >= k {
                return Err(fail(format!("bag {i} has class {class} >= {k}")));
            }
            bags.push(WindowedBag {
                instances,
                t,
                d,
                label: FlightState::new(label_set, class)?,
                source_id: u32_at(src_off + 4 * i),
            });
        }
        Ok(BagSet {
            t,
            d,
            label_set,
            class_count: k,
            bags,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
