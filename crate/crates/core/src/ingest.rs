//! Raw-IQ recordings and the CSV manifest that labels them.
//!
//! A raw-IQ file is a flat sequence of little-endian `f32` pairs, in-phase
//! first. The manifest is a CSV file with header
//! `path,class_index,class_name,sample_rate_hz,center_freq_hz,snr_db`; `#`
//! lines are comments, `snr_db` may be empty and paths are relative to the
//! manifest's directory. Synthetic exports append the optional columns
//! `speed_mps,angle_rad,distance_m` so the recorded kinematics survive the
//! round trip.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{FlightState, IQSignal, KinematicParams, LabelSet};

/// Metadata that the raw file itself does not carry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SignalMeta {
    pub center_freq_hz: f64,
    pub label: FlightState,
    pub kinematics: KinematicParams,
    pub snr_db: f64,
}

pub fn decode_iq(bytes: &[u8]) -> Result<Vec<Complex64>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::Format(format!(
            "truncated sample at byte offset {}",
            bytes.len() - bytes.len() % 4
        )));
    }
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Format(format!(
            "odd float count {} (unpaired I at byte offset {})",
            bytes.len() / 4,
            bytes.len() - 4
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| {
            let i = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let q = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(i as f64, q as f64)
        })
        .collect())
}

pub fn encode_iq(samples: &[Complex64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(samples.len() * 8);
    for s in samples {
        out.extend_from_slice(&(s.re as f32).to_le_bytes());
        out.extend_from_slice(&(s.im as f32).to_le_bytes());
    }
    out
}

pub fn read_iq(path: &Path, sample_rate_hz: f64, meta: SignalMeta) -> Result<IQSignal> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let samples = decode_iq(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    IQSignal::new(
        samples,
        sample_rate_hz,
        meta.center_freq_hz,
        meta.label,
        meta.kinematics,
        meta.snr_db,
    )
}

/// Writes samples at 32-bit precision.
pub fn write_iq(path: &Path, samples: &[Complex64]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_iq(samples)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub class_index: usize,
    pub class_name: String,
    pub sample_rate_hz: f64,
    pub center_freq_hz: f64,
    pub snr_db: Option<f64>,
    pub kinematics: Option<KinematicParams>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    /// Directory the entry paths are relative to.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub label_set: LabelSet,
}

const REQUIRED: [&str; 6] = [
    "path",
    "class_index",
    "class_name",
    "sample_rate_hz",
    "center_freq_hz",
    "snr_db",
];
const KINEMATIC: [&str; 3] = ["speed_mps", "angle_rad", "distance_m"];

fn row_error(row: usize, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("manifest row {row}: {msg}"))
}

fn parse_field<T: std::str::FromStr>(row: usize, name: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| row_error(row, format!("cannot parse {name} from {raw:?}")))
}

/// Picks the label set whose class names match the manifest, falling back to
/// the smallest set that can hold every index.
fn infer_label_set(entries: &[ManifestEntry]) -> Result<LabelSet> {
    let sets = [LabelSet::Synth3, LabelSet::DroneRf10, LabelSet::DroneDetect21];
    let max = entries.iter().map(|e| e.class_index).max().unwrap_or(0);
    let fits = |s: &LabelSet| max < s.cardinality();
    if let Some(s) = sets.iter().filter(|s| fits(s)).find(|s| {
        entries
            .iter()
            .all(|e| s.class_name(e.class_index).eq_ignore_ascii_case(&e.class_name))
    }) {
        return Ok(*s);
    }
    sets.into_iter()
        .find(fits)
        .ok_or_else(|| Error::Format(format!("{} classes exceed every label set", max + 1)))
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let mut cols = [0usize; 6];
    for (slot, name) in cols.iter_mut().zip(REQUIRED) {
        *slot = col(name).ok_or_else(|| Error::Format(format!("manifest missing column {name}")))?;
    }
    let kin_cols: Option<Vec<usize>> = KINEMATIC.iter().map(|n| col(n)).collect();

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let rel = PathBuf::from(field(cols[0]));
        if rel.as_os_str().is_empty() {
            return Err(row_error(row, "empty path"));
        }
        if !seen.insert(rel.clone()) {
            return Err(row_error(row, format!("duplicate path {}", rel.display())));
        }
        let snr_raw = field(cols[5]);
        let snr_db = if snr_raw.is_empty() {
            None
        } else {
            Some(parse_field(row, "snr_db", snr_raw)?)
        };
        let kinematics = match &kin_cols {
            Some(k) if !field(k[0]).is_empty() => Some(KinematicParams {
                speed_mps: parse_field(row, "speed_mps", field(k[0]))?,
                angle_rad: parse_field(row, "angle_rad", field(k[1]))?,
                distance_m: parse_field(row, "distance_m", field(k[2]))?,
            }),
            _ => None,
        };
        let entry = ManifestEntry {
            class_index: parse_field(row, "class_index", field(cols[1]))?,
            class_name: field(cols[2]).to_string(),
            sample_rate_hz: parse_field(row, "sample_rate_hz", field(cols[3]))?,
            center_freq_hz: parse_field(row, "center_freq_hz", field(cols[4]))?,
            snr_db,
            kinematics,
            path: rel,
        };
        if !(entry.sample_rate_hz > 0.0) {
            return Err(row_error(row, "sample_rate_hz must be positive"));
        }
        let full = root.join(&entry.path);
        let len = fs::metadata(&full)
            .map_err(|_| row_error(row, format!("missing file {}", full.display())))?
            .len();
        if len % 8 != 0 {
            return Err(row_error(row, format!("{} is not a whole number of I/Q pairs", full.display())));
        }
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(Error::Format("manifest has no rows".into()));
    }
    let classes: std::collections::BTreeSet<usize> = entries.iter().map(|e| e.class_index).collect();
    if classes.iter().copied().ne(0..classes.len()) {
        return Err(Error::Format(format!("non-contiguous classes {classes:?}")));
    }
    let label_set = infer_label_set(&entries)?;
    Ok(Manifest {
        root,
        entries,
        label_set,
    })
}

impl Manifest {
    pub fn class_count(&self) -> usize {
        self.entries.iter().map(|e| e.class_index).max().map_or(0, |m| m + 1)
    }

    pub fn read_signal(&self, index: usize) -> Result<IQSignal> {
        let e = &self.entries[index];
        let meta = SignalMeta {
            center_freq_hz: e.center_freq_hz,
            label: FlightState::new(self.label_set, e.class_index)?,
            kinematics: e.kinematics.unwrap_or_default(),
            snr_db: e.snr_db.unwrap_or(f64::NAN),
        };
        read_iq(&self.root.join(&e.path), e.sample_rate_hz, meta)
    }
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut header: Vec<&str> = REQUIRED.to_vec();
    header.extend(KINEMATIC);
    w.write_record(&header)?;
    for e in entries {
        let snr = e.snr_db.map(|s| s.to_string()).unwrap_or_default();
        let kin = e
            .kinematics
            .map(|k| [k.speed_mps.to_string(), k.angle_rad.to_string(), k.distance_m.to_string()])
            .unwrap_or_default();
        w.write_record([
            e.path.to_string_lossy().as_ref(),
            &e.class_index.to_string(),
            &e.class_name,
            &e.sample_rate_hz.to_string(),
            &e.center_freq_hz.to_string(),
            &snr,
            &kin[0],
            &kin[1],
            &kin[2],
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes every signal as `sig_NNNNN.iq` under `dir` plus `manifest.csv`.
pub fn export_dataset(signals: &[IQSignal], dir: &Path) -> Result<Vec<ManifestEntry>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(signals.len());
    for (i, s) in signals.iter().enumerate() {
        let rel = PathBuf::from(format!("sig_{i:05}.iq"));
        write_iq(&dir.join(&rel), &s.samples)?;
        entries.push(ManifestEntry {
            path: rel,
            class_index: s.label.index(),
            class_name: s.label.name(),
            sample_rate_hz: s.sample_rate_hz,
            center_freq_hz: s.center_freq_hz,
            snr_db: s.snr_db.is_finite().then_some(s.snr_db),
            kinematics: Some(s.kinematics),
        });
    }
    write_manifest(&dir.join("manifest.csv"), &entries)?;
    Ok(entries)
}
