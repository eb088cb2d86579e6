use std::f64::consts::PI;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Propagation speed used for Doppler computations, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Which family of class labels a dataset uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LabelSet {
    /// Switched on / hovering / flying.
    Synth3,
    /// Background plus drone/mode combinations of the DroneRF corpus.
    DroneRf10,
    /// Seven drones times three modes of the DroneDetect corpus.
    DroneDetect21,
}

const SYNTH3_NAMES: [&str; 3] = ["ON", "HO", "FY"];

const DRONERF10_NAMES: [&str; 10] = [
    "BG", "BEBOP_ON", "BEBOP_HO", "BEBOP_FY", "BEBOP_FV", "AR_ON", "AR_HO", "AR_FY", "AR_FV",
    "PHANTOM_ON",
];

const DRONEDETECT_DRONES: [&str; 7] = ["AIR2S", "MPRO", "MPRO2", "INSP2", "MINI", "PHAN4", "DISCO"];

impl LabelSet {
    pub fn cardinality(self) -> usize {
        match self {
            LabelSet::Synth3 => 3,
            LabelSet::DroneRf10 => 10,
            LabelSet::DroneDetect21 => 21,
        }
    }

    pub fn class_name(self, index: usize) -> String {
        match self {
            LabelSet::Synth3 => SYNTH3_NAMES[index].to_string(),
            LabelSet::DroneRf10 => DRONERF10_NAMES[index].to_string(),
            LabelSet::DroneDetect21 => format!(
                "{}_{}",
                DRONEDETECT_DRONES[index / 3],
                SYNTH3_NAMES[index % 3]
            ),
        }
    }

    pub fn class_names(self) -> Vec<String> {
        (0..self.cardinality()).map(|i| self.class_name(i)).collect()
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SYNTH3" => Ok(LabelSet::Synth3),
            "DRONERF10" => Ok(LabelSet::DroneRf10),
            "DRONEDETECT21" => Ok(LabelSet::DroneDetect21),
            other => Err(Error::config(format!("unknown label set {other}"))),
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            LabelSet::Synth3 => "SYNTH3",
            LabelSet::DroneRf10 => "DRONERF10",
            LabelSet::DroneDetect21 => "DRONEDETECT21",
        }
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// A class label inside a [`LabelSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlightState {
    set: LabelSet,
    index: usize,
}

impl FlightState {
    pub fn new(set: LabelSet, index: usize) -> Result<Self> {
        if index >= set.cardinality() {
            return Err(Error::Index {
                what: "flight state",
                index,
                bound: set.cardinality(),
            });
        }
        Ok(FlightState { set, index })
    }

    pub fn label_set(self) -> LabelSet {
        self.set
    }

    pub fn index(self) -> usize {
        self.index
    }

    pub fn name(self) -> String {
        self.set.class_name(self.index)
    }

    /// Motion regime the state implies, or `None` when no emitter is moving
    /// (the RF background class).
    pub fn kinematic_class(self) -> Option<KinematicClass> {
        let mode = match self.set {
            LabelSet::Synth3 | LabelSet::DroneDetect21 => self.index % 3,
            LabelSet::DroneRf10 => match self.index {
                0 => return None,
                1 | 5 | 9 => 0,
                2 | 6 => 1,
                _ => 2,
            },
        };
        Some(match mode {
            0 => KinematicClass::Stationary,
            1 => KinematicClass::Hovering,
            _ => KinematicClass::Flying,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KinematicClass {
    Stationary,
    Hovering,
    Flying,
}

/// Relative motion of the emitter with respect to the receiver.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KinematicParams {
    pub speed_mps: f64,
    pub angle_rad: f64,
    pub distance_m: f64,
}

impl KinematicClass {
    /// `(speed m/s, angle degrees, distance m)` ranges, each inclusive.
    pub fn ranges(self) -> [(f64, f64); 3] {
        match self {
            KinematicClass::Stationary => [(0.0, 0.0), (0.0, 0.0), (0.0, 100.0)],
            KinematicClass::Hovering => [(0.0, 5.0), (0.0, 15.0), (50.0, 500.0)],
            KinematicClass::Flying => [(0.0, 26.0), (0.0, 90.0), (10.0, 1000.0)],
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

impl KinematicClass {
    /// Draws speed, angle and distance uniformly from the class ranges.
    /// Angles are drawn in degrees and returned in radians.
    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> KinematicParams {
        let [speed, angle_deg, distance] = self.ranges();
        let speed_mps = uniform(rng, speed);
        let angle_rad = (uniform(rng, angle_deg) * PI / 180.0).min(PI / 2.0);
        let distance_m = uniform(rng, distance);
        KinematicParams {
            speed_mps,
            angle_rad,
            distance_m,
        }
    }
}

pub fn sample_kinematics<R: Rng + ?Sized>(state: FlightState, rng: &mut R) -> Result<KinematicParams> {
    let class = state.kinematic_class().ok_or_else(|| {
        Error::config(format!("state {} has no kinematic class", state.name()))
    })?;
    Ok(class.sample(rng))
}

/// `f_d = (v / c) * f_c * cos(theta)`.
pub fn doppler_shift_hz(speed_mps: f64, carrier_hz: f64, angle_rad: f64) -> f64 {
    speed_mps / SPEED_OF_LIGHT * carrier_hz * angle_rad.cos()
}
