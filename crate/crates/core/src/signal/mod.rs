//! Labelled synthetic RF baseband signals with state-conditional kinematics.

mod profile;
mod state;
mod synth;

pub use profile::{SignalProfile, StateSignature, ToneSpec};
pub use state::{
    doppler_shift_hz, sample_kinematics, FlightState, KinematicClass, KinematicParams, LabelSet,
    SPEED_OF_LIGHT,
};
pub use synth::{add_noise, draw_kinematics, make_dataset, mean_power, synth_signal, DatasetSpec, IQSignal};
