//! Envelope-aware bias switching for RF linear power amplifiers.
//!
//! The crate is organised the way the experiment flows:
//!
//! * [`signalgen`] synthesises the exciter's complex-baseband test signals.
//! * [`pamodel`] is the behavioral class-AB amplifier (AM/AM compression plus
//!   a conduction-angle drain current model for DC draw and efficiency).
//! * [`measure`] is the bench: gain, P1dB, two-tone IMD and bias/frequency sweeps.
//! * [`calibrate`] fits [`pamodel::PaParams`] to measured CW rows.
//! * [`biasctl`] classifies the envelope and commands the bias operating point.
//! * [`psusim`] is the framed drain-supply protocol and a simulated supply.

pub mod band;
pub mod biasctl;
pub mod calibrate;
pub mod measure;
pub mod pamodel;
pub mod params_file;
pub mod psusim;
pub mod signalgen;
mod simplex;

pub use band::Band;
pub use pamodel::{BiasPoint, PaParams, PaStats};
pub use signalgen::{IqBlock, WaveformKind, WaveformSpec};
