//! Phase-noise transfer and correlation between laser fields propagating
//! through Λ and double-Λ EIT media.
//!
//! The crate has two independent routes to the same noise spectra:
//!
//! * [`propagation`] evaluates closed-form propagation laws on a frequency
//!   grid, driven by the transfer rates in [`model`];
//! * [`oracle`] synthesizes phase time series, mixes them per Fourier
//!   component and re-estimates spectra from a Monte Carlo ensemble.
//!
//! [`analysis`] is the synthetic measurement chain (beat note, amplifier,
//! Welch PSD, Lorentzian and exponential fits) and [`scenario`] wires
//! everything into the three scenario experiments driven by a
//! [`config::ScenarioConfig`].
//!
//! Frequencies are angular (rad/s) inside [`model`] and [`propagation`];
//! time series, spectra handed to files and the config use Hz.

pub mod analysis;
pub mod config;
pub mod error;
pub mod fit;
pub mod model;
pub mod oracle;
pub mod par;
pub mod propagation;
pub mod report;
pub mod scenario;
pub mod dsp;

pub use error::{Error, Result};
