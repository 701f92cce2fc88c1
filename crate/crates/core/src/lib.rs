//! Head-contribution models for gaze shifts and the eye-head mover spectrum.
//!
//! Raw gaze/head yaw traces are aligned and sanity-checked ([`ingest`]),
//! segmented into gaze shifts ([`events`]), fitted per participant with a
//! bounded soft-hinge model ([`fitting`]), and the fitted curves are
//! decomposed into a population spectrum ([`fpca`]).

pub mod cli;
pub mod error;
pub mod events;
pub mod fitting;
pub mod fpca;
pub mod ingest;
pub mod io;
pub mod models;
pub mod pipeline;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use events::{EventConfig, GazeShift, ShiftSet};
pub use fitting::{fit_participant, FitConfig, FitResult};
pub use fpca::{fit_fpca, SpectrumModel};
pub use models::{ModelKind, ModelParams, SoftHingeParams};
