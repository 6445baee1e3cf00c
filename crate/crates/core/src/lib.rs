//! End-to-end WiFi CSI cleaning.
//!
//! A WiFi receiver's channel state information carries multiplicative
//! receiver-gain errors (a slow large-scale drift plus discrete
//! automatic-gain-control steps) and synchronization phase errors (a
//! per-frame symbol-timing offset inducing a linear-in-frequency phase
//! ramp, plus a common phase error). This crate simulates impaired CSI
//! batches with ground truth, estimates and removes both error families,
//! and quantifies how well the cleaned CSI recovers the true channel's
//! dynamic component.
//!
//! - [`types`]: batch containers, estimates, and the correction ops;
//! - [`sim`]: ground-truth-annotated simulation;
//! - [`gain`]: gain estimators (norm-power and clustering baselines,
//!   incremental clustering, uniform-grid ML with step-size search);
//! - [`phase`]: phase estimators (unwrap and coherence baselines,
//!   strong-LoS grid/WLS, sequential forward and backward passes);
//! - [`eval`]: χ/SNR cleaning metrics, Doppler spectrum, respiration
//!   SNR, and the Monte-Carlo benchmark sweep;
//! - [`io`]: CSIB binary persistence and CSV import.

pub mod error;
pub mod eval;
pub mod gain;
pub mod io;
pub mod phase;
pub mod sim;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    apply_correction, gain_correct, CsiBatch, CsiKind, GainEstimate, GainMethod, GroundTruth,
    PhaseEstimate, PhaseMethod, SystemParams,
};
